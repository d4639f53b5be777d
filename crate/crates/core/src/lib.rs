//! 3D focusing gravity inversion on a voxel mesh.
//!
//! The forward operator is the closed-form vertical attraction of
//! rectangular prisms. Inversion is iteratively reweighted Tikhonov
//! regularization with a minimum-support stabilizer, solved in standard form
//! through the thin SVD, with the regularization parameter picked by the
//! discrepancy principle, UPRE or the χ² principle.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod focusing;
pub mod forward;
pub mod io;
pub mod mesh;
pub mod param;
pub mod regsolve;
pub mod synth;

pub use error::{Error, Result};
pub use focusing::{
    invert, BoundsConfig, ConvergenceReport, Inversion, InversionConfig, InversionOutcome,
    InversionState, IterationRecord, StopReason, WeightingConfig,
};
pub use forward::{assemble_sensitivity, forward, prism_kernel, Sensitivity};
pub use mesh::{CellBox, DensityModel, Mesh, Station};
pub use param::{select_alpha, MethodKind, ParamMethod, ParamResult, SingularMean};
pub use regsolve::{solve_standard, svd, SpectralData, SvdFactors};
pub use synth::{NoiseSpec, Study, StudyReport, SurveyData, SyntheticSpec};
