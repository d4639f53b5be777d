//! TOML run configuration.
//!
//! ```toml
//! [mesh]
//! nsx = 20
//! nsy = 20
//! nbz = 10
//! delta = 50.0
//!
//! [solver]
//! method = "chi2"
//!
//! [synthetic]
//! kind = "dike"
//!
//! [noise]
//! eta1 = 0.02
//! eta2 = 0.005
//! copies = 10
//! ```
//!
//! Every block is optional except as needed by the command being run. Values
//! are checked when the file is loaded; errors name the offending key and,
//! where it can be found, its line.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::focusing::{BoundsConfig, InversionConfig, WeightingConfig};
use crate::io::formats::Section;
use crate::mesh::Mesh;
use crate::param::{MethodKind, ParamMethod, SingularMean};
use crate::synth::{parse_boxes, DensityBox, NoiseSpec, SyntheticKind, SyntheticSpec};

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Raw {
    mesh: Option<RawMesh>,
    #[serde(default)]
    weights: RawWeights,
    #[serde(default)]
    bounds: RawBounds,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    paths: PathsConfig,
    synthetic: Option<RawSynthetic>,
    noise: Option<RawNoise>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    nsx: usize,
    nsy: usize,
    nbz: usize,
    #[serde(default)]
    padx: usize,
    #[serde(default)]
    pady: usize,
    delta: f64,
    #[serde(default)]
    origin: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHardCell {
    cell: Option<usize>,
    i: Option<usize>,
    j: Option<usize>,
    k: Option<usize>,
    rho: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawWeights {
    beta: f64,
    epsilon: f64,
    #[serde(rename = "H")]
    hard_value: f64,
    hard_cells: Vec<RawHardCell>,
}

impl Default for RawWeights {
    fn default() -> Self {
        let w = WeightingConfig::default();
        Self {
            beta: w.beta,
            epsilon: w.epsilon,
            hard_value: w.hard_value,
            hard_cells: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawBounds {
    rho_min: f64,
    rho_max: f64,
}

impl Default for RawBounds {
    fn default() -> Self {
        Self {
            rho_min: 0.0,
            rho_max: 1.0,
        }
    }
}

/// Solver block.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: MethodKind,
    pub gamma: f64,
    pub max_iters: usize,
    pub alpha_tol: f64,
    pub upre_grid: usize,
    pub seed: u64,
    pub singular_mean: SingularMean,
}

type RawSolver = SolverConfig;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: MethodKind::Chi2,
            gamma: 1.5,
            max_iters: 100,
            alpha_tol: 1e-6,
            upre_grid: 200,
            seed: 0,
            singular_mean: SingularMean::default(),
        }
    }
}

/// Input and output locations. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Density model read by `forward`.
    pub model: Option<PathBuf>,
    /// Observation file read by `invert`.
    pub observations: Option<PathBuf>,
    /// Reference model `m_apr` for `invert`.
    pub prior: Option<PathBuf>,
    /// True model, enabling relative errors in the `invert` log.
    pub exact_model: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    kind: SyntheticKind,
    #[serde(default)]
    cube_top: Option<f64>,
    #[serde(default)]
    boxes: Vec<DensityBox>,
    #[serde(default)]
    boxes_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    level: Option<u8>,
    eta1: Option<f64>,
    eta2: Option<f64>,
    #[serde(default = "default_copies")]
    copies: usize,
}

fn default_copies() -> usize {
    10
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    sections: Vec<String>,
}

/// Noise block: coefficients and copy count. The seed lives in the solver
/// block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub copies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: Option<Mesh>,
    pub weights: WeightingConfig,
    pub bounds: BoundsConfig,
    pub solver: SolverConfig,
    pub paths: PathsConfig,
    pub synthetic: Option<SyntheticSpec>,
    pub noise: Option<NoiseConfig>,
    pub sections: Vec<Section>,
}

struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    /// 1-based line of `key = ...` inside `[table]`, if present.
    fn line(&self, table: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (n, raw) in self.text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim_matches(|c| c == '[' || c == ']').trim().to_string();
                continue;
            }
            if current == table {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim().trim_matches('"') == key {
                        return Some(n + 1);
                    }
                }
            }
        }
        None
    }

    fn err(&self, table: &str, key: &str, msg: impl Into<String>) -> Error {
        Error::Config {
            key: format!("{table}.{key}"),
            line: self.line(table, key),
            msg: msg.into(),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates `text`; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: Raw = toml::from_str(text).map_err(|e| Error::Config {
            key: "<file>".into(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            msg: e.message().to_string(),
        })?;
        let loc = Locator { text };

        let mesh = match raw.mesh {
            Some(m) => {
                let mesh = Mesh {
                    nsx: m.nsx,
                    nsy: m.nsy,
                    nbz: m.nbz,
                    padx: m.padx,
                    pady: m.pady,
                    delta: m.delta,
                    origin: m.origin,
                };
                for (key, v) in [("nsx", m.nsx), ("nsy", m.nsy), ("nbz", m.nbz)] {
                    if v == 0 {
                        return Err(loc.err("mesh", key, "must be >= 1"));
                    }
                }
                if !(m.delta > 0.0 && m.delta.is_finite()) {
                    return Err(loc.err("mesh", "delta", format!("must be finite and > 0 (got {})", m.delta)));
                }
                if m.origin.iter().any(|v| !v.is_finite()) {
                    return Err(loc.err("mesh", "origin", "must be finite"));
                }
                Some(mesh)
            }
            None => None,
        };

        let w = raw.weights;
        if !(w.beta >= 0.0 && w.beta.is_finite()) {
            return Err(loc.err("weights", "beta", format!("must be >= 0 (got {})", w.beta)));
        }
        if !(w.epsilon > 0.0 && w.epsilon.is_finite()) {
            return Err(loc.err("weights", "epsilon", format!("must be > 0 (got {})", w.epsilon)));
        }
        if !(w.hard_value >= 1.0 && w.hard_value.is_finite()) {
            return Err(loc.err("weights", "H", format!("must be >= 1 (got {})", w.hard_value)));
        }

        let b = raw.bounds;
        if !(b.rho_min < b.rho_max) {
            return Err(loc.err(
                "bounds",
                "rho_max",
                format!("rho_min < rho_max is required (got [{}, {}])", b.rho_min, b.rho_max),
            ));
        }
        let bounds = BoundsConfig {
            rho_min: b.rho_min,
            rho_max: b.rho_max,
        };

        let s = raw.solver;
        if !(0.0..=2.0).contains(&s.gamma) {
            return Err(loc.err("solver", "gamma", format!("must lie in [0, 2] (got {})", s.gamma)));
        }
        if s.max_iters == 0 {
            return Err(loc.err("solver", "max_iters", "must be >= 1"));
        }
        if !(s.alpha_tol > 0.0 && s.alpha_tol.is_finite()) {
            return Err(loc.err("solver", "alpha_tol", format!("must be > 0 (got {})", s.alpha_tol)));
        }
        if s.upre_grid < 50 {
            return Err(loc.err("solver", "upre_grid", format!("must be >= 50 (got {})", s.upre_grid)));
        }

        let synthetic = match raw.synthetic {
            None => None,
            Some(sy) => {
                let spec = match sy.kind {
                    SyntheticKind::Dike => SyntheticSpec::dike(),
                    SyntheticKind::Cube => SyntheticSpec::cube(sy.cube_top.unwrap_or(50.0)),
                    SyntheticKind::CustomBoxes => {
                        let mut boxes = sy.boxes;
                        if let Some(f) = &sy.boxes_file {
                            let p = base.join(f);
                            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                            boxes.extend(parse_boxes(&text).map_err(|e| {
                                loc.err("synthetic", "boxes_file", e.to_string())
                            })?);
                        }
                        let m = mesh.ok_or_else(|| {
                            loc.err("synthetic", "kind", "custom-boxes requires a [mesh] block")
                        })?;
                        SyntheticSpec::custom(m, boxes)
                    }
                };
                if sy.kind != SyntheticKind::Cube && sy.cube_top.is_some() {
                    return Err(loc.err("synthetic", "cube_top", "only valid for kind = \"cube\""));
                }
                if let Some(m) = mesh {
                    if m != spec.mesh {
                        return Err(loc.err(
                            "synthetic",
                            "kind",
                            "the [mesh] block disagrees with the preset mesh of this synthetic model",
                        ));
                    }
                }
                spec.validate()
                    .map_err(|e| loc.err("synthetic", "kind", e.to_string()))?;
                Some(spec)
            }
        };
        let mesh = mesh.or(synthetic.as_ref().map(|s| s.mesh));

        let mut hard_cells = Vec::with_capacity(w.hard_cells.len());
        for h in &w.hard_cells {
            let cell = match (h.cell, h.i, h.j, h.k) {
                (Some(c), None, None, None) => c,
                (None, Some(i), Some(j), Some(k)) => {
                    let m = mesh.ok_or_else(|| loc.err("weights", "hard_cells", "(i, j, k) needs a mesh"))?;
                    if i >= m.nx() || j >= m.ny() || k >= m.nbz {
                        return Err(loc.err("weights", "hard_cells", format!("cell ({i}, {j}, {k}) is outside the mesh")));
                    }
                    m.cell_index(i, j, k)
                }
                _ => {
                    return Err(loc.err(
                        "weights",
                        "hard_cells",
                        "each entry needs either `cell` or all of `i`, `j`, `k`",
                    ))
                }
            };
            if let Some(m) = mesh {
                if cell >= m.n_cells() {
                    return Err(loc.err("weights", "hard_cells", format!("cell {cell} is outside the mesh")));
                }
            }
            if !h.rho.is_finite() {
                return Err(loc.err("weights", "hard_cells", "rho must be finite"));
            }
            hard_cells.push((cell, h.rho));
        }

        let noise = match raw.noise {
            None => None,
            Some(n) => {
                let (eta1, eta2) = match (n.level, n.eta1, n.eta2) {
                    (Some(level), None, None) => {
                        let spec = NoiseSpec::level(level, n.copies, 0)
                            .map_err(|_| loc.err("noise", "level", format!("must be 1, 2 or 3 (got {level})")))?;
                        (spec.eta1, spec.eta2)
                    }
                    (None, e1, e2) => (e1.unwrap_or(0.0), e2.unwrap_or(0.0)),
                    _ => return Err(loc.err("noise", "level", "give either `level` or `eta1`/`eta2`, not both")),
                };
                for (key, v) in [("eta1", eta1), ("eta2", eta2)] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(loc.err("noise", key, format!("must be >= 0 (got {v})")));
                    }
                }
                if eta1 == 0.0 && eta2 == 0.0 {
                    return Err(loc.err("noise", "eta1", "eta1 and eta2 cannot both be zero"));
                }
                if n.copies == 0 {
                    return Err(loc.err("noise", "copies", "must be >= 1"));
                }
                Some(NoiseConfig {
                    eta1,
                    eta2,
                    copies: n.copies,
                })
            }
        };

        let sections = raw
            .output
            .sections
            .iter()
            .map(|s| {
                let sec: Section = s.parse().map_err(|e: String| loc.err("output", "sections", e))?;
                if let Some(m) = &mesh {
                    sec.layer(m)
                        .map_err(|e| loc.err("output", "sections", e.to_string()))?;
                }
                Ok(sec)
            })
            .collect::<Result<_>>()?;

        let resolve = |p: Option<PathBuf>| p.map(|p| base.join(p));
        let paths = PathsConfig {
            model: resolve(raw.paths.model),
            observations: resolve(raw.paths.observations),
            prior: resolve(raw.paths.prior),
            exact_model: resolve(raw.paths.exact_model),
            output_dir: resolve(raw.paths.output_dir),
        };

        Ok(Self {
            mesh,
            weights: WeightingConfig {
                beta: w.beta,
                epsilon: w.epsilon,
                hard_value: w.hard_value,
                hard_cells,
            },
            bounds,
            solver: s,
            paths,
            synthetic,
            noise,
            sections,
        })
    }

    /// The mesh block, or the preset mesh of the synthetic model.
    pub fn require_mesh(&self) -> Result<Mesh> {
        self.mesh.ok_or_else(|| Error::Config {
            key: "mesh".into(),
            line: None,
            msg: "a [mesh] block (or a preset [synthetic] model) is required".into(),
        })
    }

    pub fn param_method(&self) -> ParamMethod {
        ParamMethod::new(self.solver.method)
            .with_tolerance(self.solver.alpha_tol)
            .with_grid(self.solver.upre_grid)
    }

    pub fn inversion_config(&self) -> InversionConfig {
        InversionConfig {
            weights: self.weights.clone(),
            bounds: self.bounds,
            method: self.param_method(),
            gamma: self.solver.gamma,
            singular_mean: self.solver.singular_mean,
            max_iters: self.solver.max_iters,
        }
    }

    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        self.noise.map(|n| NoiseSpec {
            eta1: n.eta1,
            eta2: n.eta2,
            copies: n.copies,
            seed: self.solver.seed,
        })
    }

    pub fn require_synthetic(&self) -> Result<&SyntheticSpec> {
        self.synthetic.as_ref().ok_or_else(|| Error::Config {
            key: "synthetic".into(),
            line: None,
            msg: "a [synthetic] block is required".into(),
        })
    }

    pub fn require_noise(&self) -> Result<NoiseSpec> {
        self.noise_spec().ok_or_else(|| Error::Config {
            key: "noise".into(),
            line: None,
            msg: "a [noise] block is required".into(),
        })
    }
}
