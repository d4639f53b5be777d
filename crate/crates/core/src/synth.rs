//! Synthetic density models, noisy surveys and multi-copy studies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focusing::{Inversion, InversionConfig, IterationRecord};
use crate::forward::{assemble_sensitivity, forward, Sensitivity};
use crate::mesh::{CellBox, DensityModel, Mesh, Station};
use crate::param::MethodKind;
use crate::regsolve::SpectralData;

const DIKE_FIXTURE: &str = include_str!("../fixtures/dike_v1.boxes");

/// Axis-aligned body with a uniform density contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBox {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub rho: f64,
}

impl DensityBox {
    pub fn cell_box(&self) -> CellBox {
        CellBox::new(self.x, self.y, self.z)
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        (self.x[0]..=self.x[1]).contains(&p[0])
            && (self.y[0]..=self.y[1]).contains(&p[1])
            && (self.z[0]..=self.z[1]).contains(&p[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Dike,
    Cube,
    CustomBoxes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub boxes: Vec<DensityBox>,
    pub mesh: Mesh,
}

impl SyntheticSpec {
    /// Stair-stepped dipping dike on the 20 x 20 x 10 mesh, loaded from the
    /// bundled fixture.
    pub fn dike() -> Self {
        Self {
            kind: SyntheticKind::Dike,
            boxes: parse_boxes(DIKE_FIXTURE).expect("bundled dike fixture parses"),
            mesh: Mesh::dike(),
        }
    }

    /// 250 x 200 x 200 m unit-contrast cube centered horizontally under the
    /// 15 x 10 x 8 mesh with its top at depth `top`.
    pub fn cube(top: f64) -> Self {
        let mesh = Mesh::cube();
        let b = mesh.bounds();
        let cx = 0.5 * (b.x[0] + b.x[1]);
        let cy = 0.5 * (b.y[0] + b.y[1]);
        Self {
            kind: SyntheticKind::Cube,
            boxes: vec![DensityBox {
                x: [cx - 125.0, cx + 125.0],
                y: [cy - 100.0, cy + 100.0],
                z: [top, top + 200.0],
                rho: 1.0,
            }],
            mesh,
        }
    }

    pub fn custom(mesh: Mesh, boxes: Vec<DensityBox>) -> Self {
        Self {
            kind: SyntheticKind::CustomBoxes,
            boxes,
            mesh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        let bounds = self.mesh.bounds();
        let tol = 1e-9 * self.mesh.delta;
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.rho.is_finite() {
                return Err(Error::Spec(format!("box {i} has a non-finite contrast")));
            }
            for (axis, (lo_hi, mesh_lo_hi)) in [(b.x, bounds.x), (b.y, bounds.y), (b.z, bounds.z)]
                .into_iter()
                .enumerate()
            {
                if !(lo_hi[0] < lo_hi[1]) {
                    return Err(Error::Spec(format!("box {i} is empty along axis {axis}")));
                }
                if lo_hi[0] < mesh_lo_hi[0] - tol || lo_hi[1] > mesh_lo_hi[1] + tol {
                    return Err(Error::Spec(format!(
                        "box {i} extends outside the mesh along axis {axis} ([{}, {}] vs [{}, {}])",
                        lo_hi[0], lo_hi[1], mesh_lo_hi[0], mesh_lo_hi[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses `x0 x1 y0 y1 z0 z1 rho` rows; `#` starts a comment.
pub fn parse_boxes(text: &str) -> Result<Vec<DensityBox>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Spec(format!("box line {}: {e}", lineno + 1)))?;
        if v.len() != 7 {
            return Err(Error::Spec(format!(
                "box line {}: expected 7 values, found {}",
                lineno + 1,
                v.len()
            )));
        }
        out.push(DensityBox {
            x: [v[0], v[1]],
            y: [v[2], v[3]],
            z: [v[4], v[5]],
            rho: v[6],
        });
    }
    Ok(out)
}

/// Cells whose centers fall inside a box take its contrast; later boxes win.
pub fn make_model(spec: &SyntheticSpec) -> Result<DensityModel> {
    spec.validate()?;
    let mesh = &spec.mesh;
    let values = (0..mesh.n_cells())
        .map(|j| {
            let c = mesh.cell_center(j);
            spec.boxes
                .iter()
                .rev()
                .find(|b| b.contains(c))
                .map_or(0.0, |b| b.rho)
        })
        .collect();
    DensityModel::for_mesh(mesh, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub eta1: f64,
    pub eta2: f64,
    pub copies: usize,
    pub seed: u64,
}

impl NoiseSpec {
    /// One of the three preset noise levels (1, 2 or 3).
    pub fn level(level: u8, copies: usize, seed: u64) -> Result<Self> {
        let (eta1, eta2) = match level {
            1 => (0.01, 0.001),
            2 => (0.02, 0.005),
            3 => (0.03, 0.01),
            _ => return Err(Error::Spec(format!("unknown noise level {level}"))),
        };
        Ok(Self {
            eta1,
            eta2,
            copies,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0 && self.eta1.is_finite() && self.eta2.is_finite()) {
            return Err(Error::Spec(format!(
                "noise coefficients must be finite and >= 0 (got {}, {})",
                self.eta1, self.eta2
            )));
        }
        if self.eta1 == 0.0 && self.eta2 == 0.0 {
            return Err(Error::Spec("eta1 and eta2 cannot both be zero".into()));
        }
        if self.copies == 0 {
            return Err(Error::Spec("copies must be >= 1".into()));
        }
        Ok(())
    }
}

/// Observed gravity with its per-datum noise standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyData {
    pub stations: Vec<Station>,
    pub d_obs: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl SurveyData {
    pub fn len(&self) -> usize {
        self.d_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_obs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.d_obs.len();
        for (what, len) in [("survey stations", self.stations.len()), ("survey sigma", self.sigma.len())] {
            if len != m {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: m,
                    found: len,
                });
            }
        }
        if let Some(i) = self.d_obs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("observation {i} is not finite")));
        }
        if let Some(index) = self.sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::ZeroSigma { index });
        }
        Ok(())
    }
}

/// `eta1 |d_i| + eta2 ||d||_2`.
pub fn noise_sigma(d: &[f64], eta1: f64, eta2: f64) -> Result<Vec<f64>> {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sigma: Vec<f64> = d.iter().map(|v| eta1 * v.abs() + eta2 * norm).collect();
    if let Some(index) = sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroSigma { index });
    }
    Ok(sigma)
}

/// Draws `copies` noisy surveys. The m x copies standard-normal matrix is
/// drawn up front, one copy (column) at a time, from a ChaCha8 stream seeded
/// with `noise.seed`. Returns the surveys and the raw noise vectors.
pub fn add_noise(
    d: &[f64],
    stations: &[Station],
    noise: &NoiseSpec,
) -> Result<(Vec<SurveyData>, Vec<Vec<f64>>)> {
    noise.validate()?;
    if stations.len() != d.len() {
        return Err(Error::DimensionMismatch {
            what: "stations vs data",
            expected: d.len(),
            found: stations.len(),
        });
    }
    let sigma = noise_sigma(d, noise.eta1, noise.eta2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let theta: Vec<Vec<f64>> = (0..noise.copies)
        .map(|_| (0..d.len()).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut surveys = Vec::with_capacity(noise.copies);
    let mut noise_vecs = Vec::with_capacity(noise.copies);
    for col in theta {
        let e: Vec<f64> = col.iter().zip(&sigma).map(|(t, s)| t * s).collect();
        surveys.push(SurveyData {
            stations: stations.to_vec(),
            d_obs: d.iter().zip(&e).map(|(a, b)| a + b).collect(),
            sigma: sigma.clone(),
        });
        noise_vecs.push(e);
    }
    Ok((surveys, noise_vecs))
}

/// `||exact - recovered|| / ||exact||`.
pub fn relative_error(exact: &DensityModel, recovered: &DensityModel) -> Result<f64> {
    if exact.len() != recovered.len() {
        return Err(Error::DimensionMismatch {
            what: "relative error models",
            expected: exact.len(),
            found: recovered.len(),
        });
    }
    let norm = exact.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Domain("relative error against a zero exact model".into()));
    }
    let diff = exact
        .values
        .iter()
        .zip(&recovered.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Outcome of one noise copy.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyResult {
    pub copy: usize,
    pub alpha_init: Option<f64>,
    pub alpha_final: f64,
    pub relative_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub method: MethodKind,
    pub alpha_init: Summary,
    pub gamma: f64,
    pub alpha_final: Summary,
    pub relative_error: Summary,
    pub iterations: Summary,
    pub copies: usize,
    /// `(copy, error message)` for copies that errored.
    pub failed: Vec<(usize, String)>,
    pub seed: u64,
    pub runs: Vec<CopyResult>,
}

/// A synthetic experiment with its sensitivity matrix and noisy surveys
/// precomputed, so several methods can be run against the same copies.
#[derive(Debug, Clone)]
pub struct Study {
    pub spec: SyntheticSpec,
    pub noise: NoiseSpec,
    pub sens: Sensitivity,
    pub exact: DensityModel,
    pub clean: Vec<f64>,
    pub surveys: Vec<SurveyData>,
}

impl Study {
    pub fn new(spec: SyntheticSpec, noise: NoiseSpec) -> Result<Self> {
        let exact = make_model(&spec)?;
        let stations = spec.mesh.stations();
        let sens = assemble_sensitivity(&spec.mesh, &stations)?;
        let clean = forward(&sens, &exact)?;
        let (surveys, _) = add_noise(&clean, &stations, &noise)?;
        Ok(Self {
            spec,
            noise,
            sens,
            exact,
            clean,
            surveys,
        })
    }

    /// Inverts every copy (in parallel) with `config` and aggregates.
    pub fn run(&self, config: &InversionConfig) -> Result<StudyReport> {
        self.run_with(config, |_, _, _| {})
    }

    /// Like [`Study::run`], calling `observer(copy, record, spectral)` after
    /// every iteration of every copy. Copies run concurrently, so the observer
    /// must be `Sync`.
    pub fn run_with<F>(&self, config: &InversionConfig, observer: F) -> Result<StudyReport>
    where
        F: Fn(usize, &IterationRecord, &SpectralData<'_>) + Sync,
    {
        let outcomes: Vec<(usize, Result<CopyResult>)> = self
            .surveys
            .par_iter()
            .enumerate()
            .map(|(c, survey)| (c, self.run_copy(c, survey, config, &observer)))
            .collect();

        let mut runs = Vec::new();
        let mut failed = Vec::new();
        let mut first_err = None;
        for (c, out) in outcomes {
            match out {
                Ok(r) => runs.push(r),
                Err(e) => {
                    log::warn!("copy {c} failed: {e}");
                    failed.push((c, e.to_string()));
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(first) = first_err.filter(|_| runs.is_empty()) {
            return Err(Error::AllCopiesFailed {
                copies: failed.len(),
                first: Box::new(first),
            });
        }
        let collect = |f: fn(&CopyResult) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        let init: Vec<f64> = runs.iter().filter_map(|r| r.alpha_init).collect();
        Ok(StudyReport {
            method: config.method.kind,
            alpha_init: Summary::of(&init),
            gamma: config.gamma,
            alpha_final: collect(|r| r.alpha_final),
            relative_error: collect(|r| r.relative_error),
            iterations: collect(|r| r.iterations as f64),
            copies: self.surveys.len(),
            failed,
            seed: self.noise.seed,
            runs,
        })
    }

    fn run_copy<F>(
        &self,
        copy: usize,
        survey: &SurveyData,
        config: &InversionConfig,
        observer: &F,
    ) -> Result<CopyResult>
    where
        F: Fn(usize, &IterationRecord, &SpectralData<'_>) + Sync,
    {
        let out = Inversion::new(&self.sens, &self.spec.mesh, survey, config)
            .with_exact(&self.exact)
            .run_with(|rec, sp| observer(copy, rec, sp))?;
        Ok(CopyResult {
            copy,
            alpha_init: out.report.alpha_init,
            alpha_final: out.report.final_alpha().unwrap_or(f64::NAN),
            relative_error: relative_error(&self.exact, &out.model)?,
            iterations: out.report.iterations,
            converged: out.report.converged,
        })
    }
}

/// Builds the study and runs one configuration.
pub fn run_study(spec: SyntheticSpec, noise: NoiseSpec, config: &InversionConfig) -> Result<StudyReport> {
    Study::new(spec, noise)?.run(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_geometry_gives_zero_model() {
        let spec = SyntheticSpec::custom(Mesh::new(3, 3, 2, 10.0).unwrap(), vec![]);
        assert!(make_model(&spec).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cube_sets_eighty_cells() {
        let m = make_model(&SyntheticSpec::cube(50.0)).unwrap();
        assert_eq!(m.values.iter().filter(|&&v| v == 1.0).count(), 80);
        assert_eq!(m.values.iter().filter(|&&v| v != 0.0).count(), 80);
    }

    #[test]
    fn dike_fixture_is_a_stepped_slab() {
        let spec = SyntheticSpec::dike();
        assert_eq!(spec.boxes.len(), 7);
        let m = make_model(&spec).unwrap();
        // 3 cells wide, 13 long, 7 layers
        assert_eq!(m.values.iter().filter(|&&v| v == 1.0).count(), 3 * 13 * 7);
        let mesh = &spec.mesh;
        let first_x = |k: usize| {
            (0..mesh.nx())
                .find(|&i| m.values[mesh.cell_index(i, 10, k)] == 1.0)
        };
        assert_eq!(first_x(0), None);
        assert_eq!(first_x(1), Some(7));
        assert_eq!(first_x(7), Some(13));
        assert_eq!(first_x(8), None);
    }

    #[test]
    fn later_boxes_win() {
        let mesh = Mesh::new(2, 1, 1, 10.0).unwrap();
        let a = DensityBox { x: [0.0, 20.0], y: [0.0, 10.0], z: [0.0, 10.0], rho: 1.0 };
        let b = DensityBox { x: [0.0, 10.0], y: [0.0, 10.0], z: [0.0, 10.0], rho: -0.5 };
        let m = make_model(&SyntheticSpec::custom(mesh, vec![a, b])).unwrap();
        assert_eq!(m.values, vec![-0.5, 1.0]);
    }

    #[test]
    fn outside_box_is_rejected() {
        let mesh = Mesh::new(2, 1, 1, 10.0).unwrap();
        let a = DensityBox { x: [0.0, 30.0], y: [0.0, 10.0], z: [0.0, 10.0], rho: 1.0 };
        assert!(matches!(
            make_model(&SyntheticSpec::custom(mesh, vec![a])),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn relative_error_cases() {
        let e = DensityModel::new(vec![1.0, 2.0, 0.0]);
        assert_eq!(relative_error(&e, &e).unwrap(), 0.0);
        assert_eq!(relative_error(&e, &DensityModel::zeros(3)).unwrap(), 1.0);
        let twice = DensityModel::new(vec![2.0, 4.0, 0.0]);
        assert!((relative_error(&e, &twice).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_error(&DensityModel::zeros(3), &e).is_err());
    }

    #[test]
    fn noise_spec_validation() {
        let mut n = NoiseSpec::level(2, 10, 1).unwrap();
        assert_eq!((n.eta1, n.eta2), (0.02, 0.005));
        assert!(n.validate().is_ok());
        n.eta1 = 0.0;
        n.eta2 = 0.0;
        assert!(n.validate().is_err());
        assert!(NoiseSpec::level(4, 1, 0).is_err());
    }

    #[test]
    fn sigma_follows_noise_formula() {
        let d = [3.0, -4.0];
        let s = noise_sigma(&d, 0.1, 0.01).unwrap();
        assert!((s[0] - (0.3 + 0.05)).abs() < 1e-15);
        assert!((s[1] - (0.4 + 0.05)).abs() < 1e-15);
        let uniform = noise_sigma(&d, 0.0, 0.01).unwrap();
        assert_eq!(uniform[0], uniform[1]);
        assert!(matches!(noise_sigma(&[0.0, 0.0], 0.1, 0.0), Err(Error::ZeroSigma { .. })));
    }

    #[test]
    fn add_noise_is_seeded_and_consistent() {
        let d: Vec<f64> = (1..=50).map(f64::from).collect();
        let st = vec![Station { x: 0.0, y: 0.0, z: 0.0 }; d.len()];
        let spec = NoiseSpec { eta1: 0.02, eta2: 0.005, copies: 3, seed: 9 };
        let (a, ea) = add_noise(&d, &st, &spec).unwrap();
        let (b, _) = add_noise(&d, &st, &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].d_obs, a[1].d_obs);
        let sigma = noise_sigma(&d, 0.02, 0.005).unwrap();
        for (s, e) in a.iter().zip(&ea) {
            assert_eq!(s.sigma, sigma);
            for i in 0..d.len() {
                assert_eq!(s.d_obs[i], d[i] + e[i]);
            }
        }
        let other = NoiseSpec { seed: 10, ..spec };
        assert_ne!(add_noise(&d, &st, &other).unwrap().0, a);
    }

    #[test]
    fn summary_of_one_has_zero_std() {
        let s = Summary::of(&[4.0]);
        assert_eq!((s.mean, s.std), (4.0, 0.0));
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
    }
}
