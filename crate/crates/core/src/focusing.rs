//! Iteratively reweighted focusing inversion with the minimum-support
//! stabilizer.
//!
//! Each iteration solves a standard-form Tikhonov problem with regularizer
//! `D(k) = W_e(k) W_depth W_hard`, where `W_e(k)` is rebuilt from the last model
//! change. The update is mapped back through `D(k)^-1`, clamped to the density
//! bounds, and the loop stops once the whitened residual reaches the noise
//! level `m + sqrt(2m)`.

use faer::Mat;

use crate::error::{Error, Result};
use crate::forward::{mat_vec, Sensitivity};
use crate::mesh::{DensityModel, Mesh};
use crate::param::{init_alpha, select_alpha, ParamMethod, SingularMean};
use crate::regsolve::{check_positive, solve_spectral, standard_form, svd, SpectralData};
use crate::synth::{relative_error, SurveyData};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightingConfig {
    pub beta: f64,
    pub epsilon: f64,
    pub hard_value: f64,
    /// `(cell index, prescribed density)`.
    pub hard_cells: Vec<(usize, f64)>,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            epsilon: 0.02,
            hard_value: 1e6,
            hard_cells: Vec::new(),
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be >= 0 (got {})", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be > 0 (got {})", self.epsilon)));
        }
        if !(self.hard_value >= 1.0 && self.hard_value.is_finite()) {
            return Err(Error::Domain(format!("H must be >= 1 (got {})", self.hard_value)));
        }
        for &(j, rho) in &self.hard_cells {
            if j >= n {
                return Err(Error::Domain(format!("hard cell {j} outside model of {n} cells")));
            }
            if !rho.is_finite() {
                return Err(Error::Domain(format!("hard cell {j} density is not finite")));
            }
        }
        Ok(())
    }

    /// `W_hard`: identity with `H` at the constrained cells.
    pub fn hard_diagonal(&self, n: usize) -> Vec<f64> {
        let mut w = vec![1.0; n];
        for &(j, _) in &self.hard_cells {
            w[j] = self.hard_value;
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsConfig {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl BoundsConfig {
    pub fn new(rho_min: f64, rho_max: f64) -> Result<Self> {
        let b = Self { rho_min, rho_max };
        b.validate()?;
        Ok(b)
    }

    /// No clamping.
    pub fn unbounded() -> Self {
        Self {
            rho_min: f64::NEG_INFINITY,
            rho_max: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho_min < self.rho_max {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "density bounds need rho_min < rho_max (got [{}, {}])",
                self.rho_min, self.rho_max
            )))
        }
    }

    pub fn project(&self, values: &mut [f64]) {
        for v in values {
            *v = v.clamp(self.rho_min, self.rho_max);
        }
    }
}

/// Everything `invert` needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub weights: WeightingConfig,
    pub bounds: BoundsConfig,
    pub method: ParamMethod,
    /// Exponent in the `alpha^(1)` heuristic.
    pub gamma: f64,
    pub singular_mean: SingularMean,
    pub max_iters: usize,
}

impl InversionConfig {
    pub fn new(method: ParamMethod) -> Self {
        Self {
            weights: WeightingConfig::default(),
            bounds: BoundsConfig {
                rho_min: 0.0,
                rho_max: 1.0,
            },
            method,
            gamma: 1.5,
            singular_mean: SingularMean::default(),
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    NoiseLevel,
    MaxIterations,
    NoRoot,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::NoiseLevel => "noise-level",
            StopReason::MaxIterations => "max-iterations",
            StopReason::NoRoot => "no-root",
        }
    }
}

/// One completed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub k: usize,
    pub alpha: f64,
    /// Weighted data misfit of the projected model.
    pub fidelity: f64,
    /// `||D(k) (m(k+1) - m(k))||^2` for the projected step.
    pub reg_term: f64,
    /// Equal to `fidelity`; kept separately since it is the stopping statistic.
    pub chi2: f64,
    pub relative_error: Option<f64>,
    pub param_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub reason: StopReason,
    pub iterations: usize,
    pub alpha_init: Option<f64>,
    pub threshold: f64,
    pub initial_chi2: f64,
    pub history: Vec<IterationRecord>,
}

impl ConvergenceReport {
    pub fn final_alpha(&self) -> Option<f64> {
        self.history.last().map(|r| r.alpha)
    }
}

/// Iteration state after the last completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionState {
    pub k: usize,
    pub model: DensityModel,
    pub prev_model: DensityModel,
    pub alpha: Option<f64>,
    pub chi2_computed: f64,
    pub fidelity: f64,
    pub reg_term: f64,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct InversionOutcome {
    pub model: DensityModel,
    pub report: ConvergenceReport,
    pub state: InversionState,
}

/// `m + sqrt(2 m)`.
pub fn chi2_threshold(m: usize) -> f64 {
    let m = m as f64;
    m + (2.0 * m).sqrt()
}

/// `1 / z_j^beta` with `z_j` the depth of cell j's center.
pub fn depth_weights(mesh: &Mesh, beta: f64) -> Result<Vec<f64>> {
    (0..mesh.n_cells())
        .map(|j| {
            let z = mesh.cell_center(j)[2];
            if z > 0.0 {
                Ok(z.powf(-beta))
            } else {
                Err(Error::InvalidMesh(format!(
                    "cell {j} has non-positive center depth {z}"
                )))
            }
        })
        .collect()
}

/// `((m_j - prev_j)^2 + eps^2)^(-1/2)`.
pub fn focusing_weights(model: &DensityModel, prev: &DensityModel, epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be > 0 (got {epsilon})")));
    }
    if model.len() != prev.len() {
        return Err(Error::DimensionMismatch {
            what: "focusing weights",
            expected: model.len(),
            found: prev.len(),
        });
    }
    let e2 = epsilon * epsilon;
    Ok(model
        .values
        .iter()
        .zip(&prev.values)
        .map(|(a, b)| 1.0 / ((a - b) * (a - b) + e2).sqrt())
        .collect())
}

/// Elementwise product of the three diagonals.
pub fn build_regularizer(depth: &[f64], focus: &[f64], hard: &[f64]) -> Result<Vec<f64>> {
    let n = depth.len();
    for (what, d) in [("focusing weights", focus), ("hard weights", hard)] {
        if d.len() != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                found: d.len(),
            });
        }
    }
    let out: Vec<f64> = depth
        .iter()
        .zip(focus)
        .zip(hard)
        .map(|((a, b), c)| a * b * c)
        .collect();
    check_positive(&out)?;
    Ok(out)
}

/// A configured inversion over one survey.
pub struct Inversion<'a> {
    sens: &'a Sensitivity,
    mesh: &'a Mesh,
    survey: &'a SurveyData,
    config: &'a InversionConfig,
    prior: Option<&'a DensityModel>,
    exact: Option<&'a DensityModel>,
}

impl<'a> Inversion<'a> {
    pub fn new(
        sens: &'a Sensitivity,
        mesh: &'a Mesh,
        survey: &'a SurveyData,
        config: &'a InversionConfig,
    ) -> Self {
        Self {
            sens,
            mesh,
            survey,
            config,
            prior: None,
            exact: None,
        }
    }

    /// Reference model `m_apr`; defaults to zero.
    pub fn with_prior(mut self, prior: &'a DensityModel) -> Self {
        self.prior = Some(prior);
        self
    }

    /// Known true model, enabling per-iteration relative errors.
    pub fn with_exact(mut self, exact: &'a DensityModel) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn run(&self) -> Result<InversionOutcome> {
        self.run_with(|_, _| {})
    }

    /// Runs the loop, calling `observer` after every completed iteration with
    /// the record and the spectral data used to pick that iteration's alpha.
    pub fn run_with(
        &self,
        mut observer: impl FnMut(&IterationRecord, &SpectralData<'_>),
    ) -> Result<InversionOutcome> {
        let cfg = self.config;
        let (m, n) = (self.sens.rows(), self.sens.cols());
        self.check_inputs(m, n)?;

        // whitening: G~ = W_d G, d~ = W_d d_obs
        let inv_sigma: Vec<f64> = self.survey.sigma.iter().map(|s| 1.0 / s).collect();
        let weighted = Mat::from_fn(m, n, |i, j| self.sens.matrix[(i, j)] * inv_sigma[i]);
        let d_tilde: Vec<f64> = self
            .survey
            .d_obs
            .iter()
            .zip(&inv_sigma)
            .map(|(d, w)| d * w)
            .collect();

        let mut prior = self
            .prior
            .cloned()
            .unwrap_or_else(|| DensityModel::zeros(n));
        for &(j, rho) in &cfg.weights.hard_cells {
            prior.values[j] = rho;
        }

        let residual = |model: &[f64]| -> Vec<f64> {
            mat_vec(&weighted, model)
                .iter()
                .zip(&d_tilde)
                .map(|(p, d)| d - p)
                .collect()
        };
        let norm_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let rel_err = |model: &DensityModel| -> Result<Option<f64>> {
            self.exact.map(|e| relative_error(e, model)).transpose()
        };

        let threshold = chi2_threshold(m);
        let mut r = residual(&prior.values);
        let initial_chi2 = norm_sq(&r);
        let mut state = InversionState {
            k: 0,
            model: prior.clone(),
            prev_model: prior.clone(),
            alpha: None,
            chi2_computed: initial_chi2,
            fidelity: initial_chi2,
            reg_term: 0.0,
            relative_error: rel_err(&prior)?,
        };
        let mut report = ConvergenceReport {
            converged: initial_chi2 <= threshold,
            reason: StopReason::NoiseLevel,
            iterations: 0,
            alpha_init: None,
            threshold,
            initial_chi2,
            history: Vec::new(),
        };
        if report.converged {
            return Ok(InversionOutcome {
                model: prior,
                report,
                state,
            });
        }

        let depth = depth_weights(self.mesh, cfg.weights.beta)?;
        let hard = cfg.weights.hard_diagonal(n);
        let mut reg = build_regularizer(&depth, &vec![1.0; n], &hard)?;
        report.reason = StopReason::MaxIterations;

        for k in 0..cfg.max_iters {
            let a = standard_form(&weighted, &reg).map_err(|e| e.at_iteration(k + 1))?;
            let factors = svd(&a).map_err(|e| e.at_iteration(k + 1))?;
            drop(a);
            let spectral = factors.spectral(&r).map_err(|e| e.at_iteration(k + 1))?;
            let (alpha, evals) = if k == 0 {
                let a1 = init_alpha(&factors, m, n, cfg.gamma, cfg.singular_mean)
                    .map_err(|e| e.at_iteration(k + 1))?;
                (a1, 0)
            } else {
                match select_alpha(&cfg.method, &spectral, m) {
                    Ok(res) => (res.alpha, res.evaluations),
                    Err(Error::NoRoot { .. }) => {
                        report.converged = true;
                        report.reason = StopReason::NoRoot;
                        break;
                    }
                    Err(e) => return Err(e.at_iteration(k + 1)),
                }
            };
            let z = solve_spectral(&factors, &spectral.s, alpha);
            let mut next: Vec<f64> = state
                .model
                .values
                .iter()
                .zip(&z)
                .zip(&reg)
                .map(|((mj, zj), dj)| mj + zj / dj)
                .collect();
            if let Some(cell) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { cell }.at_iteration(k + 1));
            }
            cfg.bounds.project(&mut next);
            if k == 0 {
                report.alpha_init = Some(alpha);
            }

            r = residual(&next);
            let chi2 = norm_sq(&r);
            let reg_term: f64 = next
                .iter()
                .zip(&state.model.values)
                .zip(&reg)
                .map(|((a, b), d)| {
                    let v = d * (a - b);
                    v * v
                })
                .sum();
            let next = DensityModel::new(next);
            let record = IterationRecord {
                k: k + 1,
                alpha,
                fidelity: chi2,
                reg_term,
                chi2,
                relative_error: rel_err(&next)?,
                param_evaluations: evals,
            };
            observer(&record, &spectral);

            let focus = focusing_weights(&next, &state.model, cfg.weights.epsilon)
                .map_err(|e| e.at_iteration(k + 1))?;
            reg = build_regularizer(&depth, &focus, &hard).map_err(|e| e.at_iteration(k + 1))?;

            state.prev_model = std::mem::replace(&mut state.model, next);
            state.k = k + 1;
            state.alpha = Some(alpha);
            state.chi2_computed = chi2;
            state.fidelity = chi2;
            state.reg_term = reg_term;
            state.relative_error = record.relative_error;
            report.history.push(record);
            report.iterations = k + 1;

            if chi2 <= threshold {
                report.converged = true;
                report.reason = StopReason::NoiseLevel;
                break;
            }
        }

        if report.converged && report.history.len() >= 3 {
            let tail = &report.history[report.history.len() - 3..];
            if tail.windows(2).any(|w| w[1].chi2 > w[0].chi2) {
                log::warn!("chi2 increased within the final three iterations");
            }
        }

        Ok(InversionOutcome {
            model: state.model.clone(),
            report,
            state,
        })
    }

    fn check_inputs(&self, m: usize, n: usize) -> Result<()> {
        let cfg = self.config;
        if n != self.mesh.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "sensitivity columns vs mesh cells",
                expected: self.mesh.n_cells(),
                found: n,
            });
        }
        self.survey.validate()?;
        if self.survey.len() != m {
            return Err(Error::DimensionMismatch {
                what: "survey length vs sensitivity rows",
                expected: m,
                found: self.survey.len(),
            });
        }
        for (what, model) in [("prior model", self.prior), ("exact model", self.exact)] {
            if let Some(model) = model {
                if model.len() != n {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: n,
                        found: model.len(),
                    });
                }
            }
        }
        cfg.weights.validate(n)?;
        cfg.bounds.validate()?;
        cfg.method.validate()?;
        if m > n {
            return Err(Error::Domain(format!(
                "expected fewer data than cells (m = {m}, n = {n})"
            )));
        }
        Ok(())
    }
}

/// Convenience wrapper around [`Inversion`].
pub fn invert(
    sens: &Sensitivity,
    mesh: &Mesh,
    survey: &SurveyData,
    config: &InversionConfig,
    prior: Option<&DensityModel>,
) -> Result<(DensityModel, ConvergenceReport)> {
    let mut inv = Inversion::new(sens, mesh, survey, config);
    if let Some(p) = prior {
        inv = inv.with_prior(p);
    }
    let out = inv.run()?;
    Ok((out.model, out.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn threshold_values() {
        assert_relative_eq!(chi2_threshold(2), 4.0);
        assert_relative_eq!(chi2_threshold(400), 400.0 + 800f64.sqrt());
        assert!((chi2_threshold(400) - 428.28).abs() < 5e-3);
        assert!((chi2_threshold(150) - 167.32).abs() < 5e-3);
    }

    #[test]
    fn depth_weight_ratios() {
        let mesh = Mesh::dike();
        let w = depth_weights(&mesh, 0.8).unwrap();
        let top = w[0];
        let bottom = w[mesh.n_cells() - 1];
        assert_relative_eq!(top / bottom, 19f64.powf(0.8), epsilon = 1e-12);
        assert!((top / bottom - 10.54).abs() < 0.01);
        assert!(depth_weights(&mesh, 0.0).unwrap().iter().all(|&v| v == 1.0));

        let two = Mesh::new(1, 1, 4, 50.0).unwrap().with_origin([0.0, 0.0, 0.0]);
        let w = depth_weights(&two, 1.0).unwrap();
        // centers at 25 and 175 m
        assert_relative_eq!(w[0] / w[3], 7.0);
    }

    #[test]
    fn depth_weights_reject_cells_above_datum() {
        let mesh = Mesh::new(1, 1, 2, 10.0).unwrap().with_origin([0.0, 0.0, -20.0]);
        assert!(matches!(depth_weights(&mesh, 0.8), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn focusing_weight_values() {
        let a = DensityModel::new(vec![0.3, 1.0, 0.0]);
        let w = focusing_weights(&a, &a, 0.02).unwrap();
        assert!(w.iter().all(|&v| (v - 50.0).abs() < 1e-12));
        let prev = DensityModel::new(vec![0.3, 0.0, 0.5]);
        let w = focusing_weights(&a, &prev, 0.02).unwrap();
        assert_relative_eq!(w[1], 1.0 / (1.0 + 4e-4f64).sqrt());
        assert!((w[1] - 0.9998).abs() < 1e-4);
        assert!(w[0] > w[2] && w[2] > w[1]);
        assert!(focusing_weights(&a, &prev, 0.0).is_err());
    }

    #[test]
    fn regularizer_product() {
        let one = vec![1.0; 3];
        assert_eq!(build_regularizer(&one, &one, &one).unwrap(), one);
        let hard = vec![1.0, 100.0, 1.0];
        let d = build_regularizer(&[2.0; 3], &one, &hard).unwrap();
        assert_eq!(d, vec![2.0, 200.0, 2.0]);
        assert!(build_regularizer(&one, &[1.0, 0.0, 1.0], &one).is_err());
    }

    #[test]
    fn bounds_projection_and_validation() {
        let b = BoundsConfig::new(0.0, 1.0).unwrap();
        let mut v = vec![-0.5, 0.5, 2.0];
        b.project(&mut v);
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
        assert!(BoundsConfig::new(1.0, 1.0).is_err());
        let mut w = vec![-1e9, 1e9];
        BoundsConfig::unbounded().project(&mut w);
        assert_eq!(w, vec![-1e9, 1e9]);
    }

    #[test]
    fn weighting_validation() {
        let mut w = WeightingConfig::default();
        assert!(w.validate(10).is_ok());
        w.hard_cells.push((10, 1.0));
        assert!(w.validate(10).is_err());
        w.hard_cells.clear();
        w.hard_value = 0.5;
        assert!(w.validate(10).is_err());
    }
}
