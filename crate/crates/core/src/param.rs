//! Regularization-parameter selection from spectral data.
//!
//! All three criteria are cheap once `s_i = u_i^T r` and `sigma_i` are known.
//! Writing `c_i(alpha) = 1 / (sigma_i^2 / alpha^2 + 1) = 1 - f_i(alpha)`:
//!
//! * discrepancy (MDP): root of `sum c_i^2 s_i^2 - m`
//! * chi-squared principle: root of `sum c_i s_i^2 - m`
//! * UPRE: minimizer of `sum c_i^2 s_i^2 + 2 sum f_i - m`
//!
//! Both root functions are non-decreasing in alpha, so bisection on
//! `log10(alpha)` is robust. UPRE is minimized over a log grid with one local
//! refinement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regsolve::{SpectralData, SvdFactors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Mdp,
    Upre,
    Chi2,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [MethodKind::Chi2, MethodKind::Upre, MethodKind::Mdp];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Mdp => "mdp",
            MethodKind::Upre => "upre",
            MethodKind::Chi2 => "chi2",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mdp" => Ok(MethodKind::Mdp),
            "upre" => Ok(MethodKind::Upre),
            "chi2" => Ok(MethodKind::Chi2),
            other => Err(format!("unknown method `{other}` (expected mdp, upre or chi2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamMethod {
    pub kind: MethodKind,
    /// Root acceptance: `|f(alpha)| <= tolerance * m`.
    pub tolerance: f64,
    /// Search interval. `None` uses `[1e-6 sigma_min, 1e3 sigma_max]`.
    pub bounds: Option<(f64, f64)>,
    /// Coarse UPRE grid size.
    pub grid: usize,
    /// Points in the single UPRE refinement pass.
    pub refine: usize,
    pub max_bisections: usize,
}

impl ParamMethod {
    pub const DEFAULT_TOLERANCE: f64 = 1e-6;
    pub const DEFAULT_GRID: usize = 200;
    pub const MIN_GRID: usize = 50;

    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            tolerance: Self::DEFAULT_TOLERANCE,
            bounds: None,
            grid: Self::DEFAULT_GRID,
            refine: 50,
            max_bisections: 200,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Domain(format!(
                "alpha tolerance must be > 0 (got {})",
                self.tolerance
            )));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Domain(format!(
                    "alpha bounds must satisfy 0 < lo < hi (got [{lo}, {hi}])"
                )));
            }
        }
        if self.grid < Self::MIN_GRID {
            return Err(Error::Domain(format!(
                "UPRE grid size must be >= {} (got {})",
                Self::MIN_GRID,
                self.grid
            )));
        }
        if self.refine < 2 {
            return Err(Error::Domain("UPRE refinement needs >= 2 points".into()));
        }
        Ok(())
    }

    fn bracket(&self, sigma: &[f64]) -> (f64, f64) {
        self.bounds.unwrap_or_else(|| default_bracket(sigma))
    }
}

/// `[1e-6 sigma_min, 1e3 sigma_max]`, with the lower end kept positive for
/// numerically rank-deficient spectra.
pub fn default_bracket(sigma: &[f64]) -> (f64, f64) {
    let max = sigma.iter().copied().fold(0.0, f64::max);
    let min = sigma.iter().copied().fold(f64::INFINITY, f64::min);
    ((1e-6 * min).max(1e-22 * max), 1e3 * max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchRecord {
    Bisection {
        lo: f64,
        hi: f64,
        steps: usize,
    },
    Grid {
        lo: f64,
        hi: f64,
        coarse_index: usize,
        coarse_alpha: f64,
        points: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamWarning {
    /// The tolerance band around the root covers more than six decades.
    FlatFunction,
    /// The root satisfied the tolerance only loosely after exhausting bisection.
    BisectionExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamResult {
    pub alpha: f64,
    pub objective_value: f64,
    pub evaluations: usize,
    pub search: SearchRecord,
    pub warnings: Vec<ParamWarning>,
}

#[inline]
fn complement(sigma: f64, alpha: f64) -> f64 {
    // 1 / (sigma^2 alpha^-2 + 1), written to stay finite for sigma = 0
    let a2 = alpha * alpha;
    a2 / (sigma * sigma + a2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must be finite and > 0 (got {alpha})")))
    }
}

pub fn mdp_function(spectral: &SpectralData<'_>, alpha: f64, m: usize) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(mdp_value(spectral, alpha, m))
}

pub fn chi2_function(spectral: &SpectralData<'_>, alpha: f64, m: usize) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(chi2_value(spectral, alpha, m))
}

pub fn upre_function(spectral: &SpectralData<'_>, alpha: f64, m: usize) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(upre_value(spectral, alpha, m))
}

fn mdp_value(sp: &SpectralData<'_>, alpha: f64, m: usize) -> f64 {
    sp.sigma
        .iter()
        .zip(&sp.s)
        .map(|(&sig, &s)| {
            let c = complement(sig, alpha);
            c * c * s * s
        })
        .sum::<f64>()
        - m as f64
}

fn chi2_value(sp: &SpectralData<'_>, alpha: f64, m: usize) -> f64 {
    sp.sigma
        .iter()
        .zip(&sp.s)
        .map(|(&sig, &s)| complement(sig, alpha) * s * s)
        .sum::<f64>()
        - m as f64
}

fn upre_value(sp: &SpectralData<'_>, alpha: f64, m: usize) -> f64 {
    let mut residual = 0.0;
    let mut trace = 0.0;
    for (&sig, &s) in sp.sigma.iter().zip(&sp.s) {
        let c = complement(sig, alpha);
        residual += c * c * s * s;
        trace += 1.0 - c;
    }
    residual + 2.0 * trace - m as f64
}

pub fn select_alpha(method: &ParamMethod, spectral: &SpectralData<'_>, m: usize) -> Result<ParamResult> {
    method.validate()?;
    if spectral.is_empty() {
        return Err(Error::Domain("empty spectral data".into()));
    }
    let (lo, hi) = method.bracket(spectral.sigma);
    match method.kind {
        MethodKind::Mdp => find_root(method, spectral, m, lo, hi, mdp_value),
        MethodKind::Chi2 => find_root(method, spectral, m, lo, hi, chi2_value),
        MethodKind::Upre => Ok(minimize_upre(method, spectral, m, lo, hi)),
    }
}

type Objective = fn(&SpectralData<'_>, f64, usize) -> f64;

fn find_root(
    method: &ParamMethod,
    sp: &SpectralData<'_>,
    m: usize,
    lo: f64,
    hi: f64,
    f: Objective,
) -> Result<ParamResult> {
    let no_root = || Error::NoRoot {
        method: method.kind,
        lo,
        hi,
        residual_norm_sq: sp.norm_sq(),
        m,
    };
    if sp.norm_sq() <= m as f64 {
        return Err(no_root());
    }
    let tol = method.tolerance * m as f64;
    let f_hi = f(sp, hi, m);
    let f_lo = f(sp, lo, m);
    let mut evaluations = 2;
    if f_hi < -tol || f_lo > tol {
        return Err(no_root());
    }

    let (mut a, mut b) = (lo.log10(), hi.log10());
    let (mut best, mut best_val) = if f_hi.abs() < f_lo.abs() {
        (hi, f_hi)
    } else {
        (lo, f_lo)
    };
    let mut steps = 0;
    let mut warnings = Vec::new();
    if best_val.abs() > tol {
        loop {
            if steps == method.max_bisections {
                warnings.push(ParamWarning::BisectionExhausted);
                break;
            }
            steps += 1;
            let mid = 0.5 * (a + b);
            let alpha = 10f64.powf(mid);
            let v = f(sp, alpha, m);
            evaluations += 1;
            if v.abs() < best_val.abs() {
                best = alpha;
                best_val = v;
            }
            if v.abs() <= tol {
                break;
            }
            if v > 0.0 {
                b = mid;
            } else {
                a = mid;
            }
            if b - a < 1e-15 {
                warnings.push(ParamWarning::BisectionExhausted);
                break;
            }
        }
    }

    let below = f(sp, best * 1e-3, m);
    let above = f(sp, best * 1e3, m);
    evaluations += 2;
    if below.abs() <= tol && above.abs() <= tol {
        log::warn!("{}: root function flat over > 6 decades around alpha = {best:e}", method.kind);
        warnings.push(ParamWarning::FlatFunction);
    }

    Ok(ParamResult {
        alpha: best,
        objective_value: best_val,
        evaluations,
        search: SearchRecord::Bisection {
            lo: 10f64.powf(a),
            hi: 10f64.powf(b),
            steps,
        },
        warnings,
    })
}

/// Grid argmin; ties go to the smaller alpha.
fn argmin_on(sp: &SpectralData<'_>, m: usize, logs: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &la) in logs.iter().enumerate() {
        let v = upre_value(sp, 10f64.powf(la), m);
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect()
}

fn minimize_upre(method: &ParamMethod, sp: &SpectralData<'_>, m: usize, lo: f64, hi: f64) -> ParamResult {
    let coarse = linspace(lo.log10(), hi.log10(), method.grid);
    let (ci, coarse_value) = argmin_on(sp, m, &coarse);
    let left = coarse[ci.saturating_sub(1)];
    let right = coarse[(ci + 1).min(coarse.len() - 1)];
    let fine = linspace(left, right, method.refine);
    let (fi, fine_value) = argmin_on(sp, m, &fine);
    // the refinement points need not include the coarse minimizer itself
    let (log_alpha, value) = if fine_value < coarse_value
        || (fine_value == coarse_value && fine[fi] < coarse[ci])
    {
        (fine[fi], fine_value)
    } else {
        (coarse[ci], coarse_value)
    };
    let alpha = 10f64.powf(log_alpha);
    ParamResult {
        alpha,
        objective_value: value,
        evaluations: coarse.len() + fine.len(),
        search: SearchRecord::Grid {
            lo,
            hi,
            coarse_index: ci,
            coarse_alpha: 10f64.powf(coarse[ci]),
            points: method.grid,
        },
        warnings: Vec::new(),
    }
}

/// How the mean singular value in the `alpha^(1)` heuristic is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularMean {
    /// `sum sigma_i / n`: the mean over the `n` diagonal slots of the full
    /// `m x n` singular value matrix, zeros included. Matches the reference
    /// starting values of the dike and cube experiments.
    #[default]
    FullSigma,
    /// `sum sigma_i / m`: the mean of the retained singular values.
    Retained,
}

/// `alpha^(1) = (n/m)^gamma * max(sigma) / mean(sigma)`.
pub fn init_alpha(factors: &SvdFactors, m: usize, n: usize, gamma: f64, mean: SingularMean) -> Result<f64> {
    if !(0.0..=2.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma must lie in [0, 2] (got {gamma})")));
    }
    if m == 0 || n == 0 {
        return Err(Error::Domain("empty problem".into()));
    }
    let sigma = &factors.singular_values;
    let max = sigma.iter().copied().fold(0.0, f64::max);
    let sum: f64 = sigma.iter().sum();
    let denom = match mean {
        SingularMean::FullSigma => n as f64,
        SingularMean::Retained => sigma.len() as f64,
    };
    if !(sum > 0.0) {
        return Err(Error::Domain("all singular values are zero".into()));
    }
    Ok((n as f64 / m as f64).powf(gamma) * max / (sum / denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use faer::Mat;

    fn sp<'a>(s: &[f64], sigma: &'a [f64]) -> SpectralData<'a> {
        SpectralData::new(s.to_vec(), sigma).unwrap()
    }

    #[test]
    fn single_term_arithmetic() {
        let sigma = [1.0];
        assert_relative_eq!(mdp_function(&sp(&[2.0], &sigma), 1.0, 1).unwrap(), 0.0);
        let s = [2f64.sqrt()];
        assert_relative_eq!(chi2_function(&sp(&s, &sigma), 1.0, 1).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn limits() {
        let sigma = [3.0, 1.0, 0.2];
        let data = sp(&[1.0, 2.0, 3.0], &sigma);
        let m = 3;
        let norm = data.norm_sq() - m as f64;
        for f in [mdp_function, chi2_function] {
            assert_relative_eq!(f(&data, 1e-9, m).unwrap(), -(m as f64), epsilon = 1e-12);
            assert_relative_eq!(f(&data, 1e9, m).unwrap(), norm, epsilon = 1e-12);
        }
        assert_relative_eq!(upre_function(&data, 1e9, m).unwrap(), norm, epsilon = 1e-12);
        assert_relative_eq!(upre_function(&data, 1e-9, m).unwrap(), m as f64, epsilon = 1e-12);
        assert!(mdp_function(&data, 0.0, m).is_err());
        assert!(upre_function(&data, -1.0, m).is_err());
    }

    #[test]
    fn no_root_when_data_already_fit() {
        let sigma = [2.0, 1.0];
        let data = sp(&[1.0, 0.5], &sigma);
        for kind in [MethodKind::Chi2, MethodKind::Mdp] {
            let err = select_alpha(&ParamMethod::new(kind), &data, 2).unwrap_err();
            assert!(matches!(err, Error::NoRoot { .. }), "{err}");
        }
    }

    #[test]
    fn roots_meet_tolerance() {
        let sigma = [10.0, 1.0, 0.1];
        let data = sp(&[5.0, 5.0, 5.0], &sigma);
        for kind in [MethodKind::Chi2, MethodKind::Mdp] {
            let res = select_alpha(&ParamMethod::new(kind), &data, 3).unwrap();
            assert!(res.objective_value.abs() <= 1e-6 * 3.0);
            assert!(matches!(res.search, SearchRecord::Bisection { .. }));
        }
    }

    #[test]
    fn upre_picks_interior_minimum() {
        let sigma: Vec<f64> = (0..30).map(|i| 10f64.powf(1.0 - 0.2 * i as f64)).collect();
        // exact coefficients decay faster than sigma, plus unit noise
        let s: Vec<f64> = sigma
            .iter()
            .enumerate()
            .map(|(i, &sg)| 20.0 * sg * sg + if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let data = SpectralData::new(s, &sigma).unwrap();
        let res = select_alpha(&ParamMethod::new(MethodKind::Upre), &data, 30).unwrap();
        let (lo, hi) = default_bracket(&sigma);
        assert!(res.alpha > lo * 10.0 && res.alpha < hi / 10.0);
        for probe in [res.alpha * 0.5, res.alpha * 2.0] {
            assert!(upre_function(&data, probe, 30).unwrap() >= res.objective_value);
        }
    }

    #[test]
    fn method_validation() {
        assert!(ParamMethod::new(MethodKind::Upre).with_grid(10).validate().is_err());
        assert!(ParamMethod::new(MethodKind::Chi2).with_tolerance(0.0).validate().is_err());
        assert!(ParamMethod::new(MethodKind::Chi2).with_bounds(2.0, 1.0).validate().is_err());
        assert!(ParamMethod::new(MethodKind::Chi2).validate().is_ok());
        assert_eq!("UPRE".parse::<MethodKind>().unwrap(), MethodKind::Upre);
        assert!("gcv".parse::<MethodKind>().is_err());
    }

    fn equal_sigma_factors(m: usize, n: usize) -> SvdFactors {
        SvdFactors {
            singular_values: vec![2.5; m],
            left: Mat::identity(m, m),
            right: Mat::from_fn(n, m, |i, j| if i == j { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn init_alpha_equal_singular_values() {
        let f = equal_sigma_factors(4, 10);
        let retained = init_alpha(&f, 4, 10, 1.5, SingularMean::Retained).unwrap();
        assert_relative_eq!(retained, 2.5f64.powf(1.5), epsilon = 1e-12);
        let full = init_alpha(&f, 4, 10, 1.5, SingularMean::FullSigma).unwrap();
        assert_relative_eq!(full, 2.5f64.powf(2.5), epsilon = 1e-12);
        assert!(init_alpha(&f, 4, 10, 2.5, SingularMean::Retained).is_err());
    }
}
