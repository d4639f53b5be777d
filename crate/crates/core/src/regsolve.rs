//! Standard-form Tikhonov solves through the thin SVD.
//!
//! For the right-preconditioned matrix `A = G~ D^-1` (m x n, m <= n) with thin
//! SVD `A = U S V^T`, the minimizer of `||A z - r||^2 + alpha^2 ||z||^2` is
//!
//! ```text
//! z(alpha) = sum_i f_i(alpha) (u_i^T r / sigma_i) v_i,   f_i = sigma_i^2 / (sigma_i^2 + alpha^2)
//! ```
//!
//! Only `m` singular triplets are kept; the remaining right singular vectors
//! span the null space and never contribute.

use faer::Mat;

use crate::error::{Error, Result};
use crate::forward::{dot, mat_t_vec};

#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Non-increasing, length m.
    pub singular_values: Vec<f64>,
    /// m x m, orthonormal columns.
    pub left: Mat<f64>,
    /// n x m, orthonormal columns.
    pub right: Mat<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn n(&self) -> usize {
        self.right.nrows()
    }

    /// Spectral coefficients `s_i = u_i^T r`.
    pub fn spectral(&self, r_tilde: &[f64]) -> Result<SpectralData<'_>> {
        if r_tilde.len() != self.left.nrows() {
            return Err(Error::DimensionMismatch {
                what: "residual length",
                expected: self.left.nrows(),
                found: r_tilde.len(),
            });
        }
        Ok(SpectralData {
            s: mat_t_vec(&self.left, r_tilde),
            sigma: &self.singular_values,
        })
    }
}

/// The residual expressed in the left singular basis, paired with the
/// singular values it was projected against.
#[derive(Debug, Clone)]
pub struct SpectralData<'a> {
    pub s: Vec<f64>,
    pub sigma: &'a [f64],
}

impl<'a> SpectralData<'a> {
    /// Build directly from raw coefficients (tests, synthetic spectra).
    pub fn new(s: Vec<f64>, sigma: &'a [f64]) -> Result<Self> {
        if s.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                what: "spectral coefficients",
                expected: sigma.len(),
                found: s.len(),
            });
        }
        Ok(Self { s, sigma })
    }

    pub fn norm_sq(&self) -> f64 {
        self.s.iter().map(|v| v * v).sum()
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// `G~ D^-1`: column j divided by `diag[j]`.
pub fn standard_form(weighted: &Mat<f64>, diag: &[f64]) -> Result<Mat<f64>> {
    if diag.len() != weighted.ncols() {
        return Err(Error::DimensionMismatch {
            what: "regularizer diagonal",
            expected: weighted.ncols(),
            found: diag.len(),
        });
    }
    check_positive(diag)?;
    let mut out = weighted.clone();
    for (j, &dj) in diag.iter().enumerate() {
        let inv = 1.0 / dj;
        for v in out.col_as_slice_mut(j) {
            *v *= inv;
        }
    }
    Ok(out)
}

pub(crate) fn check_positive(diag: &[f64]) -> Result<()> {
    match diag.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
        Some(index) => Err(Error::InvalidRegularizer {
            index,
            value: diag[index],
        }),
        None => Ok(()),
    }
}

/// Thin SVD of a wide (or square) matrix.
pub fn svd(a: &Mat<f64>) -> Result<SvdFactors> {
    let (m, n) = (a.nrows(), a.ncols());
    let fail = |detail: String| Error::Svd {
        rows: m,
        cols: n,
        detail,
    };
    if m > n {
        return Err(fail("expected rows <= cols".to_string()));
    }
    for j in 0..n {
        if let Some(i) = a.col_as_slice(j).iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite entry at ({i}, {j})")));
        }
    }
    let dec = a
        .thin_svd()
        .map_err(|e| fail(format!("bidiagonal QR iteration did not converge ({e:?})")))?;
    let singular_values: Vec<f64> = dec.S().column_vector().iter().copied().collect();
    if singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(fail("singular values not sorted".into()));
    }
    Ok(SvdFactors {
        singular_values,
        left: dec.U().to_owned(),
        right: dec.V().to_owned(),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "regularization parameter must be finite and > 0 (got {alpha})"
        )))
    }
}

/// `f_i = sigma_i^2 / (sigma_i^2 + alpha^2)`.
pub fn filter_factors(factors: &SvdFactors, alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    Ok(factor_values(&factors.singular_values, alpha))
}

pub(crate) fn factor_values(sigma: &[f64], alpha: f64) -> Vec<f64> {
    let a2 = alpha * alpha;
    sigma.iter().map(|&s| s * s / (s * s + a2)).collect()
}

/// `z(alpha) = V diag(sigma_i / (sigma_i^2 + alpha^2)) U^T r`.
///
/// Written with `f_i / sigma_i` folded together so a zero singular value
/// contributes nothing instead of dividing by zero.
pub fn solve_standard(factors: &SvdFactors, r_tilde: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let spectral = factors.spectral(r_tilde)?;
    Ok(solve_spectral(factors, &spectral.s, alpha))
}

pub(crate) fn solve_spectral(factors: &SvdFactors, s: &[f64], alpha: f64) -> Vec<f64> {
    let a2 = alpha * alpha;
    let v = &factors.right;
    let mut z = vec![0.0; v.nrows()];
    for (i, (&sig, &si)) in factors.singular_values.iter().zip(s).enumerate() {
        let coef = sig * si / (sig * sig + a2);
        if coef == 0.0 {
            continue;
        }
        for (zj, &vji) in z.iter_mut().zip(v.col_as_slice(i)) {
            *zj += coef * vji;
        }
    }
    z
}

/// Solve `(A^T A + alpha^2 I_n) z = A^T r` by a dense Cholesky factorization.
/// Independent of the SVD path; O(n^3).
pub fn dense_regularized_solve(a: &Mat<f64>, r_tilde: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let (m, n) = (a.nrows(), a.ncols());
    if r_tilde.len() != m {
        return Err(Error::DimensionMismatch {
            what: "residual length",
            expected: m,
            found: r_tilde.len(),
        });
    }
    // lower triangle of the normal matrix, row-major n x n
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        let ci = a.col_as_slice(i);
        for j in 0..=i {
            l[i * n + j] = dot(ci, a.col_as_slice(j));
        }
        l[i * n + i] += alpha * alpha;
    }
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::Factorization(format!(
                "normal matrix not positive definite at pivot {j} ({d:e})"
            )));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = l[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    let mut y = mat_t_vec(a, r_tilde);
    for i in 0..n {
        let mut v = y[i];
        for k in 0..i {
            v -= l[i * n + k] * y[k];
        }
        y[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * y[k];
        }
        y[i] = v / l[i * n + i];
    }
    Ok(y)
}
