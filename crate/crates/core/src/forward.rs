//! Closed-form prism gravity kernel and the dense sensitivity matrix.

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{CellBox, DensityModel, Mesh, Station};

/// Newtonian constant of gravitation, m^3 kg^-1 s^-2.
pub const GRAVITATIONAL_CONSTANT: f64 = 6.674e-11;

/// m/s^2 -> mGal times g/cm^3 -> kg/m^3.
const UNIT_SCALE: f64 = 1.0e5 * 1.0e3;

/// Vertical attraction (mGal) at `station` of `cell` filled with unit density
/// contrast (1 g/cm^3). Positive for mass below the station (z down).
///
/// Evaluates the eight-corner closed form. Each `ln(b + r)` with `b < 0` is
/// rewritten as `ln((a^2 + c^2) / (r - b))` to avoid cancellation near cell
/// edges, and the `c * atan(ab / (cr))` term is taken as zero on the plane
/// `c = 0`.
pub fn prism_kernel(station: &Station, cell: &CellBox) -> Result<f64> {
    let edge = cell.min_edge();
    if !(edge > 0.0 && edge.is_finite()) {
        return Err(Error::InvalidMesh(format!(
            "degenerate cell box {cell:?} (edge {edge})"
        )));
    }
    let guard = 1e-9 * edge;

    let mut sum = 0.0;
    for (p, &xp) in cell.x.iter().enumerate() {
        let a = station.x - xp;
        for (l, &yl) in cell.y.iter().enumerate() {
            let b = station.y - yl;
            for (s, &zs) in cell.z.iter().enumerate() {
                let c = station.z - zs;
                let r = (a * a + b * b + c * c).sqrt();
                if r < guard {
                    return Err(Error::KernelDomain {
                        corner: (p + 1, l + 1, s + 1),
                        detail: format!("station coincides with a prism corner (r = {r:e})"),
                    });
                }
                // (-1)^p (-1)^l (-1)^s with one-based p, l, s
                let mu = if (p + l + s) % 2 == 0 { -1.0 } else { 1.0 };
                let term = a * log_plus(b, r, a * a + c * c) + b * log_plus(a, r, b * b + c * c)
                    - if c == 0.0 { 0.0 } else { c * (a * b / (c * r)).atan() };
                if !term.is_finite() {
                    return Err(Error::KernelDomain {
                        corner: (p + 1, l + 1, s + 1),
                        detail: format!("non-finite term (a={a}, b={b}, c={c}, r={r})"),
                    });
                }
                sum += mu * term;
            }
        }
    }
    Ok(-GRAVITATIONAL_CONSTANT * sum * UNIT_SCALE)
}

/// `ln(t + r)` where `r^2 = t^2 + rest_sq`. Returns 0 when the argument
/// vanishes; that only happens when the multiplying coefficient is zero too.
fn log_plus(t: f64, r: f64, rest_sq: f64) -> f64 {
    if t >= 0.0 {
        (t + r).ln()
    } else if rest_sq > 0.0 {
        (rest_sq / (r - t)).ln()
    } else {
        0.0
    }
}

/// Dense `m x n` kernel matrix, mGal per g/cm^3.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    pub matrix: Mat<f64>,
}

impl Sensitivity {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Every entry is computed independently, so the result does not depend on
/// how rayon schedules the columns.
pub fn assemble_sensitivity(mesh: &Mesh, stations: &[Station]) -> Result<Sensitivity> {
    mesh.validate()?;
    let n = mesh.n_cells();
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let cell = mesh.cell_box(j);
            stations
                .iter()
                .enumerate()
                .map(|(i, st)| {
                    prism_kernel(st, &cell).map_err(|e| Error::Sensitivity {
                        station: i,
                        cell: j,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let matrix = Mat::from_fn(stations.len(), n, |i, j| columns[j][i]);
    Ok(Sensitivity { matrix })
}

/// `d = G m`.
pub fn forward(sens: &Sensitivity, model: &DensityModel) -> Result<Vec<f64>> {
    if model.len() != sens.cols() {
        return Err(Error::DimensionMismatch {
            what: "forward model length",
            expected: sens.cols(),
            found: model.len(),
        });
    }
    Ok(mat_vec(&sens.matrix, &model.values))
}

pub(crate) fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(a.col_as_slice(j)) {
            *o += aij * xj;
        }
    }
    out
}

pub(crate) fn mat_t_vec(a: &Mat<f64>, y: &[f64]) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| dot(a.col_as_slice(j), y))
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
