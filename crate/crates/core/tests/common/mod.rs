//! Shared test oracles.
#![allow(dead_code)]

use focusgrav::forward::GRAVITATIONAL_CONSTANT;
use focusgrav::mesh::{CellBox, Station};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (v, err) = whole;
        if err <= tol || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        let left = gk15(f, a, m);
        let right = gk15(f, m, b);
        rec(f, a, m, 0.5 * tol, left, depth - 1) + rec(f, m, b, 0.5 * tol, right, depth - 1)
    }
    let whole = gk15(f, a, b);
    rec(f, a, b, tol, whole, 40)
}

/// Vertical attraction (mGal) of a unit-density (g/cm^3) box by direct
/// numerical integration of Newton's law, z positive down.
pub fn quadrature_gz(station: &Station, cell: &CellBox, rel_tol: f64) -> f64 {
    // coarse scale for the absolute tolerance: point-mass estimate
    let c = cell.center();
    let d2 = (c[0] - station.x).powi(2) + (c[1] - station.y).powi(2) + (c[2] - station.z).powi(2);
    let scale = cell.volume() * (c[2] - station.z).abs() / d2.powf(1.5);
    let tol = rel_tol * scale;
    let dx = cell.x[1] - cell.x[0];
    let dy = cell.y[1] - cell.y[0];

    let mut outer = |x: f64| {
        let mut middle = |y: f64| {
            let mut inner = |z: f64| {
                let (a, b, h) = (x - station.x, y - station.y, z - station.z);
                h / (a * a + b * b + h * h).powf(1.5)
            };
            integrate(&mut inner, cell.z[0], cell.z[1], 1e-3 * tol / (dx * dy))
        };
        integrate(&mut middle, cell.y[0], cell.y[1], 1e-2 * tol / dx)
    };
    let v = integrate(&mut outer, cell.x[0], cell.x[1], 1e-1 * tol);
    GRAVITATIONAL_CONSTANT * v * 1e8
}

/// `|a - b| / |b|`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
