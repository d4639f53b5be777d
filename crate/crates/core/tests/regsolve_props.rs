use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use focusgrav::regsolve::{dense_regularized_solve, filter_factors, solve_standard, standard_form, svd};

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Mat<f64> {
    Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

fn fro(a: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        s += a.col_as_slice(j).iter().map(|v| v * v).sum::<f64>();
    }
    s.sqrt()
}

fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

#[test]
fn random_4x7_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_matrix(&mut rng, 4, 7);
    let r: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = svd(&a).unwrap();
    let z = solve_standard(&f, &r, 0.3).unwrap();
    let zd = dense_regularized_solve(&a, &r, 0.3).unwrap();
    assert!(rel_vec(&z, &zd) < 1e-8);
}

#[test]
fn equal_rows_give_tiny_trailing_singular_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut a = random_matrix(&mut rng, 5, 9);
    for j in 0..9 {
        a[(4, j)] = a[(3, j)];
    }
    let f = svd(&a).unwrap();
    let s = &f.singular_values;
    assert!(s[4] / s[0] < 1e-12, "{s:?}");
    let r = vec![1.0, -1.0, 0.5, 2.0, 2.0];
    let z = solve_standard(&f, &r, 1e-3).unwrap();
    assert!(z.iter().all(|v| v.is_finite()));
}

#[test]
fn standard_form_then_solve_matches_weighted_dense_problem() {
    // min ||G m - r||^2 + alpha^2 ||D m||^2 solved two ways
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_matrix(&mut rng, 6, 15);
    let d: Vec<f64> = (0..15).map(|_| rng.random_range(0.5..3.0)).collect();
    let r: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let alpha = 0.2;
    let a = standard_form(&g, &d).unwrap();
    let z = solve_standard(&svd(&a).unwrap(), &r, alpha).unwrap();
    let m_svd: Vec<f64> = z.iter().zip(&d).map(|(z, d)| z / d).collect();
    let z_dense = dense_regularized_solve(&a, &r, alpha).unwrap();
    let m_dense: Vec<f64> = z_dense.iter().zip(&d).map(|(z, d)| z / d).collect();
    assert!(rel_vec(&m_svd, &m_dense) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_is_orthonormal(seed in any::<u64>(), m in 1usize..12, extra in 0usize..12) {
        let n = m + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, m, n);
        let f = svd(&a).unwrap();
        let s = &f.singular_values;
        prop_assert_eq!(s.len(), m);
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&v| v >= 0.0));
        let rec = Mat::from_fn(m, n, |i, j| (0..m).map(|k| f.left[(i, k)] * s[k] * f.right[(j, k)]).sum::<f64>());
        let diff = Mat::from_fn(m, n, |i, j| rec[(i, j)] - a[(i, j)]);
        prop_assert!(fro(&diff) / fro(&a) < 1e-10);
        for (q, rows) in [(&f.left, m), (&f.right, n)] {
            for p in 0..m {
                for k in 0..m {
                    let g: f64 = (0..rows).map(|i| q[(i, p)] * q[(i, k)]).sum();
                    let want = if p == k { 1.0 } else { 0.0 };
                    prop_assert!((g - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn svd_and_dense_paths_agree(seed in any::<u64>(), m in 1usize..20, extra in 0usize..30, la in -2.0..1.0f64) {
        let n = m + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, m, n);
        let r: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = svd(&a).unwrap();
        let alpha = f.singular_values[0] * 10f64.powf(la);
        let z = solve_standard(&f, &r, alpha).unwrap();
        let zd = dense_regularized_solve(&a, &r, alpha).unwrap();
        prop_assert!(rel_vec(&z, &zd) < 1e-8);
    }

    #[test]
    fn filter_factors_are_ordered_fractions(seed in any::<u64>(), m in 1usize..10, la in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, m, m + 3);
        let f = svd(&a).unwrap();
        let ff = filter_factors(&f, 10f64.powf(la)).unwrap();
        prop_assert!(ff.iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(ff.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_flips_leave_solution_unchanged(seed in any::<u64>(), m in 1usize..8, flip in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, m, m + 4);
        let r: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = svd(&a).unwrap();
        let mut g = f.clone();
        for k in 0..m {
            if flip >> (k % 8) & 1 == 1 {
                for i in 0..m {
                    g.left[(i, k)] = -g.left[(i, k)];
                }
                for i in 0..m + 4 {
                    g.right[(i, k)] = -g.right[(i, k)];
                }
            }
        }
        let z1 = solve_standard(&f, &r, 0.1).unwrap();
        let z2 = solve_standard(&g, &r, 0.1).unwrap();
        prop_assert!(rel_vec(&z2, &z1) < 1e-14);
    }
}
