//! Helpers shared by the integration tests. Oracles here are written independently of
//! the library numerics.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use todalab::{ScalarField, TorusGrid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random trigonometric polynomial with wavenumbers `|k|∞ ≤ kmax`.
pub fn smooth_field(grid: TorusGrid, rng: &mut ChaCha8Rng, amp: f64, kmax: i32) -> ScalarField {
    let terms: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.gen_range(-kmax..=kmax) as f64,
                rng.gen_range(-kmax..=kmax) as f64,
                rng.gen_range(-amp..=amp),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    ScalarField::from_fn(grid, |p| terms.iter().map(|&(a, b, c, ph)| c * (2.0 * PI * (a * p.x + b * p.y) + ph).cos()).sum())
}

/// Same as [`smooth_field`] with the mean removed.
pub fn zero_mean_field(grid: TorusGrid, rng: &mut ChaCha8Rng, amp: f64, kmax: i32) -> ScalarField {
    let f = smooth_field(grid, rng, amp, kmax);
    let m = f.values().iter().sum::<f64>() / f.values().len() as f64;
    f.shift(-m)
}

/// Adaptive Simpson on `[a, b]`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Fourth-order periodic finite-difference flat Laplacian on grid values.
pub fn fd4_laplacian(f: &ScalarField) -> Vec<f64> {
    let n = f.grid().n();
    let h = f.grid().h();
    let v = f.values();
    let at = |i: isize, j: isize| v[(i.rem_euclid(n as isize) as usize) * n + j.rem_euclid(n as isize) as usize];
    let mut out = vec![0.0; n * n];
    for i in 0..n as isize {
        for j in 0..n as isize {
            let d2x = -at(i + 2, j) + 16.0 * at(i + 1, j) - 30.0 * at(i, j) + 16.0 * at(i - 1, j) - at(i - 2, j);
            let d2y = -at(i, j + 2) + 16.0 * at(i, j + 1) - 30.0 * at(i, j) + 16.0 * at(i, j - 1) - at(i, j - 2);
            out[i as usize * n + j as usize] = (d2x + d2y) / (12.0 * h * h);
        }
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
