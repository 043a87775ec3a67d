mod common;

use std::f64::consts::PI;

use todalab::bubble::bubble_mass;
use todalab::greens::{green_pair_case1, green_pair_case2, Case2Options, GreenPair};
use todalab::testfn::{
    asymptotic_fit_case1, build_test_case1, build_test_case2, deficit_data, evaluate_phi0, evaluate_phi0_with,
    FitOptions, HybridOptions,
};
use todalab::{make_flat_torus, Error, Metric, Point, ScalarField};

fn case1(n: usize) -> (Metric, GreenPair) {
    let m = make_flat_torus(n).unwrap();
    let pair = green_pair_case1(Point::new(0.25, 0.5), Point::new(0.75, 0.5), &m).unwrap();
    (m, pair)
}

fn case2(n: usize) -> (Metric, GreenPair) {
    let m = make_flat_torus(n).unwrap();
    let pair = green_pair_case2(Point::new(0.5, 0.5), &m, &Case2Options::default()).unwrap();
    (m, pair)
}

/// Fourth-order central first derivatives on the periodic grid.
fn fd4_grad(f: &ScalarField) -> (Vec<f64>, Vec<f64>) {
    let n = f.grid().n() as isize;
    let h = f.grid().h();
    let v = f.values();
    let at = |i: isize, j: isize| v[(i.rem_euclid(n) * n + j.rem_euclid(n)) as usize];
    let mut gx = vec![0.0; v.len()];
    let mut gy = vec![0.0; v.len()];
    for i in 0..n {
        for j in 0..n {
            let k = (i * n + j) as usize;
            gx[k] = (-at(i + 2, j) + 8.0 * at(i + 1, j) - 8.0 * at(i - 1, j) + at(i - 2, j)) / (12.0 * h);
            gy[k] = (-at(i, j + 2) + 8.0 * at(i, j + 1) - 8.0 * at(i, j - 1) + at(i, j - 2)) / (12.0 * h);
        }
    }
    (gx, gy)
}

/// Flat-metric Φ₀ by periodic trapezoid sums and finite differences.
fn phi0_oracle(u1: &ScalarField, u2: &ScalarField) -> f64 {
    let h2 = u1.grid().h().powi(2);
    let (ax, ay) = fd4_grad(u1);
    let (bx, by) = fd4_grad(u2);
    let mut d = 0.0;
    for k in 0..ax.len() {
        d += ax[k] * ax[k] + ay[k] * ay[k] + bx[k] * bx[k] + by[k] * by[k] + ax[k] * bx[k] + ay[k] * by[k];
    }
    let mean = |u: &ScalarField| u.values().iter().sum::<f64>() * h2;
    let log_exp = |u: &ScalarField| {
        let top = u.values().iter().cloned().fold(f64::MIN, f64::max);
        top + (u.values().iter().map(|v| (v - top).exp()).sum::<f64>() * h2).ln()
    };
    d * h2 / 3.0 + 4.0 * PI * (mean(u1) + mean(u2)) - 4.0 * PI * (log_exp(u1) + log_exp(u2))
}

#[test]
fn hybrid_quadrature_matches_fine_grid() {
    let (m, pair) = case1(1024);
    let tf = build_test_case1(&pair, 0.02, 5.0).unwrap();
    let [u1, u2] = tf.grid_fields(&m).unwrap();
    let oracle = phi0_oracle(&u1, &u2);
    let hybrid = evaluate_phi0(&tf, &m).unwrap();
    assert!(((hybrid - oracle) / oracle).abs() < 1e-3, "{hybrid} vs {oracle}");
}

#[test]
fn stitch_radius_does_not_matter() {
    let (m, pair) = case1(256);
    let tf = build_test_case1(&pair, 1e-3, 4.0).unwrap();
    let a = evaluate_phi0_with(&tf, &m, &HybridOptions::default()).unwrap();
    let b = evaluate_phi0_with(&tf, &m, &HybridOptions { stitch: 3.0, ..HybridOptions::default() }).unwrap();
    assert!((a.phi0 - b.phi0).abs() < 1e-6 * a.phi0.abs().max(1.0), "{} vs {}", a.phi0, b.phi0);
}

#[test]
fn case1_structure() {
    let (m, pair) = case1(256);
    let tf = build_test_case1(&pair, 1e-3, 4.0).unwrap();
    // reflection x → 1 − x exchanges the points and the fields
    for x in [Point::new(0.251, 0.5), Point::new(0.26, 0.49), Point::new(0.1, 0.2), Point::new(0.7502, 0.5003)] {
        let y = Point::new(1.0 - x.x, x.y);
        assert!((tf.value(0, x) - tf.value(1, y)).abs() < 1e-8);
    }
    let le = tf.inner_radius();
    assert!(tf.interface_jump(64) < 10.0 * le * le, "{}", tf.interface_jump(64));
    assert!(tf.constant_mismatch() < 10.0 * le * le, "{}", tf.constant_mismatch());
    let b = evaluate_phi0_with(&tf, &m, &HybridOptions::default()).unwrap();
    for k in 0..2 {
        assert!((b.bubble_exp[k] - bubble_mass(4.0)).abs() < 1e-2, "{:?}", b.bubble_exp);
    }
    let d = deficit_data(&pair, &m);
    assert!(d.b.iter().chain(&d.m).all(|v| v.abs() < 1e-10), "{d:?}");
    assert!((d.coeff - 8.0 * PI).abs() < 1e-9);
}

#[test]
fn case2_structure() {
    let (m, pair) = case2(256);
    let tf = build_test_case2(&pair, 1e-3, 4.0).unwrap();
    let le = tf.inner_radius();
    assert!(tf.interface_jump(64) < 10.0 * le * le);
    let b = evaluate_phi0_with(&tf, &m, &HybridOptions::default()).unwrap();
    assert!(b.log_exp[1].abs() < 1e-2, "{:?}", b.log_exp);
    assert!((b.bubble_exp[0] - bubble_mass(4.0)).abs() < 1e-2, "{:?}", b.bubble_exp);
    let d = deficit_data(&pair, &m);
    assert!((d.coeff - 1.0).abs() < 1e-8);
}

#[test]
fn case2_limit_is_reached() {
    let (m, pair) = case2(256);
    let eps = [1e-2, 1e-3, 1e-4, 1e-5];
    let opts = FitOptions::default();
    let r = todalab::testfn::asymptotic_fit_case2_with(&pair, &m, &eps, &opts).unwrap();
    let gaps: Vec<f64> = r.phi0.iter().map(|p| (p - r.derived_limit).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[3] < 1e-4, "{gaps:?}");
}

#[test]
fn bad_inputs() {
    let (m, pair) = case1(64);
    assert!(matches!(build_test_case1(&pair, 0.0, 1.0), Err(Error::Configuration(_))));
    assert!(matches!(build_test_case1(&pair, 0.01, 20.0), Err(Error::Geometry(_))));
    assert!(matches!(build_test_case2(&pair, 0.01, 1.0), Err(Error::Precondition(_))));
    assert!(matches!(asymptotic_fit_case1(&pair, &m, &[1e-2, 1e-3]), Err(Error::Configuration(_))));
    assert!(matches!(asymptotic_fit_case1(&pair, &m, &[1e-2, 1e-3, 1e-2, 1e-4]), Err(Error::Configuration(_))));
}
