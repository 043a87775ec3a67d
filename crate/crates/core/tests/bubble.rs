mod common;

use std::f64::consts::PI;

use common::simpson;
use todalab::bubble::{
    bubble_dirichlet_energy, bubble_mass, bubble_profile, bubble_radial, bubble_radial_derivative, capacity_energy,
    capacity_minimizer, coupled_l, BubbleWindow, CapacityProblem,
};
use todalab::{Error, Point};

#[test]
fn profile_solves_liouville() {
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for i in 0..40 {
        for j in 0..40 {
            let x = [-2.0 + 0.1 * i as f64 + 0.013, -2.0 + 0.1 * j as f64 + 0.007];
            let f = |dx: f64, dy: f64| bubble_profile([x[0] + dx, x[1] + dy]);
            let lap = (-f(2.0 * h, 0.0) + 16.0 * f(h, 0.0) - 30.0 * f(0.0, 0.0) + 16.0 * f(-h, 0.0) - f(-2.0 * h, 0.0)
                - f(0.0, 2.0 * h)
                + 16.0 * f(0.0, h)
                - 30.0 * f(0.0, 0.0)
                + 16.0 * f(0.0, -h)
                - f(0.0, -2.0 * h))
                / (12.0 * h * h);
            worst = worst.max((lap + 8.0 * PI * f(0.0, 0.0).exp()).abs());
        }
    }
    assert!(worst < 1e-5, "{worst}");
    assert_eq!(bubble_profile([0.0, 0.0]), 0.0);
    for r in [0.1, 0.7, 3.0] {
        let d = (bubble_radial(r + 1e-6) - bubble_radial(r - 1e-6)) / 2e-6;
        assert!((d - bubble_radial_derivative(r)).abs() < 1e-7);
    }
}

#[test]
fn energy_and_mass_match_quadrature() {
    for l in [0.5, 1.0, 2.0, 5.0, 10.0] {
        let e = simpson(&|r: f64| 2.0 * PI * r * (4.0 * PI * r / (1.0 + PI * r * r)).powi(2), 0.0, l, 1e-12);
        let m = simpson(&|r: f64| 2.0 * PI * r / (1.0 + PI * r * r).powi(2), 0.0, l, 1e-12);
        assert!((bubble_dirichlet_energy(l) - e).abs() < 1e-9 * e.max(1.0), "L={l}");
        assert!((bubble_mass(l) - m).abs() < 1e-10, "L={l}");
    }
    assert!((bubble_mass(1e3) - 1.0).abs() < 1e-6);
    // total mass 1 means ∫8πe^w = 8π
    assert!((8.0 * PI * bubble_mass(1e8) - 8.0 * PI).abs() < 1e-12);
}

/// Finite-difference solve of `(r u′)′ = 0` on the annulus; returns `2π∫ r u′² dr`.
fn radial_fd_energy(p: &CapacityProblem, nodes: usize) -> (f64, Vec<(f64, f64)>) {
    // uniform in s = log r, where the equation is u″ = 0
    let (s0, s1) = (p.rho.ln(), p.delta.ln());
    let ds = (s1 - s0) / nodes as f64;
    let m = nodes - 1;
    let (sub, sup) = (vec![1.0; m], vec![1.0; m]);
    let (mut diag, mut rhs) = (vec![-2.0; m], vec![0.0; m]);
    rhs[0] -= p.a;
    rhs[m - 1] -= p.b;
    for i in 1..m {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut u = vec![0.0; m];
    u[m - 1] = rhs[m - 1] / diag[m - 1];
    for i in (0..m - 1).rev() {
        u[i] = (rhs[i] - sup[i] * u[i + 1]) / diag[i];
    }
    let mut full = vec![p.a];
    full.extend(u);
    full.push(p.b);
    let energy: f64 = full.windows(2).map(|w| 2.0 * PI * ((w[1] - w[0]) / ds).powi(2) * ds).sum();
    let pts = full.iter().enumerate().map(|(i, &v)| ((s0 + i as f64 * ds).exp(), v)).collect();
    (energy, pts)
}

#[test]
fn capacity_matches_radial_solve() {
    for p in [
        CapacityProblem { a: 3.0, b: -1.0, rho: 1e-3, delta: 0.2 },
        CapacityProblem { a: -0.5, b: 2.0, rho: 0.05, delta: 0.1 },
    ] {
        let (e, pts) = radial_fd_energy(&p, 2000);
        let exact = capacity_energy(&p).unwrap();
        assert!((e - exact).abs() < 1e-8 * exact, "{e} vs {exact}");
        for &(r, v) in pts.iter().step_by(97) {
            assert!((capacity_minimizer(&p, r.clamp(p.rho, p.delta)).unwrap() - v).abs() < 1e-9);
        }
        let mid = (p.rho * p.delta).sqrt();
        assert!((capacity_minimizer(&p, mid).unwrap() - 0.5 * (p.a + p.b)).abs() < 1e-12);
    }
    let bad = CapacityProblem { a: 0.0, b: 1.0, rho: 0.2, delta: 0.1 };
    assert!(matches!(capacity_energy(&bad), Err(Error::Domain(_))));
}

#[test]
fn coupling_and_windows() {
    for eps in [0.1, 0.01, 1e-4] {
        let l = coupled_l(eps).unwrap();
        assert!((l.powi(4) * eps * eps * (-eps.ln()).ln() - 1.0).abs() < 1e-12);
    }
    assert!(coupled_l(0.5).is_err());
    assert!(coupled_l(1e-4).unwrap() * 1e-4 < coupled_l(1e-2).unwrap() * 1e-2);
    assert!(BubbleWindow::new(2.0, 0.01, Point::new(0.5, 0.5)).is_ok());
    assert!(matches!(BubbleWindow::new(30.0, 0.01, Point::new(0.5, 0.5)), Err(Error::Geometry(_))));
    assert!(matches!(BubbleWindow::new(-1.0, 0.01, Point::new(0.5, 0.5)), Err(Error::Configuration(_))));
}
