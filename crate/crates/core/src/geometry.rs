//! The unit-area flat torus, conformal metrics `e^φ(dx² + dy²)` on it, curvature and
//! integration against `dV_g`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::fit_polynomial;
use crate::spectral::{laplacian0, Jet2, ScalarField};

/// A point of `[0,1)²` with periodic identification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Representative in `[0,1)²`.
    pub fn wrapped(self) -> Self {
        Self { x: self.x.rem_euclid(1.0), y: self.y.rem_euclid(1.0) }
    }

    /// Shortest periodic displacement `self - origin`, each component in `[-½, ½)`.
    pub fn displacement_from(self, origin: Point) -> [f64; 2] {
        let wrap = |d: f64| d - (d + 0.5).floor();
        [wrap(self.x - origin.x), wrap(self.y - origin.y)]
    }

    pub fn distance(self, other: Point) -> f64 {
        let d = self.displacement_from(other);
        d[0].hypot(d[1])
    }

    pub fn offset(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy).wrapped()
    }
}

/// Uniform `n × n` grid on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    n: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::Configuration(format!("grid size must be a power of two >= 16, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn point(&self, i: usize, j: usize) -> Point {
        Point::new(i as f64 * self.h(), j as f64 * self.h())
    }

    /// Grid nodes within `radius` of `center`, with their displacement from it.
    pub fn nodes_within(&self, center: Point, radius: f64) -> Vec<(usize, usize, [f64; 2])> {
        let n = self.n as isize;
        let h = self.h();
        let ci = (center.x / h).round() as isize;
        let cj = (center.y / h).round() as isize;
        let span = (radius / h).ceil() as isize + 1;
        let mut out = Vec::new();
        for di in -span..=span {
            for dj in -span..=span {
                let i = (ci + di).rem_euclid(n) as usize;
                let j = (cj + dj).rem_euclid(n) as usize;
                let d = self.point(i, j).displacement_from(center);
                if d[0].hypot(d[1]) <= radius {
                    out.push((i, j, d));
                }
            }
        }
        out
    }
}

/// A conformal metric `g = e^φ (dx² + dy²)` of unit area.
#[derive(Debug, Clone)]
pub struct Metric {
    phi: ScalarField,
    weight: ScalarField,
    curvature: ScalarField,
    area: f64,
}

impl Metric {
    pub fn grid(&self) -> TorusGrid {
        self.phi.grid()
    }

    /// Conformal exponent `φ`.
    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    /// Area density `e^φ`.
    pub fn weight(&self) -> &ScalarField {
        &self.weight
    }

    /// Gauss curvature `K = -½ e^{-φ} Δ₀ φ`.
    pub fn curvature(&self) -> &ScalarField {
        &self.curvature
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn is_flat(&self) -> bool {
        self.phi.sup_norm() == 0.0
    }

    pub fn max_curvature(&self) -> f64 {
        self.curvature.max()
    }

    /// Whether `max K < 2π`, the curvature hypothesis for existence.
    pub fn satisfies_curvature_bound(&self) -> bool {
        self.max_curvature() < 2.0 * PI
    }

    /// `Δ_g f = e^{-φ} Δ₀ f`.
    pub fn laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        self.phi.same_grid(f)?;
        let lap = laplacian0(f);
        if self.is_flat() {
            return Ok(lap);
        }
        lap.zip_with(&self.weight, |l, w| l / w)
    }

    /// `log ∫ e^f dV_g`, shifted by `max f` so large fields never overflow.
    pub fn log_integral_exp(&self, f: &ScalarField) -> Result<f64> {
        self.phi.same_grid(f)?;
        let m = f.max();
        let s: f64 = f.values().iter().zip(self.weight.values()).map(|(v, w)| (v - m).exp() * w).sum();
        Ok(m + (s * self.grid().cell_area()).ln())
    }

    /// Local isothermal frame at `p`: the rescaling `s = e^{φ(p)/2}` turning torus
    /// displacements into coordinates in which the metric is `e^{φ - φ(p)}(dξ²)`.
    pub fn frame_at(&self, p: Point) -> LocalFrame {
        let phi_p = if self.is_flat() { 0.0 } else { self.phi.value_at(p) };
        LocalFrame { center: p, phi_at_center: phi_p, scale: (0.5 * phi_p).exp() }
    }
}

/// Isothermal coordinates `ξ = s (x - p)` centred at `p` with `φ_local(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub center: Point,
    pub phi_at_center: f64,
    pub scale: f64,
}

impl LocalFrame {
    pub fn flat(center: Point) -> Self {
        Self { center, phi_at_center: 0.0, scale: 1.0 }
    }

    pub fn to_torus(&self, xi: [f64; 2]) -> Point {
        self.center.offset(xi[0] / self.scale, xi[1] / self.scale)
    }

    pub fn to_local(&self, x: Point) -> [f64; 2] {
        let d = x.displacement_from(self.center);
        [self.scale * d[0], self.scale * d[1]]
    }
}

/// Second-order Taylor data of `φ - φ(p)` in the local frame at `p`:
/// `φ_local = b1 ξ + b2 η + c1 ξ² + c2 η² + c12 ξη + O(r³)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricExpansion {
    pub center: Point,
    pub frame: LocalFrame,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c12: f64,
    pub fit_residual: f64,
}

impl MetricExpansion {
    /// Curvature at the centre, `K(p) = -(c1 + c2)`.
    pub fn curvature(&self) -> f64 {
        -(self.c1 + self.c2)
    }

    /// Second-order Taylor model evaluated at local coordinates `ξ`.
    pub fn eval(&self, xi: [f64; 2]) -> f64 {
        let [x, y] = xi;
        self.b1 * x + self.b2 * y + self.c1 * x * x + self.c2 * y * y + self.c12 * x * y
    }
}

/// Unit flat torus on an `n × n` grid.
pub fn make_flat_torus(n: usize) -> Result<Metric> {
    let grid = TorusGrid::new(n)?;
    Ok(Metric {
        phi: ScalarField::zeros(grid),
        weight: ScalarField::constant(grid, 1.0),
        curvature: ScalarField::zeros(grid),
        area: 1.0,
    })
}

/// Normalizes `e^{phi_raw}` to unit area and computes the curvature spectrally.
pub fn make_conformal_metric(phi_raw: &ScalarField) -> Result<Metric> {
    if !phi_raw.is_finite() {
        return Err(Error::Data("conformal factor contains non-finite values".into()));
    }
    let grid = phi_raw.grid();
    let m = phi_raw.max();
    let s: f64 = phi_raw.values().iter().map(|v| (v - m).exp()).sum::<f64>() * grid.cell_area();
    let c = -(m + s.ln());
    let phi = phi_raw.shift(c);
    let weight = phi.map(f64::exp);
    let area = weight.integral0();
    let lap = laplacian0(&phi);
    let curvature = lap.zip_with(&weight, |l, w| -0.5 * l / w)?;
    Ok(Metric { phi, weight, curvature, area })
}

/// `∫ f dV_g = Σ f e^φ h²`.
pub fn integrate(f: &ScalarField, metric: &Metric) -> Result<f64> {
    f.same_grid(metric.phi())?;
    let s: f64 = f.values().iter().zip(metric.weight().values()).map(|(a, w)| a * w).sum();
    Ok(s * metric.grid().cell_area())
}

/// Options for the disc least-squares fits.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Disc radius in grid cells.
    pub radius_cells: f64,
    pub degree: usize,
    /// Largest acceptable residual relative to the sampled data's range.
    pub max_relative_residual: f64,
}

impl FitOptions {
    pub const METRIC_DEFAULT: FitOptions = FitOptions { radius_cells: 8.0, degree: 4, max_relative_residual: 1e-3 };
}

/// Least-squares Taylor data of the conformal factor at `p`.
pub fn metric_expansion_at(metric: &Metric, p: Point) -> Result<MetricExpansion> {
    metric_expansion_with(metric, p, FitOptions::METRIC_DEFAULT)
}

pub fn metric_expansion_with(metric: &Metric, p: Point, opts: FitOptions) -> Result<MetricExpansion> {
    let frame = metric.frame_at(p);
    if metric.is_flat() {
        return Ok(MetricExpansion {
            center: p,
            frame,
            b1: 0.0,
            b2: 0.0,
            c1: 0.0,
            c2: 0.0,
            c12: 0.0,
            fit_residual: 0.0,
        });
    }
    let grid = metric.grid();
    let radius = opts.radius_cells * grid.h();
    let samples: Vec<(f64, f64, f64)> = grid
        .nodes_within(p, radius)
        .into_iter()
        .map(|(i, j, d)| (frame.scale * d[0], frame.scale * d[1], metric.phi().at(i, j) - frame.phi_at_center))
        .collect();
    let fit = fit_polynomial(&samples, opts.degree, frame.scale * radius)?;
    let range = samples.iter().fold(0.0f64, |m, s| m.max(s.2.abs()));
    if fit.max_residual > opts.max_relative_residual * range.max(1e-300) && fit.max_residual > 1e-13 {
        return Err(Error::Accuracy(format!(
            "metric fit residual {:e} exceeds {:e} of the data range",
            fit.max_residual, opts.max_relative_residual
        )));
    }
    Ok(MetricExpansion {
        center: p,
        frame,
        b1: fit.coeff(1, 0),
        b2: fit.coeff(0, 1),
        c1: fit.coeff(2, 0),
        c2: fit.coeff(0, 2),
        c12: fit.coeff(1, 1),
        fit_residual: fit.max_residual,
    })
}

/// Exact Taylor data from spectral derivatives of `φ` at `p`.
pub fn metric_taylor_at(metric: &Metric, p: Point) -> MetricExpansion {
    let frame = metric.frame_at(p);
    let jet = if metric.is_flat() { Jet2::default() } else { metric.phi().interpolant(0.0).jet(p) };
    let s = frame.scale;
    MetricExpansion {
        center: p,
        frame,
        b1: jet.grad[0] / s,
        b2: jet.grad[1] / s,
        c1: 0.5 * jet.hess[0] / (s * s),
        c2: 0.5 * jet.hess[2] / (s * s),
        c12: jet.hess[1] / (s * s),
        fit_residual: 0.0,
    }
}
