//! Singular Green's-function systems on the torus.
//!
//! The flat kernel `G₀` (with `−Δ₀G₀ = δ − 1`, zero mean) is split Ewald-style into a
//! short-range radial piece `(1/4π)E₁(r²/2σ²)`, summed over nearby images, and a
//! Gaussian-damped Fourier series. Everything that is not a short-range piece is
//! band-limited and lives on the grid.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{descend, Objective, SolverOptions, StopReason};
use crate::geometry::{integrate, LocalFrame, Metric, Point, TorusGrid};
use crate::lsq::fit_polynomial;
use crate::quadrature::{angles, integrate_vec, Tolerance};
use crate::spectral::{dirichlet_form, laplacian0, solve_poisson0, wavenumber, Jet2, ScalarField, SpectralInterpolant};

pub mod ewald {
    //! Pieces of the split `G₀ = short − σ²/2 + smooth`.

    use super::*;
    use crate::special::{e1, ein, EULER_GAMMA};

    pub const SIGMA: f64 = 0.1;
    const KBOX: i64 = 15;
    const Z_CUT: f64 = 60.0;

    fn wrap(d: [f64; 2]) -> [f64; 2] {
        let w = |t: f64| t - (t + 0.5).floor();
        [w(d[0]), w(d[1])]
    }

    fn radial_jet(d: [f64; 2], f: f64, fp_over_r: f64, fpp: f64) -> Jet2 {
        let r2 = d[0] * d[0] + d[1] * d[1];
        let grad = [fp_over_r * d[0], fp_over_r * d[1]];
        let hess = if r2 == 0.0 {
            [fpp, 0.0, fpp]
        } else {
            let c = (fpp - fp_over_r) / r2;
            [fp_over_r + c * d[0] * d[0], c * d[0] * d[1], fp_over_r + c * d[1] * d[1]]
        };
        Jet2 { value: f, grad, hess }
    }

    /// Jet of `(1/4π)E₁(r²/2σ²)` at displacement `d ≠ 0` (one image).
    fn e1_jet(d: [f64; 2], sigma: f64) -> Jet2 {
        let r2 = d[0] * d[0] + d[1] * d[1];
        let z = r2 / (2.0 * sigma * sigma);
        let ez = (-z).exp();
        let f = e1(z) / (4.0 * PI);
        let fp_over_r = -ez / (2.0 * PI * r2);
        let fpp = ez / (2.0 * PI) * (1.0 / (sigma * sigma) + 1.0 / r2);
        radial_jet(d, f, fp_over_r, fpp)
    }

    /// Jet of `(1/4π)E₁(r²/2σ²) + (1/2π) log r`, smooth through the origin.
    fn e1_regular_jet(d: [f64; 2], sigma: f64) -> Jet2 {
        let s2 = sigma * sigma;
        let r2 = d[0] * d[0] + d[1] * d[1];
        let z = r2 / (2.0 * s2);
        let f = (ein(z) - EULER_GAMMA + (2.0 * s2).ln()) / (4.0 * PI);
        let ratio = if z == 0.0 { 1.0 } else { -(-z).exp_m1() / z };
        let fp_over_r = ratio / (4.0 * PI * s2);
        let fpp = ((-z).exp() - 0.5 * ratio) / (2.0 * PI * s2);
        radial_jet(d, f, fp_over_r, fpp)
    }

    /// Short-range piece summed over the 3×3 nearest images; `+∞` at the source.
    pub fn short_value(d: [f64; 2], sigma: f64) -> f64 {
        let d = wrap(d);
        let mut acc = 0.0;
        for mx in -1..=1 {
            for my in -1..=1 {
                let (x, y) = (d[0] + mx as f64, d[1] + my as f64);
                let z = (x * x + y * y) / (2.0 * sigma * sigma);
                if z == 0.0 {
                    return f64::INFINITY;
                }
                if z < Z_CUT {
                    acc += e1(z);
                }
            }
        }
        acc / (4.0 * PI)
    }

    /// Short-range piece with `−(1/2π)log|d|` of the central image removed.
    pub fn short_regular_value(d: [f64; 2], sigma: f64) -> f64 {
        short_regular_jet(d, sigma).value
    }

    /// Jet of the short-range piece (all images); `d` must not be a source.
    pub fn short_jet(d: [f64; 2], sigma: f64) -> Jet2 {
        let d = wrap(d);
        let mut j = Jet2::default();
        for mx in -1..=1 {
            for my in -1..=1 {
                let q = [d[0] + mx as f64, d[1] + my as f64];
                if (q[0] * q[0] + q[1] * q[1]) / (2.0 * sigma * sigma) < Z_CUT {
                    j = j.plus(e1_jet(q, sigma));
                }
            }
        }
        j
    }

    /// Jet of [`short_regular_value`]; `d` is the wrapped displacement from the source.
    pub fn short_regular_jet(d: [f64; 2], sigma: f64) -> Jet2 {
        let d = wrap(d);
        let mut j = e1_regular_jet(d, sigma);
        for mx in -1..=1 {
            for my in -1..=1 {
                if mx == 0 && my == 0 {
                    continue;
                }
                let q = [d[0] + mx as f64, d[1] + my as f64];
                if (q[0] * q[0] + q[1] * q[1]) / (2.0 * sigma * sigma) < Z_CUT {
                    j = j.plus(e1_jet(q, sigma));
                }
            }
        }
        j
    }

    /// `Δ₀` of the short-range piece off the source: the image sum of Gaussians.
    pub fn short_laplacian(d: [f64; 2], sigma: f64) -> f64 {
        let d = wrap(d);
        let mut acc = 0.0;
        for mx in -1..=1 {
            for my in -1..=1 {
                let (x, y) = (d[0] + mx as f64, d[1] + my as f64);
                acc += (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            }
        }
        acc / (2.0 * PI * sigma * sigma)
    }

    /// Fourier coefficient of the smooth piece at wavenumber `k ≠ 0`, source at the origin.
    pub fn smooth_coefficient(kx: f64, ky: f64) -> f64 {
        let k2 = kx * kx + ky * ky;
        (-2.0 * PI * PI * SIGMA * SIGMA * k2).exp() / (4.0 * PI * PI * k2)
    }

    /// Jet of the smooth piece by direct summation over `|kᵢ| ≤ 15`.
    pub fn smooth_jet(d: [f64; 2]) -> Jet2 {
        let mut j = Jet2::default();
        for kx in -KBOX..=KBOX {
            for ky in -KBOX..=KBOX {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let (fx, fy) = (kx as f64, ky as f64);
                let c = smooth_coefficient(fx, fy);
                let arg = 2.0 * PI * (fx * d[0] + fy * d[1]);
                let (s, co) = arg.sin_cos();
                let (wx, wy) = (2.0 * PI * fx, 2.0 * PI * fy);
                j.value += c * co;
                j.grad[0] -= c * wx * s;
                j.grad[1] -= c * wy * s;
                j.hess[0] -= c * wx * wx * co;
                j.hess[1] -= c * wx * wy * co;
                j.hess[2] -= c * wy * wy * co;
            }
        }
        j
    }

    /// `G₀(d)` evaluated from the split; `+∞` at the source.
    pub fn green0(d: [f64; 2]) -> f64 {
        short_value(d, SIGMA) - 0.5 * SIGMA * SIGMA + smooth_jet(d).value
    }

    /// `G₀(d) + (1/2π) log|d|`, `d` the wrapped displacement.
    pub fn green0_regular(d: [f64; 2]) -> f64 {
        short_regular_value(d, SIGMA) - 0.5 * SIGMA * SIGMA + smooth_jet(d).value
    }
}

/// Flat kernel with a source at `p`: `−Δ₀G₀(·,p) = δ_p − 1`, `∫G₀ dx = 0`.
#[derive(Debug, Clone)]
pub struct FlatGreen {
    source: Point,
    smooth_part: ScalarField,
}

impl FlatGreen {
    pub fn source(&self) -> Point {
        self.source
    }

    /// The band-limited long-range piece (smooth series minus `σ²/2`) on the grid.
    pub fn smooth_part(&self) -> &ScalarField {
        &self.smooth_part
    }

    pub fn value(&self, x: Point) -> f64 {
        ewald::green0(x.displacement_from(self.source))
    }

    /// `G₀(x,p) + (1/2π) log|x − p|` with the nearest image of `p`.
    pub fn regular_value(&self, x: Point) -> f64 {
        ewald::green0_regular(x.displacement_from(self.source))
    }

    /// Limit of the regular value at the source.
    pub fn robin_constant(&self) -> f64 {
        ewald::green0_regular([0.0, 0.0])
    }
}

fn smooth_modes(grid: TorusGrid, p: Point) -> Vec<num_complex::Complex64> {
    let n = grid.n();
    let mut modes = vec![num_complex::Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        let kx = wavenumber(a, n) as f64;
        for b in 0..n {
            let ky = wavenumber(b, n) as f64;
            if a == 0 && b == 0 {
                modes[0] = num_complex::Complex64::new(-0.5 * ewald::SIGMA * ewald::SIGMA, 0.0);
                continue;
            }
            let c = ewald::smooth_coefficient(kx, ky);
            modes[a * n + b] = num_complex::Complex64::from_polar(c, -2.0 * PI * (kx * p.x + ky * p.y));
        }
    }
    modes
}

pub fn flat_green(p: Point, grid: TorusGrid) -> FlatGreen {
    let p = p.wrapped();
    let smooth_part = ScalarField::from_modes(grid, smooth_modes(grid, p)).expect("mode count matches grid");
    FlatGreen { source: p, smooth_part }
}

/// A field `Σ qᵢ short(x − pᵢ) + smooth(x)`: point sources of strength `qᵢ` (so a
/// `−(qᵢ/2π) log r` singularity) on top of a band-limited remainder.
#[derive(Debug, Clone)]
pub struct GreenField {
    sources: Vec<(Point, f64)>,
    smooth: ScalarField,
    interp: SpectralInterpolant,
}

impl GreenField {
    fn new(sources: Vec<(Point, f64)>, smooth: ScalarField) -> Self {
        let interp = smooth.interpolant(1e-16);
        Self { sources, smooth, interp }
    }

    pub fn sources(&self) -> &[(Point, f64)] {
        &self.sources
    }

    pub fn smooth(&self) -> &ScalarField {
        &self.smooth
    }

    /// Coefficient of `log r` at source `i`.
    pub fn log_coefficient(&self, i: usize) -> f64 {
        -self.sources[i].1 / (2.0 * PI)
    }

    pub fn value(&self, x: Point) -> f64 {
        let mut v = self.interp.value(x);
        for &(p, q) in &self.sources {
            v += q * ewald::short_value(x.displacement_from(p), ewald::SIGMA);
        }
        v
    }

    pub fn jet(&self, x: Point) -> Jet2 {
        let mut j = self.interp.jet(x);
        for &(p, q) in &self.sources {
            j = j.plus(ewald::short_jet(x.displacement_from(p), ewald::SIGMA).scaled(q));
        }
        j
    }

    /// Jet of `G − a log|x − pᵢ|` (torus coordinates, nearest image), smooth near `pᵢ`.
    pub fn regular_jet(&self, i: usize, x: Point) -> Jet2 {
        let mut j = self.interp.jet(x);
        for (k, &(p, q)) in self.sources.iter().enumerate() {
            let d = x.displacement_from(p);
            let piece = if k == i { ewald::short_regular_jet(d, ewald::SIGMA) } else { ewald::short_jet(d, ewald::SIGMA) };
            j = j.plus(piece.scaled(q));
        }
        j
    }

    fn short_grid(&self, grid: TorusGrid, sigma: f64, regular_at_sources: bool) -> Vec<f64> {
        let n = grid.n();
        let mut out = vec![0.0; grid.len()];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                let x = grid.point(i, j);
                for &(p, q) in &self.sources {
                    let d = x.displacement_from(p);
                    let v = if d == [0.0, 0.0] {
                        if regular_at_sources {
                            ewald::short_regular_value(d, sigma)
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        ewald::short_value(d, sigma)
                    };
                    *slot += q * v;
                }
            }
        });
        out
    }

    /// Grid samples; a node that coincides with a source stores the regular part there.
    pub fn grid_values(&self) -> ScalarField {
        let grid = self.smooth.grid();
        let short = self.short_grid(grid, ewald::SIGMA, true);
        let vals = short.iter().zip(self.smooth.values()).map(|(a, b)| a + b).collect();
        ScalarField::new(grid, vals).expect("grid-sized")
    }

    /// `e^G` on the grid, exactly zero at negative-strength sources.
    pub fn exp_grid(&self) -> ScalarField {
        let grid = self.smooth.grid();
        let short = self.short_grid(grid, ewald::SIGMA, false);
        let vals = short.iter().zip(self.smooth.values()).map(|(a, b)| (a + b).exp()).collect();
        ScalarField::new(grid, vals).expect("grid-sized")
    }

    /// `Δ₀G` off the sources, recomputed from grid samples with a second split width:
    /// the samples minus `Σ qᵢ short_τ` are differentiated spectrally and the analytic
    /// Laplacian of the `τ` pieces is added back.
    pub fn laplacian0_off_sources(&self, tau: f64) -> ScalarField {
        let grid = self.smooth.grid();
        let n = grid.n();
        let sources = &self.sources;
        let mut rem = vec![0.0; grid.len()];
        let mut sing = vec![0.0; grid.len()];
        rem.par_chunks_mut(n).zip(sing.par_chunks_mut(n)).enumerate().for_each(|(i, (rrow, srow))| {
            for j in 0..n {
                let x = grid.point(i, j);
                for &(p, q) in sources {
                    let d = x.displacement_from(p);
                    if d == [0.0, 0.0] {
                        rrow[j] += q * (ewald::short_regular_value(d, ewald::SIGMA) - ewald::short_regular_value(d, tau));
                    } else {
                        rrow[j] += q * (ewald::short_value(d, ewald::SIGMA) - ewald::short_value(d, tau));
                        srow[j] += q * ewald::short_laplacian(d, tau);
                    }
                }
            }
        });
        let rem = ScalarField::new(grid, rem.iter().zip(self.smooth.values()).map(|(a, b)| a + b).collect())
            .expect("grid-sized");
        let lap = laplacian0(&rem);
        let vals = lap.values().iter().zip(&sing).map(|(a, b)| a + b).collect();
        ScalarField::new(grid, vals).expect("grid-sized")
    }

    /// `∫ G dV_g`: short pieces by polar quadrature over the plane, the rest on the grid.
    pub fn integral(&self, metric: &Metric) -> Result<f64> {
        let mut total = integrate(&self.smooth, metric)?;
        let half_var = 0.5 * ewald::SIGMA * ewald::SIGMA;
        if metric.is_flat() {
            return Ok(total + self.sources.iter().map(|s| s.1).sum::<f64>() * half_var);
        }
        let w = metric.weight().interpolant(1e-15);
        let thetas = angles(64);
        let s = ewald::SIGMA;
        for &(p, q) in &self.sources {
            // ∫_{ℝ²} (1/4π)E₁(r²/2σ²) e^{φ(p+y)} dy, with r = t² to tame the log
            let res = integrate_vec(
                |t| {
                    let r = t * t;
                    if r == 0.0 {
                        return vec![0.0];
                    }
                    let avg = thetas.iter().map(|th| w.value(p.offset(r * th.cos(), r * th.sin()))).sum::<f64>()
                        / thetas.len() as f64;
                    let z = r * r / (2.0 * s * s);
                    vec![crate::special::e1(z) / (4.0 * PI) * avg * 2.0 * PI * r * 2.0 * t]
                },
                0.0,
                (12.0 * s).sqrt(),
                Tolerance { abs: 1e-13, rel: 1e-12, max_intervals: 2000 },
            )?;
            total += q * res.value[0];
        }
        Ok(total)
    }
}

/// Metric kernel `Ĝ(·,p)`: `−Δ_gĜ = δ_p − 1`, `∫Ĝ dV_g = 0`, as a [`GreenField`].
pub fn metric_green(p: Point, metric: &Metric) -> Result<GreenField> {
    let grid = metric.grid();
    let p = p.wrapped();
    let mut smooth = flat_green(p, grid).smooth_part;
    if !metric.is_flat() {
        let corr = solve_poisson0(&metric.weight().shift(-1.0))?;
        let n = grid.n();
        let wm = metric.weight().modes();
        // ∫ G₀(x − p) e^φ dx in mode space
        let mut g0w = 0.0;
        for a in 0..n {
            let kx = wavenumber(a, n) as f64;
            for b in 0..n {
                let ky = wavenumber(b, n) as f64;
                if a == 0 && b == 0 {
                    continue;
                }
                let neg = ((n - a) % n) * n + (n - b) % n;
                let phase = num_complex::Complex64::from_polar(1.0, -2.0 * PI * (kx * p.x + ky * p.y));
                g0w += (phase * wm[neg]).re / (4.0 * PI * PI * (kx * kx + ky * ky));
            }
        }
        let c = -(g0w + integrate(&corr, metric)?);
        smooth = smooth.add(&corr)?.shift(c);
    }
    Ok(GreenField::new(vec![(p, 1.0)], smooth))
}

fn combine(parts: &[(&GreenField, f64)], extra: Option<&ScalarField>) -> Result<GreenField> {
    let grid = parts[0].0.smooth.grid();
    let mut smooth = ScalarField::zeros(grid);
    let mut sources = Vec::new();
    for &(f, c) in parts {
        smooth = smooth.zip_with(&f.smooth, |a, b| a + c * b)?;
        sources.extend(f.sources.iter().map(|&(p, q)| (p, c * q)));
    }
    if let Some(e) = extra {
        smooth = smooth.add(e)?;
    }
    Ok(GreenField::new(sources, smooth))
}

/// Taylor data of `G_k − a log r` at a source, in the isothermal frame there:
/// `A + λξ + μη + αξ² + βη² + γξη + h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalExpansion {
    pub a: f64,
    #[serde(rename = "A")]
    pub big_a: f64,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub fit_residual: f64,
}

impl LocalExpansion {
    /// Regular part through second order at local coordinates `ξ`.
    pub fn quadratic(&self, xi: [f64; 2]) -> f64 {
        let [x, y] = xi;
        self.big_a + self.lambda * x + self.mu * y + self.alpha * x * x + self.beta * y * y + self.gamma * x * y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    One,
    Two,
}

/// Convergence record of the case-2 scalar solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarSolve {
    pub start: String,
    pub iterations: usize,
    pub grad_norm: f64,
    pub stop: StopReason,
    pub energy_trace: Vec<f64>,
}

/// The two Green's functions of a blow-up configuration.
#[derive(Debug, Clone)]
pub struct GreenPair {
    pub case: CaseTag,
    pub points: Vec<Point>,
    pub frames: Vec<LocalFrame>,
    pub fields: [GreenField; 2],
    /// `expansions[k][i]`: `G_{k+1}` at `points[i]`, from exact derivatives.
    pub expansions: [Vec<LocalExpansion>; 2],
    /// `∫G₂ dV_g` (zero in case 1).
    pub mean_g2: f64,
    pub solve: Option<ScalarSolve>,
}

impl GreenPair {
    pub fn field(&self, k: usize) -> &GreenField {
        &self.fields[k]
    }

    pub fn expansion(&self, k: usize, i: usize) -> &LocalExpansion {
        &self.expansions[k][i]
    }

    /// `a_k(p_i)`, zero where field `k` has no source at `p_i`.
    pub fn log_coefficient(&self, k: usize, i: usize) -> f64 {
        self.expansions[k][i].a
    }

    /// Value of `G_k` at `x`.
    pub fn value(&self, k: usize, x: Point) -> f64 {
        self.fields[k].value(x)
    }

    fn source_index(&self, k: usize, i: usize) -> Option<usize> {
        let p = self.points[i];
        self.fields[k].sources.iter().position(|s| s.0 == p)
    }

    /// Jet of `G_k − a_k(p_i) log|x − p_i|` in torus coordinates.
    pub fn regular_jet(&self, k: usize, i: usize, x: Point) -> Jet2 {
        match self.source_index(k, i) {
            Some(s) => self.fields[k].regular_jet(s, x),
            None => self.fields[k].jet(x),
        }
    }
}

fn taylor_expansion(field: &GreenField, src: Option<usize>, frame: &LocalFrame) -> LocalExpansion {
    let p = frame.center;
    let (a, jet) = match src {
        Some(s) => (field.log_coefficient(s), field.regular_jet(s, p)),
        None => (0.0, field.jet(p)),
    };
    let s = frame.scale;
    LocalExpansion {
        a,
        big_a: jet.value - a * s.ln(),
        lambda: jet.grad[0] / s,
        mu: jet.grad[1] / s,
        alpha: 0.5 * jet.hess[0] / (s * s),
        beta: 0.5 * jet.hess[2] / (s * s),
        gamma: jet.hess[1] / (s * s),
        fit_residual: 0.0,
    }
}

fn expansions_for(fields: &[GreenField; 2], points: &[Point], frames: &[LocalFrame]) -> [Vec<LocalExpansion>; 2] {
    let build = |f: &GreenField| {
        points
            .iter()
            .zip(frames)
            .map(|(p, fr)| taylor_expansion(f, f.sources.iter().position(|s| s.0 == *p), fr))
            .collect::<Vec<_>>()
    };
    [build(&fields[0]), build(&fields[1])]
}

/// Case 1: `−Δ_gG₁ = 8πδ_{p₁} − 4πδ_{p₂} − 4π`, `G₂` with the roles swapped.
pub fn green_pair_case1(p1: Point, p2: Point, metric: &Metric) -> Result<GreenPair> {
    let (p1, p2) = (p1.wrapped(), p2.wrapped());
    let h = metric.grid().h();
    let sep = p1.distance(p2);
    if sep < 16.0 * h {
        return Err(Error::Resolution(format!("points {sep:.4} apart, need at least 16h = {:.4}", 16.0 * h)));
    }
    // total source mass of each equation: 8π − 4π − 4π·area
    let mass = 8.0 * PI - 4.0 * PI - 4.0 * PI * metric.area();
    if mass.abs() > 1e-10 {
        return Err(Error::Solvability { mean: mass });
    }
    let g_1 = metric_green(p1, metric)?;
    let g_2 = metric_green(p2, metric)?;
    let f1 = combine(&[(&g_1, 8.0 * PI), (&g_2, -4.0 * PI)], None)?;
    let f2 = combine(&[(&g_2, 8.0 * PI), (&g_1, -4.0 * PI)], None)?;
    let points = vec![p1, p2];
    let frames: Vec<LocalFrame> = points.iter().map(|&p| metric.frame_at(p)).collect();
    let fields = [f1, f2];
    let expansions = expansions_for(&fields, &points, &frames);
    Ok(GreenPair { case: CaseTag::One, points, frames, fields, expansions, mean_g2: 0.0, solve: None })
}

/// Options for the case-2 construction.
#[derive(Debug, Clone, Copy)]
pub struct Case2Options {
    pub solver: SolverOptions,
}

impl Default for Case2Options {
    fn default() -> Self {
        Self { solver: SolverOptions { grad_tol: 1e-8, max_iter: 10_000, ceiling: f64::INFINITY, ..Default::default() } }
    }
}

/// `J(v) = ½∫|∇v|² + 8π∫v dV_g − 8π log∫e^{v+s} dV_g`.
struct SingularMeanField<'a> {
    metric: &'a Metric,
    /// `e^s e^φ`, the flat-measure weight.
    weight: ScalarField,
}

impl SingularMeanField<'_> {
    fn log_z(&self, v: &ScalarField) -> f64 {
        let m = v.max();
        let s: f64 = v.values().iter().zip(self.weight.values()).map(|(a, w)| (a - m).exp() * w).sum();
        m + (s * v.grid().cell_area()).ln()
    }
}

impl Objective for SingularMeanField<'_> {
    fn metric(&self) -> &Metric {
        self.metric
    }

    fn value(&self, u: &[ScalarField]) -> Result<f64> {
        let v = &u[0];
        Ok(0.5 * dirichlet_form(v, v)? + 8.0 * PI * integrate(v, self.metric)? - 8.0 * PI * self.log_z(v))
    }

    fn gradient_fields(&self, u: &[ScalarField]) -> Result<Vec<ScalarField>> {
        let v = &u[0];
        let z = self.log_z(v);
        let lap = laplacian0(v);
        let vals = lap
            .values()
            .iter()
            .zip(v.values())
            .zip(self.weight.values())
            .zip(self.metric.weight().values())
            .map(|(((l, a), w), e)| -l / e + 8.0 * PI - 8.0 * PI * (a - z).exp() * w / e)
            .collect();
        Ok(vec![ScalarField::new(v.grid(), vals)?])
    }

    fn normalize(&self, u: Vec<ScalarField>) -> Result<Vec<ScalarField>> {
        Ok(u.into_iter().map(|v| { let z = self.log_z(&v); v.shift(-z) }).collect())
    }
}

/// Case 2: `−Δ_gG₂ = 8πe^{G₂} − 4πδ_p − 4π` with `∫e^{G₂} dV_g = 1`, then
/// `−Δ_gG₁ = 8πδ_p − 4πe^{G₂} − 4π` with `∫G₁ dV_g = 0`.
pub fn green_pair_case2(p: Point, metric: &Metric, opts: &Case2Options) -> Result<GreenPair> {
    let p = p.wrapped();
    let ghat = metric_green(p, metric)?;
    let s_field = combine(&[(&ghat, -4.0 * PI)], None)?;
    let es = s_field.exp_grid();
    let obj = SingularMeanField { metric, weight: es.zip_with(metric.weight(), |a, b| a * b)? };
    let grid = metric.grid();
    let starts = [("zero", ScalarField::zeros(grid)), ("minus_smoothed_s", s_field.smooth.scale(-1.0))];
    let mut traces = Vec::new();
    let mut found = None;
    for (name, v0) in starts {
        let out = descend(&obj, vec![v0], &opts.solver)?;
        if out.stop == StopReason::Converged {
            found = Some((name, out));
            break;
        }
        traces.push(format!("{name}: {:?} after {} iterations, |grad| = {:e}", out.stop, out.iterations, out.grad_norm));
        if let Some(last) = out.energy_trace.last() {
            traces.push(format!("{name}: final energy {last}"));
        }
    }
    let Some((name, out)) = found else {
        return Err(Error::Solver { message: traces.join("; "), trace: Vec::new() });
    };
    let v = out.u.into_iter().next().expect("one field");
    let c2 = -obj.log_z(&v);
    let v = v.shift(c2);
    let g2 = combine(&[(&ghat, -4.0 * PI)], Some(&v))?;
    let mean_g2 = integrate(&v, metric)?;

    let eg2 = g2.exp_grid();
    let rhs = metric.weight().zip_with(&eg2, |w, e| -4.0 * PI * w * (1.0 - e))?;
    let mass = rhs.integral0();
    if mass.abs() > 1e-10 {
        return Err(Error::Solvability { mean: mass });
    }
    let w1 = solve_poisson0(&rhs.shift(-mass))?;
    let w1 = w1.shift(-integrate(&w1, metric)?);
    let g1 = combine(&[(&ghat, 8.0 * PI)], Some(&w1))?;

    let points = vec![p];
    let frames = vec![metric.frame_at(p)];
    let fields = [g1, g2];
    let expansions = expansions_for(&fields, &points, &frames);
    let solve = ScalarSolve {
        start: name.to_string(),
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        stop: out.stop,
        energy_trace: out.energy_trace,
    };
    Ok(GreenPair { case: CaseTag::Two, points, frames, fields, expansions, mean_g2, solve: Some(solve) })
}

/// Least-squares expansion of `G_k − a log r` on a disc of radius `rho_fit` around
/// `pair.points[i]`, from grid samples, with a degree-3 polynomial in the local frame.
pub fn local_expansion(pair: &GreenPair, k: usize, i: usize, rho_fit: f64) -> Result<LocalExpansion> {
    let field = &pair.fields[k];
    let grid = field.smooth.grid();
    let h = grid.h();
    if !(6.0 * h - 1e-12..=16.0 * h + 1e-12).contains(&rho_fit) {
        return Err(Error::Configuration(format!("fit radius must lie in [6h, 16h], got {:.2}h", rho_fit / h)));
    }
    let frame = pair.frames[i];
    let p = frame.center;
    let a = pair.source_index(k, i).map(|s| field.log_coefficient(s)).unwrap_or(0.0);
    let samples: Vec<(f64, f64, f64)> = grid
        .nodes_within(p, rho_fit)
        .into_iter()
        .filter(|(_, _, d)| *d != [0.0, 0.0])
        .map(|(_, _, d)| {
            let xi = [frame.scale * d[0], frame.scale * d[1]];
            let x = grid.point(0, 0).offset(p.x + d[0], p.y + d[1]);
            let g = field.value(x);
            (xi[0], xi[1], g - a * xi[0].hypot(xi[1]).ln())
        })
        .collect();
    let fit = fit_polynomial(&samples, 3, frame.scale * rho_fit)?;
    let norm = samples.iter().fold(0.0f64, |m, s| m.max(s.2.abs()));
    if fit.max_residual > 1e-3 * norm {
        return Err(Error::Accuracy(format!("expansion fit residual {:e} exceeds 1e-3 of {norm:e}", fit.max_residual)));
    }
    Ok(LocalExpansion {
        a,
        big_a: fit.coeff(0, 0),
        lambda: fit.coeff(1, 0),
        mu: fit.coeff(0, 1),
        alpha: fit.coeff(2, 0),
        beta: fit.coeff(0, 2),
        gamma: fit.coeff(1, 1),
        fit_residual: fit.max_residual,
    })
}

/// `|α + β − 2π|`.
pub fn lemma51_residual(exp: &LocalExpansion) -> f64 {
    (exp.alpha + exp.beta - 2.0 * PI).abs()
}

/// Sup-norm of `rhs(x) − (−Δ_g G)(x)` over grid nodes farther than `exclusion` from
/// every source; `rhs` receives the node index and position.
pub fn equation_residual(
    field: &GreenField,
    metric: &Metric,
    exclusion: f64,
    rhs: impl Fn(usize, Point) -> f64,
) -> f64 {
    let lap = field.laplacian0_off_sources(0.05);
    let grid = metric.grid();
    let n = grid.n();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = grid.point(i, j);
            if field.sources.iter().any(|s| x.distance(s.0) <= exclusion) {
                continue;
            }
            let idx = i * n + j;
            let neg_lap_g = -lap.values()[idx] / metric.weight().values()[idx];
            worst = worst.max((neg_lap_g - rhs(idx, x)).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_flat_torus;

    #[test]
    fn regular_jet_matches_value_difference() {
        let d = [0.013, -0.007];
        let full = ewald::short_value(d, 0.1);
        let reg = ewald::short_regular_value(d, 0.1);
        assert!((full + d[0].hypot(d[1]).ln() / (2.0 * PI) - reg).abs() < 1e-12);
    }

    #[test]
    fn short_jet_matches_finite_differences() {
        let d = [0.07, 0.03];
        let j = ewald::short_jet(d, 0.1);
        let t = 1e-5;
        let f = |x: f64, y: f64| ewald::short_value([x, y], 0.1);
        let fx = (f(d[0] + t, d[1]) - f(d[0] - t, d[1])) / (2.0 * t);
        let fxy = (f(d[0] + t, d[1] + t) - f(d[0] + t, d[1] - t) - f(d[0] - t, d[1] + t) + f(d[0] - t, d[1] - t)) / (4.0 * t * t);
        assert!((j.grad[0] - fx).abs() < 1e-7);
        assert!((j.hess[1] - fxy).abs() < 1e-3);
        assert!((j.hess[0] + j.hess[2] - ewald::short_laplacian(d, 0.1)).abs() < 1e-9);
    }

    #[test]
    fn split_is_independent_of_sigma_sum() {
        // the sum short + smooth does not depend on where the split is made
        let d = [0.21, 0.33];
        let g = ewald::green0(d);
        let tau = 0.07;
        let mut smooth = 0.0;
        for kx in -40i64..=40 {
            for ky in -40i64..=40 {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let k2 = (kx * kx + ky * ky) as f64;
                smooth += (-2.0 * PI * PI * tau * tau * k2).exp() / (4.0 * PI * PI * k2)
                    * (2.0 * PI * (kx as f64 * d[0] + ky as f64 * d[1])).cos();
            }
        }
        let other = ewald::short_value(d, tau) - 0.5 * tau * tau + smooth;
        assert!((g - other).abs() < 1e-12, "{g} vs {other}");
    }

    #[test]
    fn flat_green_has_zero_mean_and_symmetry() {
        let grid = TorusGrid::new(64).unwrap();
        let p = Point::new(0.3, 0.55);
        let g = flat_green(p, grid);
        assert!((g.smooth_part().integral0() + 0.005).abs() < 1e-15);
        let x = Point::new(0.81, 0.12);
        let back = flat_green(x, grid);
        assert!((g.value(x) - back.value(p)).abs() < 1e-12);
        let shifted = flat_green(Point::new(0.0, 0.0), grid);
        let d = x.displacement_from(p);
        assert!((g.value(x) - shifted.value(Point::new(d[0], d[1]).wrapped())).abs() < 1e-12);
    }

    #[test]
    fn case1_log_coefficients_and_separation() {
        let m = make_flat_torus(64).unwrap();
        let pair = green_pair_case1(Point::new(0.25, 0.5), Point::new(0.75, 0.5), &m).unwrap();
        assert_eq!(pair.log_coefficient(0, 0), -4.0);
        assert_eq!(pair.log_coefficient(0, 1), 2.0);
        assert_eq!(pair.log_coefficient(1, 0), 2.0);
        assert_eq!(pair.log_coefficient(1, 1), -4.0);
        let close = green_pair_case1(Point::new(0.25, 0.5), Point::new(0.3, 0.5), &m);
        assert!(matches!(close, Err(Error::Resolution(_))));
    }

    #[test]
    fn taylor_and_fit_agree() {
        let m = make_flat_torus(256).unwrap();
        let pair = green_pair_case1(Point::new(0.25, 0.5), Point::new(0.75, 0.5), &m).unwrap();
        let exact = pair.expansion(0, 0);
        let fit = local_expansion(&pair, 0, 0, 8.0 * m.grid().h()).unwrap();
        assert!((exact.big_a - fit.big_a).abs() < 1e-6, "{} vs {}", exact.big_a, fit.big_a);
        assert!((exact.alpha + exact.beta - 2.0 * PI).abs() < 1e-9);
        assert!(fit.mu.abs() < 1e-8 && exact.mu.abs() < 1e-10);
    }

    #[test]
    fn fit_radius_is_checked() {
        let m = make_flat_torus(64).unwrap();
        let pair = green_pair_case1(Point::new(0.25, 0.5), Point::new(0.75, 0.5), &m).unwrap();
        assert!(local_expansion(&pair, 0, 0, 2.0 * m.grid().h()).is_err());
    }
}
