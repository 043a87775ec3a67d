//! Periodic scalar fields on the unit torus and their Fourier-space calculus.
//!
//! Values are stored row-major with the first index along `x`:
//! `values[i * n + j]` is the sample at `(i h, j h)`. Modes use the same layout with
//! the convention `f(x) = Σ_k f̂_k e^{2πi k·x}`, `f̂_k = n⁻² Σ_x f(x) e^{-2πi k·x}`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::{Point, TorusGrid};

type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> PlanPair {
    static CACHE: OnceLock<Mutex<HashMap<usize, PlanPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// Unnormalized 2D transform of an `n × n` row-major buffer.
pub(crate) fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    let (fwd, inv) = plans(n);
    let plan = if inverse { inv } else { fwd };
    plan.process(data);
    transpose(data, n);
    plan.process(data);
    transpose(data, n);
}

/// Signed wavenumber of FFT index `m` on an `n`-point axis. Nyquist maps to `+n/2`.
#[inline]
pub fn wavenumber(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Wavenumber used for first derivatives: Nyquist is dropped.
#[inline]
fn derivative_wavenumber(m: usize, n: usize) -> f64 {
    if n % 2 == 0 && m == n / 2 {
        0.0
    } else {
        wavenumber(m, n) as f64
    }
}

/// A real periodic field sampled on a [`TorusGrid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
    modes: OnceLock<Vec<Complex64>>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "expected {} samples for n = {}, got {}",
                grid.len(),
                grid.n(),
                values.len()
            )));
        }
        Ok(Self { grid, values, modes: OnceLock::new() })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()], modes: OnceLock::new() }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(Point) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            for j in 0..n {
                values.push(f(grid.point(i, j)));
            }
        }
        Self { grid, values, modes: OnceLock::new() }
    }

    /// Builds a field from Fourier coefficients; the imaginary part of the synthesis is dropped.
    pub fn from_modes(grid: TorusGrid, modes: Vec<Complex64>) -> Result<Self> {
        if modes.len() != grid.len() {
            return Err(Error::Shape(format!("expected {} modes, got {}", grid.len(), modes.len())));
        }
        let mut buf = modes;
        fft2(&mut buf, grid.n(), true);
        let values = buf.iter().map(|c| c.re).collect();
        Ok(Self { grid, values, modes: OnceLock::new() })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n() + j]
    }

    /// Fourier coefficients, computed on first use.
    pub fn modes(&self) -> &[Complex64] {
        self.modes.get_or_init(|| {
            let n = self.grid.n();
            let scale = 1.0 / (n * n) as f64;
            let mut buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft2(&mut buf, n, false);
            for c in &mut buf {
                *c *= scale;
            }
            buf
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape(format!(
                "grid mismatch: n = {} vs n = {}",
                self.grid.n(),
                other.grid.n()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), modes: OnceLock::new() }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid, values, modes: OnceLock::new() })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        self.map(|v| s * v)
    }

    pub fn shift(&self, c: f64) -> ScalarField {
        self.map(|v| v + c)
    }

    /// Flat integral `∫ f dx` by the periodic trapezoid rule.
    pub fn integral0(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid index `(i, j)` of the largest sample (first occurrence).
    pub fn argmax(&self) -> (usize, usize) {
        let n = self.grid.n();
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best / n, best % n)
    }

    fn with_multiplier(&self, mult: impl Fn(f64, f64) -> Complex64) -> ScalarField {
        let n = self.grid.n();
        let modes = self.modes();
        let mut out = Vec::with_capacity(modes.len());
        for a in 0..n {
            for b in 0..n {
                out.push(modes[a * n + b] * mult(a as f64, b as f64));
            }
        }
        // multipliers only see FFT indices; callers translate them
        ScalarField::from_modes(self.grid, out).expect("mode count matches grid")
    }

    /// Band-limited evaluation at an arbitrary torus point (direct mode sum, O(n²)).
    pub fn value_at(&self, p: Point) -> f64 {
        self.interpolant(0.0).value(p)
    }

    /// Truncated trigonometric interpolant keeping modes with `|f̂_k| > tol · max |f̂|`.
    pub fn interpolant(&self, tol: f64) -> SpectralInterpolant {
        SpectralInterpolant::new(self, tol)
    }
}

/// Pair of scalar fields, the x- and y-components of a vector field.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.same_grid(&y)?;
        Ok(Self { x, y })
    }

    /// Pointwise `|v|²`.
    pub fn norm_squared(&self) -> ScalarField {
        self.x.zip_with(&self.y, |a, b| a * a + b * b).expect("components share a grid")
    }
}

/// Flat Laplacian `Δ₀ = ∂²ₓ + ∂²ᵧ`, multiplier `-4π²|k|²`.
pub fn laplacian0(f: &ScalarField) -> ScalarField {
    let n = f.grid().n();
    f.with_multiplier(|a, b| {
        let kx = wavenumber(a as usize, n) as f64;
        let ky = wavenumber(b as usize, n) as f64;
        Complex64::new(-4.0 * PI * PI * (kx * kx + ky * ky), 0.0)
    })
}

/// Screened operator inverse `(I - Δ₀)⁻¹`, used as the descent preconditioner.
pub fn inverse_helmholtz0(f: &ScalarField) -> ScalarField {
    let n = f.grid().n();
    f.with_multiplier(|a, b| {
        let kx = wavenumber(a as usize, n) as f64;
        let ky = wavenumber(b as usize, n) as f64;
        Complex64::new(1.0 / (1.0 + 4.0 * PI * PI * (kx * kx + ky * ky)), 0.0)
    })
}

/// Zero-mean solution of `Δ₀ f = rhs`.
pub fn solve_poisson0(rhs: &ScalarField) -> Result<ScalarField> {
    let mean = rhs.integral0();
    let scale = rhs.sup_norm().max(1.0);
    if mean.abs() >= 1e-8 * scale {
        return Err(Error::Solvability { mean });
    }
    let n = rhs.grid().n();
    Ok(rhs.with_multiplier(|a, b| {
        let kx = wavenumber(a as usize, n) as f64;
        let ky = wavenumber(b as usize, n) as f64;
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(-1.0 / (4.0 * PI * PI * k2), 0.0)
        }
    }))
}

/// Spectral gradient (Nyquist derivative coefficients set to zero).
pub fn gradient0(f: &ScalarField) -> VectorField {
    let n = f.grid().n();
    let dx = f.with_multiplier(|a, _| Complex64::new(0.0, 2.0 * PI * derivative_wavenumber(a as usize, n)));
    let dy = f.with_multiplier(|_, b| Complex64::new(0.0, 2.0 * PI * derivative_wavenumber(b as usize, n)));
    VectorField { x: dx, y: dy }
}

/// Flat Dirichlet form `∫ ∇f·∇g dx`, evaluated in mode space.
///
/// Conformal invariance in two dimensions makes this equal to `∫ ∇f·∇g dV_g` for every
/// metric of the form `e^φ(dx² + dy²)`.
pub fn dirichlet_form(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.same_grid(g)?;
    let n = f.grid().n();
    let (fm, gm) = (f.modes(), g.modes());
    let mut acc = 0.0;
    for a in 0..n {
        let kx = wavenumber(a, n) as f64;
        for b in 0..n {
            let ky = wavenumber(b, n) as f64;
            let k2 = kx * kx + ky * ky;
            if k2 != 0.0 {
                let idx = a * n + b;
                acc += k2 * (fm[idx] * gm[idx].conj()).re;
            }
        }
    }
    Ok(4.0 * PI * PI * acc)
}

/// Pointwise product with 2/3-rule dealiasing: both factors are zero-padded to a
/// `3n/2` grid, multiplied there, and truncated back to `n`.
pub fn dealiased_product(f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    f.same_grid(g)?;
    let n = f.grid().n();
    let m = 3 * n / 2;
    let pad = |src: &[Complex64]| {
        let mut out = vec![Complex64::new(0.0, 0.0); m * m];
        for a in 0..n {
            let ka = wavenumber(a, n);
            if ka.unsigned_abs() as usize * 2 == n {
                continue;
            }
            let pa = ka.rem_euclid(m as i64) as usize;
            for b in 0..n {
                let kb = wavenumber(b, n);
                if kb.unsigned_abs() as usize * 2 == n {
                    continue;
                }
                let pb = kb.rem_euclid(m as i64) as usize;
                out[pa * m + pb] = src[a * n + b];
            }
        }
        fft2(&mut out, m, true);
        out
    };
    let fp = pad(f.modes());
    let gp = pad(g.modes());
    let mut prod: Vec<Complex64> = fp.iter().zip(&gp).map(|(a, b)| Complex64::new(a.re * b.re, 0.0)).collect();
    fft2(&mut prod, m, false);
    let scale = 1.0 / (m * m) as f64;
    let mut modes = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        let ka = wavenumber(a, n);
        if ka.unsigned_abs() as usize * 2 == n {
            continue;
        }
        let pa = ka.rem_euclid(m as i64) as usize;
        for b in 0..n {
            let kb = wavenumber(b, n);
            if kb.unsigned_abs() as usize * 2 == n {
                continue;
            }
            let pb = kb.rem_euclid(m as i64) as usize;
            modes[a * n + b] = prod[pa * m + pb] * scale;
        }
    }
    ScalarField::from_modes(f.grid(), modes)
}

/// Value, gradient and Hessian at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: [f64; 2],
    /// `[f_xx, f_xy, f_yy]`
    pub hess: [f64; 3],
}

impl Jet2 {
    pub fn scaled(self, s: f64) -> Jet2 {
        Jet2 {
            value: s * self.value,
            grad: [s * self.grad[0], s * self.grad[1]],
            hess: [s * self.hess[0], s * self.hess[1], s * self.hess[2]],
        }
    }

    pub fn plus(self, o: Jet2) -> Jet2 {
        Jet2 {
            value: self.value + o.value,
            grad: [self.grad[0] + o.grad[0], self.grad[1] + o.grad[1]],
            hess: [self.hess[0] + o.hess[0], self.hess[1] + o.hess[1], self.hess[2] + o.hess[2]],
        }
    }
}

/// Off-grid evaluator for a band-limited field, built from its significant modes.
#[derive(Debug, Clone)]
pub struct SpectralInterpolant {
    n: usize,
    kmax: usize,
    terms: Vec<(i64, i64, Complex64)>,
}

impl SpectralInterpolant {
    fn new(f: &ScalarField, tol: f64) -> Self {
        let n = f.grid().n();
        let modes = f.modes();
        let peak = modes.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let cut = tol * peak;
        let mut terms = Vec::new();
        let mut kmax = 0usize;
        for a in 0..n {
            for b in 0..n {
                let c = modes[a * n + b];
                if c.norm() > cut || (cut == 0.0 && c.norm() > 0.0) {
                    let (kx, ky) = (wavenumber(a, n), wavenumber(b, n));
                    kmax = kmax.max(kx.unsigned_abs() as usize).max(ky.unsigned_abs() as usize);
                    terms.push((kx, ky, c));
                }
            }
        }
        Self { n, kmax, terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn phases(&self, t: f64) -> Vec<Complex64> {
        let k = self.kmax as i64;
        let base = Complex64::from_polar(1.0, 2.0 * PI * t);
        let mut out = vec![Complex64::new(1.0, 0.0); (2 * k + 1) as usize];
        let mut pos = Complex64::new(1.0, 0.0);
        for m in 1..=k {
            pos *= base;
            out[(k + m) as usize] = pos;
            out[(k - m) as usize] = pos.conj();
        }
        out
    }

    pub fn value(&self, p: Point) -> f64 {
        self.jet(p).value
    }

    /// Value with first and second derivatives; Nyquist terms carry no derivative.
    pub fn jet(&self, p: Point) -> Jet2 {
        if self.terms.is_empty() {
            return Jet2::default();
        }
        let k = self.kmax as i64;
        let ex = self.phases(p.x);
        let ey = self.phases(p.y);
        let two_pi = 2.0 * PI;
        let mut j = Jet2::default();
        for &(kx, ky, c) in &self.terms {
            let z = c * ex[(kx + k) as usize] * ey[(ky + k) as usize];
            j.value += z.re;
            let (fx, fy) = (two_pi * kx as f64, two_pi * ky as f64);
            let nyq = |kk: i64| 2 * kk.unsigned_abs() as usize == self.n;
            let (dx, dy) = (if nyq(kx) { 0.0 } else { fx }, if nyq(ky) { 0.0 } else { fy });
            // d/dx of Re(z e^{i..}) = Re(i fx z) = -fx Im z
            j.grad[0] -= dx * z.im;
            j.grad[1] -= dy * z.im;
            j.hess[0] -= dx * dx * z.re;
            j.hess[1] -= dx * dy * z.re;
            j.hess[2] -= dy * dy * z.re;
        }
        j
    }
}
