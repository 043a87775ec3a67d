//! The Toda functionals, their gradients and Euler–Lagrange residuals, and a
//! preconditioned limited-memory descent shared with the Green's-function solver.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{integrate, Metric};
use crate::spectral::{dirichlet_form, inverse_helmholtz0, laplacian0, ScalarField};

/// Cartan matrix of SU(N+1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartanMatrix {
    n: usize,
    a: Vec<i64>,
}

impl CartanMatrix {
    pub fn su(rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Configuration("Cartan matrix needs rank >= 1".into()));
        }
        let mut a = vec![0; rank * rank];
        for i in 0..rank {
            a[i * rank + i] = 2;
            if i + 1 < rank {
                a[i * rank + i + 1] = -1;
                a[(i + 1) * rank + i] = -1;
            }
        }
        Ok(Self { n: rank, a })
    }

    pub fn rank(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.a[i * self.n + j]
    }
}

/// `N` fields with their mass parameters.
#[derive(Debug, Clone)]
pub struct TodaState {
    pub u: Vec<ScalarField>,
    pub masses: Vec<f64>,
}

impl TodaState {
    pub fn new(u: Vec<ScalarField>, masses: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.len() != masses.len() {
            return Err(Error::Shape(format!("{} fields but {} masses", u.len(), masses.len())));
        }
        for f in &u[1..] {
            u[0].same_grid(f)?;
        }
        Ok(Self { u, masses })
    }

    /// Zero fields with masses `(4π − ε, 4π − ε)`.
    pub fn zeros_eps(metric: &Metric, eps: f64) -> Self {
        let z = ScalarField::zeros(metric.grid());
        Self { u: vec![z.clone(), z], masses: vec![4.0 * PI - eps; 2] }
    }
}

fn check_eps(eps: f64) -> Result<f64> {
    if !(0.0..4.0 * PI).contains(&eps) {
        return Err(Error::Configuration(format!("eps must lie in [0, 4π), got {eps}")));
    }
    Ok(4.0 * PI - eps)
}

/// General-rank Toda functional.
pub fn phi_general(state: &TodaState, cartan: &CartanMatrix, metric: &Metric) -> Result<f64> {
    let n = cartan.rank();
    if state.u.len() != n {
        return Err(Error::Shape(format!("state rank {} vs Cartan rank {n}", state.u.len())));
    }
    let means = state.u.iter().map(|f| integrate(f, metric)).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = cartan.get(i, j) as f64;
            if a != 0.0 {
                total += 0.5 * a * (dirichlet_form(&state.u[i], &state.u[j])? + 2.0 * state.masses[i] * means[j]);
            }
        }
    }
    for i in 0..n {
        let mut comb = ScalarField::zeros(metric.grid());
        for j in 0..n {
            let a = cartan.get(i, j) as f64;
            if a != 0.0 {
                comb = comb.zip_with(&state.u[j], |c, v| c + a * v)?;
            }
        }
        total -= state.masses[i] * metric.log_integral_exp(&comb)?;
    }
    Ok(total)
}

/// Rank-two functional in the `u` variables with masses `4π − ε`.
pub fn phi_eps(u1: &ScalarField, u2: &ScalarField, eps: f64, metric: &Metric) -> Result<f64> {
    rank_two(u1, u2, check_eps(eps)?, metric)
}

/// The limiting functional `Φ₀` (both masses `4π`) in the `u` variables.
pub fn phi0(u1: &ScalarField, u2: &ScalarField, metric: &Metric) -> Result<f64> {
    rank_two(u1, u2, 4.0 * PI, metric)
}

fn rank_two(u1: &ScalarField, u2: &ScalarField, m: f64, metric: &Metric) -> Result<f64> {
    // symmetric arrangement so that swapping the arguments is bitwise exact
    let d = dirichlet_form(u1, u1)? + dirichlet_form(u2, u2)? + 0.5 * (dirichlet_form(u1, u2)? + dirichlet_form(u2, u1)?);
    let lin = integrate(u1, metric)? + integrate(u2, metric)?;
    let logs = metric.log_integral_exp(u1)? + metric.log_integral_exp(u2)?;
    Ok(d / 3.0 + m * lin - m * logs)
}

/// `L²(dV_g)` gradients of [`phi_eps`].
pub fn phi_eps_gradient(
    u1: &ScalarField,
    u2: &ScalarField,
    eps: f64,
    metric: &Metric,
) -> Result<(ScalarField, ScalarField)> {
    let m = check_eps(eps)?;
    let g = TodaObjective { m, metric }.gradient_fields(&[u1.clone(), u2.clone()])?;
    let mut it = g.into_iter();
    Ok((it.next().expect("two gradients"), it.next().expect("two gradients")))
}

/// Sup-norm of the Euler–Lagrange residual of a normalized state.
pub fn el_residual(u1: &ScalarField, u2: &ScalarField, eps: f64, metric: &Metric) -> Result<f64> {
    let m = check_eps(eps)?;
    for (k, u) in [u1, u2].into_iter().enumerate() {
        let z = metric.log_integral_exp(u)?;
        if z.abs() > 1e-8 {
            return Err(Error::Precondition(format!("field {} is not normalized (log ∫e^u = {z:e})", k + 1)));
        }
    }
    let mut worst: f64 = 0.0;
    for (a, b) in [(u1, u2), (u2, u1)] {
        let lap = metric.laplacian(a)?;
        for ((l, ua), ub) in lap.values().iter().zip(a.values()).zip(b.values()) {
            let r = -l - (2.0 * m * ua.exp() - m * ub.exp() - m);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Shifts each field so that `∫ e^{u_i} dV_g = 1`.
pub fn normalize_state(state: &TodaState, metric: &Metric) -> Result<TodaState> {
    let u = state
        .u
        .iter()
        .map(|f| metric.log_integral_exp(f).map(|z| f.shift(-z)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TodaState { u, masses: state.masses.clone() })
}

/// Boundedness-below criterion: every mass at most `4π`.
pub fn masses_admissible(masses: &[f64]) -> bool {
    masses.iter().all(|&m| m <= 4.0 * PI)
}

/// Descent controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once the sup-norm of the `L²(dV_g)` gradient is below this.
    pub grad_tol: f64,
    /// Divergence ceiling on `max u_i`.
    pub ceiling: f64,
    pub memory: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Energy increase tolerated by the line search.
    pub energy_slack: f64,
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            grad_tol: 1e-8,
            ceiling: 40.0,
            memory: 8,
            armijo: 1e-4,
            max_backtracks: 40,
            energy_slack: 1e-12,
            stagnation_window: 50,
            stagnation_tol: 1e-14,
        }
    }
}

/// Why a descent run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    BlownUp,
    Stagnated,
    LineSearchFailed,
    MaxIterations,
}

/// Summary of a [`minimize_phi_eps`] run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescentReport {
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
    pub grad_norm: f64,
    pub el_residual: f64,
    pub maxima: Vec<f64>,
    pub means: Vec<f64>,
    /// `1 + ū_i/m_i`, present only when `m_i > 0`.
    pub s: Vec<Option<f64>>,
    pub blown_up: bool,
    pub stop: StopReason,
}

impl DescentReport {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

/// A shift-invariant smooth objective on a tuple of fields.
pub trait Objective {
    fn metric(&self) -> &Metric;
    fn value(&self, u: &[ScalarField]) -> Result<f64>;
    /// `L²(dV_g)` gradient.
    fn gradient_fields(&self, u: &[ScalarField]) -> Result<Vec<ScalarField>>;
    /// Representative of the shift class used between iterations.
    fn normalize(&self, u: Vec<ScalarField>) -> Result<Vec<ScalarField>>;
}

struct TodaObjective<'a> {
    m: f64,
    metric: &'a Metric,
}

impl Objective for TodaObjective<'_> {
    fn metric(&self) -> &Metric {
        self.metric
    }

    fn value(&self, u: &[ScalarField]) -> Result<f64> {
        phi_eps(&u[0], &u[1], 4.0 * PI - self.m, self.metric)
    }

    fn gradient_fields(&self, u: &[ScalarField]) -> Result<Vec<ScalarField>> {
        let m = self.m;
        let w = self.metric.weight();
        let mut out = Vec::with_capacity(2);
        for (a, b) in [(&u[0], &u[1]), (&u[1], &u[0])] {
            let comb = a.zip_with(b, |x, y| (2.0 * x + y) / 3.0)?;
            let lap = laplacian0(&comb);
            let z = self.metric.log_integral_exp(a)?;
            let vals: Vec<f64> = lap
                .values()
                .iter()
                .zip(a.values())
                .zip(w.values())
                .map(|((l, ua), wt)| -l / wt + m - m * (ua - z).exp())
                .collect();
            out.push(ScalarField::new(a.grid(), vals)?);
        }
        Ok(out)
    }

    fn normalize(&self, u: Vec<ScalarField>) -> Result<Vec<ScalarField>> {
        u.into_iter().map(|f| self.metric.log_integral_exp(&f).map(|z| f.shift(-z))).collect()
    }
}

/// Outcome of [`descend`].
#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub u: Vec<ScalarField>,
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
    pub grad_norm: f64,
    pub stop: StopReason,
}

fn sup_all(g: &[ScalarField]) -> f64 {
    g.iter().map(ScalarField::sup_norm).fold(0.0, f64::max)
}

fn dot(a: &[ScalarField], b: &[ScalarField]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.values().iter().zip(y.values()).map(|(p, q)| p * q).sum::<f64>() * x.grid().cell_area())
        .sum::<f64>()
}

fn axpy(alpha: f64, x: &[ScalarField], y: &[ScalarField]) -> Vec<ScalarField> {
    x.iter().zip(y).map(|(a, b)| a.zip_with(b, |p, q| alpha * p + q).expect("one grid")).collect()
}

/// Preconditioned L-BFGS with backtracking, in the flat `L²` geometry where the
/// preconditioner `(I − Δ₀)⁻¹` is symmetric.
pub fn descend(obj: &dyn Objective, init: Vec<ScalarField>, opts: &SolverOptions) -> Result<DescentOutcome> {
    let weight = obj.metric().weight().clone();
    let flat_grad = |g: Vec<ScalarField>| -> Vec<ScalarField> {
        g.into_iter().map(|f| f.zip_with(&weight, |a, w| a * w).expect("one grid")).collect()
    };
    let precondition = |d: &[ScalarField]| -> Vec<ScalarField> { d.iter().map(inverse_helmholtz0).collect() };

    let mut u = obj.normalize(init)?;
    let mut f = obj.value(&u)?;
    if !f.is_finite() {
        return Err(Error::NumericalFailure { message: "initial energy is not finite".into(), trace: vec![f] });
    }
    let mut g = obj.gradient_fields(&u)?;
    let mut d = flat_grad(g.clone());
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<ScalarField>, Vec<ScalarField>, f64)> = VecDeque::new();
    let mut quiet = 0usize;
    let mut iter = 0usize;

    let stop = loop {
        let gn = sup_all(&g);
        if gn <= opts.grad_tol {
            break StopReason::Converged;
        }
        if u.iter().map(ScalarField::max).fold(f64::NEG_INFINITY, f64::max) > opts.ceiling {
            break StopReason::BlownUp;
        }
        if iter >= opts.max_iter {
            break StopReason::MaxIterations;
        }

        // two-loop recursion
        let mut q = d.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q = axpy(-a, y, &q);
            alphas.push(a);
        }
        let mut r = precondition(&q);
        if let Some((s, y, _)) = history.back() {
            let py = precondition(y);
            let gamma = dot(s, y) / dot(y, &py);
            r.iter_mut().for_each(|f| *f = f.scale(gamma));
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &r);
            r = axpy(a - b, s, &r);
        }
        let mut dir: Vec<ScalarField> = r.iter().map(|f| f.scale(-1.0)).collect();
        let mut slope = dot(&dir, &d);
        if !(slope < 0.0) {
            history.clear();
            dir = precondition(&d).iter().map(|f| f.scale(-1.0)).collect();
            slope = dot(&dir, &d);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = obj.normalize(axpy(t, &dir, &u))?;
            let ft = obj.value(&trial)?;
            if ft.is_finite() && ft <= f + opts.armijo * t * slope + opts.energy_slack * f.abs().max(1.0) {
                accepted = Some((trial, ft));
                break;
            }
            if !ft.is_finite() && t < 1e-10 {
                trace.push(ft);
                return Err(Error::NumericalFailure { message: "energy became non-finite".into(), trace });
            }
            t *= 0.5;
        }
        let Some((un, fnew)) = accepted else {
            if history.is_empty() {
                break StopReason::LineSearchFailed;
            }
            history.clear();
            continue;
        };
        let gnew = obj.gradient_fields(&un)?;
        let dnew = flat_grad(gnew.clone());
        let s: Vec<ScalarField> = un.iter().zip(&u).map(|(a, b)| a.sub(b).expect("one grid")).collect();
        let y: Vec<ScalarField> = dnew.iter().zip(&d).map(|(a, b)| a.sub(b).expect("one grid")).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        quiet = if f - fnew < opts.stagnation_tol { quiet + 1 } else { 0 };
        u = un;
        f = fnew;
        g = gnew;
        d = dnew;
        trace.push(f);
        iter += 1;
        if quiet >= opts.stagnation_window {
            break StopReason::Stagnated;
        }
    };
    Ok(DescentOutcome { grad_norm: sup_all(&g), u, iterations: iter, energy_trace: trace, stop })
}

/// Minimizes `Φ_ε` from `init`; the returned state is normalized.
pub fn minimize_phi_eps(
    init: &TodaState,
    eps: f64,
    metric: &Metric,
    opts: &SolverOptions,
) -> Result<(TodaState, DescentReport)> {
    if !(eps > 0.0 && eps < 4.0 * PI) {
        return Err(Error::Configuration(format!("eps must lie in (0, 4π), got {eps}")));
    }
    if init.u.len() != 2 {
        return Err(Error::Shape(format!("expected two fields, got {}", init.u.len())));
    }
    let obj = TodaObjective { m: 4.0 * PI - eps, metric };
    let out = descend(&obj, init.u.clone(), opts)?;
    let el = el_residual(&out.u[0], &out.u[1], eps, metric)?;
    let maxima: Vec<f64> = out.u.iter().map(ScalarField::max).collect();
    let means = out.u.iter().map(|f| integrate(f, metric)).collect::<Result<Vec<_>>>()?;
    let s = maxima.iter().zip(&means).map(|(&m, &b)| (m > 0.0).then(|| 1.0 + b / m)).collect();
    let report = DescentReport {
        iterations: out.iterations,
        energy_trace: out.energy_trace,
        grad_norm: out.grad_norm,
        el_residual: el,
        maxima,
        means,
        s,
        blown_up: out.stop == StopReason::BlownUp,
        stop: out.stop,
    };
    Ok((TodaState { u: out.u, masses: vec![obj.m; 2] }, report))
}
