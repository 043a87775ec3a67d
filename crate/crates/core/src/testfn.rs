//! Test functions glueing a bubble `w(x/ε)` onto the Green's functions, the value of
//! `Φ₀` on them, and the small-ε deficit fits.
//!
//! Field `k` near point `i` is one of two kinds: a full bubble where `G_k` has the
//! `−4 log r` singularity, or a half bubble `−(w + 2 log(1+πL²))/2` where it has
//! `+2 log r`. On `Lε ≤ r ≤ 2Lε` the branch is `G_k − ηH_k + C_k` with
//! `H_k = G_k − a log r − A − λξ − μη`; outside it is `G_k + C_k`. Radii are measured
//! in the isothermal frame at each point.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubble::{bubble_radial, bubble_radial_derivative, closing_constant_case2, coupled_l, limit_constant_case2, lower_bound_case1, lower_bound_case2, BubbleWindow};
use crate::error::{Error, Result};
use crate::functional::phi0;
use crate::geometry::{integrate, metric_taylor_at, Metric, Point};
use crate::greens::{CaseTag, GreenPair, LocalExpansion};
use crate::quadrature::{angles, integrate_vec, Tolerance};
use crate::spectral::{ScalarField, SpectralInterpolant};

/// `ε ∈ {10⁻², 10^{−2.5}, 10⁻³, 10^{−3.5}, 10⁻⁴}`.
pub fn default_eps_list() -> Vec<f64> {
    [2.0, 2.5, 3.0, 3.5, 4.0].iter().map(|e: &f64| 10f64.powf(-e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// `a = −4`: the branch is `w(ξ/ε) + λξ + μη`.
    Bubble,
    /// `a = 2`: the branch is `−(w(ξ/ε) + 2ℓ)/2 + λξ + μη + const`.
    HalfBubble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub role: Role,
    pub expansion: LocalExpansion,
    /// Additive constant of the inner branch, as displayed in the construction.
    pub inner_constant: f64,
    /// The constant continuity at `r = Lε` forces, given the outer constant.
    pub matched_constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    Inner,
    Annulus,
    Outer,
}

/// Quantities at one local point of a disc.
#[derive(Debug, Clone, Copy)]
struct LocalSample {
    phi: f64,
    grad: [f64; 2],
    g: f64,
    g_grad: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct TestFunctionPair<'a> {
    pub case: CaseTag,
    pub eps: f64,
    pub l: f64,
    pub windows: Vec<BubbleWindow>,
    /// Outer-branch constants: `φ_k = G_k + C_k` away from the discs.
    pub constants: [f64; 2],
    /// `branches[k][i]`: field `k` near point `i`.
    pub branches: [Vec<Branch>; 2],
    /// Outer constants implied by continuity at the bubble's own disc.
    pub matched_constants: [f64; 2],
    pair: &'a GreenPair,
}

fn role_of(a: f64) -> Result<Role> {
    if (a + 4.0).abs() < 1e-9 {
        Ok(Role::Bubble)
    } else if (a - 2.0).abs() < 1e-9 {
        Ok(Role::HalfBubble)
    } else {
        Err(Error::Precondition(format!("no test-function branch for log coefficient {a}")))
    }
}

fn check_scales(eps: f64, l: f64) -> Result<()> {
    if !(eps > 0.0 && l > 0.0 && eps.is_finite() && l.is_finite()) {
        return Err(Error::Configuration(format!("need eps > 0 and L > 0, got eps={eps}, L={l}")));
    }
    Ok(())
}

/// Case-1 test pair: `φ₁` has a bubble at `p₁` and a half bubble at `p₂`, `φ₂` the reverse.
pub fn build_test_case1(pair: &GreenPair, eps: f64, l: f64) -> Result<TestFunctionPair<'_>> {
    if pair.case != CaseTag::One || pair.points.len() != 2 {
        return Err(Error::Precondition("case-1 test functions need a case-1 Green pair".into()));
    }
    check_scales(eps, l)?;
    let sep = pair.points[0].distance(pair.points[1]);
    for fr in &pair.frames {
        if l * eps / fr.scale >= sep / 4.0 {
            return Err(Error::Geometry(format!("bubble windows overlap: L·eps = {} against separation {sep}", l * eps)));
        }
    }
    let le = l * eps;
    let ell = (PI * l * l).ln_1p();
    let mut constants = [0.0; 2];
    let mut branches: [Vec<Branch>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        let own = k;
        let other = 1 - k;
        let a_own = pair.expansion(k, own).big_a;
        constants[k] = 4.0 * le.ln() - 2.0 * ell - a_own;
        for i in 0..2 {
            let e = *pair.expansion(k, i);
            let role = role_of(e.a)?;
            let inner = if i == other { 6.0 * le.ln() - 2.0 * ell + e.big_a - a_own } else { 0.0 };
            branches[k].push(Branch { role, expansion: e, inner_constant: inner, matched_constant: 0.0 });
        }
    }
    finish(pair, CaseTag::One, eps, l, constants, branches)
}

/// Case-2 test pair around the single point `p`.
pub fn build_test_case2(pair: &GreenPair, eps: f64, l: f64) -> Result<TestFunctionPair<'_>> {
    if pair.case != CaseTag::Two || pair.points.len() != 1 {
        return Err(Error::Precondition("case-2 test functions need a case-2 Green pair".into()));
    }
    check_scales(eps, l)?;
    if l * eps / pair.frames[0].scale >= 0.125 {
        return Err(Error::Geometry(format!("bubble window L·eps = {} must stay below 1/8", l * eps)));
    }
    let le = l * eps;
    let ell = (PI * l * l).ln_1p();
    let e1 = *pair.expansion(0, 0);
    let e2 = *pair.expansion(1, 0);
    let constants = [4.0 * le.ln() - 2.0 * ell - e1.big_a, 0.0];
    let branches = [
        vec![Branch { role: role_of(e1.a)?, expansion: e1, inner_constant: 0.0, matched_constant: 0.0 }],
        vec![Branch { role: role_of(e2.a)?, expansion: e2, inner_constant: 2.0 * le.ln() + e2.big_a, matched_constant: 0.0 }],
    ];
    finish(pair, CaseTag::Two, eps, l, constants, branches)
}

fn finish(
    pair: &GreenPair,
    case: CaseTag,
    eps: f64,
    l: f64,
    constants: [f64; 2],
    mut branches: [Vec<Branch>; 2],
) -> Result<TestFunctionPair<'_>> {
    let le = l * eps;
    let ell = (PI * l * l).ln_1p();
    let mut matched_constants = constants;
    for k in 0..2 {
        for b in branches[k].iter_mut() {
            let e = &b.expansion;
            match b.role {
                // w(L) = −2ℓ must meet a log Lε + A + C
                Role::Bubble => {
                    matched_constants[k] = -2.0 * ell - e.a * le.ln() - e.big_a;
                    b.matched_constant = 0.0;
                }
                Role::HalfBubble => b.matched_constant = e.a * le.ln() + e.big_a + constants[k],
            }
        }
    }
    let windows = pair.points.iter().map(|&p| BubbleWindow::new(l, eps, p)).collect::<Result<Vec<_>>>()?;
    Ok(TestFunctionPair { case, eps, l, windows, constants, branches, matched_constants, pair })
}

/// Quintic smoothstep cutoff: 1 on `r ≤ Lε`, 0 on `r ≥ 2Lε`. Returns `(η, η′)`.
pub fn cutoff(r: f64, le: f64) -> (f64, f64) {
    if r <= le {
        return (1.0, 0.0);
    }
    if r >= 2.0 * le {
        return (0.0, 0.0);
    }
    let t = (r - le) / le;
    let s = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    (1.0 - s, -ds / le)
}

impl<'a> TestFunctionPair<'a> {
    pub fn pair(&self) -> &'a GreenPair {
        self.pair
    }

    /// `Lε`.
    pub fn inner_radius(&self) -> f64 {
        self.l * self.eps
    }

    /// `ℓ = log(1 + πL²)`.
    pub fn ell(&self) -> f64 {
        (PI * self.l * self.l).ln_1p()
    }

    /// Largest `|printed − matched|` over all branch constants.
    pub fn constant_mismatch(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..2 {
            worst = worst.max((self.constants[k] - self.matched_constants[k]).abs());
            for b in &self.branches[k] {
                worst = worst.max((b.inner_constant - b.matched_constant).abs());
            }
        }
        worst
    }

    /// Largest `|∇η|·Lε` of the cutoff (15/8 for the quintic smoothstep).
    pub fn cutoff_slope_bound(&self) -> f64 {
        1.875
    }

    fn zone_of(&self, r: f64) -> Zone {
        let le = self.inner_radius();
        if r < le {
            Zone::Inner
        } else if r < 2.0 * le {
            Zone::Annulus
        } else {
            Zone::Outer
        }
    }

    /// Field `k` at local coordinates `xi` around point `i`, on the branch `zone`.
    fn sample(&self, k: usize, i: usize, xi: [f64; 2], zone: Zone) -> LocalSample {
        let pair = self.pair;
        let fr = &pair.frames[i];
        let b = &self.branches[k][i];
        let e = &b.expansion;
        let s = fr.scale;
        let x = fr.to_torus(xi);
        let jet = pair.regular_jet(k, i, x);
        let r = xi[0].hypot(xi[1]);
        let (ux, uy) = if r > 0.0 { (xi[0] / r, xi[1] / r) } else { (0.0, 0.0) };
        let reg = jet.value - e.a * s.ln();
        let g = reg + e.a * r.ln();
        let g_grad = if r > 0.0 {
            [jet.grad[0] / s + e.a * ux / r, jet.grad[1] / s + e.a * uy / r]
        } else {
            [f64::NAN, f64::NAN]
        };
        let lin = e.lambda * xi[0] + e.mu * xi[1];
        let c = self.constants[k];
        let (phi, grad) = match zone {
            Zone::Inner => {
                let t = r / self.eps;
                let w = bubble_radial(t);
                let dw = bubble_radial_derivative(t) / self.eps;
                let (f, df) = match b.role {
                    Role::Bubble => (w + b.inner_constant, dw),
                    Role::HalfBubble => (-0.5 * (w + 2.0 * self.ell()) + b.inner_constant, -0.5 * dw),
                };
                (f + lin, [df * ux + e.lambda, df * uy + e.mu])
            }
            Zone::Annulus => {
                let (eta, deta) = cutoff(r, self.inner_radius());
                let h = reg - e.big_a - lin;
                let hg = [jet.grad[0] / s - e.lambda, jet.grad[1] / s - e.mu];
                (
                    g - eta * h + c,
                    [g_grad[0] - eta * hg[0] - deta * h * ux, g_grad[1] - eta * hg[1] - deta * h * uy],
                )
            }
            Zone::Outer => (g + c, g_grad),
        };
        LocalSample { phi, grad, g, g_grad }
    }

    /// Value of `φ_k` at a torus point.
    pub fn value(&self, k: usize, x: Point) -> f64 {
        for (i, fr) in self.pair.frames.iter().enumerate() {
            let xi = fr.to_local(x);
            let r = xi[0].hypot(xi[1]);
            if r < 2.0 * self.inner_radius() {
                return self.sample(k, i, xi, self.zone_of(r)).phi;
            }
        }
        self.pair.value(k, x) + self.constants[k]
    }

    /// Value of `φ_k` on an explicit branch, at local coordinates around point `i`.
    pub fn branch_value(&self, k: usize, i: usize, xi: [f64; 2], zone: Zone) -> f64 {
        self.sample(k, i, xi, zone).phi
    }

    /// Largest jump of either field across `r = Lε` and `r = 2Lε` at every point.
    pub fn interface_jump(&self, n_theta: usize) -> f64 {
        let le = self.inner_radius();
        let mut worst: f64 = 0.0;
        for th in angles(n_theta) {
            let (c, s) = (th.cos(), th.sin());
            for i in 0..self.pair.points.len() {
                for k in 0..2 {
                    let xi1 = [le * c, le * s];
                    let xi2 = [2.0 * le * c, 2.0 * le * s];
                    let j1 = self.branch_value(k, i, xi1, Zone::Inner) - self.branch_value(k, i, xi1, Zone::Annulus);
                    let j2 = self.branch_value(k, i, xi2, Zone::Annulus) - self.branch_value(k, i, xi2, Zone::Outer);
                    worst = worst.max(j1.abs()).max(j2.abs());
                }
            }
        }
        worst
    }

    /// Both fields sampled on the metric's grid.
    pub fn grid_fields(&self, metric: &Metric) -> Result<[ScalarField; 2]> {
        let grid = metric.grid();
        let n = grid.n();
        let mut out = Vec::with_capacity(2);
        for k in 0..2 {
            let g = self.pair.field(k).grid_values();
            let le2 = 2.0 * self.inner_radius();
            let mut vals = vec![0.0; grid.len()];
            vals.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
                for (b, slot) in row.iter_mut().enumerate() {
                    let x = grid.point(a, b);
                    let mut hit = None;
                    for (i, fr) in self.pair.frames.iter().enumerate() {
                        let xi = fr.to_local(x);
                        if xi[0].hypot(xi[1]) < le2 {
                            hit = Some((i, xi));
                        }
                    }
                    *slot = match hit {
                        Some((i, xi)) => self.sample(k, i, xi, self.zone_of(xi[0].hypot(xi[1]))).phi,
                        None => g.values()[a * n + b] + self.constants[k],
                    };
                }
            });
            out.push(ScalarField::new(grid, vals)?);
        }
        let mut it = out.into_iter();
        Ok([it.next().expect("two fields"), it.next().expect("two fields")])
    }
}

/// Quadrature settings for [`evaluate_phi0_with`].
#[derive(Debug, Clone, Copy)]
pub struct HybridOptions {
    /// Stitch radius in units of `Lε`; at least 2.
    pub stitch: f64,
    /// Trapezoid nodes on the disc circles.
    pub n_theta: usize,
    /// Trapezoid nodes on the partition collar outside the stitch.
    pub n_theta_collar: usize,
    pub tol: Tolerance,
}

/// Settings for the asymptotic fits.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub hybrid: HybridOptions,
    /// Hold `L` fixed instead of using the coupling `L⁴ε² = 1/log(−log ε)`.
    pub fixed_l: Option<f64>,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self { stitch: 2.0, n_theta: 64, n_theta_collar: 128, tol: Tolerance { abs: 1e-10, rel: 1e-12, max_intervals: 4000 } }
    }
}

/// The pieces of one `Φ₀` evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phi0Breakdown {
    pub phi0: f64,
    /// `∫∇φ₁·∇φ₁`, `∫∇φ₂·∇φ₂`, `∫∇φ₁·∇φ₂`.
    pub dirichlet: [f64; 3],
    /// Parts of `dirichlet` coming from the discs around the points.
    pub dirichlet_discs: [f64; 3],
    pub means: [f64; 2],
    /// `log ∫e^{φ_k} dV_g`.
    pub log_exp: [f64; 2],
    /// `∫e^{φ_k} dV_g / ε²`.
    pub scaled_exp: [f64; 2],
    /// `∫_{B_{Lε}} e^{φ_k} dV_g / ε²` at the point carrying the bubble of `φ_k`.
    pub bubble_exp: [f64; 2],
    pub quadrature_intervals: usize,
}

// component layout of the disc integrals
const D11: usize = 0;
const D22: usize = 1;
const D12: usize = 2;
const MEAN: usize = 3;
const EXP: usize = 5;
const GF: usize = 7;
const EXPG: usize = 11;
const NCOMP: usize = 13;

fn metric_phi(metric: &Metric) -> Option<SpectralInterpolant> {
    (!metric.is_flat()).then(|| metric.phi().interpolant(1e-15))
}

/// Smooth partition weight: 1 on `r ≤ r1`, 0 on `r ≥ r2`.
fn partition(r: f64, r1: f64, r2: f64) -> f64 {
    if r <= r1 {
        return 1.0;
    }
    if r >= r2 {
        return 0.0;
    }
    let t = (r - r1) / (r2 - r1);
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    f(1.0 - t) / (f(1.0 - t) + f(t))
}

struct Evaluator<'p, 'a> {
    tf: &'p TestFunctionPair<'a>,
    phi: Option<SpectralInterpolant>,
    log_eps2: f64,
    /// coefficients `(c, d)` of `F_m = c e^{G₂} + d` off the sources
    forcing: [(f64, f64); 2],
}

impl Evaluator<'_, '_> {
    fn phi_local(&self, i: usize, xi: [f64; 2]) -> f64 {
        match &self.phi {
            None => 0.0,
            Some(p) => {
                let fr = &self.tf.pair.frames[i];
                p.value(fr.to_torus(xi)) - fr.phi_at_center
            }
        }
    }

    fn forcing(&self, m: usize, eg2: f64) -> f64 {
        let (c, d) = self.forcing[m];
        c * eg2 + d
    }

    fn eg2(&self, s2: &LocalSample) -> f64 {
        if self.forcing[0].0 == 0.0 {
            0.0
        } else {
            s2.g.exp()
        }
    }

    /// Angular average of the disc integrands at radius `r`, times `2πr`.
    fn ring(&self, i: usize, r: f64, thetas: &[f64]) -> Vec<f64> {
        let tf = self.tf;
        let zone = tf.zone_of(r);
        let mut acc = vec![0.0; NCOMP];
        for &th in thetas {
            let xi = [r * th.cos(), r * th.sin()];
            let s = [tf.sample(0, i, xi, zone), tf.sample(1, i, xi, zone)];
            let dv = self.phi_local(i, xi).exp();
            let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
            acc[D11] += dot(s[0].grad, s[0].grad);
            acc[D22] += dot(s[1].grad, s[1].grad);
            acc[D12] += dot(s[0].grad, s[1].grad);
            let eg2 = self.eg2(&s[1]);
            for k in 0..2 {
                acc[MEAN + k] += (s[k].phi - s[k].g - tf.constants[k]) * dv;
                acc[EXP + k] += (s[k].phi - self.log_eps2).exp() * dv;
                for m in 0..2 {
                    acc[GF + 2 * k + m] += s[k].g * self.forcing(m, eg2) * dv;
                }
                if tf.branches[k][i].role == Role::HalfBubble {
                    acc[EXPG + k] += (s[k].g + tf.constants[k] - self.log_eps2).exp() * dv;
                }
            }
        }
        let w = 2.0 * PI * r / thetas.len() as f64;
        acc.iter_mut().for_each(|a| *a *= w);
        acc
    }

    /// `∮ G_k ∂_r G_m r dθ` on the circle of radius `r` around point `i`, `[k][m]`.
    fn flux(&self, i: usize, r: f64, thetas: &[f64]) -> [[f64; 2]; 2] {
        let tf = self.tf;
        let mut out = [[0.0; 2]; 2];
        for &th in thetas {
            let (c, s) = (th.cos(), th.sin());
            let xi = [r * c, r * s];
            let smp = [tf.sample(0, i, xi, Zone::Outer), tf.sample(1, i, xi, Zone::Outer)];
            for k in 0..2 {
                for m in 0..2 {
                    out[k][m] += smp[k].g * (smp[m].g_grad[0] * c + smp[m].g_grad[1] * s);
                }
            }
        }
        let w = 2.0 * PI * r / thetas.len() as f64;
        out.iter_mut().flatten().for_each(|v| *v *= w);
        out
    }

    /// `∫_ρ^{R₂} χ e^{G_k + C_k}/ε² dV_g` around the bubble point of field `k`.
    fn collar(&self, k: usize, i: usize, rho: f64, r2: f64, thetas: &[f64], tol: Tolerance) -> Result<(f64, usize)> {
        let tf = self.tf;
        let res = integrate_vec(
            |r| {
                let chi = partition(r, rho, r2);
                if chi == 0.0 {
                    return vec![0.0];
                }
                let mut acc = 0.0;
                for &th in thetas {
                    let xi = [r * th.cos(), r * th.sin()];
                    let s = tf.sample(k, i, xi, Zone::Outer);
                    acc += (s.g + tf.constants[k] - self.log_eps2).exp() * self.phi_local(i, xi).exp();
                }
                vec![chi * acc * 2.0 * PI * r / thetas.len() as f64]
            },
            rho,
            r2,
            tol,
        )?;
        Ok((res.value[0], res.intervals))
    }
}

fn collar_radius(pair: &GreenPair) -> f64 {
    let s_min = pair.frames.iter().map(|f| f.scale).fold(f64::INFINITY, f64::min);
    let torus = if pair.points.len() > 1 {
        let mut d = f64::INFINITY;
        for (a, p) in pair.points.iter().enumerate() {
            for q in &pair.points[a + 1..] {
                d = d.min(p.distance(*q));
            }
        }
        (0.49 * d).min(0.45)
    } else {
        0.45
    };
    torus * s_min
}

/// `Φ₀(φ₁, φ₂)` by the hybrid scheme with default settings.
pub fn evaluate_phi0(tf: &TestFunctionPair<'_>, metric: &Metric) -> Result<f64> {
    evaluate_phi0_with(tf, metric, &HybridOptions::default()).map(|b| b.phi0)
}

/// Hybrid evaluation: polar quadrature on the discs `B_ρ(p_i)`, `ρ = stitch·Lε`, and
/// for the rest Green's identity (Dirichlet part), the known means of `G_k`, and a
/// smooth partition between grid and polar quadrature for `∫e^{G_k}` off the discs.
pub fn evaluate_phi0_with(tf: &TestFunctionPair<'_>, metric: &Metric, opts: &HybridOptions) -> Result<Phi0Breakdown> {
    let pair = tf.pair;
    let le = tf.inner_radius();
    if opts.stitch < 2.0 {
        return Err(Error::Configuration(format!("stitch radius must be at least 2Lε, got {}Lε", opts.stitch)));
    }
    let rho = opts.stitch * le;
    let r2 = collar_radius(pair);
    if rho >= r2 {
        return Err(Error::Geometry(format!("stitch radius {rho} reaches the partition collar {r2}")));
    }
    let forcing = match tf.case {
        CaseTag::One => [(0.0, -4.0 * PI), (0.0, -4.0 * PI)],
        CaseTag::Two => [(-4.0 * PI, -4.0 * PI), (8.0 * PI, -4.0 * PI)],
    };
    let ev = Evaluator { tf, phi: metric_phi(metric), log_eps2: 2.0 * tf.eps.ln(), forcing };
    let thetas = angles(opts.n_theta);
    let collar_thetas = angles(opts.n_theta_collar);
    let npts = pair.points.len();

    // disc integrals, per point and segment
    let mut cuts = vec![0.0, le, 2.0 * le];
    if rho > 2.0 * le {
        cuts.push(rho);
    }
    let jobs: Vec<(usize, usize)> = (0..npts).flat_map(|i| (0..cuts.len() - 1).map(move |s| (i, s))).collect();
    let seg = jobs
        .par_iter()
        .map(|&(i, s)| integrate_vec(|r| ev.ring(i, r, &thetas), cuts[s], cuts[s + 1], opts.tol).map(|q| (i, s, q)))
        .collect::<Result<Vec<_>>>()?;
    let mut disc = vec![vec![0.0; NCOMP]; npts];
    let mut bubble_exp = [0.0; 2];
    let mut intervals = 0;
    for (i, s, q) in &seg {
        intervals += q.intervals;
        for c in 0..NCOMP {
            disc[*i][c] += q.value[c];
        }
        if *s == 0 {
            for k in 0..2 {
                if tf.branches[k][*i].role == Role::Bubble {
                    bubble_exp[k] = q.value[EXP + k];
                }
            }
        }
    }

    // Dirichlet energies: discs plus Green's identity on the complement
    let grid = metric.grid();
    let cell = grid.cell_area();
    let g_mean = [pair.field(0).integral(metric)?, pair.field(1).integral(metric)?];
    let g_vals = [pair.field(0).grid_values(), pair.field(1).grid_values()];
    let eg2 = pair.field(1).exp_grid();
    let mut whole = [[0.0; 2]; 2];
    for k in 0..2 {
        let weighted: f64 = if tf.case == CaseTag::Two {
            g_vals[k]
                .values()
                .iter()
                .zip(eg2.values())
                .zip(metric.weight().values())
                .map(|((g, e), w)| if *e == 0.0 { 0.0 } else { g * e * w })
                .sum::<f64>()
                * cell
        } else {
            0.0
        };
        for m in 0..2 {
            whole[k][m] = forcing[m].0 * weighted + forcing[m].1 * g_mean[k];
        }
    }
    let mut outer = whole;
    for i in 0..npts {
        let fl = ev.flux(i, rho, &thetas);
        for k in 0..2 {
            for m in 0..2 {
                outer[k][m] -= disc[i][GF + 2 * k + m] + fl[k][m];
            }
        }
    }
    let disc_d: [f64; 3] = [D11, D22, D12].map(|c| disc.iter().map(|d| d[c]).sum());
    let dirichlet = [disc_d[0] + outer[0][0], disc_d[1] + outer[1][1], disc_d[2] + 0.5 * (outer[0][1] + outer[1][0])];

    // means
    let means = [0, 1].map(|k| tf.constants[k] + g_mean[k] + disc.iter().map(|d| d[MEAN + k]).sum::<f64>());

    // exponential integrals, scaled by 1/ε²
    let mut scaled_exp = [0.0; 2];
    for k in 0..2 {
        let own = (0..npts).find(|&i| tf.branches[k][i].role == Role::Bubble);
        let ek = pair.field(k).exp_grid();
        let n = grid.n();
        let mut grid_part = 0.0;
        for a in 0..n {
            for b in 0..n {
                let idx = a * n + b;
                let chi = match own {
                    Some(i) => {
                        let xi = pair.frames[i].to_local(grid.point(a, b));
                        partition(xi[0].hypot(xi[1]), rho, r2)
                    }
                    None => 0.0,
                };
                if chi < 1.0 {
                    grid_part += (1.0 - chi) * ek.values()[idx] * metric.weight().values()[idx];
                }
            }
        }
        let mut total = grid_part * cell * (tf.constants[k] - ev.log_eps2).exp();
        if let Some(i) = own {
            let (c, n_int) = ev.collar(k, i, rho, r2, &collar_thetas, opts.tol)?;
            total += c;
            intervals += n_int;
        }
        for (i, d) in disc.iter().enumerate() {
            if Some(i) != own {
                total -= d[EXPG + k];
            }
            total += d[EXP + k];
        }
        scaled_exp[k] = total;
    }
    if scaled_exp.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Accuracy(format!("exponential integrals not positive: {scaled_exp:?}")));
    }
    let log_exp = scaled_exp.map(|e| ev.log_eps2 + e.ln());
    let phi0 = (dirichlet[0] + dirichlet[1] + dirichlet[2]) / 3.0 + 4.0 * PI * (means[0] + means[1])
        - 4.0 * PI * (log_exp[0] + log_exp[1]);
    Ok(Phi0Breakdown {
        phi0,
        dirichlet,
        dirichlet_discs: disc_d,
        means,
        log_exp,
        scaled_exp,
        bubble_exp,
        quadrature_intervals: intervals,
    })
}

/// `Φ₀` of the fields sampled on the metric's grid, with spectral derivatives.
pub fn evaluate_phi0_grid(tf: &TestFunctionPair<'_>, metric: &Metric) -> Result<f64> {
    let [u1, u2] = tf.grid_fields(metric)?;
    phi0(&u1, &u2, metric)
}

/// How the second square in `B(p_j)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BReading {
    /// `((b₁ + λ_k)² + (b₂ + μ_k)²)/4` for the field `k` whose bubble sits at `p_j`.
    #[default]
    OwnField,
    /// `((b₁ + λ₁)² + (b₂ + λ₂)²)/4`, mixing the `ξ`-slopes of both Green's functions.
    AsPrinted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeficitData {
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    pub curvature: Vec<f64>,
    /// `4π(M₁ + M₂ + 2)` in case 1, `1 + M` in case 2.
    pub coeff: f64,
    pub reading: BReading,
}

pub fn deficit_data(pair: &GreenPair, metric: &Metric) -> DeficitData {
    deficit_data_with(pair, metric, BReading::OwnField)
}

pub fn deficit_data_with(pair: &GreenPair, metric: &Metric, reading: BReading) -> DeficitData {
    let mut b = Vec::new();
    let mut m = Vec::new();
    let mut curvature = Vec::new();
    for (i, &p) in pair.points.iter().enumerate() {
        let me = metric_taylor_at(metric, p);
        let k = (0..2).find(|&k| pair.expansion(k, i).a < 0.0).unwrap_or(0);
        let (s1, s2) = match reading {
            BReading::OwnField => (pair.expansion(k, i).lambda, pair.expansion(k, i).mu),
            BReading::AsPrinted => (pair.expansion(0, i).lambda, pair.expansion(1, i).lambda),
        };
        let bi = ((me.b1 + s1).powi(2) + (me.b2 + s2).powi(2)) / 4.0;
        let kp = me.curvature();
        b.push(bi);
        m.push((-kp / 2.0 + bi) / PI);
        curvature.push(kp);
    }
    let coeff = match pair.case {
        CaseTag::One => 4.0 * PI * (m.iter().sum::<f64>() + 2.0),
        CaseTag::Two => 1.0 + m[0],
    };
    DeficitData { b, m, curvature, coeff, reading }
}

/// Φ₀ along an ε list against the lower-bound constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub case: CaseTag,
    pub eps: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    pub phi0: Vec<f64>,
    pub constant_used: f64,
    /// Case 2: the other candidate constant, with its remainders.
    pub alternative_constant: Option<f64>,
    pub alternative_remainder: Option<Vec<f64>>,
    /// The value `Φ₀` tends to along this construction.
    pub derived_limit: f64,
    /// `Φ₀ − constant_used`.
    pub remainder: Vec<f64>,
    /// `ε²(−log ε²)`.
    pub regressor: Vec<f64>,
    /// `remainder / regressor`.
    pub ratio: Vec<f64>,
    /// Least-squares slope of the remainder on the regressor, through the origin.
    pub fitted_slope: f64,
    /// Coefficients of `ε²(−log ε²)`, `(Lε)⁴` and `ε²` in a three-column fit.
    pub nuisance_fit: [f64; 3],
    pub target_slope: f64,
    pub deficit: DeficitData,
    pub breakdowns: Vec<Phi0Breakdown>,
}

impl FitReport {
    /// Whether `Φ₀ < constant_used` at every ε.
    pub fn all_below_constant(&self) -> bool {
        self.remainder.iter().all(|r| *r < 0.0)
    }

    /// Whether `Φ₀` strictly decreases along the (decreasing) ε list.
    pub fn decreasing(&self) -> bool {
        self.phi0.windows(2).all(|w| w[1] < w[0])
    }

    /// `fitted_slope / target_slope − 1`.
    pub fn slope_error(&self) -> f64 {
        self.fitted_slope / self.target_slope - 1.0
    }
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.len() < 4 {
        return Err(Error::Configuration(format!("the deficit fit needs at least 4 eps values, got {}", eps_list.len())));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Configuration("eps list must be strictly decreasing".into()));
    }
    Ok(())
}

fn run_fit(
    pair: &GreenPair,
    metric: &Metric,
    eps_list: &[f64],
    opts: &FitOptions,
    build: fn(&GreenPair, f64, f64) -> Result<TestFunctionPair<'_>>,
    constant: f64,
    alternative: Option<f64>,
    derived_limit: f64,
) -> Result<FitReport> {
    check_eps_list(eps_list)?;
    let ls = match opts.fixed_l {
        Some(l) => vec![l; eps_list.len()],
        None => eps_list.iter().map(|&e| coupled_l(e)).collect::<Result<Vec<_>>>()?,
    };
    let breakdowns = eps_list
        .par_iter()
        .zip(&ls)
        .map(|(&e, &l)| {
            let tf = build(pair, e, l)?;
            evaluate_phi0_with(&tf, metric, &opts.hybrid)
        })
        .collect::<Result<Vec<_>>>()?;
    let phi0: Vec<f64> = breakdowns.iter().map(|b| b.phi0).collect();
    let remainder: Vec<f64> = phi0.iter().map(|p| p - constant).collect();
    let regressor: Vec<f64> = eps_list.iter().map(|e| -e * e * (e * e).ln()).collect();
    let ratio = remainder.iter().zip(&regressor).map(|(r, x)| r / x).collect();
    let sxx: f64 = regressor.iter().map(|x| x * x).sum();
    let fitted_slope = remainder.iter().zip(&regressor).map(|(r, x)| r * x).sum::<f64>() / sxx;
    let columns = [
        regressor.clone(),
        eps_list.iter().zip(&ls).map(|(e, l)| (l * e).powi(4)).collect(),
        eps_list.iter().map(|e| e * e).collect(),
    ];
    let nuisance_fit = column_fit(&columns, &remainder);
    let deficit = deficit_data(pair, metric);
    Ok(FitReport {
        case: pair.case,
        eps: eps_list.to_vec(),
        l: ls,
        alternative_remainder: alternative.map(|c| phi0.iter().map(|p| p - c).collect()),
        phi0,
        constant_used: constant,
        alternative_constant: alternative,
        derived_limit,
        remainder,
        regressor,
        ratio,
        fitted_slope,
        nuisance_fit,
        target_slope: -deficit.coeff,
        deficit,
        breakdowns,
    })
}

fn column_fit(columns: &[Vec<f64>; 3], y: &[f64]) -> [f64; 3] {
    // unit-norm columns keep the singular values comparable
    let norms = columns.each_ref().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt());
    let a = nalgebra::DMatrix::from_fn(y.len(), 3, |r, c| columns[c][r] / norms[c]);
    let b = nalgebra::DVector::from_column_slice(y);
    match a.svd(true, true).solve(&b, 1e-14) {
        Ok(s) => [s[0] / norms[0], s[1] / norms[1], s[2] / norms[2]],
        Err(_) => [f64::NAN; 3],
    }
}

/// Case-1 fit: `Φ₀(φ(ε)) − lower_bound_case1` against `ε²(−log ε²)`.
pub fn asymptotic_fit_case1(pair: &GreenPair, metric: &Metric, eps_list: &[f64]) -> Result<FitReport> {
    asymptotic_fit_case1_with(pair, metric, eps_list, &FitOptions::default())
}

pub fn asymptotic_fit_case1_with(pair: &GreenPair, metric: &Metric, eps_list: &[f64], opts: &FitOptions) -> Result<FitReport> {
    if pair.case != CaseTag::One {
        return Err(Error::Precondition("case-1 fit needs a case-1 Green pair".into()));
    }
    let c = lower_bound_case1(pair.expansion(0, 0).big_a, pair.expansion(1, 1).big_a);
    run_fit(pair, metric, eps_list, opts, build_test_case1, c, None, c)
}

/// Case-2 fit against the closing constant `−4π − 4π log π + 2∫G₂`; the lower bound
/// `−4π log π − 2πA₁(p) + 2π∫G₂` is reported alongside.
pub fn asymptotic_fit_case2(pair: &GreenPair, metric: &Metric, eps_list: &[f64]) -> Result<FitReport> {
    asymptotic_fit_case2_with(pair, metric, eps_list, &FitOptions::default())
}

pub fn asymptotic_fit_case2_with(pair: &GreenPair, metric: &Metric, eps_list: &[f64], opts: &FitOptions) -> Result<FitReport> {
    if pair.case != CaseTag::Two {
        return Err(Error::Precondition("case-2 fit needs a case-2 Green pair".into()));
    }
    let closing = closing_constant_case2(pair.mean_g2);
    let bound = lower_bound_case2(pair.expansion(0, 0).big_a, pair.mean_g2);
    let limit = limit_constant_case2(pair.expansion(0, 0).big_a, pair.mean_g2, g2_exp_moment(pair, metric)?);
    run_fit(pair, metric, eps_list, opts, build_test_case2, closing, Some(bound), limit)
}

/// `∫G₂e^{G₂} dV_g`; the integrand vanishes like `r² log r` at the source.
pub fn g2_exp_moment(pair: &GreenPair, metric: &Metric) -> Result<f64> {
    let g = pair.field(1).grid_values();
    let e = pair.field(1).exp_grid();
    let vals = g.values().iter().zip(e.values()).map(|(g, e)| if *e == 0.0 { 0.0 } else { g * e }).collect();
    integrate(&ScalarField::new(g.grid(), vals)?, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_profile() {
        let le = 0.01;
        assert_eq!(cutoff(0.5 * le, le), (1.0, 0.0));
        assert_eq!(cutoff(2.5 * le, le), (0.0, 0.0));
        let (mid, slope) = cutoff(1.5 * le, le);
        assert!((mid - 0.5).abs() < 1e-15);
        assert!((slope * le + 1.875).abs() < 1e-12);
        let h = 1e-9;
        let fd = (cutoff(1.3 * le + h, le).0 - cutoff(1.3 * le - h, le).0) / (2.0 * h);
        assert!((fd - cutoff(1.3 * le, le).1).abs() < 1e-5 * fd.abs());
    }

    #[test]
    fn partition_is_monotone() {
        let mut last = 1.0;
        for k in 0..=100 {
            let v = partition(0.1 + 0.002 * k as f64, 0.12, 0.3);
            assert!(v <= last);
            last = v;
        }
        assert_eq!(partition(0.1, 0.12, 0.3), 1.0);
        assert_eq!(partition(0.31, 0.12, 0.3), 0.0);
    }

    #[test]
    fn default_list() {
        let l = default_eps_list();
        assert_eq!(l.len(), 5);
        assert!((l[1] - 10f64.powf(-2.5)).abs() < 1e-18);
    }
}
