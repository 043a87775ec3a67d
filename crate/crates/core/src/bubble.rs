//! The Liouville bubble `w(x) = −2 log(1 + π|x|²)` and the annulus capacity estimate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// `w(x) = −2 log(1 + π|x|²)`, the solution of `−Δw = 8πe^w` with `w(0) = 0`.
pub fn bubble_profile(x: [f64; 2]) -> f64 {
    bubble_radial(x[0].hypot(x[1]))
}

/// `w` as a function of `r = |x|`.
pub fn bubble_radial(r: f64) -> f64 {
    -2.0 * (PI * r * r).ln_1p()
}

/// `w′(r) = −4πr/(1 + πr²)`.
pub fn bubble_radial_derivative(r: f64) -> f64 {
    -4.0 * PI * r / (1.0 + PI * r * r)
}

/// `∫_{B_L} |∇w|² dx`.
pub fn bubble_dirichlet_energy(l: f64) -> f64 {
    let t = PI * l * l;
    16.0 * PI * t.ln_1p() - 16.0 * PI * t / (1.0 + t)
}

/// `∫_{B_L} e^w dx = 1 − 1/(1 + πL²)`.
pub fn bubble_mass(l: f64) -> f64 {
    let t = PI * l * l;
    t / (1.0 + t)
}

/// Bubble disc `B_{Lε}(center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleWindow {
    #[serde(rename = "L")]
    pub l: f64,
    pub eps: f64,
    pub center: Point,
}

impl BubbleWindow {
    pub fn new(l: f64, eps: f64, center: Point) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) || !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Configuration(format!("bubble window needs L > 0 and eps > 0, got L={l}, eps={eps}")));
        }
        if l * eps >= 0.25 {
            return Err(Error::Geometry(format!("bubble radius L·eps = {} must stay below 1/4", l * eps)));
        }
        Ok(Self { l, eps, center })
    }

    /// `Lε`.
    pub fn radius(&self) -> f64 {
        self.l * self.eps
    }
}

/// The coupling `L⁴ε² = 1/log(−log ε)`, defined for `ε ∈ (0, e⁻¹)`.
pub fn coupled_l(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < (-1.0f64).exp()) {
        return Err(Error::Domain(format!("coupling needs eps in (0, 1/e), got {eps}")));
    }
    let ll = (-eps.ln()).ln();
    Ok((1.0 / (eps * eps * ll)).powf(0.25))
}

/// Dirichlet data on the annulus `ρ < r < δ`: `a` on the inner circle, `b` on the outer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityProblem {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub delta: f64,
}

impl CapacityProblem {
    fn check(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < self.delta) {
            return Err(Error::Domain(format!(
                "annulus needs 0 < rho < delta, got rho={}, delta={}",
                self.rho, self.delta
            )));
        }
        Ok(())
    }
}

/// `4π(a − b)² / (log δ² − log ρ²)`, the least Dirichlet energy on the annulus.
pub fn capacity_energy(prob: &CapacityProblem) -> Result<f64> {
    prob.check()?;
    let d = prob.a - prob.b;
    Ok(4.0 * PI * d * d / (2.0 * prob.delta.ln() - 2.0 * prob.rho.ln()))
}

/// The radial harmonic function attaining [`capacity_energy`].
pub fn capacity_minimizer(prob: &CapacityProblem, r: f64) -> Result<f64> {
    prob.check()?;
    if !(prob.rho..=prob.delta).contains(&r) {
        return Err(Error::Domain(format!("r = {r} outside [{}, {}]", prob.rho, prob.delta)));
    }
    if r == prob.rho {
        return Ok(prob.a);
    }
    if r == prob.delta {
        return Ok(prob.b);
    }
    let t = (r / prob.rho).ln() / (prob.delta / prob.rho).ln();
    Ok(prob.a + (prob.b - prob.a) * t)
}

/// Case-1 lower bound `−8π log π − 8π − 2π(A₁(p₁) + A₂(p₂))`.
pub fn lower_bound_case1(a1p1: f64, a2p2: f64) -> f64 {
    -8.0 * PI * PI.ln() - 8.0 * PI - 2.0 * PI * (a1p1 + a2p2)
}

/// Case-2 lower bound `−4π log π − 2πA₁(p) + 2π∫G₂ dV_g`.
pub fn lower_bound_case2(a1p: f64, mean_g2: f64) -> f64 {
    -4.0 * PI * PI.ln() - 2.0 * PI * a1p + 2.0 * PI * mean_g2
}

/// The case-2 constant as it appears in the closing test-function estimate:
/// `−4π − 4π log π + 2∫G₂ dV_g`.
pub fn closing_constant_case2(mean_g2: f64) -> f64 {
    -4.0 * PI - 4.0 * PI * PI.ln() + 2.0 * mean_g2
}

/// Limit of `Φ₀` along the case-2 test functions:
/// `−4π log π − 4π − 2πA₁(p) + 2π∫G₂ dV_g + 2π∫G₂e^{G₂} dV_g`.
pub fn limit_constant_case2(a1p: f64, mean_g2: f64, g2_exp_moment: f64) -> f64 {
    lower_bound_case2(a1p, mean_g2) - 4.0 * PI + 2.0 * PI * g2_exp_moment
}
