//! Exponential integrals used by the Ewald split of the torus Green's function.

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Entire exponential integral `Ein(z) = ∫₀^z (1 - e^{-t})/t dt`.
///
/// `Ein(z) = E1(z) + γ + ln z` for `z > 0`.
pub fn ein(z: f64) -> f64 {
    if z <= 2.0 {
        let mut term = z;
        let mut sum = z;
        let mut n = 1.0;
        loop {
            n += 1.0;
            term *= -z / n;
            let add = term / n;
            sum += add;
            if add.abs() <= 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            if n > 200.0 {
                break;
            }
        }
        sum
    } else {
        e1(z) + EULER_GAMMA + z.ln()
    }
}

/// Exponential integral `E1(z) = ∫_z^∞ e^{-t}/t dt` for `z > 0`.
pub fn e1(z: f64) -> f64 {
    assert!(z > 0.0, "E1 requires a positive argument, got {z}");
    if z <= 1.0 {
        return ein(z) - EULER_GAMMA - z.ln();
    }
    if z > 700.0 {
        return 0.0;
    }
    // modified Lentz evaluation of the continued fraction
    const TINY: f64 = 1e-300;
    let mut b = z + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-z).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1_quadrature(z: f64) -> f64 {
        // E1(z) = ∫_0^1 e^{-z/u}/u du via midpoint on a log-stretched grid
        let n = 200_000;
        let mut s = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            // u = t^4 stretches toward 0 where the integrand vanishes
            let u = t.powi(4);
            let du = 4.0 * t.powi(3) / n as f64;
            s += (-z / u).exp() / u * du;
        }
        s
    }

    #[test]
    fn e1_matches_reference_values() {
        // Abramowitz & Stegun table 5.1
        assert!((e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-15);
        assert!((e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-14);
        assert!((e1(2.0) - 0.048_900_510_708_061_1).abs() < 1e-15);
        assert!((e1(10.0) - 4.156_968_929_685_324e-6).abs() < 1e-19);
    }

    #[test]
    fn e1_agrees_with_quadrature() {
        for &z in &[0.3, 1.7, 4.0, 9.0] {
            let q = e1_quadrature(z);
            assert!((e1(z) - q).abs() < 1e-8 * q.max(1e-3), "z={z}");
        }
    }

    #[test]
    fn ein_branches_are_continuous() {
        let below = ein(2.0 - 1e-12);
        let above = ein(2.0 + 1e-12);
        assert!((below - above).abs() < 1e-11);
        assert!((ein(1e-8) - (1e-8 - 2.5e-17)).abs() < 1e-24);
    }
}
