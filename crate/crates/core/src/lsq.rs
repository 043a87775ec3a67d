//! Small dense least-squares fits of bivariate polynomials on sample discs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Exponent pairs `(a, b)` of `xᵃ yᵇ` for all monomials of total degree `<= degree`,
/// ordered by degree then by descending power of `x`.
pub fn monomials(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for d in 0..=degree {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// Result of a polynomial fit; coefficients are in the caller's (unscaled) coordinates.
#[derive(Debug, Clone)]
pub struct PolyFit {
    pub terms: Vec<(usize, usize)>,
    pub coeffs: Vec<f64>,
    /// Largest absolute residual over the samples.
    pub max_residual: f64,
    /// Ratio of extreme singular values of the scaled design matrix.
    pub condition: f64,
}

impl PolyFit {
    pub fn coeff(&self, a: usize, b: usize) -> f64 {
        self.terms.iter().position(|&t| t == (a, b)).map(|i| self.coeffs[i]).unwrap_or(0.0)
    }
}

/// Fits `Σ c_ab xᵃ yᵇ` to samples `(x, y, v)` with coordinates rescaled by `radius`.
pub fn fit_polynomial(samples: &[(f64, f64, f64)], degree: usize, radius: f64) -> Result<PolyFit> {
    let terms = monomials(degree);
    if samples.len() < 2 * terms.len() {
        return Err(Error::Accuracy(format!(
            "{} samples are too few for a degree-{degree} fit ({} unknowns)",
            samples.len(),
            terms.len()
        )));
    }
    let m = samples.len();
    let k = terms.len();
    let a = DMatrix::from_fn(m, k, |i, j| {
        let (x, y, _) = samples[i];
        let (p, q) = terms[j];
        (x / radius).powi(p as i32) * (y / radius).powi(q as i32)
    });
    let rhs = DVector::from_iterator(m, samples.iter().map(|s| s.2));
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e10 {
        return Err(Error::Accuracy(format!("ill-conditioned polynomial fit (condition {condition:e})")));
    }
    let sol = svd.solve(&rhs, 1e-14 * smax).map_err(|e| Error::Accuracy(e.to_string()))?;
    let resid = &a * &sol - &rhs;
    let max_residual = resid.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
    let coeffs = terms
        .iter()
        .zip(sol.iter())
        .map(|(&(p, q), c)| c / radius.powi((p + q) as i32))
        .collect();
    Ok(PolyFit { terms, coeffs, max_residual, condition })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_polynomial() {
        let mut samples = Vec::new();
        for i in -6..=6 {
            for j in -6..=6 {
                let (x, y) = (i as f64 * 0.01, j as f64 * 0.01);
                samples.push((x, y, 1.5 - 2.0 * x + 0.5 * y + 3.0 * x * y - y * y + 7.0 * x * x * x));
            }
        }
        let fit = fit_polynomial(&samples, 3, 0.06).unwrap();
        assert!((fit.coeff(0, 0) - 1.5).abs() < 1e-12);
        assert!((fit.coeff(1, 1) - 3.0).abs() < 1e-9);
        assert!((fit.coeff(3, 0) - 7.0).abs() < 1e-6);
        assert!(fit.max_residual < 1e-12);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let samples = vec![(0.0, 0.0, 1.0); 5];
        assert!(fit_polynomial(&samples, 3, 1.0).is_err());
    }
}
