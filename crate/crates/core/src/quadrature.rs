//! Adaptive Gauss–Kronrod quadrature for smooth and mildly singular 1D integrands.
//!
//! The vector form integrates several quantities that share expensive evaluations
//! (the polar rings of the test-function energy evaluate both Green's functions once
//! per node and feed every integrand from that).

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Stopping rule: component `c` is accepted once `err_c <= abs + rel * |I_c|`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-12, max_intervals: 4000 }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
}

fn gk15<F>(f: &F, a: f64, b: f64) -> Piece
where
    F: Fn(f64) -> Vec<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let dim = fc.len();
    let mut kron: Vec<f64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut gauss: Vec<f64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for d in 0..dim {
            let s = f1[d] + f2[d];
            kron[d] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[d] += WG[j / 2] * s;
            }
        }
    }
    let value: Vec<f64> = kron.iter().map(|k| k * h).collect();
    let error: Vec<f64> = kron.iter().zip(&gauss).map(|(k, g)| ((k - g) * h).abs()).collect();
    Piece { a, b, value, error }
}

/// Integrates a vector-valued function over `[a, b]` with global adaptive bisection.
pub fn integrate_vec<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult>
where
    F: Fn(f64) -> Vec<f64>,
{
    if a == b {
        let dim = f(a).len();
        return Ok(QuadResult { value: vec![0.0; dim], error: vec![0.0; dim], intervals: 0 });
    }
    let mut pieces = vec![gk15(&f, a, b)];
    loop {
        let dim = pieces[0].value.len();
        let mut total = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        for p in &pieces {
            for d in 0..dim {
                total[d] += p.value[d];
                err[d] += p.error[d];
            }
        }
        let budget: Vec<f64> = total.iter().map(|t| tol.abs + tol.rel * t.abs()).collect();
        if err.iter().zip(&budget).all(|(e, b)| e <= b) {
            return Ok(QuadResult { value: total, error: err, intervals: pieces.len() });
        }
        if pieces.len() >= tol.max_intervals {
            return Err(Error::Accuracy(format!(
                "adaptive quadrature did not converge on [{a:e}, {b:e}] after {} intervals; \
                 partial sums {:?}, error estimates {:?}",
                pieces.len(),
                total,
                err
            )));
        }
        // bisect the piece contributing the largest scaled error
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = p
                    .error
                    .iter()
                    .zip(&budget)
                    .map(|(e, b)| e / b.max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                (i, s)
            })
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            return Err(Error::Accuracy(format!(
                "quadrature interval collapsed near {mid:e}; partial sums {total:?}"
            )));
        }
        pieces.push(gk15(&f, p.a, mid));
        pieces.push(gk15(&f, mid, p.b));
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate_vec(|x| vec![f(x)], a, b, tol).map(|r| r.value[0])
}

/// Nodes of the periodic trapezoid rule on `[0, 2π)`.
pub fn angles(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * std::f64::consts::PI * j as f64 / n as f64).collect()
}
