//! ε-sweeps of the minimizer with blow-up classification and bubble-profile comparison.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubble::bubble_radial;
use crate::error::{Error, Result};
use crate::functional::{minimize_phi_eps, DescentReport, SolverOptions, TodaState};
use crate::geometry::{Metric, Point};
use crate::spectral::ScalarField;

/// Sup over `B_L` of `|u(center + eps_scale·x) − m − w(x)|`, sampled on a polar net and
/// evaluated through the band-limited interpolant of `u`.
pub fn rescaled_profile_error(u: &ScalarField, center: Point, m: f64, eps_scale: f64, l: f64) -> Result<f64> {
    let h = u.grid().h();
    if !(eps_scale >= 4.0 * h) {
        return Err(Error::Resolution(format!("bubble scale {eps_scale:e} is below 4h = {:e}", 4.0 * h)));
    }
    if !(l > 0.0) {
        return Err(Error::Configuration(format!("profile radius must be positive, got {l}")));
    }
    let interp = u.interpolant(1e-15);
    let (n_r, n_t) = (24usize, 48usize);
    let mut worst = 0.0f64;
    for a in 0..=n_r {
        let r = l * a as f64 / n_r as f64;
        let w = bubble_radial(r);
        let turns = if a == 0 { 1 } else { n_t };
        for b in 0..turns {
            let t = 2.0 * PI * b as f64 / n_t as f64;
            let p = center.offset(eps_scale * r * t.cos(), eps_scale * r * t.sin());
            worst = worst.max((interp.value(p) - m - w).abs());
        }
    }
    Ok(worst)
}

/// Outcome of a sweep, read off the field maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Converged,
    #[serde(rename = "case1_like")]
    Case1Like,
    #[serde(rename = "case2_like")]
    Case2Like,
    Undetermined,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::Case1Like => "case1-like",
            Self::Case2Like => "case2-like",
            Self::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub solver: SolverOptions,
    /// Start each run from the previous solution.
    pub warm_start: bool,
    /// `m_i` grows when it rises by more than this over the last three eps values.
    pub growth: f64,
    /// Maxima separate when they are more than this many grid spacings apart.
    pub separation_cells: f64,
    /// Radius `L` of the rescaled profile window.
    pub profile_l: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), warm_start: true, growth: 2.0, separation_cells: 8.0, profile_l: 1.0 }
    }
}

/// One eps of a sweep. `classification` uses every record up to and including this one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub eps: f64,
    pub report: Option<DescentReport>,
    /// `e^{−m_i/2}`.
    pub r: Vec<f64>,
    /// Grid location of each maximum.
    pub peaks: Vec<Point>,
    /// `None` where the bubble scale is under-resolved.
    pub profile_error: Vec<Option<f64>>,
    pub s: Vec<Option<f64>>,
    pub classification: Classification,
    /// Solver failure for this eps, if any.
    pub error: Option<String>,
}

pub fn sweep(eps_list: &[f64], metric: &Metric, opts: &SweepOptions) -> Result<Vec<SweepRecord>> {
    sweep_from(&TodaState::zeros_eps(metric, eps_list.first().copied().unwrap_or(1.0)), eps_list, metric, opts)
}

/// Sweep starting the first run (or every run, when cold) from `init`.
pub fn sweep_from(init: &TodaState, eps_list: &[f64], metric: &Metric, opts: &SweepOptions) -> Result<Vec<SweepRecord>> {
    if eps_list.is_empty() {
        return Err(Error::Configuration("empty eps list".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e < 4.0 * PI)) {
        return Err(Error::Configuration("every eps must lie in (0, 4π)".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Configuration("eps list must be strictly decreasing".into()));
    }
    let mut records = if opts.warm_start {
        let mut state = init.clone();
        let mut out = Vec::with_capacity(eps_list.len());
        for &eps in eps_list {
            let (rec, next) = run_one(&state, eps, metric, opts);
            if let Some(next) = next {
                state = next;
            }
            out.push(rec);
        }
        out
    } else {
        eps_list.par_iter().map(|&eps| run_one(init, eps, metric, opts).0).collect()
    };
    let h = metric.grid().h();
    for k in 0..records.len() {
        let c = classify(&records[..=k], opts.growth, opts.separation_cells * h);
        records[k].classification = c;
    }
    Ok(records)
}

fn run_one(init: &TodaState, eps: f64, metric: &Metric, opts: &SweepOptions) -> (SweepRecord, Option<TodaState>) {
    match minimize_phi_eps(init, eps, metric, &opts.solver) {
        Ok((state, report)) => {
            let grid = metric.grid();
            let peaks: Vec<Point> = state.u.iter().map(|f| {
                let (i, j) = f.argmax();
                grid.point(i, j)
            }).collect();
            let r: Vec<f64> = report.maxima.iter().map(|m| (-m / 2.0).exp()).collect();
            let profile_error = state
                .u
                .iter()
                .zip(&peaks)
                .zip(&report.maxima)
                .zip(&r)
                .map(|(((f, &c), &m), &scale)| rescaled_profile_error(f, c, m, scale, opts.profile_l).ok())
                .collect();
            let s = report.s.clone();
            let rec = SweepRecord {
                eps,
                report: Some(report),
                r,
                peaks,
                profile_error,
                s,
                classification: Classification::Undetermined,
                error: None,
            };
            (rec, Some(state))
        }
        Err(e) => (
            SweepRecord {
                eps,
                report: None,
                r: Vec::new(),
                peaks: Vec::new(),
                profile_error: Vec::new(),
                s: Vec::new(),
                classification: Classification::Undetermined,
                error: Some(e.to_string()),
            },
            None,
        ),
    }
}

/// Classification of a sweep prefix.
pub fn classify(records: &[SweepRecord], growth: f64, separation: f64) -> Classification {
    let window = &records[records.len().saturating_sub(3)..];
    let reports: Vec<&DescentReport> = window.iter().filter_map(|r| r.report.as_ref()).collect();
    if reports.len() != window.len() {
        return Classification::Undetermined;
    }
    let first = reports[0];
    let last = reports[reports.len() - 1];
    // a run that hit the ceiling counts as growth for any field that did not fall
    let blown = reports.iter().any(|r| r.blown_up);
    let grows: Vec<bool> = (0..last.maxima.len())
        .map(|i| {
            let rise = last.maxima[i] - first.maxima[i];
            rise > growth || (blown && rise >= 0.0)
        })
        .collect();
    match grows.iter().filter(|g| **g).count() {
        0 if reports.iter().all(|r| r.converged()) => Classification::Converged,
        1 => Classification::Case2Like,
        2 => {
            let peaks = &window[window.len() - 1].peaks;
            if peaks.len() == 2 && peaks[0].distance(peaks[1]) > separation {
                Classification::Case1Like
            } else {
                Classification::Undetermined
            }
        }
        _ => Classification::Undetermined,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// One CSV row per eps with all scalar fields of the record.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(
        "eps,iterations,stop,energy,grad_norm,el_residual,m1,m2,mean1,mean2,s1,s2,r1,r2,\
         peak1_x,peak1_y,peak2_x,peak2_y,profile_error1,profile_error2,blown_up,classification,error\n",
    );
    for rec in records {
        let _ = write!(out, "{:e},", rec.eps);
        match &rec.report {
            Some(rep) => {
                let stop = format!("{:?}", rep.stop).to_lowercase();
                let _ = write!(
                    out,
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},",
                    rep.iterations,
                    stop,
                    rep.energy_trace.last().copied().unwrap_or(f64::NAN),
                    rep.grad_norm,
                    rep.el_residual,
                    rep.maxima[0],
                    rep.maxima[1],
                    rep.means[0],
                    rep.means[1],
                    opt(rep.s[0]),
                    opt(rep.s[1]),
                    rec.r[0],
                    rec.r[1],
                    rec.peaks[0].x,
                    rec.peaks[0].y,
                    rec.peaks[1].x,
                    rec.peaks[1].y,
                    opt(rec.profile_error[0]),
                    opt(rec.profile_error[1]),
                    rep.blown_up,
                );
            }
            None => out.push_str(&",".repeat(20)),
        }
        let err = rec.error.as_deref().unwrap_or("").replace(['"', ','], ";");
        let _ = writeln!(out, "{},{}", rec.classification.as_str(), err);
    }
    out
}
