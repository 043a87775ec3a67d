use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use todalab::bubble::{
    bubble_dirichlet_energy, bubble_mass, bubble_profile, bubble_radial, bubble_radial_derivative, capacity_energy,
    CapacityProblem,
};
use todalab::diagnostics::{sweep, sweep_csv, SweepOptions};
use todalab::functional::{masses_admissible, minimize_phi_eps, phi_eps, TodaState};
use todalab::greens::{
    equation_residual, green_pair_case1, green_pair_case2, lemma51_residual, local_expansion, Case2Options, GreenPair,
};
use todalab::gridio::{read_grid, write_grid};
use todalab::quadrature::{self, Tolerance};
use todalab::testfn::{asymptotic_fit_case1_with, asymptotic_fit_case2_with, FitOptions};
use todalab::{integrate, make_conformal_metric, make_flat_torus, Error, Metric, Point, Result, ScalarField};

use crate::config::{Format, LCoupling, MetricKind, RunConfig};
use crate::output::{emit, envelope, extension, render};

/// How a command ended, mapped onto process exit codes.
#[derive(Debug)]
pub enum Outcome {
    Ok,
    /// A verification check failed.
    Failed(String),
    /// The numerics did not reach their target.
    Numerical(String),
}

pub fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Configuration(_)
        | Error::Parse(_)
        | Error::Domain(_)
        | Error::Geometry(_)
        | Error::Resolution(_)
        | Error::Precondition(_)
        | Error::Shape(_) => 64,
        _ => 2,
    }
}

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub out: Option<&'a Path>,
    pub format: Format,
}

impl Ctx<'_> {
    fn write(&self, command: &str, result: impl Serialize) -> Result<()> {
        let v = envelope(command, self.cfg, result)?;
        emit(self.out, &format!("{command}.{}", extension(self.format)), &render(&v, self.format))
    }
}

fn build_metric(cfg: &RunConfig) -> Result<Metric> {
    match &cfg.metric {
        MetricKind::Flat => make_flat_torus(cfg.grid_n),
        MetricKind::File(p) => make_conformal_metric(&read_grid(p)?),
        kind => {
            let grid = todalab::TorusGrid::new(cfg.grid_n)?;
            let f = match kind {
                MetricKind::Bump => ScalarField::from_fn(grid, |p| 0.3 * (2.0 * PI * p.x).cos() * (2.0 * PI * p.y).cos()),
                _ => ScalarField::from_fn(grid, |p| 0.2 * (2.0 * PI * p.x).cos()),
            };
            make_conformal_metric(&f)
        }
    }
}

#[derive(Serialize)]
struct Check {
    name: String,
    computed: f64,
    closed_form: f64,
    abs_error: f64,
    /// Relative unless `relative` is false.
    tolerance: f64,
    relative: bool,
    pass: bool,
}

fn check(name: String, computed: f64, closed_form: f64, tolerance: f64, relative: bool) -> Check {
    let abs_error = (computed - closed_form).abs();
    let scale = if relative { closed_form.abs().max(f64::MIN_POSITIVE) } else { 1.0 };
    Check { name, computed, closed_form, abs_error, tolerance, relative, pass: abs_error <= tolerance * scale }
}

/// Dirichlet energy of the finite-difference solution of `(r u′)′ = 0` on `[ρ, δ]`.
fn radial_laplace_energy(p: &CapacityProblem, nodes: usize) -> f64 {
    let dr = (p.delta - p.rho) / (nodes - 1) as f64;
    let face = |i: usize| p.rho + (i as f64 + 0.5) * dr;
    // Thomas sweep over the interior unknowns
    let m = nodes - 2;
    let (mut c, mut d) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..m {
        let (w, e) = (face(k), face(k + 1));
        let (lower, diag, mut rhs) = (-w, w + e, 0.0);
        if k == 0 {
            rhs += w * p.a;
        }
        if k == m - 1 {
            rhs += e * p.b;
        }
        let (cp, dp) = if k == 0 { (0.0, 0.0) } else { (c[k - 1], d[k - 1]) };
        let denom = diag - lower * cp;
        c[k] = -e / denom;
        d[k] = (rhs - lower * dp) / denom;
    }
    let mut u = vec![0.0; nodes];
    u[0] = p.a;
    u[nodes - 1] = p.b;
    for k in (0..m).rev() {
        u[k + 1] = d[k] - c[k] * u[k + 2];
    }
    (0..nodes - 1).map(|i| 2.0 * PI * face(i) * (u[i + 1] - u[i]).powi(2) / dr).sum()
}

const TIGHT: Tolerance = Tolerance { abs: 1e-15, rel: 1e-13, max_intervals: 10_000 };

pub fn verify(ctx: &Ctx, perturb: bool) -> Result<Outcome> {
    let fault = if perturb { 0.1 } else { 0.0 };
    let mut checks = Vec::new();
    for l in [0.5, 1.0, 2.0, 5.0, 10.0] {
        let q = quadrature::integrate(|r| bubble_radial_derivative(r).powi(2) * 2.0 * PI * r, 0.0, l, TIGHT)?;
        checks.push(check(format!("bubble_energy L={l}"), q + fault, bubble_dirichlet_energy(l), 1e-8, true));
        let q = quadrature::integrate(|r| bubble_radial(r).exp() * 2.0 * PI * r, 0.0, l, TIGHT)?;
        checks.push(check(format!("bubble_mass L={l}"), q + fault, bubble_mass(l), 1e-10, true));
    }
    checks.push(check("bubble_mass L=1e3".into(), bubble_mass(1e3) + fault, 1.0, 1e-6, false));

    let prob = CapacityProblem { a: 1.0, b: 0.0, rho: 0.01, delta: 0.1 };
    let energy = radial_laplace_energy(&prob, 10_000);
    checks.push(check("capacity".into(), energy + fault, capacity_energy(&prob)?, 1e-4, true));

    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for a in 0..40 {
        for b in 0..40 {
            let x = [-2.0 + 0.1 * a as f64, -2.0 + 0.1 * b as f64];
            let f = |dx: f64, dy: f64| bubble_profile([x[0] + dx, x[1] + dy]);
            let d2 = |g: &dyn Fn(f64) -> f64| (-g(2.0 * h) + 16.0 * g(h) - 30.0 * g(0.0) + 16.0 * g(-h) - g(-2.0 * h)) / (12.0 * h * h);
            let lap = d2(&|t| f(t, 0.0)) + d2(&|t| f(0.0, t));
            worst = worst.max((-lap - 8.0 * PI * bubble_profile(x).exp()).abs());
        }
    }
    checks.push(check("bubble_pde sup residual".into(), worst + fault, 0.0, 1e-5, false));

    let metric = make_flat_torus(128)?;
    let pair = green_pair_case1(Point::new(0.25, 0.5), Point::new(0.75, 0.5), &metric)?;
    let hh = metric.grid().h();
    for k in 0..2 {
        for i in 0..2 {
            let e = local_expansion(&pair, k, i, 8.0 * hh)?;
            checks.push(check(format!("alpha_plus_beta G{} at p{}", k + 1, i + 1), e.alpha + e.beta + fault, 2.0 * PI, 5e-2, false));
        }
        let mean = pair.field(k).integral(&metric)?;
        checks.push(check(format!("mean G{}", k + 1), mean + fault, 0.0, 1e-8, false));
    }

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let all_pass = failed.is_empty();
    let outcome = if all_pass { Outcome::Ok } else { Outcome::Failed(format!("failing checks: {}", failed.join(", "))) };
    ctx.write("verify", json!({ "pass": all_pass, "checks": checks }))?;
    Ok(outcome)
}

pub fn solve(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    if let Some(m) = &cfg.masses {
        if !masses_admissible(m) {
            eprintln!("warning: masses {m:?} exceed 4π; the functional is bounded below only when every M_i ≤ 4π");
        }
    }
    let eps = cfg.resolved_eps()?.ok_or_else(|| Error::Configuration("solve needs eps or masses".into()))?;
    if !(eps > 0.0 && eps < 4.0 * PI) {
        return Err(Error::Configuration(format!("eps must lie in (0, 4π), got {eps}")));
    }
    let metric = build_metric(cfg)?;
    let mut init = TodaState::zeros_eps(&metric, eps);
    if cfg.init_amplitude != 0.0 {
        init.u = random_start(metric.grid(), cfg.seed, cfg.init_amplitude);
    }
    let (state, report) = minimize_phi_eps(&init, eps, &metric, &cfg.solver)?;
    let energy = phi_eps(&state.u[0], &state.u[1], eps, &metric)?;
    if let Some(dir) = ctx.out {
        std::fs::create_dir_all(dir)?;
        write_grid(&dir.join("u1.grid"), &state.u[0])?;
        write_grid(&dir.join("u2.grid"), &state.u[1])?;
    }
    let converged = report.converged();
    let stop = report.stop;
    ctx.write(
        "solve",
        json!({
            "eps": eps,
            "masses": [4.0 * PI - eps, 4.0 * PI - eps],
            "grid_n": metric.grid().n(),
            "max_curvature": metric.max_curvature(),
            "phi_eps": energy,
            "report": report,
        }),
    )?;
    Ok(if converged { Outcome::Ok } else { Outcome::Numerical(format!("descent stopped: {stop:?}")) })
}

/// Two smooth fields built from the Fourier modes with `|k|∞ ≤ 3`, random coefficients in `[−amp, amp]`.
fn random_start(grid: todalab::TorusGrid, seed: u64, amp: f64) -> Vec<ScalarField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|_| {
            let terms: Vec<(f64, f64, f64, f64)> = (0..16)
                .map(|_| {
                    let kx = rng.gen_range(-3i32..=3) as f64;
                    let ky = rng.gen_range(-3i32..=3) as f64;
                    (kx, ky, rng.gen_range(-amp..=amp), rng.gen_range(0.0..2.0 * PI))
                })
                .collect();
            ScalarField::from_fn(grid, |p| terms.iter().map(|&(kx, ky, c, ph)| c * (2.0 * PI * (kx * p.x + ky * p.y) + ph).cos()).sum())
        })
        .collect()
}

fn points_for(cfg: &RunConfig) -> Result<Vec<Point>> {
    let want = if cfg.case == 1 { 2 } else { 1 };
    let pts = cfg.points.clone().unwrap_or_else(|| match cfg.case {
        1 => vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
        _ => vec![Point::new(0.5, 0.5)],
    });
    if pts.len() != want {
        return Err(Error::Configuration(format!("case {} needs {want} point(s), got {}", cfg.case, pts.len())));
    }
    Ok(pts)
}

fn build_pair(cfg: &RunConfig, metric: &Metric) -> Result<GreenPair> {
    let pts = points_for(cfg)?;
    if cfg.case == 1 {
        green_pair_case1(pts[0], pts[1], metric)
    } else {
        let mut opts = Case2Options::default();
        opts.solver.max_iter = cfg.solver.max_iter;
        green_pair_case2(pts[0], metric, &opts)
    }
}

pub fn green(ctx: &Ctx) -> Result<Outcome> {
    let metric = build_metric(ctx.cfg)?;
    let pair = build_pair(ctx.cfg, &metric)?;
    let h = metric.grid().h();
    let np = pair.points.len();
    let a: Vec<Vec<f64>> = (0..2).map(|k| (0..np).map(|i| pair.log_coefficient(k, i)).collect()).collect();
    let mut fitted = Vec::new();
    for k in 0..2 {
        for i in 0..np {
            // an under-resolved fit is reported, not fatal
            fitted.push(match local_expansion(&pair, k, i, 8.0 * h) {
                Ok(e) => json!({ "field": k + 1, "point": i + 1, "expansion": e, "alpha_beta_residual": lemma51_residual(&e) }),
                Err(e) => json!({ "field": k + 1, "point": i + 1, "error": e.to_string() }),
            });
        }
    }
    let means = [pair.field(0).integral(&metric)?, pair.field(1).integral(&metric)?];
    let (residuals, exp_mass) = match pair.case {
        todalab::greens::CaseTag::One => {
            let r: Vec<f64> = (0..2).map(|k| equation_residual(pair.field(k), &metric, 8.0 * h, |_, _| -4.0 * PI)).collect();
            (r, None)
        }
        todalab::greens::CaseTag::Two => {
            let eg2 = pair.field(1).exp_grid();
            let e = eg2.values();
            let r1 = equation_residual(pair.field(0), &metric, 8.0 * h, |i, _| -4.0 * PI * e[i] - 4.0 * PI);
            let r2 = equation_residual(pair.field(1), &metric, 8.0 * h, |i, _| 8.0 * PI * e[i] - 4.0 * PI);
            (vec![r1, r2], Some(integrate(&eg2, &metric)?))
        }
    };
    ctx.write(
        "green",
        json!({
            "case": pair.case,
            "points": pair.points,
            "log_coefficients": a,
            "expansions": pair.expansions,
            "fitted_expansions": fitted,
            "means": means,
            "mean_g2": pair.mean_g2,
            "equation_residuals": residuals,
            "exp_g2_integral": exp_mass,
            "solve": pair.solve,
        }),
    )?;
    Ok(Outcome::Ok)
}

pub fn testfn(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let metric = build_metric(cfg)?;
    let pair = build_pair(cfg, &metric)?;
    let opts = FitOptions {
        fixed_l: match cfg.l_coupling {
            LCoupling::Auto => None,
            LCoupling::Fixed(l) => Some(l),
        },
        ..Default::default()
    };
    let fit = if cfg.case == 1 {
        asymptotic_fit_case1_with(&pair, &metric, &cfg.testfn_eps_list, &opts)?
    } else {
        asymptotic_fit_case2_with(&pair, &metric, &cfg.testfn_eps_list, &opts)?
    };
    let summary = json!({
        "all_below_constant": fit.all_below_constant(),
        "decreasing": fit.decreasing(),
        "slope_error": fit.slope_error(),
    });
    ctx.write("testfn", json!({ "fit": fit, "summary": summary }))?;
    Ok(Outcome::Ok)
}

pub fn sweep_cmd(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let metric = build_metric(cfg)?;
    let opts = SweepOptions {
        solver: cfg.solver,
        warm_start: cfg.sweep_warm_start,
        growth: cfg.sweep_growth,
        separation_cells: cfg.sweep_separation_cells,
        ..Default::default()
    };
    let records = sweep(&cfg.sweep_eps_list, &metric, &opts)?;
    match ctx.format {
        Format::Csv => {
            let head = format!(
                "# config_hash={}\n# solver.grad_tol={:e} solver.max_iter={} solver.ceiling={:e}\n",
                cfg.hash(),
                cfg.solver.grad_tol,
                cfg.solver.max_iter,
                cfg.solver.ceiling
            );
            emit(ctx.out, "sweep.csv", &(head + &sweep_csv(&records)))?;
        }
        Format::Json => ctx.write("sweep", &records)?,
    }
    Ok(Outcome::Ok)
}
