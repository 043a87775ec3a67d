//! Flat `key=value` run configuration with dotted keys.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use todalab::functional::SolverOptions;
use todalab::{Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::Configuration(format!("unknown format {s:?}, expected json or csv"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Flat,
    File(PathBuf),
    /// `0.3 cos(2πx) cos(2πy)`.
    Bump,
    /// `0.2 cos(2πx)`.
    Wave,
}

impl MetricKind {
    fn describe(&self) -> String {
        match self {
            Self::Flat => "flat".into(),
            Self::File(p) => format!("file={}", p.display()),
            Self::Bump => "bump".into(),
            Self::Wave => "wave".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LCoupling {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid_n: usize,
    pub metric: MetricKind,
    pub eps: Option<f64>,
    pub masses: Option<Vec<f64>>,
    pub points: Option<Vec<Point>>,
    pub case: u8,
    pub solver: SolverOptions,
    pub testfn_eps_list: Vec<f64>,
    pub l_coupling: LCoupling,
    pub sweep_eps_list: Vec<f64>,
    pub sweep_warm_start: bool,
    pub sweep_growth: f64,
    pub sweep_separation_cells: f64,
    pub output_dir: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    /// Amplitude of the seeded random start of `solve`; 0 starts from zero.
    pub init_amplitude: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_n: 128,
            metric: MetricKind::Flat,
            eps: None,
            masses: None,
            points: None,
            case: 1,
            solver: SolverOptions::default(),
            testfn_eps_list: todalab::testfn::default_eps_list(),
            l_coupling: LCoupling::Auto,
            sweep_eps_list: vec![1.0, 0.5, 0.25, 0.1, 0.05],
            sweep_warm_start: true,
            sweep_growth: 2.0,
            sweep_separation_cells: 8.0,
            output_dir: None,
            format: Format::Json,
            seed: 0,
            init_amplitude: 0.0,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Configuration(format!("{key} = {value:?}: {why}"))
}

fn real(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|e| bad(key, v, e))?;
    if !x.is_finite() {
        return Err(bad(key, v, "not finite"));
    }
    Ok(x)
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|t| real(key, t.trim())).collect()
}

fn decreasing(key: &str, v: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(bad(key, v, "must be a non-empty strictly decreasing list"));
    }
    Ok(())
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

/// Splits `key=value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Configuration(format!("line {}: expected key=value", no + 1)));
        };
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Configuration(format!("line {}: duplicate key {k}", no + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_pairs(&parse_pairs(&text)?, path.parent())
    }

    /// Relative metric file paths resolve against `base`.
    pub fn from_pairs(pairs: &BTreeMap<String, String>, base: Option<&Path>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            let v = v.as_str();
            match k.as_str() {
                "grid.n" => c.grid_n = v.parse().map_err(|e| bad(k, v, e))?,
                "metric.kind" => {
                    c.metric = match v {
                        "flat" => MetricKind::Flat,
                        "bump" => MetricKind::Bump,
                        "wave" => MetricKind::Wave,
                        _ => match v.strip_prefix("file=") {
                            Some(p) => {
                                let p = Path::new(p);
                                let p = match base {
                                    Some(b) if p.is_relative() => b.join(p),
                                    _ => p.to_path_buf(),
                                };
                                if !p.is_file() {
                                    return Err(bad(k, v, "file not found"));
                                }
                                MetricKind::File(p)
                            }
                            None => return Err(bad(k, v, "expected flat, bump, wave or file=<path>")),
                        },
                    }
                }
                "eps" => c.eps = Some(real(k, v)?),
                "masses" => c.masses = Some(list(k, v)?),
                "points" => {
                    let pts = v
                        .split(';')
                        .map(|p| {
                            let xy = list(k, p)?;
                            match xy[..] {
                                [x, y] if (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y) => Ok(Point::new(x, y)),
                                _ => Err(bad(k, v, "points are x,y pairs in [0,1)² separated by ';'")),
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    c.points = Some(pts);
                }
                "case" => {
                    c.case = match v {
                        "1" => 1,
                        "2" => 2,
                        _ => return Err(bad(k, v, "expected 1 or 2")),
                    }
                }
                "solver.max_iter" => c.solver.max_iter = v.parse().map_err(|e| bad(k, v, e))?,
                "solver.grad_tol" => c.solver.grad_tol = real(k, v)?,
                "solver.ceiling" => c.solver.ceiling = real(k, v)?,
                "testfn.eps_list" => {
                    let xs = list(k, v)?;
                    decreasing(k, v, &xs)?;
                    c.testfn_eps_list = xs;
                }
                "testfn.L_coupling" => {
                    c.l_coupling = match v {
                        "auto" => LCoupling::Auto,
                        _ => match v.strip_prefix("fixed=") {
                            Some(l) => LCoupling::Fixed(real(k, l)?),
                            None => return Err(bad(k, v, "expected auto or fixed=<L>")),
                        },
                    }
                }
                "sweep.eps_list" => {
                    let xs = list(k, v)?;
                    decreasing(k, v, &xs)?;
                    c.sweep_eps_list = xs;
                }
                "sweep.warm_start" => c.sweep_warm_start = v.parse().map_err(|e| bad(k, v, e))?,
                "sweep.growth" => c.sweep_growth = real(k, v)?,
                "sweep.separation_cells" => c.sweep_separation_cells = real(k, v)?,
                "output.dir" => c.output_dir = Some(PathBuf::from(v)),
                "output.format" => c.format = Format::parse(v)?,
                "seed" => c.seed = v.parse().map_err(|e| bad(k, v, e))?,
                "init.amplitude" => c.init_amplitude = real(k, v)?,
                _ => return Err(Error::Configuration(format!("unknown key {k}"))),
            }
        }
        Ok(c)
    }

    /// Equal masses `(M, M)` become `ε = 4π − M`; `eps` and `masses` are exclusive.
    pub fn resolved_eps(&self) -> Result<Option<f64>> {
        match (&self.eps, &self.masses) {
            (Some(_), Some(_)) => Err(Error::Configuration("set eps or masses, not both".into())),
            (Some(e), None) => Ok(Some(*e)),
            (None, Some(m)) => match m[..] {
                [a, b] if a == b => Ok(Some(4.0 * PI - a)),
                _ => Err(Error::Configuration("the rank-two solver needs two equal masses".into())),
            },
            (None, None) => Ok(None),
        }
    }

    /// Every effective setting, one `key=value` per line in key order.
    pub fn canonical(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("grid.n", self.grid_n.to_string());
        m.insert("metric.kind", self.metric.describe());
        m.insert("eps", self.eps.map(|e| format!("{e:e}")).unwrap_or_default());
        m.insert("masses", self.masses.as_deref().map(fmt_list).unwrap_or_default());
        m.insert(
            "points",
            self.points
                .as_ref()
                .map(|p| p.iter().map(|p| format!("{:e},{:e}", p.x, p.y)).collect::<Vec<_>>().join(";"))
                .unwrap_or_default(),
        );
        m.insert("case", self.case.to_string());
        m.insert("solver.max_iter", self.solver.max_iter.to_string());
        m.insert("solver.grad_tol", format!("{:e}", self.solver.grad_tol));
        m.insert("solver.ceiling", format!("{:e}", self.solver.ceiling));
        m.insert("testfn.eps_list", fmt_list(&self.testfn_eps_list));
        m.insert(
            "testfn.L_coupling",
            match self.l_coupling {
                LCoupling::Auto => "auto".into(),
                LCoupling::Fixed(l) => format!("fixed={l:e}"),
            },
        );
        m.insert("sweep.eps_list", fmt_list(&self.sweep_eps_list));
        m.insert("sweep.warm_start", self.sweep_warm_start.to_string());
        m.insert("sweep.growth", format!("{:e}", self.sweep_growth));
        m.insert("sweep.separation_cells", format!("{:e}", self.sweep_separation_cells));
        m.insert("output.format", self.format.as_str().into());
        m.insert("seed", self.seed.to_string());
        m.insert("init.amplitude", format!("{:e}", self.init_amplitude));
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded. The output directory is left out.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
