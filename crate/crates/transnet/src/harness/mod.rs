//! Experiment driver: convergence ladders, d_y scaling, Lipschitz
//! certificates, invariant suites and interpolation calibration.
//!
//! Every run writes `<name>.csv` with the fixed header [`CSV_HEADER`] and a
//! `<name>.json` report holding the per-row details and derived checks.

mod properties;
mod runs;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::relu_net::Aabb;
use crate::transport_core::{
    AffineConvection, Convection, Datum, Direction, Kind, Limits, Profile, TransportError, TransportProblem,
};

pub use properties::{
    algebra_suite, contraction_suite, interp_suite, quadrature_suite, rho_suite, run_properties, Check,
};
pub use runs::{run_calibrate, run_convergence, run_dy_scaling, run_lipschitz};

pub const CSV_HEADER: &str = "eps,measured_err,size,depth,predicted,lip_xy,lip_t,status,seed";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Interp(#[from] crate::lip_interp::InterpError),
    #[error(transparent)]
    Comp(#[from] crate::comp_calculus::CompError),
    #[error(transparent)]
    Net(#[from] crate::relu_net::NetError),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error("config: {0}")]
    Config(String),
    #[error("rate fit needs at least 3 rows with distinct eps, got {0}")]
    Degenerate(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Affine field `a = Σ_j y_j ω_j a°_j(t, x)` from catalog profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub omega: Vec<f64>,
    /// `components[j][k]` is coordinate `k` of `a°_j`.
    pub components: Vec<Vec<Profile>>,
    #[serde(default)]
    pub a_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub field: FieldConfig,
    #[serde(default)]
    pub u0: Datum,
    #[serde(default)]
    pub f: Datum,
    pub t_hat: f64,
    pub domain: Aabb,
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<TransportProblem> {
        self.build_field(&self.field)
    }

    /// The problem with `d_y` components: `ω_j = |ω|₁ / d_y` and component
    /// `j` copied from `components[j mod len]`.
    pub fn with_dy(&self, dy: usize) -> Result<TransportProblem> {
        if dy == 0 || self.field.components.is_empty() {
            return Err(HarnessError::Config("d_y and the component list must be nonempty".into()));
        }
        let l1: f64 = self.field.omega.iter().sum();
        let field = FieldConfig {
            omega: vec![l1 / dy as f64; dy],
            components: (0..dy).map(|j| self.field.components[j % self.field.components.len()].clone()).collect(),
            a_bound: self.field.a_bound,
        };
        self.build_field(&field)
    }

    fn build_field(&self, field: &FieldConfig) -> Result<TransportProblem> {
        let mut conv = AffineConvection::from_catalog(field.omega.clone(), field.components.clone())?;
        if let Some(a) = field.a_bound {
            conv = conv.with_a_bound(a)?;
        }
        let p = TransportProblem::new(
            Convection::Affine(conv),
            self.u0.clone(),
            self.f.clone(),
            self.t_hat,
            self.domain.clone(),
        )?;
        Ok(match self.alpha {
            Some(a) => p.with_alpha(a)?,
            None => p,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Inline(ProblemConfig),
    /// Path relative to the config file.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrateConfig {
    pub deltas: Vec<f64>,
    pub dims: Vec<usize>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self { deltas: vec![0.1, 0.05, 0.025, 0.0125], dims: vec![1, 2] }
    }
}

fn default_samples() -> usize {
    1000
}
fn default_lip_samples() -> usize {
    200
}
fn default_dy() -> Vec<usize> {
    vec![1, 2, 4, 8]
}
fn default_dy_eps() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    /// Strictly decreasing tolerance ladder.
    pub eps: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_lip_samples")]
    pub lip_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default = "default_dy")]
    pub dy: Vec<usize>,
    #[serde(default = "default_dy_eps")]
    pub dy_eps: f64,
    /// Accepted size ratio per doubling of `d_y` (between `d_y ≥ 2` builds).
    #[serde(default)]
    pub dy_band: Option<[f64; 2]>,
    /// Accepted slope of `log₂ size` vs `log₂(1/ε)`; default scales
    /// `[1.5, 3.5]` (char) or `[2.3, 4.5]` (solution) by the target exponent.
    #[serde(default)]
    pub rate_band: Option<[f64; 2]>,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if let ProblemSource::File(p) = &cfg.problem {
            let p = path.parent().unwrap_or(Path::new(".")).join(p);
            let text = fs::read_to_string(&p).map_err(|source| HarnessError::Io { path: p.clone(), source })?;
            cfg.problem = ProblemSource::Inline(serde_json::from_str(&text)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(HarnessError::Config("eps ladder must be nonempty and positive".into()));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(HarnessError::Config("eps ladder must be strictly decreasing".into()));
        }
        if self.samples == 0 {
            return Err(HarnessError::Config("samples must be positive".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<&ProblemConfig> {
        match &self.problem {
            ProblemSource::Inline(p) => Ok(p),
            ProblemSource::File(p) => Err(HarnessError::Config(format!("problem file {} not loaded", p.display()))),
        }
    }

    /// SHA-256 of the canonical config JSON and the seed.
    pub fn hash(&self, seed: u64) -> String {
        hash_with_seed(self, seed)
    }
}

pub(crate) fn hash_with_seed<T: Serialize + ?Sized>(v: &T, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(v).expect("config serializes"));
    h.update(seed.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Overrides from the command line.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub kind: Option<Kind>,
    pub direction: Option<Direction>,
}

impl RunOptions {
    pub fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }
    pub fn kind(&self, cfg: &ExperimentConfig) -> Kind {
        self.kind.or(cfg.kind).unwrap_or(Kind::Char)
    }
    pub fn direction(&self, cfg: &ExperimentConfig) -> Direction {
        self.direction.or(cfg.direction).unwrap_or(Direction::Forward)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        }
    }
}

/// One CSV row; `None` fields are written empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub eps: Option<f64>,
    pub measured_err: Option<f64>,
    pub size: Option<u64>,
    pub depth: Option<usize>,
    pub predicted: Option<f64>,
    pub lip_xy: Option<f64>,
    pub lip_t: Option<f64>,
    pub status: Option<Status>,
    pub seed: u64,
    /// Refusal or failure detail.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl Row {
    pub fn csv_line(&self) -> String {
        fn f(v: Option<f64>) -> String {
            v.map(|x| format!("{x:e}")).unwrap_or_default()
        }
        fn u<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{}",
            f(self.eps),
            f(self.measured_err),
            u(self.size),
            u(self.depth),
            f(self.predicted),
            f(self.lip_xy),
            f(self.lip_t),
            self.status.map(|s| s.as_str()).unwrap_or(""),
            self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    /// Log-log chart written next to the CSV when present.
    #[serde(skip)]
    pub svg: Option<String>,
}

impl Report {
    /// No non-SKIP row and no check failed.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status != Some(Status::Fail)) && self.checks.iter().all(|c| c.pass)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    /// Writes `<command>.csv`, `<command>.json` and the optional chart into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.into(), source })?;
        let csv = dir.join(format!("{}.csv", self.command));
        fs::write(&csv, self.csv()).map_err(|source| HarnessError::Io { path: csv.clone(), source })?;
        let json = dir.join(format!("{}.json", self.command));
        let body = serde_json::to_string_pretty(self)?;
        fs::write(&json, body + "\n").map_err(|source| HarnessError::Io { path: json, source })?;
        if let Some(svg) = &self.svg {
            let path = dir.join(format!("{}.svg", self.command));
            fs::write(&path, svg).map_err(|source| HarnessError::Io { path, source })?;
        }
        Ok(csv)
    }
}

/// Least-squares line `log₂ size = slope · log₂(1/ε) + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in `log₂` units.
    pub residual: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = points.iter().map(|(eps, size)| ((1.0 / eps).log2(), size.log2())).collect();
    let n = pts.len();
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if n < 3 || distinct.len() < 2 || pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(HarnessError::Degenerate(distinct.len()));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum::<f64>() / nf).sqrt();
    Ok(RateFit { slope, intercept, residual })
}

/// Reads `(eps, size)` pairs from a harness CSV, skipping rows without both.
pub fn read_csv_points(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(HarnessError::Config("unexpected CSV header".into()));
    }
    let mut out = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(HarnessError::Config(format!("malformed CSV row {line:?}")));
        }
        if let (Ok(e), Ok(s)) = (cols[0].parse::<f64>(), cols[2].parse::<f64>()) {
            out.push((e, s));
        }
    }
    Ok(out)
}

/// Log-log line chart of `(eps, size)` with the fitted line.
pub fn svg_loglog(points: &[(f64, f64)], fit: Option<&RateFit>, title: &str) -> String {
    let (w, h, pad) = (480.0, 360.0, 48.0);
    let xy: Vec<(f64, f64)> = points.iter().map(|(e, s)| ((1.0 / e).log2(), s.log2())).collect();
    let (x0, x1) = xy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = xy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let (sx, sy) = ((x1 - x0).max(1e-9), (y1 - y0).max(1e-9));
    let px = |x: f64| pad + (x - x0) / sx * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / sy * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="20">{title}</text>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}">log2(1/eps)</text>"#, w / 2.0 - 30.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="6" y="{}" transform="rotate(-90 12 {})">log2(size)</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    if !xy.is_empty() {
        let d: Vec<String> = xy.iter().map(|p| format!("{:.2} {:.2}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, d.join(" "));
        for p in &xy {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(p.0), py(p.1));
        }
    }
    if let Some(f) = fit {
        let (a, b) = (f.intercept + f.slope * x0, f.intercept + f.slope * x1);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            px(x0),
            py(a),
            px(x1),
            py(b)
        );
        let _ = writeln!(s, r#"<text x="{}" y="36">slope {:.3}</text>"#, pad, f.slope);
    }
    s.push_str("</svg>\n");
    s
}
