//! Command-line runner: configuration, job execution and report output.
//!
//! A run is described by an [`ExperimentConfig`], read from an optional JSON
//! file and then overridden by flags. Every output file starts with a header
//! carrying the crate version, the config hash and the master seed.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::elliptic::{self, ConeStats, StepRule, VEstimate, KAPPA_HAT, TUNED_C};
use crate::error::{Error, Result};
use crate::mixedcoord::DriftParams;
use crate::output::{config_hash, csv_row, write_header};
use crate::parabolic::{self, GridSpec, Method, Model, SolverConfig, COMPARISON_SLACK};
use crate::verify::{self, CertificateReport, EnergySpec, QuadratureSpec, NU0, R0};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "DRIFTLAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    #[default]
    Verify,
    Parabolic,
    Elliptic,
    Norms,
    Suite,
}

/// Certificates understood by `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Check {
    All,
    Hessian,
    SubsolutionF,
    TravelBeta,
    C0,
    Transport,
    Divergence,
    Pointwise,
    NsIdentity,
    LpNorm,
    Energy,
}

impl Check {
    pub const CLOSED_FORM: [Check; 5] = [Check::Hessian, Check::SubsolutionF, Check::TravelBeta, Check::C0, Check::Transport];
    pub const NORMS: [Check; 5] = [Check::Divergence, Check::Pointwise, Check::NsIdentity, Check::LpNorm, Check::Energy];

    fn expand(list: &[Check]) -> Vec<Check> {
        let mut out: Vec<Check> = if list.contains(&Check::All) {
            Self::CLOSED_FORM.iter().chain(&Self::NORMS).copied().collect()
        } else {
            list.to_vec()
        };
        out.sort();
        out.dedup();
        out
    }

    /// Checks defined only for the three-dimensional toy model.
    fn needs_n3(self) -> bool {
        matches!(self, Check::NsIdentity | Check::Energy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub checks: Vec<Check>,
    /// Points for the divergence-order median.
    pub divergence_points: usize,
    /// Cloud size for the pointwise bound.
    pub pointwise_points: usize,
    /// Samples per `(t, eps)` for the toy-model identity.
    pub ns_points: usize,
    /// Truncation radii for the uniformity checks (`0` is added for the
    /// pointwise bound).
    pub epsilons: Vec<f64>,
    pub quadrature: QuadratureSpec,
    pub energy: EnergySpec,
    pub out: PathBuf,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            checks: vec![Check::All],
            divergence_points: 100,
            pointwise_points: 100_000,
            ns_points: 10_000,
            epsilons: vec![0.1, 0.05, 0.025],
            quadrature: QuadratureSpec::default(),
            energy: EnergySpec::default(),
            out: "verify.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParabolicOptions {
    pub delta: f64,
    pub grid: GridSpec,
    pub model: Model,
    pub drift: bool,
    pub records: usize,
    pub method: Method,
    pub cfl: f64,
    pub t_final: Option<f64>,
    pub out: PathBuf,
}

impl Default for ParabolicOptions {
    fn default() -> Self {
        Self {
            delta: 0.1,
            grid: GridSpec::default(),
            model: Model::Plain,
            drift: true,
            records: 100,
            method: Method::Auto,
            cfl: 0.9,
            t_final: None,
            out: "parabolic.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EllipticOptions {
    pub paths: usize,
    pub probes: Vec<f64>,
    pub cones: Vec<f64>,
    pub nu: f64,
    pub step: StepRule,
    pub out: PathBuf,
    pub cones_out: PathBuf,
}

impl Default for EllipticOptions {
    fn default() -> Self {
        Self {
            paths: 100_000,
            probes: vec![0.5, 0.25, 0.125],
            cones: vec![0.5, 0.25, 0.125],
            nu: NU0 / 2.0,
            step: StepRule::default(),
            out: "probes.csv".into(),
            cones_out: "cones.csv".into(),
        }
    }
}

/// Everything that defines one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub command: Command,
    /// `params.epsilon` is unused; see `eps`.
    pub params: DriftParams,
    /// Truncation radius. Defaults to `delta` for the parabolic solver and to
    /// `p_2 / 4` (resp. `y_2 / 4`) per elliptic probe (resp. cone).
    pub eps: Option<f64>,
    pub seed: u64,
    /// Not part of the hashed manifest, so reruns elsewhere stay identical.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub verify: VerifyOptions,
    pub parabolic: ParabolicOptions,
    pub elliptic: EllipticOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: Command::Verify,
            params: DriftParams::default().with_big_c(TUNED_C),
            eps: None,
            seed: 0,
            out_dir: ".".into(),
            verify: VerifyOptions::default(),
            parabolic: ParabolicOptions::default(),
            elliptic: EllipticOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn solver_config(&self) -> SolverConfig {
        let p = &self.parabolic;
        SolverConfig {
            params: self.params.with_epsilon(self.eps.unwrap_or(p.delta)),
            grid: p.grid,
            model: p.model,
            delta: p.delta,
            r0: R0,
            cfl: p.cfl,
            drift: p.drift,
            t_final: p.t_final,
            records: p.records,
            method: p.method,
            c0: None,
        }
    }

    fn elliptic_params(&self, y2: f64) -> DriftParams {
        self.params.with_epsilon(self.eps.unwrap_or(y2 / 4.0))
    }

    /// Every violated constraint of the parts the command will use.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.params.with_epsilon(self.eps.unwrap_or(0.0)).violations();
        let runs = |c: Command| self.command == c || self.command == Command::Suite;
        if runs(Command::Parabolic) {
            let sc = self.solver_config();
            for m in sc.violations() {
                if !v.contains(&m) {
                    v.push(m);
                }
            }
        }
        if runs(Command::Elliptic) {
            let e = &self.elliptic;
            if e.paths < 2 {
                v.push(format!("paths = {} must be at least 2", e.paths));
            }
            for &p in &e.probes {
                if !(p > 0.0 && p < 1.0) {
                    v.push(format!("probe p2 = {p} must lie in (0, 1)"));
                }
            }
            for &y in &e.cones {
                if !(y > 0.0 && y <= 1.0) {
                    v.push(format!("cone y2 = {y} must lie in (0, 1]"));
                }
                if let Some(eps) = self.eps {
                    if y < 2.0 * eps {
                        v.push(format!("cone y2 = {y} must be at least 2 eps = {}", 2.0 * eps));
                    }
                }
            }
            if !(e.nu > 0.0 && e.nu <= NU0) {
                v.push(format!("nu = {} must lie in (0, {NU0}]", e.nu));
            }
        }
        if runs(Command::Verify) || runs(Command::Norms) {
            let checks = self.checks();
            if self.params.n != 3 && checks.iter().any(|c| c.needs_n3()) {
                v.push(format!("ns_identity and energy need n = 3, got n = {}", self.params.n));
            }
            if self.verify.epsilons.iter().any(|&e| !(e > 0.0)) {
                v.push("verify epsilons must be positive".into());
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v))
        }
    }

    fn checks(&self) -> Vec<Check> {
        match self.command {
            Command::Norms => Check::NORMS.to_vec(),
            _ => Check::expand(&self.verify.checks),
        }
    }

    fn path(&self, rel: &Path) -> PathBuf {
        self.out_dir.join(rel)
    }
}

#[derive(Debug, Parser)]
#[command(name = "driftlab", version, about = "Supercritical drift experiments", arg_required_else_help = true)]
pub struct Cli {
    /// JSON file with an ExperimentConfig; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory all output paths are relative to.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Args, Default)]
pub struct CommonFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Grid and quadrature certificates, written as JSON.
    Verify {
        #[arg(value_enum)]
        checks: Vec<Check>,
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monotone solver run, written as a probe CSV.
    Parabolic {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        delta: Option<f64>,
        /// NR,NZ,NTH
        #[arg(long, value_parser = parse_grid)]
        grid: Option<GridSpec>,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// Replace the drift by zero.
        #[arg(long)]
        no_drift: bool,
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo probes and cone exits, written as two CSVs.
    Elliptic {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long = "bigC", alias = "big-c")]
        big_c: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        /// Comma-separated p2 values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        probe: Option<Vec<f64>>,
        /// Comma-separated y2 values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        cones: Option<Vec<f64>>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cones_out: Option<PathBuf>,
    },
    /// Norm, divergence, pointwise, toy-identity and energy certificates.
    Norms {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every certificate, one parabolic run and the elliptic estimates.
    Suite {
        #[command(flatten)]
        common: CommonFlags,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModelArg {
    Plain,
    NsToy,
}

fn parse_grid(s: &str) -> std::result::Result<GridSpec, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [nr, nz, nth] => Ok(GridSpec { nr, nz, nth }),
        _ => Err(format!("expected NR,NZ,NTH, got {s:?}")),
    }
}

fn apply_common(cfg: &mut ExperimentConfig, c: CommonFlags) {
    if let Some(n) = c.n {
        cfg.params.n = n;
    }
    if let Some(l) = c.lambda {
        cfg.params.lambda = l;
    }
    if let Some(a) = c.alpha {
        cfg.params.alpha = a;
    }
    if c.eps.is_some() {
        cfg.eps = c.eps;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
}

/// Builds and validates the configuration of one invocation.
pub fn parse_config(cli: Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<ExperimentConfig>(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    match cli.command {
        Sub::Verify { checks, common, out } => {
            cfg.command = Command::Verify;
            apply_common(&mut cfg, common);
            if !checks.is_empty() {
                cfg.verify.checks = checks;
            }
            if let Some(o) = out {
                cfg.verify.out = o;
            }
        }
        Sub::Parabolic {
            common,
            delta,
            grid,
            model,
            no_drift,
            records,
            t_final,
            out,
        } => {
            cfg.command = Command::Parabolic;
            apply_common(&mut cfg, common);
            let p = &mut cfg.parabolic;
            if let Some(d) = delta {
                p.delta = d;
            }
            if let Some(g) = grid {
                p.grid = g;
            }
            if let Some(m) = model {
                p.model = match m {
                    ModelArg::Plain => Model::Plain,
                    ModelArg::NsToy => Model::NsToy,
                };
            }
            if no_drift {
                p.drift = false;
            }
            if let Some(r) = records {
                p.records = r;
            }
            if t_final.is_some() {
                p.t_final = t_final;
            }
            if let Some(o) = out {
                p.out = o;
            }
        }
        Sub::Elliptic {
            common,
            big_c,
            paths,
            probe,
            cones,
            nu,
            out,
            cones_out,
        } => {
            cfg.command = Command::Elliptic;
            apply_common(&mut cfg, common);
            if let Some(c) = big_c {
                cfg.params.big_c = c;
            }
            let e = &mut cfg.elliptic;
            if let Some(p) = paths {
                e.paths = p;
            }
            if let Some(p) = probe {
                e.probes = p;
            }
            if let Some(c) = cones {
                e.cones = c;
            }
            if let Some(v) = nu {
                e.nu = v;
            }
            if let Some(o) = out {
                e.out = o;
            }
            if let Some(o) = cones_out {
                e.cones_out = o;
            }
        }
        Sub::Norms { common, out } => {
            cfg.command = Command::Norms;
            apply_common(&mut cfg, common);
            cfg.verify.out = out.unwrap_or_else(|| "norms.json".into());
        }
        Sub::Suite { common } => {
            cfg.command = Command::Suite;
            apply_common(&mut cfg, common);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub id: String,
    pub pass: bool,
    pub detail: String,
}

/// Outcome of [`run_suite`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

impl Summary {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    fn push(&mut self, id: impl Into<String>, pass: bool, detail: String) {
        self.rows.push(SummaryRow {
            id: id.into(),
            pass,
            detail,
        });
    }

    pub fn print<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let w = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(2).max(2);
        writeln!(out, "{:<w$}  result  detail", "id")?;
        for r in &self.rows {
            writeln!(out, "{:<w$}  {:<6}  {}", r.id, if r.pass { "pass" } else { "FAIL" }, r.detail)?;
        }
        for f in &self.files {
            writeln!(out, "wrote {}", f.display())?;
        }
        Ok(())
    }
}

/// Runs one certificate with the configuration's parameters.
pub fn certificate(cfg: &ExperimentConfig, check: Check) -> Result<CertificateReport> {
    let p = cfg.params;
    let v = &cfg.verify;
    match check {
        Check::All => Err(Error::InvalidParams(vec!["'all' is not a single certificate".into()])),
        Check::Hessian => Ok(verify::hessian_report(p.n, p.alpha)),
        Check::SubsolutionF => verify::certify_subsolution_f(p.n, p.alpha, &verify::r0_candidates(), (400, 400)),
        Check::TravelBeta => verify::certify_travel_beta(p.n, p.alpha, &verify::nu_candidates(), (200, 50)),
        Check::C0 => verify::c0_report(p.n, R0, (48, 64, 16)),
        Check::Transport => verify::transport_report(p.alpha, R0),
        Check::Divergence => verify::divergence_report(&p, v.divergence_points, cfg.seed),
        Check::Pointwise => {
            let mut eps = vec![0.0];
            eps.extend(&v.epsilons);
            verify::pointwise_report(&p, &eps, v.pointwise_points, cfg.seed)
        }
        Check::NsIdentity => verify::ns_identity_report(&p, &v.epsilons, &[0.0, 0.2, 0.4], v.ns_points, cfg.seed),
        Check::LpNorm => verify::lp_norm_report(&p, &v.quadrature, &v.epsilons),
        Check::Energy => verify::energy_report(&p, &v.energy),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run_verify(cfg: &ExperimentConfig, summary: &mut Summary) -> Result<()> {
    let mut reports = Vec::new();
    for check in cfg.checks() {
        let rep = certificate(cfg, check)?;
        let detail = match rep.value {
            Some(x) => format!("margin {:.3e}, value {x}", rep.worst_margin),
            None => format!("margin {:.3e}", rep.worst_margin),
        };
        summary.push(rep.id.clone(), rep.pass, detail);
        reports.push(rep);
    }
    let doc = json!({
        "driftlab": env!("CARGO_PKG_VERSION"),
        "config_sha256": config_hash(cfg)?,
        "seed": cfg.seed,
        "config": cfg,
        "reports": reports,
    });
    let path = cfg.path(&cfg.verify.out);
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, &doc)?;
    writeln!(f)?;
    f.flush()?;
    summary.files.push(path);
    Ok(())
}

fn run_parabolic(cfg: &ExperimentConfig, summary: &mut Summary) -> Result<()> {
    let sc = cfg.solver_config();
    let series = parabolic::run(&sc)?;
    let path = cfg.path(&cfg.parabolic.out);
    let mut f = create(&path)?;
    series.write_csv(&mut f, cfg, cfg.seed)?;
    f.flush()?;
    summary.files.push(path);
    let last = series.last();
    let broken = series.invariant_violations();
    summary.push(
        "parabolic.invariants",
        broken.is_empty(),
        if broken.is_empty() {
            format!("{} steps, max|v| {:.3e} -> {:.3e}", series.steps, series.initial_max, last.max_abs)
        } else {
            broken.join("; ")
        },
    );
    summary.push(
        "parabolic.probes",
        last.probe_pos > 0.0 && last.probe_neg < 0.0,
        format!("v(delta, 0, 0) = {:.6e}, v(delta, 0, pi) = {:.6e} at t = {:.6}", last.probe_pos, last.probe_neg, last.t),
    );
    if let Some(ratio) = series.comparison_ratio() {
        summary.push(
            "parabolic.comparison",
            ratio <= COMPARISON_SLACK,
            format!("max (floor - v) / max|v0| = {ratio:.3e}"),
        );
    }
    Ok(())
}

fn run_elliptic(cfg: &ExperimentConfig, summary: &mut Summary) -> Result<()> {
    let e = &cfg.elliptic;
    let n = cfg.params.n;
    let mut probes: Vec<VEstimate> = Vec::new();
    for (k, &p2) in e.probes.iter().enumerate() {
        let params = cfg.elliptic_params(p2);
        probes.push(elliptic::estimate_v(&elliptic::probe_point(p2, n), e.paths, &params, &e.step, cfg.seed.wrapping_add(k as u64))?);
    }
    let mut cones: Vec<ConeStats> = Vec::new();
    for (k, &y2) in e.cones.iter().enumerate() {
        let params = cfg.elliptic_params(y2);
        let cone = elliptic::ConeSpec::scaled(e.nu, y2, params.alpha)?;
        let y = elliptic::probe_point(y2, n);
        cones.push(elliptic::exit_side_statistics(&y, &cone, e.paths, &params, &e.step, cfg.seed.wrapping_add(1000 + k as u64))?);
    }

    let path = cfg.path(&e.out);
    let mut f = create(&path)?;
    write_header(&mut f, cfg, cfg.seed)?;
    writeln!(f, "p2,mean,ci_lo,ci_hi,A_fraction")?;
    for v in &probes {
        writeln!(f, "{}", csv_row(&[v.p2, v.mean, v.ci_lo, v.ci_hi, v.a_fraction]))?;
    }
    f.flush()?;
    summary.files.push(path);

    let path = cfg.path(&e.cones_out);
    let mut f = create(&path)?;
    write_header(&mut f, cfg, cfg.seed)?;
    writeln!(f, "y2,p_lid,p_sphere,p_side,p_bottom,ci")?;
    for c in &cones {
        writeln!(f, "{}", csv_row(&[c.y2, c.p_lid, c.p_sphere, c.p_side, c.p_bottom, elliptic::Z95 * c.se]))?;
    }
    f.flush()?;
    summary.files.push(path);

    let drifted = cfg.params.big_c > 0.0;
    for v in &probes {
        let pass = if drifted { v.mean >= KAPPA_HAT } else { v.ci_hi >= 0.0 };
        summary.push(
            format!("elliptic.probe[{}]", v.p2),
            pass,
            format!("mean {:.4} in [{:.4}, {:.4}], A fraction {:.4}", v.mean, v.ci_lo, v.ci_hi, v.a_fraction),
        );
    }
    for c in &cones {
        summary.push(
            format!("elliptic.cone[{}]", c.y2),
            c.escape_lower() >= 0.5,
            format!("P(lid or sphere) {:.4} - 1.96 SE = {:.4}", c.p_escape(), c.escape_lower()),
        );
    }
    Ok(())
}

/// Executes the configured jobs and writes their artifacts.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let mut summary = Summary::default();
    match cfg.command {
        Command::Verify | Command::Norms => run_verify(cfg, &mut summary)?,
        Command::Parabolic => run_parabolic(cfg, &mut summary)?,
        Command::Elliptic => run_elliptic(cfg, &mut summary)?,
        Command::Suite => {
            run_verify(cfg, &mut summary)?;
            run_parabolic(cfg, &mut summary)?;
            run_elliptic(cfg, &mut summary)?;
        }
    }
    Ok(summary)
}

/// Exit code for an error escaping a run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParams(_) | Error::OutOfRange { .. } | Error::DimensionMismatch { .. } | Error::UncertifiedRadius(_) | Error::Json(_) => EXIT_USAGE,
        Error::CflViolation { .. } | Error::Instability { .. } | Error::Censored { .. } | Error::NonFinite { .. } => EXIT_NUMERICAL,
        _ => EXIT_FAIL,
    }
}

/// Sizes the global worker pool from `DRIFTLAB_THREADS`, if set.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        // A pool may already exist when embedded; keeping it is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with_args<I, T, O, E>(args: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(if code == 0 { out as &mut dyn Write } else { err as &mut dyn Write }, "{}", e.render().ansi());
            return code;
        }
    };
    let cfg = match parse_config(cli) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return exit_code(&e).max(EXIT_USAGE);
        }
    };
    init_threads();
    match run_suite(&cfg) {
        Ok(summary) => {
            let _ = summary.print(out);
            if summary.pass() {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<ExperimentConfig> {
        let mut argv = vec!["driftlab"];
        argv.extend(args);
        parse_config(Cli::try_parse_from(argv).expect("clap accepts"))
    }

    #[test]
    fn valid_verify_arguments() {
        let cfg = parse(&["verify", "--n", "3", "--lambda", "0.5", "--alpha", "0.1"]).unwrap();
        assert_eq!(cfg.command, Command::Verify);
        assert_eq!(cfg.params.alpha, 0.1);
        assert_eq!(cfg.checks().len(), 10);
    }

    #[test]
    fn alpha_above_range_lists_the_constraint() {
        let err = parse(&["verify", "--alpha", "0.3", "--lambda", "0.5", "--n", "3"]).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert!(err.to_string().contains("alpha = 0.3"), "{err}");
    }

    #[test]
    fn every_violation_is_reported() {
        let err = parse(&["elliptic", "--alpha", "0.3", "--paths", "1", "--nu", "0.9"]).unwrap_err();
        let Error::InvalidParams(v) = err else { panic!() };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"seed": 9, "params": {"n": 3, "lambda": 0.5, "alpha": 0.05, "epsilon": 0.0, "big_c": 4.0},
            "elliptic": {"paths": 50}}"#)
        .unwrap();
        let p = path.to_str().unwrap();
        let cfg = parse(&["--config", p, "elliptic", "--paths", "70", "--probe", "0.4,0.2"]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.params.alpha, 0.05);
        assert_eq!(cfg.params.big_c, 4.0);
        assert_eq!(cfg.elliptic.paths, 70);
        assert_eq!(cfg.elliptic.probes, vec![0.4, 0.2]);
        assert_eq!(cfg.elliptic.cones, EllipticOptions::default().cones);
    }

    #[test]
    fn grid_flag() {
        assert_eq!(parse_grid("8,16,8").unwrap(), GridSpec { nr: 8, nz: 16, nth: 8 });
        assert!(parse_grid("8,16").is_err());
        let err = parse(&["parabolic", "--grid", "8,15,8"]).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
    }

    #[test]
    fn empty_argv_is_usage() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(main_with_args(["driftlab"], &mut o, &mut e), EXIT_USAGE);
        assert!(String::from_utf8(e).unwrap().contains("Usage"));
    }

    #[test]
    fn out_dir_is_not_hashed() {
        let mut a = ExperimentConfig::default();
        let mut b = a.clone();
        a.out_dir = "/tmp/a".into();
        b.out_dir = "/tmp/b".into();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }
}
