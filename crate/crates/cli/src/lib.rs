//! Command-line front end: flag and config-file resolution, and the four
//! subcommands `fit`, `tune`, `simulate` and `replicate`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hpgee2::io::{load_dataset, report_fit, write_atomic, write_dataset, ReportFormat};
use hpgee2::penalty::DEFAULT_SCAD_A;
use hpgee2::simulate::SelectionMetrics;
use hpgee2::tuning::{grid_search, penalties_for_mode};
use hpgee2::{
    fit_hpgee2, replicate_study, sandwich_covariance, simulate_dataset, AnalysisMode, Dataset, Error, FitResult,
    GridSpec, ModeKind, PenaltyKind, Result, SolverOptions, StudyConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "hpgee2",
    version,
    about = "Penalized GEE2 variable selection for clustered binary data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Fit,
    Tune,
    Simulate,
    Replicate,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a single λ and report estimates with sandwich SEs.
    Fit(Flags),
    /// Choose λ over a grid by BIC and report the chosen fit.
    Tune(Flags),
    /// Write one synthetic dataset (`<out>.units.csv`, `<out>.pairs.csv`).
    Simulate(Flags),
    /// Run a replicated selection study and report PS/FD per penalty.
    Replicate(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mean,
    Assoc,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    None,
    Lasso,
    Scad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Csv,
}

/// Every flag is optional so a config file can supply it.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub units: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub penalty: Option<PenaltyArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `LO:HI:N`, log-spaced.
    #[arg(long)]
    pub grid: Option<String>,
    /// SCAD concavity.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Clusters per simulated dataset.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub cluster_size: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Do not prepend intercept columns to the designs.
    #[arg(long)]
    pub no_intercept: bool,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub units: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub mode: ModeKind,
    /// `None` for `replicate` means both lasso and SCAD.
    pub penalty: Option<PenaltyKind>,
    pub lambda: Option<f64>,
    pub grid: Option<String>,
    pub a: f64,
    pub tol: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub clusters: usize,
    pub cluster_size: usize,
    pub replicates: usize,
    pub intercept: bool,
}

fn cfg_err(detail: impl Into<String>) -> Error {
    Error::Config {
        op: "cli::run",
        detail: detail.into(),
    }
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("{origin}:{}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(cfg_err(format!("{origin}:{}: unknown key '{}'", i + 1, k.trim())));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

const KNOWN_KEYS: &[&str] = &[
    "units",
    "pairs",
    "mode",
    "penalty",
    "lambda",
    "grid",
    "a",
    "tol",
    "seed",
    "out",
    "format",
    "clusters",
    "cluster-size",
    "replicates",
    "no-intercept",
];

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| cfg_err(format!("config key '{key}': cannot parse '{v}'")))
}

fn mode_kind(m: ModeArg) -> ModeKind {
    match m {
        ModeArg::Mean => ModeKind::MeanOnly,
        ModeArg::Assoc => ModeKind::AssocOnly,
        ModeArg::Joint => ModeKind::Joint,
    }
}

fn penalty_kind(p: PenaltyArg) -> PenaltyKind {
    match p {
        PenaltyArg::None => PenaltyKind::None,
        PenaltyArg::Lasso => PenaltyKind::Lasso,
        PenaltyArg::Scad => PenaltyKind::Scad,
    }
}

impl RunConfig {
    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(command: CommandKind, flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    op: "cli::run",
                    path: path.display().to_string(),
                    source,
                })?;
                parse_config_file(&text, &path.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        let get = |k: &str| file.get(k).map(String::as_str);
        let study = StudyConfig::default();

        let mode = match (flags.mode, get("mode")) {
            (Some(m), _) => mode_kind(m),
            (None, Some(v)) => v.parse()?,
            (None, None) => ModeKind::MeanOnly,
        };
        let penalty = match (flags.penalty, get("penalty")) {
            (Some(p), _) => Some(penalty_kind(p)),
            (None, Some(v)) => Some(v.parse()?),
            (None, None) if command == CommandKind::Replicate => None,
            (None, None) => Some(PenaltyKind::Scad),
        };
        let format = match (flags.format, get("format")) {
            (Some(FormatArg::Text), _) => ReportFormat::Text,
            (Some(FormatArg::Csv), _) => ReportFormat::Csv,
            (None, Some(v)) => v.parse()?,
            (None, None) => ReportFormat::Text,
        };
        let opt_f64 = |flag: Option<f64>, key: &str| -> Result<Option<f64>> {
            match (flag, get(key)) {
                (Some(v), _) => Ok(Some(v)),
                (None, Some(v)) => parse_value(key, v).map(Some),
                (None, None) => Ok(None),
            }
        };
        let opt_usize = |flag: Option<usize>, key: &str, default: usize| -> Result<usize> {
            match (flag, get(key)) {
                (Some(v), _) => Ok(v),
                (None, Some(v)) => parse_value(key, v),
                (None, None) => Ok(default),
            }
        };
        let path = |flag: &Option<PathBuf>, key: &str| flag.clone().or_else(|| get(key).map(PathBuf::from));
        let no_intercept = flags.no_intercept
            || get("no-intercept")
                .map(|v| parse_value::<bool>("no-intercept", v))
                .transpose()?
                .unwrap_or(false);

        let cfg = RunConfig {
            command,
            units: path(&flags.units, "units"),
            pairs: path(&flags.pairs, "pairs"),
            mode,
            penalty,
            lambda: opt_f64(flags.lambda, "lambda")?,
            grid: flags.grid.clone().or_else(|| get("grid").map(str::to_string)),
            a: opt_f64(flags.a, "a")?.unwrap_or(DEFAULT_SCAD_A),
            tol: opt_f64(flags.tol, "tol")?.unwrap_or(SolverOptions::default().tol),
            seed: match (flags.seed, get("seed")) {
                (Some(s), _) => s,
                (None, Some(v)) => parse_value("seed", v)?,
                (None, None) => study.seed,
            },
            out: path(&flags.out, "out"),
            format,
            clusters: opt_usize(flags.clusters, "clusters", study.n_clusters)?,
            cluster_size: opt_usize(flags.cluster_size, "cluster-size", study.cluster_size)?,
            replicates: opt_usize(flags.replicates, "replicates", study.replicates)?,
            intercept: !no_intercept,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if matches!(self.command, CommandKind::Fit | CommandKind::Tune) {
            for (name, p) in [("units", &self.units), ("pairs", &self.pairs)] {
                match p {
                    None => return Err(cfg_err(format!("--{name} is required for this command"))),
                    Some(p) if !p.is_file() => {
                        return Err(cfg_err(format!("--{name} {} does not exist", p.display())));
                    }
                    _ => {}
                }
            }
        }
        if self.command == CommandKind::Fit && self.lambda.is_none() && self.penalty != Some(PenaltyKind::None) {
            return Err(cfg_err("--lambda is required for fit"));
        }
        if self.command == CommandKind::Simulate && self.out.is_none() {
            return Err(cfg_err("--out is required for simulate"));
        }
        if !(self.tol > 0.0) {
            return Err(cfg_err(format!("--tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            inner_tol: self.tol / 100.0,
            ..SolverOptions::default()
        }
    }

    fn grid_spec(&self) -> Result<GridSpec> {
        match &self.grid {
            Some(g) => g.parse(),
            None => Ok(GridSpec::default()),
        }
    }

    fn study(&self) -> Result<StudyConfig> {
        let mut study = StudyConfig {
            n_clusters: self.clusters,
            cluster_size: self.cluster_size,
            mode: self.mode,
            penalties: match self.penalty {
                Some(p) => vec![p],
                None => vec![PenaltyKind::Lasso, PenaltyKind::Scad],
            },
            grid: self.grid_spec()?,
            scad_a: self.a,
            solver: self.solver(),
            replicates: self.replicates,
            seed: self.seed,
            ..StudyConfig::default()
        };
        if let Some(l) = self.lambda {
            if self.grid.is_none() {
                study.grid = GridSpec::from_values(vec![l])?;
            }
        }
        Ok(study)
    }

    /// `# key=value` lines echoing everything that determines the output.
    pub fn header(&self) -> String {
        let mut h = String::new();
        let cmd = match self.command {
            CommandKind::Fit => "fit",
            CommandKind::Tune => "tune",
            CommandKind::Simulate => "simulate",
            CommandKind::Replicate => "replicate",
        };
        let show = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        let _ = writeln!(h, "# hpgee2 {} {cmd}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(h, "# seed={}", self.seed);
        let _ = writeln!(h, "# mode={}", self.mode);
        let _ = writeln!(
            h,
            "# penalty={}",
            self.penalty.map_or("lasso+scad".to_string(), |p| p.to_string())
        );
        let _ = writeln!(h, "# lambda={}", self.lambda.map_or("-".to_string(), |l| l.to_string()));
        let _ = writeln!(h, "# grid={}", self.grid.as_deref().unwrap_or("0.001:1:30"));
        let _ = writeln!(h, "# a={}", self.a);
        let _ = writeln!(h, "# tol={}", self.tol);
        let _ = writeln!(h, "# intercept={}", self.intercept);
        match self.command {
            CommandKind::Fit | CommandKind::Tune => {
                let _ = writeln!(h, "# units={}", show(&self.units));
                let _ = writeln!(h, "# pairs={}", show(&self.pairs));
            }
            CommandKind::Simulate | CommandKind::Replicate => {
                let _ = writeln!(h, "# clusters={}", self.clusters);
                let _ = writeln!(h, "# cluster-size={}", self.cluster_size);
                if self.command == CommandKind::Replicate {
                    let _ = writeln!(h, "# replicates={}", self.replicates);
                }
            }
        }
        h
    }
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    let units = cfg.units.as_deref().expect("validated");
    let pairs = cfg.pairs.as_deref().expect("validated");
    load_dataset(units, pairs, cfg.intercept)
}

fn fit_report(ds: &Dataset, fit: &FitResult, format: ReportFormat) -> String {
    let mut out = String::new();
    match sandwich_covariance(ds, fit) {
        Ok(se) => out.push_str(&report_fit(ds, fit, Some(&se), format)),
        Err(e) => {
            log::warn!("standard errors unavailable: {e}");
            let _ = writeln!(out, "# standard errors unavailable: {e}");
            out.push_str(&report_fit(ds, fit, None, format));
        }
    }
    if !fit.converged() {
        let _ = writeln!(out, "# warning: solver did not converge");
    }
    out
}

fn penalties(cfg: &RunConfig, lambda: f64, ds: &Dataset) -> Result<(hpgee2::PenaltyConfig, hpgee2::PenaltyConfig)> {
    penalties_for_mode(
        cfg.mode,
        cfg.penalty.unwrap_or(PenaltyKind::Scad),
        lambda,
        cfg.a,
        ds.has_intercept(),
    )
}

fn run_fit(cfg: &RunConfig) -> Result<String> {
    let ds = load(cfg)?;
    let (cm, ca) = penalties(cfg, cfg.lambda.unwrap_or(0.0), &ds)?;
    let fit = fit_hpgee2(&ds, &AnalysisMode::new(cfg.mode), &cm, &ca, &cfg.solver())?;
    let mut out = cfg.header();
    let _ = writeln!(out, "# clusters={}", ds.n_clusters());
    out.push_str(&fit_report(&ds, &fit, cfg.format));
    Ok(out)
}

fn run_tune(cfg: &RunConfig) -> Result<String> {
    let ds = load(cfg)?;
    let (cm, ca) = penalties(cfg, 0.0, &ds)?;
    let report = grid_search(
        &ds,
        &AnalysisMode::new(cfg.mode),
        &cm,
        &ca,
        &cfg.grid_spec()?,
        &cfg.solver(),
    )?;
    let mut out = cfg.header();
    let _ = writeln!(out, "# clusters={}", ds.n_clusters());
    let _ = writeln!(out, "# chosen_lambda={}", report.chosen_lambda);
    match cfg.format {
        ReportFormat::Text => {
            let _ = writeln!(out, "{:>12}  {:>14}  {:>6}  {:>6}", "lambda", "bic", "mean", "assoc");
            for g in &report.path {
                let bic = g.bic.map_or("failed".to_string(), |b| format!("{:.4}", b.total()));
                let _ = writeln!(
                    out,
                    "{:>12.6}  {bic:>14}  {:>6}  {:>6}",
                    g.lambda,
                    g.mean_active.len(),
                    g.assoc_active.len()
                );
            }
            out.push('\n');
        }
        ReportFormat::Csv => {
            let _ = writeln!(out, "lambda,bic,mean_nonzero,assoc_nonzero");
            for g in &report.path {
                let bic = g.bic.map_or(String::new(), |b| format!("{:.6}", b.total()));
                let _ = writeln!(
                    out,
                    "{},{bic},{},{}",
                    g.lambda,
                    g.mean_active.len(),
                    g.assoc_active.len()
                );
            }
        }
    }
    out.push_str(&fit_report(&ds, &report.chosen_fit, cfg.format));
    Ok(out)
}

fn metrics_table(metrics: &[SelectionMetrics], failures: usize, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            let _ = writeln!(
                out,
                "{:>6}  {:<7}  {:>8}  {:>15}  {:>15}",
                "n", "penalty", "lambda", "PS (sd)", "FD (sd)"
            );
            for m in metrics {
                let _ = writeln!(
                    out,
                    "{:>6}  {:<7}  {:>8.3}  {:>15}  {:>15}",
                    m.n_clusters,
                    m.penalty,
                    m.lambda_mean,
                    format!("{:.3} ({:.3})", m.ps_mean, m.ps_sd),
                    format!("{:.3} ({:.3})", m.fd_mean, m.fd_sd),
                );
            }
        }
        ReportFormat::Csv => {
            let _ = writeln!(
                out,
                "n,penalty,lambda_mean,lambda_sd,ps_mean,ps_sd,fd_mean,fd_sd,replicates_used"
            );
            for m in metrics {
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                    m.n_clusters,
                    m.penalty,
                    m.lambda_mean,
                    m.lambda_sd,
                    m.ps_mean,
                    m.ps_sd,
                    m.fd_mean,
                    m.fd_sd,
                    m.records.len()
                );
            }
        }
    }
    if failures > 0 {
        let _ = writeln!(out, "# failed replicates: {failures}");
    }
    out
}

fn run_replicate(cfg: &RunConfig) -> Result<String> {
    let report = replicate_study(&cfg.study()?)?;
    let mut out = cfg.header();
    let _ = writeln!(out, "# mean clipped mass per cluster={:.6}", report.mean_clipped_mass);
    out.push_str(&metrics_table(&report.metrics, report.failures.len(), cfg.format));
    Ok(out)
}

fn run_simulate(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let sim = simulate_dataset(&cfg.study()?, 0)?;
    let out = cfg.out.as_deref().expect("validated");
    let (units, pairs) = (with_suffix(out, "units.csv"), with_suffix(out, "pairs.csv"));
    let mut header = cfg.header();
    let _ = writeln!(header, "# mean clipped mass per cluster={:.6}", sim.mean_clipped_mass);
    write_dataset(&sim.dataset, &units, &pairs, &header)?;
    Ok((units, pairs))
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs one resolved command, writing to `--out` (atomically) or stdout.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let text = match cfg.command {
        CommandKind::Fit => run_fit(cfg)?,
        CommandKind::Tune => run_tune(cfg)?,
        CommandKind::Replicate => run_replicate(cfg)?,
        CommandKind::Simulate => {
            let (u, p) = run_simulate(cfg)?;
            log::info!("wrote {} and {}", u.display(), p.display());
            return Ok(());
        }
    };
    match &cfg.out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl Command {
    pub fn resolve(&self) -> Result<RunConfig> {
        match self {
            Command::Fit(f) => RunConfig::resolve(CommandKind::Fit, f),
            Command::Tune(f) => RunConfig::resolve(CommandKind::Tune, f),
            Command::Simulate(f) => RunConfig::resolve(CommandKind::Simulate, f),
            Command::Replicate(f) => RunConfig::resolve(CommandKind::Replicate, f),
        }
    }
}
