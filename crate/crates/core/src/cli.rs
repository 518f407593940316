//! Batch front end: parse density and job configs, run the envelope /
//! membrane / certificate computations, and emit deterministic CSV or
//! JSON artifacts.
//!
//! Exit codes: 0 success, 2 "computation succeeded, mathematical check
//! failed", 1 runtime error, 64 malformed usage.

use crate::density::{
    check_ampleness, check_coercivity, check_condition_d, check_condition_p, check_strong_dc,
    make_density, ConditionReport, Density, DensitySpec,
};
use crate::envelope::{envelope_table, rank_one_envelope, EnvelopeTable, GridSpec, OptCfg};
use crate::error::{EnvKitError, Result};
use crate::laminate::{growth_certificate, GrowthCertificate};
use crate::matrix::Mat;
use crate::membrane::{
    qw0_bracket, recovery_convergence, reduce_density, BracketCfg, SolverCfg, ThinFilmSpec,
};
use crate::sampling::SampleSpec;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "envkit", version, about = "Relaxation envelopes and growth certificates for extended-real energy densities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// RNG seed for sampling-based checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Artifact format.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rank-one envelope iterates on every node of a grid.
    Envelope {
        /// Density spec (JSON).
        #[arg(long)]
        density: PathBuf,
        /// Grid spec (JSON).
        #[arg(long)]
        grid: PathBuf,
        /// Iteration cap for the Kohn-Strang recursion.
        #[arg(long, default_value_t = 8)]
        iters: usize,
    },
    /// Reduce a 3x3 density and bracket Q W_0 at one matrix.
    Membrane {
        #[arg(long)]
        density: PathBuf,
        /// 3x2 matrix literal, rows ";"-separated, entries ","-separated.
        #[arg(long)]
        matrix: String,
        #[arg(long, default_value_t = 1)]
        iters: usize,
    },
    /// Singular-value growth certificate at one matrix.
    Laminate {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        matrix: String,
        /// Singular-value floor (>= 1).
        #[arg(long)]
        alpha: f64,
        /// Growth coefficient of the feasible region.
        #[arg(long)]
        beta: f64,
    },
    /// Sampling-based condition checks over the density catalog.
    Verify {
        /// Which checks to run (currently: all).
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Membrane density value at one 3x2 matrix.
    Reduce {
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        matrix: String,
    },
    /// Thin-film recovery-sequence convergence report.
    Film {
        #[arg(long)]
        density: PathBuf,
        /// ThinFilmSpec (JSON).
        #[arg(long)]
        grid: PathBuf,
    },
}

/// Envelope of every JSON artifact: payload plus reproducibility stamp.
#[derive(Serialize)]
struct Artifact<T: Serialize> {
    tool_version: &'static str,
    config_digest: String,
    seed: u64,
    data: T,
}

fn config_digest(cli: &Cli) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("{:?}|seed={}|format={:?}", cli.command, cli.seed, cli.format));
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_density(path: &Path) -> Result<Density> {
    let text = std::fs::read_to_string(path)?;
    let spec: DensitySpec = serde_json::from_str(&text)?;
    make_density(&spec)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(cli: &Cli, json: String) -> Result<()> {
    match &cli.out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn emit_json<T: Serialize>(cli: &Cli, data: &T) -> Result<()> {
    let artifact = Artifact {
        tool_version: crate::TOOL_VERSION,
        config_digest: config_digest(cli),
        seed: cli.seed,
        data,
    };
    let mut json = serde_json::to_string_pretty(&artifact)?;
    json.push('\n');
    emit(cli, json)
}

fn csv_escape(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn table_csv(table: &EnvelopeTable) -> Result<String> {
    let nodes = table.grid.nodes()?;
    let iters = table.values.first().map_or(0, Vec::len);
    let mut out = String::new();
    for i in 0..table.grid.m {
        for j in 0..table.grid.n {
            out.push_str(&format!("f{}{},", i + 1, j + 1));
        }
    }
    for k in 0..iters {
        out.push_str(&format!("R{k},"));
    }
    out.push_str("converged\n");
    for (row, node) in nodes.iter().enumerate() {
        for &e in node.entries() {
            out.push_str(&csv_escape(e));
            out.push(',');
        }
        for v in &table.values[row] {
            out.push_str(&csv_escape(v.value()));
            out.push(',');
        }
        out.push_str(if table.converged[row] { "true" } else { "false" });
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct VerifySummary {
    passed: bool,
    reports: Vec<(String, ConditionReport)>,
}

fn run_verify(seed: u64) -> Result<VerifySummary> {
    let budget = |spec: SampleSpec| spec.with_budget(300, 40).with_seed(seed);
    let mut reports: Vec<(String, ConditionReport)> = Vec::new();

    for name in ["quadratic", "kohn_strang", "det_barrier", "weak_det_barrier"] {
        let w = make_density(&DensitySpec::simple(name, 2, 2, 2.0))?;
        let sampler = budget(SampleSpec::defaults(2, 2));
        reports.push((format!("coercive/{name}"), check_coercivity(&w, &sampler)?));
    }
    // condition (D) is two-sided; the one-sided det_barrier is checked
    // through the strong-DC condition below instead
    for name in ["weak_det_barrier"] {
        let w = make_density(&DensitySpec::simple(name, 2, 2, 2.0))?;
        let (alpha, beta) = match (w.constants.alpha, w.constants.beta) {
            (Some(a), Some(b)) => (a, b),
            _ => (1.0, 2.0),
        };
        let sampler = budget(SampleSpec::defaults(2, 2));
        reports.push((format!("D/{name}"), check_condition_d(&w, alpha, beta, &sampler)?));
    }
    {
        let w = make_density(&DensitySpec::simple("cross_barrier", 3, 2, 2.0))?;
        let sampler = budget(SampleSpec::defaults(3, 2));
        reports.push(("P/cross_barrier".into(), check_condition_p(&w, 1.0, 2.0, &sampler)?));
    }
    {
        let w = make_density(&DensitySpec::simple("det_barrier", 2, 2, 2.0))?;
        let sampler = budget(SampleSpec::defaults(2, 2));
        reports.push(("D1/det_barrier".into(), check_strong_dc(&w, &sampler)?));
    }
    {
        let w = make_density(&DensitySpec::simple("kohn_strang", 2, 2, 2.0))?;
        let sampler = SampleSpec::defaults(2, 2).with_budget(30, 10).with_seed(seed);
        let cfg = OptCfg::fast();
        let est = |f: &Mat| Ok(rank_one_envelope(&w, f, 1, &cfg)?.value);
        reports.push(("ample/kohn_strang".into(), check_ampleness(&w, est, &sampler)?));
    }
    let passed = reports.iter().all(|(_, r)| r.passed());
    Ok(VerifySummary { passed, reports })
}

fn convergence_csv(report: &crate::membrane::ConvergenceReport) -> String {
    let mut out = String::from("eps,energy,target,error,ratio\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.eps,
            csv_escape(row.energy.value()),
            row.target,
            csv_escape(row.error),
            row.ratio.map_or(String::new(), |r| csv_escape(r)),
        ));
    }
    out
}

fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Envelope { density, grid, iters } => {
            let w = load_density(density)?;
            let grid: GridSpec = load_json(grid)?;
            let cfg = OptCfg { seed: cli.seed, ..OptCfg::default() };
            let table = envelope_table(&w, &grid, *iters, &cfg)?;
            match cli.format {
                Format::Csv => emit(cli, table_csv(&table)?)?,
                Format::Json => emit_json(cli, &table)?,
            }
            Ok(EXIT_OK)
        }
        Command::Membrane { density, matrix, iters } => {
            let w = load_density(density)?;
            let xi = Mat::parse_literal(matrix)?;
            let w0 = reduce_density(&w, &SolverCfg::default())?;
            let cfg = BracketCfg { iters: *iters, ..BracketCfg::default() };
            let bracket = qw0_bracket(&w0, &xi, &cfg)?;
            emit_json(cli, &bracket)?;
            Ok(EXIT_OK)
        }
        Command::Laminate { density, matrix, alpha, beta } => {
            let w = load_density(density)?;
            let f = Mat::parse_literal(matrix)?;
            match growth_certificate(&w, &f, *alpha, *beta) {
                Ok(cert) => {
                    emit_json::<GrowthCertificate>(cli, &cert)?;
                    Ok(EXIT_OK)
                }
                Err(EnvKitError::Certificate(msg)) => {
                    emit_json(cli, &serde_json::json!({ "certificate_failed": msg }))?;
                    Ok(EXIT_CHECK_FAILED)
                }
                Err(e) => Err(e),
            }
        }
        Command::Verify { suite } => {
            if suite != "all" {
                return Err(EnvKitError::Config(format!("unknown suite '{suite}'")));
            }
            let summary = run_verify(cli.seed)?;
            let code = if summary.passed { EXIT_OK } else { EXIT_CHECK_FAILED };
            emit_json(cli, &summary)?;
            Ok(code)
        }
        Command::Reduce { density, matrix } => {
            let w = load_density(density)?;
            let xi = Mat::parse_literal(matrix)?;
            let w0 = reduce_density(&w, &SolverCfg::default())?;
            let value = w0.eval(&xi);
            emit_json(cli, &serde_json::json!({ "xi": xi, "value": value }))?;
            Ok(EXIT_OK)
        }
        Command::Film { density, grid } => {
            let w = load_density(density)?;
            let spec: ThinFilmSpec = load_json(grid)?;
            let report = recovery_convergence(&w, &spec)?;
            let code = if report.passed { EXIT_OK } else { EXIT_CHECK_FAILED };
            match cli.format {
                Format::Csv => emit(cli, convergence_csv(&report))?,
                Format::Json => emit_json(cli, &report)?,
            }
            Ok(code)
        }
    }
}

// minimal stderr logger gated by ENVKIT_LOG in {quiet, info, debug}
struct StderrLogger {
    level: log::LevelFilter,
}

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }
    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("[{}] {}", record.level(), record.args());
        }
    }
    fn flush(&self) {}
}

fn init_logging() {
    let level = match std::env::var("ENVKIT_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Off,
    };
    let logger = Box::new(StderrLogger { level });
    if log::set_boxed_logger(logger).is_ok() {
        log::set_max_level(level);
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits; anything else
            // is a usage error
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            let report = serde_json::json!({
                "error": e.to_string(),
                "tool_version": crate::TOOL_VERSION,
            });
            eprintln!("{report}");
            EXIT_ERROR
        }
    }
}
