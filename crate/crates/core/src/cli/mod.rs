//! Command-line configuration and the `run`, `sweep` and `verify` commands.

mod run;
mod sweep;
pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use run::{cmd_run, RunReport};
pub use sweep::{cmd_sweep, SweepMatrix, SweepReport, SweepRow, Variant};
pub use verify::{cmd_verify, VerifyOptions, VerifyReport};

use crate::fv::MeshConfig;
use crate::partition::Balance;
use crate::runtime::{
    RuntimeConfig, Strategy, StrategyKind, YieldMode, DEFAULT_MAX_MERGE_BATCHES, DEFAULT_MERGE_FRACTION,
    DEFAULT_READY_CAP, DEFAULT_WATCHDOG_POLLS,
};
use crate::solvers::{SolverConfig, SolverError, SolverKind};
use crate::trace::TraceError;

pub const THREADS_ENV: &str = "TASKBENCH_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0} verification check(s) failed")]
    Verify(usize),
}

impl CliError {
    /// Process exit status: 2 usage, 3 starvation, 4 kernel error, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Usage(_) | CliError::Invalid(_) => 2,
            CliError::Solver(e) if e.is_starvation() => 3,
            CliError::Solver(SolverError::Fv(_)) => 4,
            _ => 1,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Everything needed to reproduce a run. Serialized into every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub solver: SolverKind,
    pub strategy: StrategyKind,
    pub threads: usize,
    pub grid_exp: u32,
    pub patch_size: usize,
    pub balance: Balance,
    pub steps: u64,
    pub cfl: f64,
    pub gamma: f64,
    pub ready_cap: usize,
    pub merge_fraction: f64,
    pub max_merge_batches: usize,
    pub yield_mode: YieldMode,
    /// `None` picks one partition per thread (two or more when ill-balanced).
    pub partitions: Option<usize>,
    pub watchdog_polls: u64,
    /// Sampler period in microseconds; 0 disables the sampler.
    pub sample_period_us: u64,
    pub trace_enabled: bool,
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    pub layout_path: Option<PathBuf>,
    /// Per-step metrics CSV.
    pub step_csv_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mesh = MeshConfig::default();
        Self {
            solver: SolverKind::Enclave,
            strategy: StrategyKind::Native,
            threads: default_threads(),
            grid_exp: mesh.grid_exp,
            patch_size: mesh.patch_size,
            balance: Balance::Well,
            steps: 5,
            cfl: mesh.cfl,
            gamma: mesh.gamma,
            ready_cap: DEFAULT_READY_CAP,
            merge_fraction: DEFAULT_MERGE_FRACTION,
            max_merge_batches: DEFAULT_MAX_MERGE_BATCHES,
            yield_mode: YieldMode::Fair,
            partitions: None,
            watchdog_polls: DEFAULT_WATCHDOG_POLLS,
            sample_period_us: 100,
            trace_enabled: true,
            trace_path: PathBuf::from("trace.csv"),
            summary_path: PathBuf::from("summary.json"),
            layout_path: None,
            step_csv_path: None,
        }
    }
}

impl RunConfig {
    pub fn mesh(&self) -> MeshConfig {
        MeshConfig {
            grid_exp: self.grid_exp,
            patch_size: self.patch_size,
            gamma: self.gamma,
            cfl: self.cfl,
            ..MeshConfig::default()
        }
    }

    pub fn strategy(&self) -> Strategy {
        Strategy::new(self.strategy)
            .with_ready_cap(self.ready_cap)
            .with_yield_mode(self.yield_mode)
            .with_merge_fraction(self.merge_fraction)
            .with_max_merge_batches(self.max_merge_batches)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let runtime = RuntimeConfig::new(self.threads, self.strategy())
            .with_trace(self.trace_enabled)
            .with_watchdog_polls(self.watchdog_polls);
        let mut cfg = SolverConfig::new(self.solver, self.mesh(), runtime).with_balance(self.balance);
        cfg.partitions = self.partitions;
        if self.sample_period_us > 0 && self.trace_enabled {
            cfg = cfg.with_sample_period(std::time::Duration::from_micros(self.sample_period_us));
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.partitions == Some(0) {
            return bad("partitions must be at least 1".into());
        }
        if self.watchdog_polls == 0 {
            return bad("watchdog polls must be at least 1".into());
        }
        self.mesh().validate().map_err(|e| CliError::Invalid(e.to_string()))?;
        self.strategy().validate().map_err(CliError::Invalid)?;
        Ok(())
    }

    /// Short hash over the fields that determine a result, ignoring paths.
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!([
            self.solver,
            self.strategy,
            self.threads,
            self.grid_exp,
            self.patch_size,
            self.balance,
            self.steps,
            self.cfl,
            self.gamma,
            self.ready_cap,
            self.merge_fraction,
            self.max_merge_batches,
            self.yield_mode,
            self.partitions,
        ]);
        let digest = Sha256::digest(key.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Reads either a plain config or an output document with a `config` field.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let json = |source| CliError::Json {
            path: path.to_path_buf(),
            source,
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(json)?;
        let value = match value.get("config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        serde_json::from_value(value).map_err(json)
    }
}

/// Run flags shared by `run` and `sweep`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Start from a JSON config (or a summary.json written by `run`).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = PossibleValuesParser::new(SolverKind::NAMES))]
    pub solver: Option<String>,
    #[arg(long, value_parser = PossibleValuesParser::new(StrategyKind::NAMES))]
    pub threading_model: Option<String>,
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// M = 3^k patches per axis.
    #[arg(long, value_name = "K")]
    pub grid_exp: Option<u32>,
    /// Finite volumes per patch axis.
    #[arg(long, value_name = "N")]
    pub patch_size: Option<usize>,
    #[arg(long, value_parser = PossibleValuesParser::new(Balance::NAMES))]
    pub balance: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub ready_cap: Option<usize>,
    #[arg(long)]
    pub merge_fraction: Option<f64>,
    #[arg(long)]
    pub max_merge_batches: Option<usize>,
    #[arg(long, value_parser = PossibleValuesParser::new(YieldMode::NAMES))]
    pub yield_mode: Option<String>,
    /// Override the number of partitions.
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long)]
    pub watchdog_polls: Option<u64>,
    #[arg(long, value_name = "US")]
    pub sample_period_us: Option<u64>,
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Do not record events (no trace.csv is written).
    #[arg(long)]
    pub no_trace: bool,
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
    /// Write the partition layout CSV here.
    #[arg(long, value_name = "PATH")]
    pub layout: Option<PathBuf>,
    /// Write per-step metrics CSV here.
    #[arg(long, value_name = "PATH")]
    pub step_csv: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &self.solver {
            c.solver = s.parse().map_err(CliError::Invalid)?;
        }
        if let Some(s) = &self.threading_model {
            c.strategy = s.parse().map_err(CliError::Invalid)?;
        }
        if let Some(s) = &self.balance {
            c.balance = s.parse().map_err(CliError::Invalid)?;
        }
        if let Some(s) = &self.yield_mode {
            c.yield_mode = s.parse().map_err(CliError::Invalid)?;
        }
        macro_rules! overlay {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        overlay!(
            threads,
            grid_exp,
            patch_size,
            steps,
            cfl,
            gamma,
            ready_cap,
            merge_fraction,
            max_merge_batches,
            watchdog_polls,
            sample_period_us
        );
        if self.partitions.is_some() {
            c.partitions = self.partitions;
        }
        if let Some(p) = &self.trace {
            c.trace_path = p.clone();
        }
        if self.no_trace {
            c.trace_enabled = false;
        }
        if let Some(p) = &self.summary {
            c.summary_path = p.clone();
        }
        if self.layout.is_some() {
            c.layout_path = self.layout.clone();
        }
        if self.step_csv.is_some() {
            c.step_csv_path = self.step_csv.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Parser)]
#[command(name = "taskbench", version, about = "Enclave tasking benchmark on a patch-based Euler solver")]
struct FlagsOnly {
    #[command(flatten)]
    run: RunArgs,
}

/// Parses run flags (without the program name) into a validated config.
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("taskbench")).chain(args.into_iter().map(Into::into));
    FlagsOnly::try_parse_from(argv)?.run.resolve()
}

#[derive(Debug, Parser)]
#[command(name = "taskbench", version, about = "Enclave tasking benchmark on a patch-based Euler solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write summary.json and trace.csv.
    Run(RunArgs),
    /// Run a threads x variant x balance matrix into a results CSV.
    Sweep(SweepArgs),
    /// Run the correctness suite and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    pub thread_counts: Vec<usize>,
    /// `solver-strategy` pairs, e.g. bsp-native,enclave-backfill.
    #[arg(long, value_delimiter = ',', default_values = ["bsp-native", "enclave-native", "enclave-hold-back", "enclave-backfill"])]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values = ["well", "ill"])]
    pub balances: Vec<String>,
    #[arg(long, value_name = "PATH", default_value = "results.csv")]
    pub results: PathBuf,
}

impl SweepArgs {
    pub fn matrix(&self) -> Result<SweepMatrix, CliError> {
        Ok(SweepMatrix {
            threads: self.thread_counts.clone(),
            variants: self
                .variants
                .iter()
                .map(|v| v.parse())
                .collect::<Result<_, _>>()
                .map_err(CliError::Invalid)?,
            balances: self
                .balances
                .iter()
                .map(|b| b.parse())
                .collect::<Result<_, _>>()
                .map_err(CliError::Invalid)?,
        })
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Corrupt one face-buffer generation before the oracle check.
    #[arg(long)]
    pub inject_stale_halo: bool,
    /// Worker threads for the solver checks.
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout();
    let result = match cli.command {
        Command::Run(args) => args.resolve().and_then(|c| cmd_run(&c, &mut stdout).map(|_| ())),
        Command::Sweep(args) => args
            .run
            .resolve()
            .and_then(|c| Ok((c, args.matrix()?)))
            .and_then(|(c, m)| cmd_sweep(&c, &m, &args.results, &mut stdout).map(|_| ())),
        Command::Verify(args) => {
            let opts = VerifyOptions {
                inject_stale_halo: args.inject_stale_halo,
                threads: args.threads.unwrap_or_else(|| default_threads().min(8)),
            };
            cmd_verify(&opts, &mut stdout).and_then(|r| match r.failures() {
                0 => Ok(()),
                n => Err(CliError::Verify(n)),
            })
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
