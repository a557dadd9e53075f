use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CliError, RunConfig};
use crate::partition::Balance;
use crate::runtime::{StrategyKind, YieldMode};
use crate::solvers::{SolverKind, SolverState};

/// A solver paired with a threading model, written `solver-strategy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub solver: SolverKind,
    pub strategy: StrategyKind,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.solver, self.strategy)
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (solver, strategy) = s
            .split_once('-')
            .ok_or_else(|| format!("variant '{s}' must look like solver-strategy, e.g. enclave-backfill"))?;
        Ok(Self {
            solver: solver.parse()?,
            strategy: strategy.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMatrix {
    pub threads: Vec<usize>,
    pub variants: Vec<Variant>,
    pub balances: Vec<Balance>,
}

impl Default for SweepMatrix {
    /// 4 thread counts x 4 variants x 2 balance modes.
    fn default() -> Self {
        let v = |solver, strategy| Variant { solver, strategy };
        Self {
            threads: vec![1, 2, 4, 8],
            variants: vec![
                v(SolverKind::Bsp, StrategyKind::Native),
                v(SolverKind::Enclave, StrategyKind::Native),
                v(SolverKind::Enclave, StrategyKind::HoldBack),
                v(SolverKind::Enclave, StrategyKind::Backfill),
            ],
            balances: vec![Balance::Well, Balance::Ill],
        }
    }
}

impl SweepMatrix {
    pub fn len(&self) -> usize {
        self.threads.len() * self.variants.len() * self.balances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell configs derived from `base`, with event tracing switched off.
    pub fn configs(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &balance in &self.balances {
            for variant in &self.variants {
                for &threads in &self.threads {
                    out.push(RunConfig {
                        solver: variant.solver,
                        strategy: variant.strategy,
                        threads,
                        balance,
                        trace_enabled: false,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
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
    pub partitions: Option<usize>,
    /// Seconds per time step and patch; empty for failed cells.
    pub time_per_step_per_patch: Option<f64>,
    pub checksum: String,
    pub config_hash: String,
    /// `ok` or `error: <message>`.
    pub status: String,
}

impl SweepRow {
    fn new(c: &RunConfig) -> Self {
        Self {
            solver: c.solver,
            strategy: c.strategy,
            threads: c.threads,
            grid_exp: c.grid_exp,
            patch_size: c.patch_size,
            balance: c.balance,
            steps: c.steps,
            cfl: c.cfl,
            gamma: c.gamma,
            ready_cap: c.ready_cap,
            merge_fraction: c.merge_fraction,
            max_merge_batches: c.max_merge_batches,
            yield_mode: c.yield_mode,
            partitions: c.partitions,
            time_per_step_per_patch: None,
            checksum: String::new(),
            config_hash: c.config_hash(),
            status: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    /// Rows run by this invocation.
    pub rows: Vec<SweepRow>,
    /// Cells skipped because their config hash was already in the file.
    pub skipped: usize,
    pub failures: usize,
    /// Distinct checksums over every successful row in the file.
    pub checksums: BTreeSet<String>,
}

impl SweepReport {
    pub fn checksums_agree(&self) -> bool {
        self.checksums.len() <= 1
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Runs every cell of `matrix` not already present in `results`, appending
/// one row per cell. Failed cells are recorded and the sweep continues.
pub fn cmd_sweep(
    base: &RunConfig,
    matrix: &SweepMatrix,
    results: &Path,
    out: &mut dyn Write,
) -> Result<SweepReport, CliError> {
    base.validate()?;
    let done: HashSet<String> = read_rows(results)?.into_iter().map(|r| r.config_hash).collect();
    let fresh = std::fs::metadata(results).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(results)
        .map_err(|e| CliError::io(results, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);

    let mut report = SweepReport::default();
    for cfg in matrix.configs(base) {
        let mut row = SweepRow::new(&cfg);
        if done.contains(&row.config_hash) {
            report.skipped += 1;
            continue;
        }
        let outcome = cfg
            .validate()
            .and_then(|_| Ok(SolverState::new(cfg.solver_config())?.run_simulation(cfg.steps)?));
        match outcome {
            Ok(res) => {
                row.time_per_step_per_patch = Some(res.summary.time_per_step_per_patch_ns * 1e-9);
                row.checksum = res.checksum;
                row.status = "ok".into();
            }
            Err(e) => {
                report.failures += 1;
                row.status = format!("error: {e}");
            }
        }
        let _ = writeln!(
            out,
            "{:<8} {:<19} {:<5} threads={:<3} {}",
            cfg.solver.name(),
            cfg.strategy.name(),
            cfg.balance.name(),
            cfg.threads,
            match row.time_per_step_per_patch {
                Some(t) => format!("{:.3} us/step/patch", t * 1e6),
                None => row.status.clone(),
            }
        );
        w.serialize(&row)?;
        w.flush().map_err(|e| CliError::io(results, e))?;
        report.rows.push(row);
    }
    drop(w);
    report.checksums = read_rows(results)?
        .into_iter()
        .filter(SweepRow::is_ok)
        .map(|r| r.checksum)
        .collect();
    let _ = writeln!(
        out,
        "{} run, {} skipped, {} failed; {}",
        report.rows.len(),
        report.skipped,
        report.failures,
        if report.checksums_agree() {
            "all checksums agree".to_string()
        } else {
            format!("{} distinct checksums", report.checksums.len())
        }
    );
    Ok(report)
}
