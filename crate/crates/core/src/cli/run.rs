use std::fs::{self, File};
use std::io::{BufWriter, Write};

use serde::Serialize;

use super::{CliError, RunConfig};
use crate::solvers::{SimulationResult, SolverState, UpdateCounts};
use crate::runtime::RuntimeStats;
use crate::trace::{self, Summary};

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub checksum: String,
    /// Seconds of wall time per time step and patch.
    pub time_per_step_per_patch: f64,
    pub steps: u64,
    pub patches: usize,
    pub partition_sizes: Vec<usize>,
    pub skeleton_patches: usize,
    pub enclave_patches: usize,
    pub counts: UpdateCounts,
    pub runtime: RuntimeStats,
    pub max_relative_drift: f64,
    pub final_dt: f64,
    pub summary: Summary,
}

impl RunReport {
    fn new(config: &RunConfig, state: &SolverState, result: &SimulationResult) -> Self {
        let d = state.decomposition();
        Self {
            config: config.clone(),
            checksum: result.checksum.clone(),
            time_per_step_per_patch: result.summary.time_per_step_per_patch_ns * 1e-9,
            steps: result.steps,
            patches: state.mesh().patch_count(),
            partition_sizes: d.sizes(),
            skeleton_patches: d.skeleton_count(),
            enclave_patches: d.enclave_count(),
            counts: result.counts,
            runtime: result.runtime,
            max_relative_drift: result.max_relative_drift(),
            final_dt: result.final_dt,
            summary: result.summary.clone(),
        }
    }
}

/// Runs one simulation and writes the summary, trace and optional layout.
pub fn cmd_run(config: &RunConfig, out: &mut dyn Write) -> Result<RunReport, CliError> {
    config.validate()?;
    let mut state = SolverState::new(config.solver_config())?;
    if let Some(path) = &config.layout_path {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        state
            .decomposition()
            .write_csv(BufWriter::new(file))
            .map_err(|e| CliError::io(path, e))?;
    }
    let result = state.run_simulation(config.steps)?;
    if config.trace_enabled {
        trace::write_events_csv(&config.trace_path, &result.events)?;
    }
    if let Some(path) = &config.step_csv_path {
        trace::write_summary_csv(path, &result.summary)?;
    }
    let report = RunReport::new(config, &state, &result);
    let json = serde_json::to_string_pretty(&report).map_err(|source| CliError::Json {
        path: config.summary_path.clone(),
        source,
    })?;
    fs::write(&config.summary_path, json).map_err(|e| CliError::io(&config.summary_path, e))?;
    let _ = writeln!(
        out,
        "{} {} threads={} balance={} steps={}: {:.3} us per step and patch, checksum {}",
        config.solver,
        config.strategy,
        config.threads,
        config.balance.name(),
        config.steps,
        report.time_per_step_per_patch * 1e6,
        &report.checksum[..16],
    );
    Ok(report)
}
