//! Traces a hold-back and a native run, writes the event logs and plots the
//! sampled pending-task count over time.
//!
//! The CSV files go to the directory given as the first argument, or the
//! system temp directory.

use std::path::PathBuf;
use std::time::Duration;

use taskbench::fv::MeshConfig;
use taskbench::partition::Balance;
use taskbench::runtime::{RuntimeConfig, Strategy, StrategyKind};
use taskbench::solvers::{run_simulation, SolverConfig, SolverKind};
use taskbench::trace::{write_events_csv, Counter, EventKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    for kind in [StrategyKind::HoldBack, StrategyKind::Native] {
        let rt = RuntimeConfig::new(4, Strategy::new(kind).with_ready_cap(100)).with_trace(true);
        let config = SolverConfig::new(SolverKind::Enclave, MeshConfig::new(3, 4), rt)
            .with_balance(Balance::Ill)
            .with_sample_period(Duration::from_micros(100));
        let r = run_simulation(config, 3)?;
        let path = dir.join(format!("pending_{}.csv", kind.name()));
        write_events_csv(&path, &r.events)?;

        let samples: Vec<(u64, u64)> = r
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Sample && e.id == Counter::Pending as u64)
            .map(|e| (e.t_ns, e.aux))
            .collect();
        let peak = samples.iter().map(|s| s.1).max().unwrap_or(0).max(1);
        println!("\n{} ({} events -> {}), peak pending {peak}", kind.name(), r.events.len(), path.display());
        let stride = (samples.len() / 24).max(1);
        for (t, v) in samples.iter().step_by(stride) {
            let bar = "#".repeat((v * 50 / peak) as usize);
            println!("{:>9.3} ms {v:>5} {bar}", *t as f64 * 1e-6);
        }
    }
    Ok(())
}
