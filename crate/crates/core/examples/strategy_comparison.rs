//! Runs the same ill-balanced problem under every threading model and
//! compares step times, traversal phases and checksums.
//!
//! `cargo run --release --example strategy_comparison -- 4` sets the thread count.

use taskbench::fv::MeshConfig;
use taskbench::partition::Balance;
use taskbench::runtime::{RuntimeConfig, Strategy, StrategyKind};
use taskbench::solvers::{run_simulation, SolverConfig, SolverKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let threads: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    let mesh = MeshConfig::new(3, 8);
    let steps = 5;
    println!(
        "{:<8} {:<19} {:>12} {:>12} {:>12} {:>9}  checksum",
        "solver", "strategy", "us/patch", "primary ms", "secondary ms", "fused"
    );
    let mut runs = vec![(SolverKind::Bsp, StrategyKind::Native)];
    runs.extend(StrategyKind::ALL.map(|k| (SolverKind::Enclave, k)));
    for (solver, kind) in runs {
        let config = SolverConfig::new(solver, mesh, RuntimeConfig::new(threads, Strategy::new(kind)))
            .with_balance(Balance::Ill);
        let r = run_simulation(config, steps)?;
        println!(
            "{:<8} {:<19} {:>12.3} {:>12.3} {:>12.3} {:>9}  {}",
            solver.name(),
            kind.name(),
            r.summary.time_per_step_per_patch_ns * 1e-3,
            r.summary.median_primary_ns() as f64 * 1e-6,
            r.summary.median_secondary_ns() as f64 * 1e-6,
            r.runtime.fused_batches,
            &r.checksum[..16]
        );
    }
    Ok(())
}
