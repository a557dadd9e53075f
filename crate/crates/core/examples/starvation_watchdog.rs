//! Strict same-group yielding leaves nobody to run enclave tasks once every
//! worker is blocked on an outcome. The watchdog turns that into an error;
//! fair yielding finishes the same configuration.

use std::time::Instant;

use taskbench::fv::MeshConfig;
use taskbench::runtime::{RuntimeConfig, Strategy, StrategyKind, YieldMode};
use taskbench::solvers::{run_simulation, SolverConfig, SolverKind};

fn main() {
    let threads = 4;
    for mode in [YieldMode::StrictGroup, YieldMode::Fair] {
        let strategy = Strategy::new(StrategyKind::Native).with_yield_mode(mode);
        let config = SolverConfig::new(SolverKind::Enclave, MeshConfig::new(3, 8), RuntimeConfig::new(threads, strategy))
            .with_partitions(2 * threads);
        let t0 = Instant::now();
        match run_simulation(config, 2) {
            Ok(r) => println!("{:<12} finished {} steps in {:.2?}", mode.name(), r.steps, t0.elapsed()),
            Err(e) => println!("{:<12} aborted after {:.2?}: {e}", mode.name(), t0.elapsed()),
        }
    }
}
