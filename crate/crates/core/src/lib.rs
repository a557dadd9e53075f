//! Enclave tasking on a patch-based finite volume solver.
//!
//! The crate couples a first-order Rusanov solver for the 2D compressible
//! Euler equations ([`fv`]) with a small task runtime ([`runtime`]) whose
//! scheduling of deferred "enclave" patch updates can be switched between
//! four strategies. [`partition`] cuts the patch grid along a Peano curve,
//! [`solvers`] drives BSP and enclave time steps, [`trace`] records what the
//! workers did, and [`cli`] wraps it all into `run`, `sweep` and `verify`
//! commands. [`oracle`] is an independent whole-grid stepper used to check
//! results bit for bit.
//!
//! ```
//! use taskbench::fv::MeshConfig;
//! use taskbench::runtime::{RuntimeConfig, Strategy, StrategyKind};
//! use taskbench::solvers::{run_simulation, SolverConfig, SolverKind};
//!
//! let runtime = RuntimeConfig::new(2, Strategy::new(StrategyKind::Backfill));
//! let config = SolverConfig::new(SolverKind::Enclave, MeshConfig::new(1, 6), runtime);
//! let result = run_simulation(config, 3).unwrap();
//! assert!(result.max_relative_drift() < 1e-12);
//! ```
//!
//! The `examples/` directory has one program per capability; start with
//! `euler_kernel` and `strategy_comparison`.

pub mod cli;
pub mod fv;
pub mod oracle;
pub mod partition;
pub mod runtime;
pub mod solvers;
pub mod trace;
