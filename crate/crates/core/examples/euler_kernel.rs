//! One patch update by hand, then a whole mesh checked against the
//! single-array reference stepper.

use taskbench::fv::{
    admissible_dt, patch_lambda, rusanov_flux, update_patch, Axis, ConservedState, GridPos, Mesh, MeshConfig, Patch,
};
use taskbench::oracle::{first_difference, reference_field};
use taskbench::runtime::{RuntimeConfig, Strategy, StrategyKind};
use taskbench::solvers::{SolverConfig, SolverKind, SolverState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gamma = 1.4;
    let rest = ConservedState::at_rest(1.0, 1.0, gamma);
    let dense = ConservedState::at_rest(1.5, 1.0, gamma);
    let f = rusanov_flux(&dense, &rest, Axis::X, gamma)?;
    println!("flux across a density jump: {f:?}");

    // A 4x4 patch with a denser left halo column.
    let n = 4;
    let mut patch = Patch::uniform(n, GridPos::new(0, 0), 1, rest);
    patch.set_halo([vec![dense; n], vec![rest; n], vec![rest; n], vec![rest; n]]);
    let h = 1.0 / n as f64;
    let dt = admissible_dt(patch_lambda(&patch, gamma)?, h, 0.4)?;
    let up = update_patch(&patch, dt, h, gamma)?;
    println!("dt = {dt:.5}, density after one step (bottom row):");
    for i in 0..n {
        print!(" {:.5}", up.interior[i].rho);
    }
    println!();

    let config = MeshConfig::new(1, 9);
    let mesh = Mesh::new(config)?;
    println!("\n{} patches of {n}x{n}, totals {:?}", mesh.patch_count(), mesh.totals(), n = config.patch_size);
    let rt = RuntimeConfig::new(2, Strategy::new(StrategyKind::Backfill));
    let mut solver = SolverState::with_mesh(SolverConfig::new(SolverKind::Enclave, config, rt), mesh)?;
    let steps = 3;
    for _ in 0..steps {
        solver.time_step()?;
    }
    let expected = reference_field(&config, steps);
    match first_difference(&solver.mesh().global_field(), &expected) {
        None => println!("{steps} steps match the reference bit for bit"),
        Some(i) => println!("volume {i} differs from the reference"),
    }
    Ok(())
}
