//! A small thread-count sweep written to a results CSV that later runs
//! extend instead of repeating.
//!
//! `cargo run --release --example scaling_sweep -- results.csv`

use std::path::PathBuf;

use taskbench::cli::{cmd_sweep, RunConfig, SweepMatrix};
use taskbench::partition::Balance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let results = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("taskbench_scaling.csv"));
    let base = RunConfig {
        grid_exp: 3,
        patch_size: 6,
        steps: 3,
        ..RunConfig::default()
    };
    let matrix = SweepMatrix {
        threads: vec![1, 2, 4],
        balances: vec![Balance::Ill],
        ..SweepMatrix::default()
    };
    let report = cmd_sweep(&base, &matrix, &results, &mut std::io::stdout())?;
    println!("results in {} ({} rows added)", results.display(), report.rows.len());
    Ok(())
}
