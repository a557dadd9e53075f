//! Fusing same-type held-back tasks into one batched call.

use taskbench::runtime::{EnclaveTask, EnclaveWork, Runtime, Strategy, StrategyKind};

/// Sums `0..n`; a fused batch shares one pass over the largest range.
struct Sum(u64);

impl EnclaveWork for Sum {
    type Output = u64;

    fn execute(self) -> u64 {
        (0..self.0).sum()
    }

    fn execute_fused(batch: Vec<Self>) -> Vec<u64> {
        let top = batch.iter().map(|s| s.0).max().unwrap_or(0);
        let mut prefix = Vec::with_capacity(top as usize + 1);
        let mut acc = 0;
        prefix.push(0);
        for i in 0..top {
            acc += i;
            prefix.push(acc);
        }
        batch.iter().map(|s| prefix[s.0 as usize]).collect()
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let strategy = Strategy::new(StrategyKind::MergeAndBackfill)
        .with_merge_fraction(0.5)
        .with_max_merge_batches(3);
    let rt = Runtime::<Sum>::new(1, strategy)?;
    let d = rt.driver();
    let mut ids = Vec::new();
    for i in 0..40u64 {
        let id = d.next_task_id();
        // Two task types; only tasks of the same type are fused.
        d.spawn_enclave(EnclaveTask::new(id, (i % 2) as u32, Sum(1000 + i)))?;
        ids.push((id, 1000 + i));
    }
    while rt.pending_len() > 0 {
        let before = rt.pending_len();
        let ran = d.process_pending_tasks(None);
        let s = rt.stats();
        println!("{before:>3} pending -> ran {ran:>2}; fused batches so far {}", s.fused_batches);
    }
    for (id, n) in ids {
        assert_eq!(d.wait_for_outcome(id)?, (0..n).sum::<u64>());
    }
    let s = rt.stats();
    println!("{} tasks, {} of them in {} fused batches", s.executed, s.fused_tasks, s.fused_batches);
    Ok(())
}
