//! A section with a single slow traversal task on several workers. Idle
//! slots run held-back tasks while the traversal task is still busy.

use std::time::Duration;

use taskbench::cli::verify::run_backfill_case;
use taskbench::trace::EventKind;

fn main() -> Result<(), String> {
    for threads in [1, 2, 4] {
        let out = run_backfill_case(threads, 1, 50, Duration::from_millis(20), Duration::from_secs(10))?;
        let end = out
            .events
            .iter()
            .find(|e| e.kind == EventKind::SectionEnd)
            .map_or(0, |e| e.t_ns);
        let inside = out
            .events
            .iter()
            .filter(|e| e.kind == EventKind::TaskEnd && e.t_ns < end && e.worker < threads)
            .count();
        println!(
            "T={threads}: {} slots, {} backfilled, {} still pending, {inside} task ends inside the section, {:.2?}",
            out.stats.slots, out.stats.backfilled, out.left_pending, out.elapsed
        );
    }
    Ok(())
}
