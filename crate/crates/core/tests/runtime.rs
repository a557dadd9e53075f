use std::collections::HashSet;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use taskbench::cli::verify::run_backfill_case;
use taskbench::runtime::{
    BspSection, EnclaveTask, EnclaveWork, Runtime, RuntimeConfig, RuntimeError, Strategy, StrategyKind, WaitScope,
    YieldMode, YieldOutcome,
};
use taskbench::trace::EventKind;

/// Counts executions per task index.
struct Hit {
    hits: Arc<Vec<AtomicU32>>,
    idx: usize,
}

impl EnclaveWork for Hit {
    type Output = usize;

    fn execute(self) -> usize {
        self.hits[self.idx].fetch_add(1, Ordering::SeqCst);
        self.idx
    }
}

struct Unit;

impl EnclaveWork for Unit {
    type Output = ();
    fn execute(self) {}
}

fn counters(n: usize) -> Arc<Vec<AtomicU32>> {
    Arc::new((0..n).map(|_| AtomicU32::new(0)).collect())
}

fn spawn_units(rt: &Runtime<Unit>, n: usize, task_type: u32) -> Vec<u64> {
    let d = rt.driver();
    (0..n)
        .map(|_| {
            let id = d.next_task_id();
            d.spawn_enclave(EnclaveTask::new(id, task_type, Unit)).unwrap();
            id
        })
        .collect()
}

#[test]
fn every_task_runs_exactly_once() {
    for kind in StrategyKind::ALL {
        for threads in [1usize, 2, 4] {
            let partitions = 2 * threads + 1;
            let per = 40;
            let hits = counters(partitions * per);
            let rt = Runtime::<Hit>::new(threads, Strategy::new(kind).with_ready_cap(16)).unwrap();
            for round in 0..3 {
                hits.iter().for_each(|h| h.store(0, Ordering::SeqCst));
                let mut s = BspSection::new(round, WaitScope::Traversal);
                for p in 0..partitions {
                    let hits = Arc::clone(&hits);
                    s.push(move |ctx| {
                        let mut ids = Vec::new();
                        for i in 0..per {
                            let id = ctx.next_task_id();
                            let work = Hit {
                                hits: Arc::clone(&hits),
                                idx: p * per + i,
                            };
                            ctx.spawn_enclave(EnclaveTask::new(id, 0, work))?;
                            ids.push((id, p * per + i));
                        }
                        for (id, idx) in ids {
                            assert_eq!(ctx.wait_for_outcome(id)?, idx);
                        }
                        Ok(())
                    });
                }
                rt.run_bsp_section(s).unwrap();
                for (i, h) in hits.iter().enumerate() {
                    assert_eq!(h.load(Ordering::SeqCst), 1, "{kind} T={threads}: task {i}");
                }
            }
            let stats = rt.stats();
            assert_eq!(stats.spawned, stats.executed, "{kind} T={threads}");
            assert_eq!(stats.spawned, 3 * (partitions * per) as u64);
            assert!(rt.outcomes().is_empty());
        }
    }
}

#[test]
fn native_runs_inline_beyond_ready_cap() {
    // Strict idle workers leave ready tasks alone outside sections, so the
    // queue fills deterministically.
    let strategy = Strategy::new(StrategyKind::Native)
        .with_ready_cap(100)
        .with_yield_mode(YieldMode::StrictGroup);
    let rt = Runtime::<Unit>::new(2, strategy).unwrap();
    spawn_units(&rt, 100, 0);
    assert_eq!(rt.ready_enclaves(), 100);
    assert_eq!(rt.stats().inline_executed, 0);
    let extra = spawn_units(&rt, 1, 0)[0];
    assert!(rt.outcomes().contains(extra));
    assert_eq!(rt.ready_enclaves(), 100);
    assert_eq!(rt.stats().inline_executed, 1);
    // A drain-all taskwait clears the queue.
    rt.run_bsp_section(BspSection::new(0, WaitScope::All)).unwrap();
    assert_eq!(rt.ready_enclaves(), 0);
    assert_eq!(rt.outcomes().len(), 101);
}

#[test]
fn hold_back_parks_tasks() {
    let rt = Runtime::<Unit>::new(2, Strategy::new(StrategyKind::HoldBack)).unwrap();
    let ids = spawn_units(&rt, 10, 0);
    std::thread::sleep(Duration::from_millis(10));
    assert_eq!(rt.pending_len(), 10);
    assert_eq!(rt.ready_enclaves(), 0);
    assert!(rt.outcomes().is_empty());
    let d = rt.driver();
    assert_eq!(d.process_pending_tasks(Some(1)), 1);
    assert!(rt.outcomes().contains(ids[0]));
    assert_eq!(rt.pending_len(), 9);
}

#[test]
fn yield_once_modes() {
    let run = |mode: YieldMode| {
        let strategy = Strategy::new(StrategyKind::Native).with_yield_mode(mode);
        let rt = Runtime::<Unit>::new(1, strategy).unwrap();
        let (tx, rx) = std::sync::mpsc::channel();
        let mut s = BspSection::new(0, WaitScope::All);
        s.push(move |ctx| {
            let id = ctx.next_task_id();
            ctx.spawn_enclave(EnclaveTask::new(id, 0, Unit))?;
            tx.send(ctx.yield_once()).unwrap();
            Ok(())
        });
        rt.run_bsp_section(s).unwrap();
        rx.recv().unwrap()
    };
    assert_eq!(run(YieldMode::Fair), YieldOutcome::RanTask);
    assert_eq!(run(YieldMode::StrictGroup), YieldOutcome::Spun);

    let rt = Runtime::<Unit>::new(1, Strategy::new(StrategyKind::Native)).unwrap();
    assert_eq!(rt.driver().yield_once(), YieldOutcome::Spun);
}

#[test]
fn section_return_semantics() {
    let spawn_only = |kind| {
        let rt = Runtime::<Unit>::new(2, Strategy::new(kind)).unwrap();
        let mut s = BspSection::new(0, WaitScope::Traversal);
        for _ in 0..2 {
            s.push(|ctx| {
                for _ in 0..25 {
                    ctx.spawn_enclave(EnclaveTask::new(ctx.next_task_id(), 0, Unit))?;
                }
                Ok(())
            });
        }
        rt.run_bsp_section(s).unwrap();
        (rt.ready_enclaves(), rt.pending_len(), rt.outcomes().len())
    };
    // Native drains the ready queue at the taskwait.
    assert_eq!(spawn_only(StrategyKind::Native), (0, 0, 50));
    // Hold-back leaves everything parked for the next section.
    assert_eq!(spawn_only(StrategyKind::HoldBack), (0, 50, 0));
}

#[test]
fn backfill_slot_counts() {
    for threads in [1usize, 2, 3] {
        for bsp in [0usize, 1, threads, 2 * threads + 1] {
            let out = run_backfill_case(threads, bsp, 30, Duration::from_millis(1), Duration::from_secs(10)).unwrap();
            let slots = bsp.max(threads);
            assert_eq!(out.stats.slots, slots);
            assert_eq!(out.stats.busy_decrements, slots);
            assert!(out.left_pending <= 30);
        }
    }
}

#[test]
fn merge_pops_half_of_what_is_pending() {
    let strategy = Strategy::new(StrategyKind::MergeAndBackfill).with_merge_fraction(0.5);
    let rt = Runtime::<Unit>::new(1, strategy).unwrap();
    spawn_units(&rt, 10, 0);
    let d = rt.driver();
    let mut popped = Vec::new();
    while rt.pending_len() > 0 {
        popped.push(d.process_pending_tasks(None));
    }
    assert_eq!(popped, [5, 3, 1, 1]);
    let stats = rt.stats();
    assert_eq!(stats.executed, 10);
    // The last two pops were singletons and stay unfused.
    assert_eq!(stats.fused_batches, 2);
    assert_eq!(stats.fused_tasks, 8);
}

#[test]
fn merge_groups_by_type_under_a_cap() {
    let strategy = Strategy::new(StrategyKind::MergeAndBackfill)
        .with_merge_fraction(1.0)
        .with_max_merge_batches(1);
    let rt = Runtime::<Unit>::new(1, strategy).unwrap();
    spawn_units(&rt, 3, 7);
    spawn_units(&rt, 1, 8);
    spawn_units(&rt, 2, 9);
    assert_eq!(rt.driver().process_pending_tasks(None), 6);
    let stats = rt.stats();
    assert_eq!(stats.executed, 6);
    assert_eq!((stats.fused_batches, stats.fused_tasks), (1, 3));
}

#[test]
fn strict_group_starves_and_pool_recovers() {
    let threads = 2;
    let strategy = Strategy::new(StrategyKind::Native).with_yield_mode(YieldMode::StrictGroup);
    let config = RuntimeConfig::new(threads, strategy).with_watchdog_polls(20_000);
    let rt = Runtime::<Unit>::with_config(config).unwrap();
    let mut s = BspSection::new(0, WaitScope::Traversal);
    for _ in 0..2 * threads {
        s.push(|ctx| {
            let id = ctx.next_task_id();
            ctx.spawn_enclave(EnclaveTask::new(id, 0, Unit))?;
            ctx.wait_for_outcome(id)
        });
    }
    let t0 = Instant::now();
    let err = rt.run_bsp_section(s).unwrap_err();
    assert!(err.is_starvation(), "{err}");
    assert!(err.to_string().starts_with("starvation"), "{err}");
    assert!(t0.elapsed() < Duration::from_secs(30));
    assert_eq!(rt.ready_enclaves(), 0);

    let mut s = BspSection::new(1, WaitScope::All);
    s.push(|ctx| ctx.spawn_enclave(EnclaveTask::new(ctx.next_task_id(), 0, Unit)));
    rt.run_bsp_section(s).unwrap();
    assert_eq!(rt.outcomes().len(), 1);
}

#[test]
fn fair_mode_completes_the_same_section() {
    let strategy = Strategy::new(StrategyKind::Native);
    let config = RuntimeConfig::new(2, strategy).with_watchdog_polls(20_000);
    let rt = Runtime::<Unit>::with_config(config).unwrap();
    let mut s = BspSection::new(0, WaitScope::Traversal);
    for _ in 0..4 {
        s.push(|ctx| {
            let id = ctx.next_task_id();
            ctx.spawn_enclave(EnclaveTask::new(id, 0, Unit))?;
            ctx.wait_for_outcome(id)
        });
    }
    rt.run_bsp_section(s).unwrap();
}

#[test]
fn traversal_error_is_returned() {
    let rt = Runtime::<Unit>::new(2, Strategy::new(StrategyKind::HoldBack)).unwrap();
    let mut s = BspSection::new(0, WaitScope::Traversal);
    s.push(|ctx| {
        ctx.spawn_enclave(EnclaveTask::new(9, 0, Unit))?;
        ctx.spawn_enclave(EnclaveTask::new(9, 0, Unit))
    });
    assert!(matches!(rt.run_bsp_section(s), Err(RuntimeError::DuplicateTaskId(9))));
    assert_eq!(rt.pending_len(), 0);
}

#[test]
fn round_robin_reaches_every_worker() {
    let strategy = Strategy::new(StrategyKind::Native).with_yield_mode(YieldMode::StrictGroup);
    let config = RuntimeConfig::new(8, strategy).with_trace(true);
    let rt = Runtime::<Unit>::with_config(config).unwrap();
    let mut s = BspSection::new(0, WaitScope::Traversal);
    for _ in 0..8 {
        s.push(|_ctx| {
            std::thread::sleep(Duration::from_millis(1));
            Ok(())
        });
    }
    rt.run_bsp_section(s).unwrap();
    let workers: HashSet<usize> = rt
        .tracer()
        .take_events()
        .iter()
        .filter(|e| e.kind == EventKind::TaskStart)
        .map(|e| e.worker)
        .collect();
    assert_eq!(workers, (0..8).collect());
}

#[test]
fn drop_joins_workers_with_work_left() {
    let t0 = Instant::now();
    for kind in StrategyKind::ALL {
        let strategy = Strategy::new(kind).with_yield_mode(YieldMode::StrictGroup);
        let rt = Runtime::<Unit>::new(4, strategy).unwrap();
        spawn_units(&rt, 20, 0);
        drop(rt);
    }
    assert!(t0.elapsed() < Duration::from_secs(5));
}
