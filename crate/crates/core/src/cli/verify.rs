//! The `verify` suite and the harnesses it shares with tests and examples.

use std::io::Write;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::CliError;
use crate::fv::{FvError, GridPos, MeshConfig, Side};
use crate::oracle::{first_difference, reference_field};
use crate::partition::{sfc_order, split_balanced, split_ill_balanced, CellClass, Decomposition, Partition};
use crate::runtime::{
    BspSection, EnclaveTask, EnclaveWork, Runtime, RuntimeConfig, SectionStats, Strategy, StrategyKind, WaitScope,
};
use crate::solvers::{SolverConfig, SolverError, SolverKind, SolverState};
use crate::trace::{Event, EventKind};

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Corrupt a face-buffer generation before the oracle check.
    pub inject_stale_halo: bool,
    pub threads: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            inject_stale_halo: false,
            threads: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    fn push(&mut self, name: &str, result: Result<String, String>) {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        });
    }
}

/// Busy work for runtime checks; the output is a checksum of the loop.
#[derive(Debug, Clone, Copy)]
pub struct Spin(pub u64);

impl EnclaveWork for Spin {
    type Output = u64;

    fn execute(self) -> u64 {
        let mut acc = self.0;
        for i in 0..self.0 {
            acc = std::hint::black_box(acc.wrapping_mul(6364136223846793005).wrapping_add(i));
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub struct BackfillOutcome {
    pub stats: SectionStats,
    pub events: Vec<Event>,
    /// Held-back tasks still queued after the section.
    pub left_pending: usize,
    pub elapsed: Duration,
}

/// Runs one backfilled section of `bsp` traversal tasks (each sleeping for
/// `bsp_work`) on `threads` workers with `pending` held-back tasks queued
/// beforehand. Gives up after `timeout`.
pub fn run_backfill_case(
    threads: usize,
    bsp: usize,
    pending: usize,
    bsp_work: Duration,
    timeout: Duration,
) -> Result<BackfillOutcome, String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let result = (|| {
            let config = RuntimeConfig::new(threads, Strategy::new(StrategyKind::Backfill)).with_trace(true);
            let rt = Runtime::<Spin>::with_config(config).map_err(|e| e.to_string())?;
            let driver = rt.driver();
            for _ in 0..pending {
                let id = driver.next_task_id();
                driver
                    .spawn_enclave(EnclaveTask::new(id, 0, Spin(20_000)))
                    .map_err(|e| e.to_string())?;
            }
            let mut section = BspSection::new(0, WaitScope::Traversal);
            for _ in 0..bsp {
                section.push(move |_ctx| {
                    thread::sleep(bsp_work);
                    Ok(())
                });
            }
            let t0 = Instant::now();
            let stats = rt.run_bsp_backfill(section).map_err(|e| e.to_string())?;
            let elapsed = t0.elapsed();
            Ok(BackfillOutcome {
                stats,
                events: rt.tracer().take_events(),
                left_pending: rt.pending_len(),
                elapsed,
            })
        })();
        let _ = tx.send(result);
    });
    rx.recv_timeout(timeout)
        .map_err(|_| format!("timed out after {timeout:?} (T={threads}, bsp={bsp}, pending={pending})"))?
}

/// Whether some held-back task finished before the section ended. Held-back
/// tasks are the ones spawned before the section started.
pub fn task_end_before_section_end(events: &[Event]) -> bool {
    let time_of = |kind| events.iter().find(|e| e.kind == kind).map(|e| e.t_ns);
    let (Some(start), Some(end)) = (time_of(EventKind::SectionStart), time_of(EventKind::SectionEnd)) else {
        return false;
    };
    let held_back: std::collections::HashSet<u64> = events
        .iter()
        .filter(|e| e.kind == EventKind::Spawn && e.t_ns < start)
        .map(|e| e.id)
        .collect();
    events
        .iter()
        .any(|e| e.kind == EventKind::TaskEnd && e.t_ns < end && held_back.contains(&e.id))
}

/// Skeleton/enclave labels by direct comparison of grid coordinates.
pub fn brute_force_classes(m: usize, partitions: &[Partition], order: &[GridPos]) -> Vec<CellClass> {
    let mut owner = vec![usize::MAX; m * m];
    for p in partitions {
        for s in p.range.clone() {
            let GridPos { ix, iy } = order[s];
            owner[iy * m + ix] = p.id;
        }
    }
    let mut out = Vec::with_capacity(m * m);
    for iy in 0..m {
        for ix in 0..m {
            let me = owner[iy * m + ix];
            let left = owner[iy * m + if ix == 0 { m - 1 } else { ix - 1 }];
            let right = owner[iy * m + if ix == m - 1 { 0 } else { ix + 1 }];
            let down = owner[if iy == 0 { m - 1 } else { iy - 1 } * m + ix];
            let up = owner[if iy == m - 1 { 0 } else { iy + 1 } * m + ix];
            out.push(if [left, right, down, up].iter().all(|&o| o == me) {
                CellClass::Enclave
            } else {
                CellClass::Skeleton
            });
        }
    }
    out
}

fn oracle_config(threads: usize, solver: SolverKind, kind: StrategyKind) -> SolverConfig {
    SolverConfig::new(
        solver,
        MeshConfig::new(1, 9),
        RuntimeConfig::new(threads, Strategy::new(kind)),
    )
}

type CheckFn<'a> = Box<dyn Fn() -> Result<String, String> + 'a>;

fn check_oracle(opts: &VerifyOptions) -> Result<String, String> {
    let mesh = MeshConfig::new(1, 9);
    let expected = reference_field(&mesh, 1);
    let mut cases = vec![(SolverKind::Bsp, StrategyKind::Native)];
    cases.extend(StrategyKind::ALL.map(|k| (SolverKind::Enclave, k)));
    for (solver, kind) in cases {
        let config = oracle_config(opts.threads, solver, kind).with_partitions(1);
        let mut state = SolverState::new(config).map_err(|e| e.to_string())?;
        if opts.inject_stale_halo {
            state.mesh().face(0).corrupt_generation(Side::Right, 1);
        }
        state
            .time_step()
            .map_err(|e| format!("{solver}/{kind}: {e}"))?;
        let got = state.mesh().global_field();
        if let Some(idx) = first_difference(&got, &expected) {
            let g = 27;
            return Err(format!(
                "{solver}/{kind}: first differing volume {idx} (x={}, y={}): {:?} vs {:?}",
                idx % g,
                idx / g,
                got.get(idx),
                expected.get(idx)
            ));
        }
    }
    Ok("M=3, n=9, one step: 5 solver/strategy pairs bitwise equal".into())
}

fn check_conservation(threads: usize) -> Result<String, String> {
    let config = SolverConfig::new(
        SolverKind::Enclave,
        MeshConfig::new(2, 15),
        RuntimeConfig::new(threads, Strategy::new(StrategyKind::Native)),
    );
    let r = crate::solvers::run_simulation(config, 100).map_err(|e| e.to_string())?;
    let drift = r.max_relative_drift();
    if drift <= 1e-10 {
        Ok(format!("100 steps, M=9, n=15: max relative drift {drift:.2e}"))
    } else {
        Err(format!("drift {drift:.3e} exceeds 1e-10"))
    }
}

fn check_classify() -> Result<String, String> {
    let mut cases = 0;
    for m in [3usize, 9, 27] {
        let order = sfc_order(m).map_err(|e| e.to_string())?;
        let mut splits = Vec::new();
        for p in [1usize, 2, 3, 4, 7, 8] {
            splits.push(split_balanced(&order, p).map_err(|e| e.to_string())?);
        }
        for p in [2usize, 4, 8, 20] {
            splits.push(split_ill_balanced(&order, p).map_err(|e| e.to_string())?);
        }
        for parts in splits {
            let d = Decomposition::from_partitions(order.clone(), parts.clone());
            let brute = brute_force_classes(m, &parts, order.positions());
            if let Some(idx) = d.classes.iter().zip(&brute).position(|(a, b)| a != b) {
                return Err(format!("M={m}, {} partitions: patch {idx} differs", parts.len()));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} decompositions match"))
}

fn check_backfill_matrix() -> Result<String, String> {
    let mut cases = 0;
    for t in [1usize, 2, 4, 8] {
        let mut counts = vec![0, 1, t - 1, t, 3 * t];
        counts.sort_unstable();
        counts.dedup();
        for bsp in counts {
            for pending in [0usize, 100] {
                let out = run_backfill_case(t, bsp, pending, Duration::from_millis(1), Duration::from_secs(10))?;
                if out.stats.slots != bsp.max(t) || out.stats.busy_decrements != bsp.max(t) {
                    return Err(format!("T={t}, bsp={bsp}: unexpected slot stats {:?}", out.stats));
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} combinations completed"))
}

fn check_stale_halo_detected(threads: usize) -> Result<String, String> {
    let mut state = SolverState::new(oracle_config(threads, SolverKind::Bsp, StrategyKind::Native))
        .map_err(|e| e.to_string())?;
    state.mesh().face(0).corrupt_generation(Side::Right, 1);
    match state.time_step() {
        Err(SolverError::Fv(FvError::StaleHalo { .. })) => Ok("corrupted generation rejected".into()),
        Err(e) => Err(format!("unexpected error: {e}")),
        Ok(()) => Err("corrupted face buffer went unnoticed".into()),
    }
}

/// Runs the suite and prints one line per check.
pub fn cmd_verify(opts: &VerifyOptions, out: &mut dyn Write) -> Result<VerifyReport, CliError> {
    let threads = opts.threads.max(1);
    let mut report = VerifyReport::default();
    let checks: [(&str, CheckFn); 5] = [
        ("kernel oracle", Box::new(|| check_oracle(opts))),
        ("conservation", Box::new(|| check_conservation(threads))),
        ("classify brute force", Box::new(check_classify)),
        ("backfill deadlock matrix", Box::new(check_backfill_matrix)),
        ("stale halo detection", Box::new(|| check_stale_halo_detected(threads))),
    ];
    for (name, check) in checks {
        let t0 = Instant::now();
        report.push(name, check());
        let c = report.checks.last().expect("just pushed");
        let _ = writeln!(
            out,
            "{:<4} {:<26} {:>8.2}s  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            t0.elapsed().as_secs_f64(),
            c.detail
        );
    }
    let _ = writeln!(out, "{} of {} checks passed", report.checks.len() - report.failures(), report.checks.len());
    Ok(report)
}
