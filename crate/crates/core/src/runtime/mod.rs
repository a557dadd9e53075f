//! Worker pool with pluggable enclave-task scheduling.
//!
//! The pool owns `T` worker threads and a shared ready queue. Work arrives
//! in BSP sections: a batch of traversal tasks (one per partition) that the
//! driver thread submits and then waits for. Traversal tasks produce enclave
//! tasks through [`TaskContext::spawn_enclave`] and consume their results
//! through [`TaskContext::wait_for_outcome`]. What happens in between is
//! decided by the [`Strategy`]:
//!
//! * `native` hands enclave tasks to the ready queue until `ready_cap` of
//!   them are waiting, after which the spawner runs new ones inline. Idle
//!   workers and yielding consumers pick ready tasks, and the taskwait at the
//!   end of a section drains the ready queue before returning.
//! * `hold-back` parks enclave tasks in a [`PendingQueue`]; only consumers
//!   that are waiting on an outcome run them, one per poll.
//! * `backfill` additionally wraps every section in busy-thread slots so
//!   workers whose traversal task is done run held-back tasks while siblings
//!   are still busy.
//! * `merge-and-backfill` fuses popped tasks of the same type into a single
//!   batched call, up to a per-section cap.
//!
//! Traversal tasks of a section are dealt round robin onto per-worker
//! queues. Under [`YieldMode::Fair`] any worker takes the globally oldest
//! task from any queue, so the queues behave as one FIFO. Under
//! [`YieldMode::StrictGroup`] a worker only serves its own queue and a
//! blocked consumer only switches to siblings from it; once every worker
//! holds a waiting consumer nobody is left to run enclave tasks.

mod outcome;
mod pending;
mod strategy;
mod watchdog;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub use outcome::OutcomeTable;
pub use pending::PendingQueue;
pub use strategy::{
    Strategy, StrategyKind, YieldMode, DEFAULT_MAX_MERGE_BATCHES, DEFAULT_MERGE_FRACTION, DEFAULT_READY_CAP,
};
pub use watchdog::{Watchdog, DEFAULT_WATCHDOG_POLLS};

use crate::trace::{Counter, EventKind, Tracer};

pub type TaskId = u64;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("thread count must be at least 1")]
    NoThreads,
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("duplicate enclave task id {0}")]
    DuplicateTaskId(TaskId),
    #[error("outcome for task {0} entered twice")]
    DuplicateOutcome(TaskId),
    #[error(
        "starvation: worker {worker} waiting for enclave task {task} gave up after {polls} consecutive unproductive polls"
    )]
    Starvation { task: TaskId, worker: usize, polls: u64 },
    #[error("aborted after an earlier task failure")]
    Aborted,
    #[error("task panicked: {0}")]
    Panic(String),
    #[error(transparent)]
    Task(Box<dyn std::error::Error + Send + Sync>),
}

impl RuntimeError {
    pub fn task<E: std::error::Error + Send + Sync + 'static>(err: E) -> Self {
        RuntimeError::Task(Box::new(err))
    }

    pub fn is_starvation(&self) -> bool {
        matches!(self, RuntimeError::Starvation { .. })
    }
}

/// Deferred work carried by an enclave task.
pub trait EnclaveWork: Send + 'static {
    type Output: Send + 'static;

    fn execute(self) -> Self::Output;

    /// Runs a batch of same-type tasks as one fused call. Outputs must be in
    /// input order and equal to what [`EnclaveWork::execute`] would produce.
    fn execute_fused(batch: Vec<Self>) -> Vec<Self::Output>
    where
        Self: Sized,
    {
        batch.into_iter().map(Self::execute).collect()
    }
}

#[derive(Debug)]
pub struct EnclaveTask<W> {
    pub id: TaskId,
    /// Class tag; only tasks with equal tags are fused.
    pub task_type: u32,
    pub work: W,
}

impl<W> EnclaveTask<W> {
    pub fn new(id: TaskId, task_type: u32, work: W) -> Self {
        Self { id, task_type, work }
    }
}

pub type TraversalFn<W> = Box<dyn FnOnce(&TaskContext<'_, W>) -> Result<(), RuntimeError> + Send>;

/// What the closing taskwait of a section waits for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitScope {
    /// Only the section's traversal tasks.
    Traversal,
    /// Everything spawned, including enclave tasks in the ready queue.
    All,
}

pub struct BspSection<W: EnclaveWork> {
    /// Trace id and task-group id of the section.
    pub id: u64,
    pub tasks: Vec<TraversalFn<W>>,
    pub scope: WaitScope,
}

impl<W: EnclaveWork> BspSection<W> {
    pub fn new(id: u64, scope: WaitScope) -> Self {
        Self {
            id,
            tasks: Vec::new(),
            scope,
        }
    }

    pub fn push(&mut self, task: impl FnOnce(&TaskContext<'_, W>) -> Result<(), RuntimeError> + Send + 'static) {
        self.tasks.push(Box::new(task));
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SectionStats {
    /// Pool tasks dispatched (traversal tasks or backfill slots).
    pub slots: usize,
    /// Decrements of the busy-thread counter.
    pub busy_decrements: usize,
    /// Enclave tasks run by backfilling slots.
    pub backfilled: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RuntimeStats {
    pub spawned: u64,
    pub executed: u64,
    pub inline_executed: u64,
    pub fused_batches: u64,
    pub fused_tasks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YieldOutcome {
    RanTask,
    Spun,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeConfig {
    pub threads: usize,
    pub strategy: Strategy,
    pub watchdog_polls: u64,
    pub trace: bool,
}

impl RuntimeConfig {
    pub fn new(threads: usize, strategy: Strategy) -> Self {
        Self {
            threads,
            strategy,
            watchdog_polls: DEFAULT_WATCHDOG_POLLS,
            trace: false,
        }
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn with_watchdog_polls(mut self, polls: u64) -> Self {
        self.watchdog_polls = polls;
        self
    }
}

enum Job<W: EnclaveWork> {
    Plain(TraversalFn<W>),
    Slot {
        task: Option<TraversalFn<W>>,
        busy: Arc<AtomicUsize>,
    },
}

struct Traversal<W: EnclaveWork> {
    id: TaskId,
    group: u64,
    section: Arc<SectionState>,
    job: Job<W>,
}

enum Ready<W: EnclaveWork> {
    Traversal(Traversal<W>),
    Enclave(EnclaveTask<W>),
}

struct SectionState {
    remaining: AtomicUsize,
    drain: bool,
    decrements: AtomicUsize,
    backfilled: AtomicUsize,
}

#[derive(Clone, Copy)]
struct OpenSection {
    drain_all: bool,
}

struct ReadyQueue<W: EnclaveWork> {
    /// One queue per worker; sections are dealt out round robin.
    traversal: Vec<VecDeque<(u64, Traversal<W>)>>,
    enclave: VecDeque<(u64, EnclaveTask<W>)>,
    seq: u64,
    open: Option<OpenSection>,
}

impl<W: EnclaveWork> ReadyQueue<W> {
    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }
}

#[derive(Clone, Copy)]
enum Pick {
    /// Oldest task of either kind from any queue.
    Oldest,
    /// Traversal tasks of one group from the worker's own queue.
    Group { group: u64, worker: usize },
    /// Idle worker under strict-group scheduling: its own traversal tasks
    /// first, enclave tasks only while a drain-all taskwait is open.
    StrictIdle { worker: usize },
}

struct Shared<W: EnclaveWork> {
    threads: usize,
    strategy: Strategy,
    tracer: Arc<Tracer>,
    watchdog: Watchdog,
    next_id: AtomicU64,
    ready: Mutex<ReadyQueue<W>>,
    work_cv: Condvar,
    done_lock: Mutex<()>,
    done_cv: Condvar,
    pending: PendingQueue<W>,
    outcomes: OutcomeTable<W::Output>,
    live_ids: Mutex<HashSet<TaskId>>,
    ready_enclaves: AtomicUsize,
    running_enclaves: AtomicUsize,
    active_bsp: AtomicUsize,
    merge_batches: AtomicUsize,
    aborted: AtomicBool,
    failure: Mutex<Option<RuntimeError>>,
    shutdown: AtomicBool,
    spawned: AtomicU64,
    executed: AtomicU64,
    inline_executed: AtomicU64,
    fused_batches: AtomicU64,
    fused_tasks: AtomicU64,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

impl<W: EnclaveWork> Shared<W> {
    fn driver_lane(&self) -> usize {
        self.threads
    }

    fn lock_ready(&self) -> MutexGuard<'_, ReadyQueue<W>> {
        self.ready.lock().expect("ready queue poisoned")
    }

    fn pop(&self, q: &mut ReadyQueue<W>, pick: Pick) -> Option<Ready<W>> {
        let take_traversal =
            |q: &mut ReadyQueue<W>, w: usize| q.traversal[w].pop_front().map(|(_, t)| Ready::Traversal(t));
        let take_enclave = |q: &mut ReadyQueue<W>| {
            let (_, t) = q.enclave.pop_front()?;
            self.ready_enclaves.store(q.enclave.len(), Ordering::Release);
            self.running_enclaves.fetch_add(1, Ordering::AcqRel);
            Some(Ready::Enclave(t))
        };
        match pick {
            Pick::Oldest => {
                let t = (0..q.traversal.len())
                    .filter_map(|w| q.traversal[w].front().map(|(s, _)| (*s, w)))
                    .min();
                let e = q.enclave.front().map(|(s, _)| *s);
                match (t, e) {
                    (Some((a, _)), Some(b)) if b < a => take_enclave(q),
                    (Some((_, w)), _) => take_traversal(q, w),
                    (None, Some(_)) => take_enclave(q),
                    (None, None) => None,
                }
            }
            Pick::Group { group, worker } => match q.traversal.get(worker).and_then(|d| d.front()) {
                Some((_, t)) if t.group == group => take_traversal(q, worker),
                _ => None,
            },
            Pick::StrictIdle { worker } => {
                if q.traversal.get(worker).is_some_and(|d| !d.is_empty()) {
                    take_traversal(q, worker)
                } else if q.open.is_some_and(|o| o.drain_all) {
                    take_enclave(q)
                } else {
                    None
                }
            }
        }
    }

    fn fail(&self, err: RuntimeError) {
        let mut slot = self.failure.lock().expect("failure slot poisoned");
        if slot.is_none() {
            *slot = Some(err);
        }
        self.aborted.store(true, Ordering::Release);
        drop(slot);
        self.notify_done();
    }

    fn notify_done(&self) {
        let _g = self.done_lock.lock().expect("done lock poisoned");
        self.done_cv.notify_all();
    }

    fn finish_enclaves(&self, count: usize) {
        let before = self.running_enclaves.fetch_sub(count, Ordering::AcqRel);
        if before == count && self.ready_enclaves.load(Ordering::Acquire) == 0 {
            self.notify_done();
        }
    }

    fn section_complete(&self, s: &SectionState) -> bool {
        if s.remaining.load(Ordering::Acquire) != 0 {
            return false;
        }
        self.aborted.load(Ordering::Acquire)
            || !s.drain
            || (self.ready_enclaves.load(Ordering::Acquire) == 0 && self.running_enclaves.load(Ordering::Acquire) == 0)
    }

    fn sample(&self, lane: usize) {
        let ready = self.ready_enclaves.load(Ordering::Acquire) as u64;
        let pending = self.pending.len() as u64;
        self.tracer.record(lane, EventKind::Sample, Counter::Pending as u64, pending + ready);
        self.tracer.record(lane, EventKind::Sample, Counter::Ready as u64, ready);
        self.tracer.record(
            lane,
            EventKind::Sample,
            Counter::ActiveBsp as u64,
            self.active_bsp.load(Ordering::Acquire) as u64,
        );
    }

    fn try_take_merge_batch(&self) -> bool {
        let cap = self.strategy.max_merge_batches_per_sweep;
        self.merge_batches
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |n| (n < cap).then_some(n + 1))
            .is_ok()
    }
}

/// Handle given to code running on a worker (or on the driver thread).
pub struct TaskContext<'a, W: EnclaveWork> {
    shared: &'a Shared<W>,
    worker: usize,
    group: Option<u64>,
}

impl<W: EnclaveWork> TaskContext<'_, W> {
    /// Trace lane of the calling thread: `0..T` for workers, `T` for the driver.
    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn group(&self) -> Option<u64> {
        self.group
    }

    pub fn threads(&self) -> usize {
        self.shared.threads
    }

    pub fn strategy(&self) -> &Strategy {
        &self.shared.strategy
    }

    pub fn next_task_id(&self) -> TaskId {
        self.shared.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub fn tracer(&self) -> &Tracer {
        &self.shared.tracer
    }

    /// Hands an enclave task to the strategy. Under `native` the task is
    /// either queued as ready or, when `ready_cap` tasks are already waiting,
    /// executed before this call returns.
    pub fn spawn_enclave(&self, task: EnclaveTask<W>) -> Result<(), RuntimeError> {
        let sh = self.shared;
        if !sh.live_ids.lock().expect("live ids poisoned").insert(task.id) {
            return Err(RuntimeError::DuplicateTaskId(task.id));
        }
        sh.spawned.fetch_add(1, Ordering::Relaxed);
        sh.tracer.record(self.worker, EventKind::Spawn, task.id, u64::from(task.task_type));
        if sh.strategy.kind.holds_back() {
            sh.pending.push(task);
            return Ok(());
        }
        let mut q = sh.lock_ready();
        if q.enclave.len() < sh.strategy.ready_cap {
            let seq = q.next_seq();
            q.enclave.push_back((seq, task));
            sh.ready_enclaves.store(q.enclave.len(), Ordering::Release);
            drop(q);
            sh.work_cv.notify_one();
        } else {
            drop(q);
            sh.running_enclaves.fetch_add(1, Ordering::AcqRel);
            sh.inline_executed.fetch_add(1, Ordering::Relaxed);
            self.execute_one(task);
            sh.finish_enclaves(1);
        }
        Ok(())
    }

    /// Polls the outcome table until the result of `id` is present, doing
    /// strategy-specific work between polls, and removes it.
    pub fn wait_for_outcome(&self, id: TaskId) -> Result<W::Output, RuntimeError> {
        let sh = self.shared;
        let mut spin_ns = 0u64;
        let result = loop {
            if let Some(out) = sh.outcomes.take(id) {
                sh.live_ids.lock().expect("live ids poisoned").remove(&id);
                break Ok(out);
            }
            if sh.aborted.load(Ordering::Acquire) {
                break Err(RuntimeError::Aborted);
            }
            if sh.watchdog.is_tripped() {
                break Err(self.starvation(id));
            }
            let productive = match sh.strategy.kind {
                StrategyKind::Native => self.yield_once() == YieldOutcome::RanTask,
                StrategyKind::HoldBack | StrategyKind::Backfill => self.process_pending_tasks(Some(1)) > 0,
                StrategyKind::MergeAndBackfill => self.process_pending_tasks(None) > 0,
            };
            if !productive {
                let t0 = Instant::now();
                // Polls only count toward starvation while nothing is executing.
                if sh.running_enclaves.load(Ordering::Acquire) == 0 && sh.watchdog.spin() {
                    break Err(self.starvation(id));
                }
                thread::yield_now();
                spin_ns += t0.elapsed().as_nanos() as u64;
            }
        };
        if spin_ns > 0 {
            sh.tracer.record(self.worker, EventKind::PollSpin, id, spin_ns);
        }
        result
    }

    fn starvation(&self, id: TaskId) -> RuntimeError {
        RuntimeError::Starvation {
            task: id,
            worker: self.worker,
            polls: self.shared.watchdog.limit(),
        }
    }

    /// One scheduling point for a blocked consumer. `fair` runs the oldest
    /// ready task of any kind; `strict-group` only a traversal task of the
    /// caller's own group from the caller's own queue.
    pub fn yield_once(&self) -> YieldOutcome {
        let pick = match (self.shared.strategy.yield_mode, self.group) {
            (YieldMode::Fair, _) => Pick::Oldest,
            (YieldMode::StrictGroup, Some(group)) => Pick::Group {
                group,
                worker: self.worker,
            },
            (YieldMode::StrictGroup, None) => return YieldOutcome::Spun,
        };
        let task = {
            let mut q = self.shared.lock_ready();
            self.shared.pop(&mut q, pick)
        };
        match task {
            Some(t) => {
                self.run_ready(t);
                YieldOutcome::RanTask
            }
            None => YieldOutcome::Spun,
        }
    }

    /// Pops and runs held-back tasks; returns how many ran.
    ///
    /// `batch_hint = Some(k)` pops up to `k`; `None` pops
    /// `ceil(pending * merge_fraction)`. Under `merge-and-backfill` the popped
    /// batch is grouped by task type and each group of two or more is run as
    /// one fused call while the per-section batch cap allows.
    pub fn process_pending_tasks(&self, batch_hint: Option<usize>) -> usize {
        let sh = self.shared;
        let strategy = sh.strategy;
        let batch = sh.pending.pop_batch(|len| match batch_hint {
            Some(k) => k.min(len),
            None => strategy.batch_size(len),
        });
        let count = batch.len();
        if count == 0 {
            return 0;
        }
        sh.running_enclaves.fetch_add(count, Ordering::AcqRel);
        if strategy.kind == StrategyKind::MergeAndBackfill {
            let mut groups: BTreeMap<u32, Vec<EnclaveTask<W>>> = BTreeMap::new();
            for t in batch {
                groups.entry(t.task_type).or_default().push(t);
            }
            for group in groups.into_values() {
                if group.len() >= 2 && sh.try_take_merge_batch() {
                    self.execute_fused(group);
                } else {
                    group.into_iter().for_each(|t| self.execute_one(t));
                }
            }
        } else {
            batch.into_iter().for_each(|t| self.execute_one(t));
        }
        sh.finish_enclaves(count);
        count
    }

    fn execute_one(&self, task: EnclaveTask<W>) {
        let sh = self.shared;
        let EnclaveTask { id, work, .. } = task;
        sh.tracer.record(self.worker, EventKind::TaskStart, id, 0);
        let out = catch_unwind(AssertUnwindSafe(|| work.execute()));
        sh.tracer.record(self.worker, EventKind::TaskEnd, id, 0);
        sh.executed.fetch_add(1, Ordering::Relaxed);
        sh.watchdog.progress();
        match out {
            Ok(out) => {
                if let Err(e) = sh.outcomes.insert(id, out) {
                    sh.fail(e);
                }
            }
            Err(p) => sh.fail(RuntimeError::Panic(panic_message(p))),
        }
    }

    fn execute_fused(&self, group: Vec<EnclaveTask<W>>) {
        let sh = self.shared;
        let ids: Vec<TaskId> = group.iter().map(|t| t.id).collect();
        let works: Vec<W> = group.into_iter().map(|t| t.work).collect();
        for &id in &ids {
            sh.tracer.record(self.worker, EventKind::TaskStart, id, 1);
        }
        let outs = catch_unwind(AssertUnwindSafe(|| W::execute_fused(works)));
        for &id in &ids {
            sh.tracer.record(self.worker, EventKind::TaskEnd, id, 1);
        }
        sh.executed.fetch_add(ids.len() as u64, Ordering::Relaxed);
        sh.fused_batches.fetch_add(1, Ordering::Relaxed);
        sh.fused_tasks.fetch_add(ids.len() as u64, Ordering::Relaxed);
        sh.watchdog.progress();
        match outs {
            Ok(outs) => {
                assert_eq!(outs.len(), ids.len(), "fused execution must return one output per task");
                for (id, out) in ids.into_iter().zip(outs) {
                    if let Err(e) = sh.outcomes.insert(id, out) {
                        sh.fail(e);
                    }
                }
            }
            Err(p) => sh.fail(RuntimeError::Panic(panic_message(p))),
        }
    }

    fn run_ready(&self, task: Ready<W>) {
        match task {
            Ready::Enclave(t) => {
                self.execute_one(t);
                self.shared.finish_enclaves(1);
            }
            Ready::Traversal(t) => self.run_traversal(t),
        }
    }

    fn run_traversal(&self, t: Traversal<W>) {
        let sh = self.shared;
        let ctx = TaskContext {
            shared: sh,
            worker: self.worker,
            group: Some(t.group),
        };
        let run = |f: TraversalFn<W>| {
            sh.active_bsp.fetch_add(1, Ordering::AcqRel);
            sh.tracer.record(self.worker, EventKind::TaskStart, t.id, 0);
            let r = catch_unwind(AssertUnwindSafe(|| f(&ctx)))
                .unwrap_or_else(|p| Err(RuntimeError::Panic(panic_message(p))));
            sh.tracer.record(self.worker, EventKind::TaskEnd, t.id, 0);
            sh.active_bsp.fetch_sub(1, Ordering::AcqRel);
            if let Err(e) = r {
                sh.fail(e);
            }
        };
        match t.job {
            Job::Plain(f) => run(f),
            Job::Slot { task, busy } => {
                match task {
                    Some(f) => run(f),
                    None => {
                        sh.tracer.record(self.worker, EventKind::TaskStart, t.id, 0);
                        sh.tracer.record(self.worker, EventKind::TaskEnd, t.id, 0);
                    }
                }
                let mut left = busy.fetch_sub(1, Ordering::AcqRel) - 1;
                t.section.decrements.fetch_add(1, Ordering::AcqRel);
                let mut spin_ns = 0u64;
                while left > 0 && left < sh.threads && !sh.aborted.load(Ordering::Acquire) {
                    let k = ctx.process_pending_tasks(None);
                    if k == 0 {
                        let t0 = Instant::now();
                        thread::yield_now();
                        spin_ns += t0.elapsed().as_nanos() as u64;
                    } else {
                        t.section.backfilled.fetch_add(k, Ordering::AcqRel);
                    }
                    left = busy.load(Ordering::Acquire);
                }
                if spin_ns > 0 {
                    sh.tracer.record(self.worker, EventKind::PollSpin, t.id, spin_ns);
                }
            }
        }
        sh.watchdog.progress();
        if t.section.remaining.fetch_sub(1, Ordering::AcqRel) == 1 {
            sh.notify_done();
        }
    }
}

struct Sampler {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<()>,
}

/// The worker pool.
pub struct Runtime<W: EnclaveWork> {
    shared: Arc<Shared<W>>,
    workers: Vec<JoinHandle<()>>,
    sampler: Option<Sampler>,
}

impl<W: EnclaveWork> Runtime<W> {
    pub fn new(threads: usize, strategy: Strategy) -> Result<Self, RuntimeError> {
        Self::with_config(RuntimeConfig::new(threads, strategy))
    }

    pub fn with_config(config: RuntimeConfig) -> Result<Self, RuntimeError> {
        if config.threads < 1 {
            return Err(RuntimeError::NoThreads);
        }
        config.strategy.validate().map_err(RuntimeError::InvalidStrategy)?;
        let shared = Arc::new(Shared {
            threads: config.threads,
            strategy: config.strategy,
            tracer: Arc::new(Tracer::new(config.threads + 2, config.trace)),
            watchdog: Watchdog::new(config.watchdog_polls),
            next_id: AtomicU64::new(1),
            ready: Mutex::new(ReadyQueue {
                traversal: (0..config.threads).map(|_| VecDeque::new()).collect(),
                enclave: VecDeque::new(),
                seq: 0,
                open: None,
            }),
            work_cv: Condvar::new(),
            done_lock: Mutex::new(()),
            done_cv: Condvar::new(),
            pending: PendingQueue::default(),
            outcomes: OutcomeTable::default(),
            live_ids: Mutex::new(HashSet::new()),
            ready_enclaves: AtomicUsize::new(0),
            running_enclaves: AtomicUsize::new(0),
            active_bsp: AtomicUsize::new(0),
            merge_batches: AtomicUsize::new(0),
            aborted: AtomicBool::new(false),
            failure: Mutex::new(None),
            shutdown: AtomicBool::new(false),
            spawned: AtomicU64::new(0),
            executed: AtomicU64::new(0),
            inline_executed: AtomicU64::new(0),
            fused_batches: AtomicU64::new(0),
            fused_tasks: AtomicU64::new(0),
        });
        let workers = (0..config.threads)
            .map(|id| {
                let shared = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("taskbench-worker-{id}"))
                    .spawn(move || worker_loop(shared, id))
                    .expect("failed to spawn worker thread")
            })
            .collect();
        Ok(Self {
            shared,
            workers,
            sampler: None,
        })
    }

    pub fn threads(&self) -> usize {
        self.shared.threads
    }

    pub fn strategy(&self) -> &Strategy {
        &self.shared.strategy
    }

    pub fn tracer(&self) -> &Arc<Tracer> {
        &self.shared.tracer
    }

    /// Trace lane used by the driver thread.
    pub fn driver_lane(&self) -> usize {
        self.shared.driver_lane()
    }

    /// Context for calling task operations from the driver thread.
    pub fn driver(&self) -> TaskContext<'_, W> {
        TaskContext {
            shared: &self.shared,
            worker: self.shared.driver_lane(),
            group: None,
        }
    }

    pub fn pending_len(&self) -> usize {
        self.shared.pending.len()
    }

    pub fn ready_enclaves(&self) -> usize {
        self.shared.ready_enclaves.load(Ordering::Acquire)
    }

    pub fn active_bsp(&self) -> usize {
        self.shared.active_bsp.load(Ordering::Acquire)
    }

    pub fn outcomes(&self) -> &OutcomeTable<W::Output> {
        &self.shared.outcomes
    }

    pub fn stats(&self) -> RuntimeStats {
        let sh = &self.shared;
        RuntimeStats {
            spawned: sh.spawned.load(Ordering::Relaxed),
            executed: sh.executed.load(Ordering::Relaxed),
            inline_executed: sh.inline_executed.load(Ordering::Relaxed),
            fused_batches: sh.fused_batches.load(Ordering::Relaxed),
            fused_tasks: sh.fused_tasks.load(Ordering::Relaxed),
        }
    }

    /// Records one sample of each counter on the driver lane.
    pub fn sample_now(&self) {
        self.shared.sample(self.shared.driver_lane());
    }

    /// Starts a background thread sampling the counters every `period`.
    pub fn start_sampler(&mut self, period: Duration) {
        self.stop_sampler();
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::clone(&self.shared);
        let flag = Arc::clone(&stop);
        let lane = shared.threads + 1;
        let handle = thread::Builder::new()
            .name("taskbench-sampler".into())
            .spawn(move || {
                while !flag.load(Ordering::Acquire) {
                    shared.sample(lane);
                    thread::sleep(period);
                }
            })
            .expect("failed to spawn sampler thread");
        self.sampler = Some(Sampler { stop, handle });
    }

    pub fn stop_sampler(&mut self) {
        if let Some(s) = self.sampler.take() {
            s.stop.store(true, Ordering::Release);
            let _ = s.handle.join();
        }
    }

    /// Runs one BSP section and returns once its taskwait is satisfied.
    ///
    /// Backfilling strategies route through [`Runtime::run_bsp_backfill`].
    pub fn run_bsp_section(&self, section: BspSection<W>) -> Result<SectionStats, RuntimeError> {
        if self.shared.strategy.kind.backfills() {
            return self.run_bsp_backfill(section);
        }
        let strategy = self.shared.strategy;
        let drain = match section.scope {
            WaitScope::All => true,
            WaitScope::Traversal => strategy.kind == StrategyKind::Native && strategy.yield_mode == YieldMode::Fair,
        };
        let jobs = section.tasks.into_iter().map(Job::Plain).collect();
        self.dispatch(section.id, section.scope, jobs, drain)
    }

    /// Manual backfilling: `max(T, #tasks)` slots each run at most one
    /// traversal task, decrement the shared busy counter and keep processing
    /// held-back tasks while `0 < busy < T`.
    pub fn run_bsp_backfill(&self, section: BspSection<W>) -> Result<SectionStats, RuntimeError> {
        let n = section.tasks.len();
        let slots = n.max(self.shared.threads);
        let busy = Arc::new(AtomicUsize::new(slots));
        let mut tasks = section.tasks.into_iter();
        let jobs = (0..slots)
            .map(|_| Job::Slot {
                task: tasks.next(),
                busy: Arc::clone(&busy),
            })
            .collect();
        self.dispatch(section.id, section.scope, jobs, false)
    }

    fn dispatch(&self, id: u64, scope: WaitScope, jobs: Vec<Job<W>>, drain: bool) -> Result<SectionStats, RuntimeError> {
        let sh = &self.shared;
        let lane = sh.driver_lane();
        sh.merge_batches.store(0, Ordering::Release);
        sh.tracer.record(lane, EventKind::SectionStart, id, 0);
        sh.sample(lane);
        let state = Arc::new(SectionState {
            remaining: AtomicUsize::new(jobs.len()),
            drain,
            decrements: AtomicUsize::new(0),
            backfilled: AtomicUsize::new(0),
        });
        let slots = jobs.len();
        {
            let mut q = sh.lock_ready();
            q.open = Some(OpenSection {
                drain_all: scope == WaitScope::All,
            });
            for (i, job) in jobs.into_iter().enumerate() {
                let tid = sh.next_id.fetch_add(1, Ordering::Relaxed);
                sh.tracer.record(lane, EventKind::Spawn, tid, 0);
                let seq = q.next_seq();
                let w = i % sh.threads;
                q.traversal[w].push_back((
                    seq,
                    Traversal {
                        id: tid,
                        group: id,
                        section: Arc::clone(&state),
                        job,
                    },
                ));
            }
        }
        sh.work_cv.notify_all();
        {
            let mut g = sh.done_lock.lock().expect("done lock poisoned");
            while !sh.section_complete(&state) {
                g = sh.done_cv.wait(g).expect("done lock poisoned");
            }
        }
        sh.lock_ready().open = None;
        sh.sample(lane);
        sh.tracer.record(lane, EventKind::SectionEnd, id, 0);

        if sh.aborted.load(Ordering::Acquire) {
            let err = self.recover();
            return Err(err);
        }
        Ok(SectionStats {
            slots,
            busy_decrements: state.decrements.load(Ordering::Acquire),
            backfilled: state.backfilled.load(Ordering::Acquire),
        })
    }

    /// Waits for stragglers after a failed section, then clears all queues so
    /// the pool can be reused.
    fn recover(&self) -> RuntimeError {
        let sh = &self.shared;
        {
            let mut q = sh.lock_ready();
            q.enclave.clear();
            sh.ready_enclaves.store(0, Ordering::Release);
        }
        sh.pending.clear();
        {
            let mut g = sh.done_lock.lock().expect("done lock poisoned");
            while sh.running_enclaves.load(Ordering::Acquire) != 0 {
                g = sh.done_cv.wait_timeout(g, Duration::from_millis(1)).expect("done lock poisoned").0;
            }
        }
        sh.outcomes.clear();
        sh.live_ids.lock().expect("live ids poisoned").clear();
        sh.watchdog.reset();
        sh.aborted.store(false, Ordering::Release);
        sh.failure
            .lock()
            .expect("failure slot poisoned")
            .take()
            .unwrap_or(RuntimeError::Aborted)
    }
}

impl<W: EnclaveWork> Drop for Runtime<W> {
    fn drop(&mut self) {
        self.stop_sampler();
        {
            let _q = self.shared.lock_ready();
            self.shared.shutdown.store(true, Ordering::Release);
        }
        self.shared.work_cv.notify_all();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}

fn worker_loop<W: EnclaveWork>(shared: Arc<Shared<W>>, id: usize) {
    let pick = match shared.strategy.yield_mode {
        YieldMode::Fair => Pick::Oldest,
        YieldMode::StrictGroup => Pick::StrictIdle { worker: id },
    };
    loop {
        let task = {
            let mut q = shared.lock_ready();
            loop {
                if shared.shutdown.load(Ordering::Acquire) {
                    return;
                }
                if let Some(t) = shared.pop(&mut q, pick) {
                    break t;
                }
                q = shared.work_cv.wait(q).expect("ready queue poisoned");
            }
        };
        let ctx = TaskContext {
            shared: &*shared,
            worker: id,
            group: None,
        };
        ctx.run_ready(task);
    }
}
