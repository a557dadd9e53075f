//! Time-stepping drivers.
//!
//! [`SolverKind::Bsp`] updates every patch inside one traversal task per
//! partition. [`SolverKind::Enclave`] splits each step into a primary
//! traversal that updates skeleton patches in place and spawns one enclave
//! task per interior patch, and a secondary traversal that waits for those
//! outcomes and writes them back. Both produce bit-identical states.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::fv::{
    admissible_dt, assemble_halo, project_to_faces, update_patch, update_patch_with, FluxScratch, FvError, Mesh,
    MeshConfig, Patch, PatchUpdate, Side, NUM_VARS,
};
use crate::partition::{Balance, CellClass, Decomposition, PartitionError};
use crate::runtime::{
    BspSection, EnclaveTask, EnclaveWork, Runtime, RuntimeConfig, RuntimeError, RuntimeStats, WaitScope,
};
use crate::trace::{self, section_id, Event, EventKind, Phase, StepSummary, Summary, TraceError};

/// Task type tag shared by all patch updates, so every pair can be fused.
pub const PATCH_TASK_TYPE: u32 = 0;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Fv(#[from] FvError),
    #[error(transparent)]
    Runtime(RuntimeError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<RuntimeError> for SolverError {
    fn from(err: RuntimeError) -> Self {
        match err {
            RuntimeError::Task(inner) => match inner.downcast::<FvError>() {
                Ok(fv) => SolverError::Fv(*fv),
                Err(other) => SolverError::Runtime(RuntimeError::Task(other)),
            },
            other => SolverError::Runtime(other),
        }
    }
}

impl SolverError {
    pub fn is_starvation(&self) -> bool {
        matches!(self, SolverError::Runtime(e) if e.is_starvation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Bsp,
    Enclave,
}

impl SolverKind {
    pub const NAMES: [&'static str; 2] = ["bsp", "enclave"];

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bsp" => Ok(SolverKind::Bsp),
            "enclave" => Ok(SolverKind::Enclave),
            _ => Err(format!("unknown solver '{s}', expected one of: {}", Self::NAMES.join(", "))),
        }
    }
}

/// Max-reduction over positive `f64` values with compare-and-update.
#[derive(Debug, Default)]
pub struct LambdaMax(AtomicU64);

impl LambdaMax {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fold(&self, value: f64) {
        let _ = self.0.fetch_update(Ordering::AcqRel, Ordering::Acquire, |bits| {
            (value > f64::from_bits(bits)).then_some(value.to_bits())
        });
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }

    pub fn reset(&self) {
        self.0.store(0f64.to_bits(), Ordering::Release);
    }
}

/// Deferred update of one enclave patch, working on a halo snapshot.
#[derive(Debug)]
pub struct PatchTask {
    pub patch: Patch,
    pub dt: f64,
    pub h: f64,
    pub gamma: f64,
    pub lambda: Arc<LambdaMax>,
}

impl PatchTask {
    fn finish(&self, r: Result<PatchUpdate, FvError>) -> Result<PatchUpdate, FvError> {
        if let Ok(up) = &r {
            self.lambda.fold(up.lambda_max);
        }
        r
    }
}

impl EnclaveWork for PatchTask {
    type Output = Result<PatchUpdate, FvError>;

    fn execute(self) -> Self::Output {
        let r = update_patch(&self.patch, self.dt, self.h, self.gamma);
        self.finish(r)
    }

    fn execute_fused(batch: Vec<Self>) -> Vec<Self::Output> {
        let mut scratch = FluxScratch::default();
        batch
            .into_iter()
            .map(|t| {
                let r = update_patch_with(&t.patch, t.dt, t.h, t.gamma, &mut scratch);
                t.finish(r)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub solver: SolverKind,
    pub mesh: MeshConfig,
    pub balance: Balance,
    /// Partition count; `None` means one per thread (at least two when ill-balanced).
    pub partitions: Option<usize>,
    pub runtime: RuntimeConfig,
    /// Background sampler period; `None` disables the sampler.
    pub sample_period: Option<Duration>,
}

impl SolverConfig {
    pub fn new(solver: SolverKind, mesh: MeshConfig, runtime: RuntimeConfig) -> Self {
        Self {
            solver,
            mesh,
            balance: Balance::Well,
            partitions: None,
            runtime,
            sample_period: None,
        }
    }

    pub fn with_balance(mut self, balance: Balance) -> Self {
        self.balance = balance;
        self
    }

    pub fn with_partitions(mut self, partitions: usize) -> Self {
        self.partitions = Some(partitions);
        self
    }

    pub fn with_sample_period(mut self, period: Duration) -> Self {
        self.sample_period = Some(period);
        self
    }

    pub fn partition_count(&self) -> usize {
        let threads = self.runtime.threads.max(1);
        self.partitions.unwrap_or(match self.balance {
            Balance::Well => threads,
            Balance::Ill => threads.max(2),
        })
    }
}

/// Update counts accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounts {
    /// Enclave tasks spawned.
    pub spawned: u64,
    /// Patches updated directly inside a traversal task.
    pub in_place: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct StepTiming {
    wall_ns: u64,
    primary_ns: u64,
    secondary_ns: u64,
}

pub struct SolverState {
    solver: SolverKind,
    mesh: Arc<Mesh>,
    decomposition: Arc<Decomposition>,
    runtime: Runtime<PatchTask>,
    dt: f64,
    step: u64,
    lambda: Arc<LambdaMax>,
    task_ids: Arc<Vec<AtomicU64>>,
    counts: UpdateCounts,
    timings: Vec<StepTiming>,
}

impl SolverState {
    pub fn new(config: SolverConfig) -> Result<Self, SolverError> {
        let mesh = Mesh::new(config.mesh)?;
        Self::with_mesh(config, mesh)
    }

    /// Uses an explicit initial mesh; `config.mesh` must describe it.
    pub fn with_mesh(config: SolverConfig, mesh: Mesh) -> Result<Self, SolverError> {
        let m = mesh.patches_per_axis();
        let decomposition = Decomposition::new(m, config.balance, config.partition_count())?;
        let runtime = Runtime::with_config(config.runtime)?;
        let lambda0 = mesh.global_lambda()?;
        let dt = admissible_dt(lambda0, mesh.config().volume_width(), mesh.config().cfl)?;
        let task_ids = (0..mesh.patch_count()).map(|_| AtomicU64::new(0)).collect();
        let mut state = Self {
            solver: config.solver,
            mesh: Arc::new(mesh),
            decomposition: Arc::new(decomposition),
            runtime,
            dt,
            step: 0,
            lambda: Arc::new(LambdaMax::new()),
            task_ids: Arc::new(task_ids),
            counts: UpdateCounts::default(),
            timings: Vec::new(),
        };
        for idx in 0..state.mesh.patch_count() {
            state.mesh.lock(idx).set_owner(state.decomposition.owner[idx]);
        }
        if let Some(period) = config.sample_period {
            state.runtime.start_sampler(period);
        }
        Ok(state)
    }

    pub fn solver(&self) -> SolverKind {
        self.solver
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomposition
    }

    pub fn runtime(&self) -> &Runtime<PatchTask> {
        &self.runtime
    }

    /// Time-step size used by the next step.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn counts(&self) -> UpdateCounts {
        self.counts
    }

    pub fn time_step(&mut self) -> Result<(), SolverError> {
        match self.solver {
            SolverKind::Bsp => self.bsp_time_step(),
            SolverKind::Enclave => self.enclave_time_step(),
        }
    }

    fn begin_step(&self) -> Instant {
        self.lambda.reset();
        let lane = self.runtime.driver_lane();
        self.runtime
            .tracer()
            .record(lane, EventKind::SectionStart, section_id(self.step, Phase::Step), 0);
        Instant::now()
    }

    /// Serial tail of a step: the time-step reduction and a finalisation hook.
    fn finish_step(&mut self, started: Instant, primary_ns: u64, secondary_ns: u64) -> Result<(), SolverError> {
        let tracer = Arc::clone(self.runtime.tracer());
        let lane = self.runtime.driver_lane();
        let fin = section_id(self.step, Phase::Finalise);
        tracer.record(lane, EventKind::SectionStart, fin, 0);
        let lambda = self.lambda.get();
        #[cfg(debug_assertions)]
        {
            let serial = self.mesh.global_lambda()?;
            debug_assert_eq!(lambda.to_bits(), serial.to_bits(), "parallel eigenvalue reduction disagrees");
        }
        let dt = admissible_dt(lambda, self.mesh.config().volume_width(), self.mesh.config().cfl)?;
        tracer.record(lane, EventKind::SectionEnd, fin, 0);
        tracer.record(lane, EventKind::SectionEnd, section_id(self.step, Phase::Step), 0);
        self.dt = dt;
        self.step += 1;
        self.timings.push(StepTiming {
            wall_ns: started.elapsed().as_nanos() as u64,
            primary_ns,
            secondary_ns,
        });
        Ok(())
    }

    /// Closes the step's trace section after a failure so the log stays balanced.
    fn abort_step(&self) {
        let lane = self.runtime.driver_lane();
        self.runtime
            .tracer()
            .record(lane, EventKind::SectionEnd, section_id(self.step, Phase::Step), 0);
    }

    fn section(&self, phase: Phase, scope: WaitScope) -> BspSection<PatchTask> {
        BspSection::new(section_id(self.step, phase), scope)
    }

    fn run_section(&self, section: BspSection<PatchTask>) -> Result<u64, SolverError> {
        let t0 = Instant::now();
        let r = self.runtime.run_bsp_section(section);
        let ns = t0.elapsed().as_nanos() as u64;
        if r.is_err() {
            self.abort_step();
        }
        r?;
        Ok(ns)
    }

    /// One BSP section: every traversal task writes the halo, updates, folds
    /// its eigenvalue and projects onto the faces for all of its patches.
    pub fn bsp_time_step(&mut self) -> Result<(), SolverError> {
        let started = self.begin_step();
        let mut section = self.section(Phase::Primary, WaitScope::Traversal);
        for p in 0..self.decomposition.partitions.len() {
            let mesh = Arc::clone(&self.mesh);
            let decomposition = Arc::clone(&self.decomposition);
            let lambda = Arc::clone(&self.lambda);
            let dt = self.dt;
            section.push(move |_ctx| {
                for idx in decomposition.patches_of(p) {
                    update_in_place(&mesh, idx, dt, &lambda)?;
                }
                Ok(())
            });
        }
        let primary_ns = self.run_section(section)?;
        self.counts.in_place += self.mesh.patch_count() as u64;
        self.finish_step(started, primary_ns, 0)
    }

    /// Two traversals around the boundary exchange.
    pub fn enclave_time_step(&mut self) -> Result<(), SolverError> {
        let started = self.begin_step();
        let cfg = *self.mesh.config();
        let h = cfg.volume_width();

        let mut primary = self.section(Phase::Primary, WaitScope::Traversal);
        for p in 0..self.decomposition.partitions.len() {
            let mesh = Arc::clone(&self.mesh);
            let decomposition = Arc::clone(&self.decomposition);
            let lambda = Arc::clone(&self.lambda);
            let task_ids = Arc::clone(&self.task_ids);
            let dt = self.dt;
            primary.push(move |ctx| {
                for idx in decomposition.patches_of(p) {
                    match decomposition.classes[idx] {
                        CellClass::Skeleton => update_in_place(&mesh, idx, dt, &lambda)?,
                        CellClass::Enclave => {
                            let patch = mesh.snapshot_with_halo(idx).map_err(RuntimeError::task)?;
                            let id = ctx.next_task_id();
                            task_ids[idx].store(id, Ordering::Release);
                            let work = PatchTask {
                                patch,
                                dt,
                                h,
                                gamma: cfg.gamma,
                                lambda: Arc::clone(&lambda),
                            };
                            ctx.spawn_enclave(EnclaveTask::new(id, PATCH_TASK_TYPE, work))?;
                        }
                    }
                }
                Ok(())
            });
        }
        let primary_ns = self.run_section(primary)?;
        let skeletons = self.decomposition.skeleton_count() as u64;
        self.counts.in_place += skeletons;
        self.counts.spawned += self.mesh.patch_count() as u64 - skeletons;

        if let Err(e) = self.exchange_boundaries() {
            self.abort_step();
            return Err(e);
        }

        let mut secondary = self.section(Phase::Secondary, WaitScope::All);
        for p in 0..self.decomposition.partitions.len() {
            let mesh = Arc::clone(&self.mesh);
            let decomposition = Arc::clone(&self.decomposition);
            let task_ids = Arc::clone(&self.task_ids);
            secondary.push(move |ctx| {
                for idx in decomposition.patches_of(p) {
                    if decomposition.classes[idx] != CellClass::Enclave {
                        continue;
                    }
                    let id = task_ids[idx].load(Ordering::Acquire);
                    let update = ctx.wait_for_outcome(id)?.map_err(RuntimeError::task)?;
                    let mut patch = mesh.lock(idx);
                    patch.apply_update(update.interior);
                    project_to_faces(&patch, mesh.face(idx));
                }
                Ok(())
            });
        }
        let secondary_ns = self.run_section(secondary)?;
        self.finish_step(started, primary_ns, secondary_ns)
    }

    /// Shared memory needs no copies here; the exchange checks that every
    /// skeleton patch has published the strips of the new step.
    fn exchange_boundaries(&self) -> Result<(), SolverError> {
        let expected = self.step + 2;
        for (idx, class) in self.decomposition.classes.iter().enumerate() {
            if *class != CellClass::Skeleton {
                continue;
            }
            for side in Side::ALL {
                let found = self.mesh.face(idx).generation(side);
                if found != expected {
                    return Err(FvError::StaleHalo {
                        patch: idx,
                        side,
                        expected,
                        found,
                    }
                    .into());
                }
            }
        }
        Ok(())
    }

    /// Runs `steps` steps and collects the trace and metrics.
    pub fn run_simulation(&mut self, steps: u64) -> Result<SimulationResult, SolverError> {
        if steps == 0 {
            return Err(SolverError::Config("steps must be at least 1".into()));
        }
        let initial_totals = self.mesh.totals();
        let first = self.timings.len();
        for _ in 0..steps {
            self.time_step()?;
        }
        self.runtime.stop_sampler();
        let events = self.runtime.tracer().take_events();
        let workers = self.runtime.threads();
        let patches = self.mesh.patch_count();
        let summary = if self.runtime.tracer().is_enabled() {
            trace::summarize(&events, workers, patches)?
        } else {
            summary_from_timings(&self.timings[first..], self.step - steps, workers, patches)
        };
        Ok(SimulationResult {
            steps,
            summary,
            events,
            checksum: self.mesh.checksum(),
            initial_totals,
            final_totals: self.mesh.totals(),
            counts: self.counts,
            runtime: self.runtime.stats(),
            final_dt: self.dt,
        })
    }
}

fn update_in_place(mesh: &Mesh, idx: usize, dt: f64, lambda: &LambdaMax) -> Result<(), RuntimeError> {
    let cfg = mesh.config();
    let mut patch = mesh.lock(idx);
    assemble_halo(&mut patch, mesh.faces(), mesh.patches_per_axis()).map_err(RuntimeError::task)?;
    let update = update_patch(&patch, dt, cfg.volume_width(), cfg.gamma).map_err(RuntimeError::task)?;
    lambda.fold(update.lambda_max);
    patch.apply_update(update.interior);
    project_to_faces(&patch, mesh.face(idx));
    Ok(())
}

fn summary_from_timings(timings: &[StepTiming], first_step: u64, workers: usize, patches: usize) -> Summary {
    let steps: Vec<StepSummary> = timings
        .iter()
        .enumerate()
        .map(|(i, t)| StepSummary {
            step: first_step + i as u64,
            primary_ns: t.primary_ns,
            secondary_ns: t.secondary_ns,
            wall_ns: t.wall_ns,
            peak_pending: 0,
            spin_fraction: 0.0,
        })
        .collect();
    let total_wall_ns: u64 = steps.iter().map(|s| s.wall_ns).sum();
    Summary {
        time_per_step_per_patch_ns: total_wall_ns as f64 / (steps.len().max(1) * patches.max(1)) as f64,
        steps,
        total_wall_ns,
        peak_pending: 0,
        worker_spin_fraction: vec![0.0; workers],
        tasks_executed: 0,
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub steps: u64,
    pub summary: Summary,
    pub events: Vec<Event>,
    pub checksum: String,
    pub initial_totals: [f64; NUM_VARS],
    pub final_totals: [f64; NUM_VARS],
    pub counts: UpdateCounts,
    pub runtime: RuntimeStats,
    pub final_dt: f64,
}

impl SimulationResult {
    /// Largest relative change of the domain sums. Momentum sums start near
    /// zero, so their drift is taken relative to the total mass instead.
    pub fn max_relative_drift(&self) -> f64 {
        let scale = |k: usize| {
            let a = self.initial_totals[k].abs();
            if a > 0.0 && k != 1 && k != 2 {
                a
            } else {
                self.initial_totals[0].abs().max(f64::MIN_POSITIVE)
            }
        };
        (0..NUM_VARS)
            .map(|k| (self.final_totals[k] - self.initial_totals[k]).abs() / scale(k))
            .fold(0.0, f64::max)
    }
}

/// Builds a solver and runs it.
pub fn run_simulation(config: SolverConfig, steps: u64) -> Result<SimulationResult, SolverError> {
    SolverState::new(config)?.run_simulation(steps)
}
