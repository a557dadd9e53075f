//! Event recording and the per-step metrics derived from it.
//!
//! Every thread appends to its own lane; lanes are merged after the run.
//! Lane ids `0..T` are pool workers, `T` is the driver thread and `T + 1`
//! the sampler.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("unbalanced {what} events for id {id}")]
    Unbalanced { what: &'static str, id: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Spawn,
    TaskStart,
    TaskEnd,
    SectionStart,
    SectionEnd,
    /// `aux` is the time in nanoseconds spent in unproductive polls.
    PollSpin,
    /// `id` names the counter (see [`Counter`]), `aux` its value.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t_ns: u64,
    pub worker: usize,
    pub kind: EventKind,
    pub id: u64,
    pub aux: u64,
}

/// Counters carried by sample events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Counter {
    /// Enclave tasks spawned but not started: helper queue plus pool ready queue.
    Pending = 0,
    /// Enclave tasks sitting in the pool ready queue.
    Ready = 1,
    /// Traversal tasks currently executing.
    ActiveBsp = 2,
}

/// Phase of a time step, encoded into section ids as `step * 4 + phase`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Step = 0,
    Primary = 1,
    Secondary = 2,
    Finalise = 3,
}

pub fn section_id(step: u64, phase: Phase) -> u64 {
    step * 4 + phase as u64
}

pub fn split_section_id(id: u64) -> (u64, u64) {
    (id / 4, id % 4)
}

/// Per-lane append buffers behind uncontended locks.
#[derive(Debug)]
pub struct Tracer {
    enabled: bool,
    epoch: Instant,
    lanes: Vec<Mutex<Vec<Event>>>,
}

impl Tracer {
    pub fn new(lanes: usize, enabled: bool) -> Self {
        Self {
            enabled,
            epoch: Instant::now(),
            lanes: (0..lanes).map(|_| Mutex::new(Vec::new())).collect(),
        }
    }

    pub fn disabled() -> Self {
        Self::new(0, false)
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    #[inline]
    pub fn record(&self, lane: usize, kind: EventKind, id: u64, aux: u64) {
        if !self.enabled {
            return;
        }
        let t_ns = self.now_ns();
        self.lanes[lane].lock().expect("trace lane poisoned").push(Event {
            t_ns,
            worker: lane,
            kind,
            id,
            aux,
        });
    }

    /// Moves all recorded events out, merged by timestamp then lane.
    pub fn take_events(&self) -> Vec<Event> {
        let mut all = Vec::new();
        for lane in &self.lanes {
            all.append(&mut lane.lock().expect("trace lane poisoned"));
        }
        // Stable sort keeps per-lane order for equal timestamps.
        all.sort_by_key(|e| (e.t_ns, e.worker));
        all
    }

    pub fn event_count(&self) -> usize {
        self.lanes.iter().map(|l| l.lock().expect("trace lane poisoned").len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: u64,
    pub primary_ns: u64,
    pub secondary_ns: u64,
    pub wall_ns: u64,
    pub peak_pending: u64,
    pub spin_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: Vec<StepSummary>,
    pub total_wall_ns: u64,
    pub time_per_step_per_patch_ns: f64,
    pub peak_pending: u64,
    /// Spin time over total wall time, per pool worker.
    pub worker_spin_fraction: Vec<f64>,
    pub tasks_executed: u64,
}

impl Summary {
    pub fn median_primary_ns(&self) -> u64 {
        median(self.steps.iter().map(|s| s.primary_ns).collect())
    }

    pub fn median_secondary_ns(&self) -> u64 {
        median(self.steps.iter().map(|s| s.secondary_ns).collect())
    }
}

fn median(mut v: Vec<u64>) -> u64 {
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2
    }
}

/// Derives per-step metrics from a merged event log.
///
/// `workers` is the pool size and `patches` the mesh patch count.
pub fn summarize(events: &[Event], workers: usize, patches: usize) -> Result<Summary, TraceError> {
    let mut open_sections: HashMap<u64, u64> = HashMap::new();
    let mut sections: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut open_tasks: HashMap<u64, usize> = HashMap::new();
    let mut tasks_executed = 0;
    for e in events {
        match e.kind {
            EventKind::SectionStart => {
                if open_sections.insert(e.id, e.t_ns).is_some() {
                    return Err(TraceError::Unbalanced { what: "section", id: e.id });
                }
            }
            EventKind::SectionEnd => {
                let start = open_sections
                    .remove(&e.id)
                    .ok_or(TraceError::Unbalanced { what: "section", id: e.id })?;
                sections.insert(e.id, (start, e.t_ns));
            }
            EventKind::TaskStart => {
                if open_tasks.insert(e.id, e.worker).is_some() {
                    return Err(TraceError::Unbalanced { what: "task", id: e.id });
                }
            }
            EventKind::TaskEnd => {
                if open_tasks.remove(&e.id) != Some(e.worker) {
                    return Err(TraceError::Unbalanced { what: "task", id: e.id });
                }
                tasks_executed += 1;
            }
            _ => {}
        }
    }
    if let Some(&id) = open_sections.keys().next() {
        return Err(TraceError::Unbalanced { what: "section", id });
    }
    if let Some(&id) = open_tasks.keys().next() {
        return Err(TraceError::Unbalanced { what: "task", id });
    }

    let owned;
    let sorted: &[Event] = if events.is_sorted_by_key(|e| e.t_ns) {
        events
    } else {
        let mut v = events.to_vec();
        v.sort_by_key(|e| (e.t_ns, e.worker));
        owned = v;
        &owned
    };
    let duration = |id: u64| sections.get(&id).map(|(a, b)| b - a).unwrap_or(0);
    let mut steps = Vec::new();
    let mut worker_spin = vec![0u64; workers];
    let mut peak_pending = 0;
    for (&id, &(start, end)) in &sections {
        let (step, phase) = split_section_id(id);
        if phase != Phase::Step as u64 {
            continue;
        }
        let lo = sorted.partition_point(|e| e.t_ns < start);
        let hi = sorted.partition_point(|e| e.t_ns <= end);
        let in_step = || sorted[lo..hi].iter();
        let peak = in_step()
            .filter(|e| e.kind == EventKind::Sample && e.id == Counter::Pending as u64)
            .map(|e| e.aux)
            .max()
            .unwrap_or(0);
        let mut spin = 0u64;
        for e in in_step().filter(|e| e.kind == EventKind::PollSpin) {
            spin += e.aux;
            if e.worker < workers {
                worker_spin[e.worker] += e.aux;
            }
        }
        let wall_ns = end - start;
        let capacity = (workers.max(1) as u64 * wall_ns) as f64;
        let spin_fraction = if capacity > 0.0 {
            (spin as f64 / capacity).min(1.0)
        } else {
            0.0
        };
        peak_pending = peak_pending.max(peak);
        steps.push(StepSummary {
            step,
            primary_ns: duration(section_id(step, Phase::Primary)),
            secondary_ns: duration(section_id(step, Phase::Secondary)),
            wall_ns,
            peak_pending: peak,
            spin_fraction,
        });
    }
    let total_wall_ns: u64 = steps.iter().map(|s| s.wall_ns).sum();
    let denom = (steps.len() * patches.max(1)) as f64;
    let time_per_step_per_patch_ns = if steps.is_empty() { 0.0 } else { total_wall_ns as f64 / denom };
    let worker_spin_fraction = worker_spin
        .iter()
        .map(|&s| if total_wall_ns > 0 { (s as f64 / total_wall_ns as f64).min(1.0) } else { 0.0 })
        .collect();
    Ok(Summary {
        steps,
        total_wall_ns,
        time_per_step_per_patch_ns,
        peak_pending,
        worker_spin_fraction,
        tasks_executed,
    })
}

/// Header: `t_ns,worker,kind,id,aux`.
pub fn write_events_csv(path: &Path, events: &[Event]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_path(path)?;
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv(path: &Path) -> Result<Vec<Event>, TraceError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(TraceError::from)).collect()
}

/// Header: `step,primary_ns,secondary_ns,wall_ns,peak_pending,spin_fraction`.
pub fn write_summary_csv(path: &Path, summary: &Summary) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &summary.steps {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
