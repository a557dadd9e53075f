use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Scheduling policy for enclave tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Enclave tasks go straight to the pool ready queue, capped at
    /// `ready_cap`; consumers poll with a yield.
    Native,
    /// Enclave tasks are queued in a helper container and only run by
    /// consumers that are waiting for an outcome.
    HoldBack,
    /// Hold-back plus idle BSP slots processing the helper queue while
    /// sibling traversal tasks still run.
    Backfill,
    /// Backfill where popped batches are fused per task type.
    MergeAndBackfill,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Native,
        StrategyKind::HoldBack,
        StrategyKind::Backfill,
        StrategyKind::MergeAndBackfill,
    ];

    pub const NAMES: [&'static str; 4] = ["native", "hold-back", "backfill", "merge-and-backfill"];

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    /// Whether enclave tasks bypass the pool and sit in the helper queue.
    pub fn holds_back(self) -> bool {
        self != StrategyKind::Native
    }

    /// Whether BSP sections run through the backfilling wrapper.
    pub fn backfills(self) -> bool {
        matches!(self, StrategyKind::Backfill | StrategyKind::MergeAndBackfill)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown threading model '{s}', expected one of: {}",
                    Self::NAMES.join(", ")
                )
            })
    }
}

/// How a blocked consumer picks work when it yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YieldMode {
    /// Any ready task may run.
    Fair,
    /// Only traversal tasks of the caller's own group may run. Models a
    /// runtime that keeps switching between siblings of one task group.
    StrictGroup,
}

impl YieldMode {
    pub const NAMES: [&'static str; 2] = ["fair", "strict-group"];

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

impl fmt::Display for YieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for YieldMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fair" => Ok(YieldMode::Fair),
            "strict-group" => Ok(YieldMode::StrictGroup),
            _ => Err(format!(
                "unknown yield mode '{s}', expected one of: {}",
                Self::NAMES.join(", ")
            )),
        }
    }
}

pub const DEFAULT_READY_CAP: usize = 1000;
pub const DEFAULT_MERGE_FRACTION: f64 = 0.5;
pub const DEFAULT_MAX_MERGE_BATCHES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Largest number of enclave tasks the native pool keeps ready before
    /// spawners run new tasks inline.
    pub ready_cap: usize,
    pub yield_mode: YieldMode,
    /// Share of the helper queue popped per backfill call.
    pub merge_fraction: f64,
    /// Fused batches allowed per BSP section before falling back to
    /// one-by-one execution.
    pub max_merge_batches_per_sweep: usize,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            ready_cap: DEFAULT_READY_CAP,
            yield_mode: YieldMode::Fair,
            merge_fraction: DEFAULT_MERGE_FRACTION,
            max_merge_batches_per_sweep: DEFAULT_MAX_MERGE_BATCHES,
        }
    }

    pub fn with_ready_cap(mut self, cap: usize) -> Self {
        self.ready_cap = cap;
        self
    }

    pub fn with_yield_mode(mut self, mode: YieldMode) -> Self {
        self.yield_mode = mode;
        self
    }

    pub fn with_merge_fraction(mut self, fraction: f64) -> Self {
        self.merge_fraction = fraction;
        self
    }

    pub fn with_max_merge_batches(mut self, cap: usize) -> Self {
        self.max_merge_batches_per_sweep = cap;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ready_cap < 1 {
            return Err("ready cap must be at least 1".into());
        }
        if !(self.merge_fraction > 0.0 && self.merge_fraction <= 1.0) {
            return Err(format!("merge fraction must lie in (0, 1], got {}", self.merge_fraction));
        }
        Ok(())
    }

    /// Tasks popped by a backfill call when `pending` tasks are queued.
    pub fn batch_size(&self, pending: usize) -> usize {
        ((pending as f64) * self.merge_fraction).ceil() as usize
    }
}

impl Default for Strategy {
    fn default() -> Self {
        Self::new(StrategyKind::Native)
    }
}
