use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

pub const DEFAULT_WATCHDOG_POLLS: u64 = 1_000_000;

/// Trips after `limit` consecutive unproductive polls summed over all
/// consumers. Any executed task resets the count.
#[derive(Debug)]
pub struct Watchdog {
    limit: u64,
    unproductive: AtomicU64,
    tripped: AtomicBool,
}

impl Watchdog {
    pub fn new(limit: u64) -> Self {
        Self {
            limit: limit.max(1),
            unproductive: AtomicU64::new(0),
            tripped: AtomicBool::new(false),
        }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    /// Counts one unproductive poll; returns true once the limit is reached.
    pub fn spin(&self) -> bool {
        if self.unproductive.fetch_add(1, Ordering::Relaxed) + 1 >= self.limit {
            self.tripped.store(true, Ordering::Release);
        }
        self.is_tripped()
    }

    pub fn progress(&self) {
        if self.unproductive.load(Ordering::Relaxed) != 0 {
            self.unproductive.store(0, Ordering::Relaxed);
        }
    }

    pub fn is_tripped(&self) -> bool {
        self.tripped.load(Ordering::Acquire)
    }

    pub fn reset(&self) {
        self.unproductive.store(0, Ordering::Relaxed);
        self.tripped.store(false, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trips_after_limit() {
        let w = Watchdog::new(3);
        assert!(!w.spin());
        assert!(!w.spin());
        w.progress();
        assert!(!w.spin());
        assert!(!w.spin());
        assert!(w.spin());
        assert!(w.is_tripped());
        w.reset();
        assert!(!w.is_tripped());
    }
}
