use std::collections::HashMap;
use std::sync::Mutex;

use super::{RuntimeError, TaskId};

/// Finished enclave results keyed by task id.
#[derive(Debug)]
pub struct OutcomeTable<O> {
    map: Mutex<HashMap<TaskId, O>>,
}

impl<O> Default for OutcomeTable<O> {
    fn default() -> Self {
        Self {
            map: Mutex::new(HashMap::new()),
        }
    }
}

impl<O> OutcomeTable<O> {
    pub fn insert(&self, id: TaskId, outcome: O) -> Result<(), RuntimeError> {
        let mut map = self.map.lock().expect("outcome table poisoned");
        if map.contains_key(&id) {
            return Err(RuntimeError::DuplicateOutcome(id));
        }
        map.insert(id, outcome);
        Ok(())
    }

    /// Removes and returns the outcome if it has been entered.
    pub fn take(&self, id: TaskId) -> Option<O> {
        self.map.lock().expect("outcome table poisoned").remove(&id)
    }

    pub fn contains(&self, id: TaskId) -> bool {
        self.map.lock().expect("outcome table poisoned").contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("outcome table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.map.lock().expect("outcome table poisoned").clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn insert_then_take() {
        let t = OutcomeTable::default();
        t.insert(3, "payload").unwrap();
        assert!(t.contains(3));
        assert_eq!(t.take(3), Some("payload"));
        assert_eq!(t.take(3), None);
    }

    #[test]
    fn double_insert_fails() {
        let t = OutcomeTable::default();
        t.insert(1, 1.0).unwrap();
        assert!(matches!(t.insert(1, 2.0), Err(RuntimeError::DuplicateOutcome(1))));
        assert_eq!(t.take(1), Some(1.0));
    }

    #[test]
    fn concurrent_distinct_inserts() {
        let t = Arc::new(OutcomeTable::default());
        let handles: Vec<_> = (0..8)
            .map(|w| {
                let t = Arc::clone(&t);
                std::thread::spawn(move || {
                    for i in 0..125u64 {
                        let id = w * 125 + i + 1;
                        t.insert(id, id * 10).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(t.len(), 1000);
        for id in 1..=1000u64 {
            assert_eq!(t.take(id), Some(id * 10));
        }
    }
}
