use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::EnclaveTask;

/// The helper container: one central FIFO of held-back enclave tasks.
#[derive(Debug)]
pub struct PendingQueue<W> {
    inner: Mutex<Inner<W>>,
    len: AtomicUsize,
}

#[derive(Debug)]
struct Inner<W> {
    queue: VecDeque<EnclaveTask<W>>,
    spawned: u64,
    popped: u64,
}

impl<W> Default for PendingQueue<W> {
    fn default() -> Self {
        Self {
            inner: Mutex::new(Inner {
                queue: VecDeque::new(),
                spawned: 0,
                popped: 0,
            }),
            len: AtomicUsize::new(0),
        }
    }
}

impl<W> PendingQueue<W> {
    pub fn push(&self, task: EnclaveTask<W>) {
        let mut g = self.inner.lock().expect("pending queue poisoned");
        g.queue.push_back(task);
        g.spawned += 1;
        self.len.store(g.queue.len(), Ordering::Release);
    }

    /// Pops `size(len)` tasks atomically, where `len` is the queue length
    /// observed under the lock.
    pub fn pop_batch(&self, size: impl FnOnce(usize) -> usize) -> Vec<EnclaveTask<W>> {
        let mut g = self.inner.lock().expect("pending queue poisoned");
        let k = size(g.queue.len()).min(g.queue.len());
        let batch: Vec<_> = g.queue.drain(..k).collect();
        g.popped += k as u64;
        self.len.store(g.queue.len(), Ordering::Release);
        batch
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(spawned, popped)` since creation.
    pub fn totals(&self) -> (u64, u64) {
        let g = self.inner.lock().expect("pending queue poisoned");
        (g.spawned, g.popped)
    }

    pub fn clear(&self) -> usize {
        let mut g = self.inner.lock().expect("pending queue poisoned");
        let n = g.queue.len();
        g.queue.clear();
        g.popped += n as u64;
        self.len.store(0, Ordering::Release);
        n
    }
}
