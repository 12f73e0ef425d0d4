use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;

/// A locked double-ended queue with a lock-free length hint, so that idle
/// workers can skip empty queues without touching the lock.
pub(crate) struct TaskQueue<T> {
    items: Mutex<VecDeque<T>>,
    len: AtomicUsize,
}

impl<T> TaskQueue<T> {
    pub(crate) fn new() -> Self {
        TaskQueue {
            items: Mutex::new(VecDeque::new()),
            len: AtomicUsize::new(0),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.len.load(Ordering::Acquire)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push_back(&self, item: T) {
        let mut q = self.items.lock();
        q.push_back(item);
        self.len.store(q.len(), Ordering::Release);
    }

    pub(crate) fn push_front(&self, item: T) {
        let mut q = self.items.lock();
        q.push_front(item);
        self.len.store(q.len(), Ordering::Release);
    }

    pub(crate) fn pop_front(&self) -> Option<T> {
        if self.is_empty() {
            return None;
        }
        let mut q = self.items.lock();
        let item = q.pop_front();
        self.len.store(q.len(), Ordering::Release);
        item
    }

    pub(crate) fn pop_back(&self) -> Option<T> {
        if self.is_empty() {
            return None;
        }
        let mut q = self.items.lock();
        let item = q.pop_back();
        self.len.store(q.len(), Ordering::Release);
        item
    }

    /// Removes up to `n` items from the front.
    pub(crate) fn take_front(&self, n: usize) -> Vec<T> {
        if n == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut q = self.items.lock();
        let k = n.min(q.len());
        let out: Vec<T> = q.drain(..k).collect();
        self.len.store(q.len(), Ordering::Release);
        out
    }

    pub(crate) fn extend_back(&self, items: Vec<T>) {
        if items.is_empty() {
            return;
        }
        let mut q = self.items.lock();
        q.extend(items);
        self.len.store(q.len(), Ordering::Release);
    }
}
