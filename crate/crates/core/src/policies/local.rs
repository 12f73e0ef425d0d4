use std::sync::atomic::{AtomicUsize, Ordering};

use super::queue::TaskQueue;
use super::{steal_random, Placement, PolicyKind, QueueItem, SchedulingPolicy};
use crate::sched::{Priority, WorkerId};

/// Thread-local scheduling: one FIFO per worker, optionally fronted by one
/// high-priority FIFO per worker (the default `priority-local` policy).
pub struct LocalPolicy<T> {
    normal: Vec<TaskQueue<T>>,
    /// Empty for plain `local`.
    high: Vec<TaskQueue<T>>,
    next: AtomicUsize,
}

impl<T: QueueItem> LocalPolicy<T> {
    /// Plain `local`: no priority tier.
    pub fn new(num_workers: usize) -> Self {
        LocalPolicy {
            normal: (0..num_workers).map(|_| TaskQueue::new()).collect(),
            high: Vec::new(),
            next: AtomicUsize::new(0),
        }
    }

    /// `priority-local`: as many high-priority queues as workers.
    pub fn with_priorities(num_workers: usize) -> Self {
        LocalPolicy {
            high: (0..num_workers).map(|_| TaskQueue::new()).collect(),
            ..Self::new(num_workers)
        }
    }

    fn target(&self, hint: Option<WorkerId>) -> usize {
        let n = self.normal.len();
        match hint {
            Some(w) => w.index() % n,
            None => self.next.fetch_add(1, Ordering::Relaxed) % n,
        }
    }
}

impl<T: QueueItem> SchedulingPolicy<T> for LocalPolicy<T> {
    fn kind(&self) -> PolicyKind {
        if self.high.is_empty() {
            PolicyKind::Local
        } else {
            PolicyKind::PriorityLocal
        }
    }

    fn num_workers(&self) -> usize {
        self.normal.len()
    }

    fn enqueue(&self, item: T, hint: Option<WorkerId>) -> Placement {
        let w = self.target(hint);
        if item.priority() == Priority::High && !self.high.is_empty() {
            self.high[w].push_back(item);
        } else {
            self.normal[w].push_back(item);
        }
        Placement::Worker(WorkerId::new(w))
    }

    fn dequeue(&self, worker: WorkerId) -> Option<T> {
        let w = worker.index();
        self.high
            .get(w)
            .and_then(TaskQueue::pop_front)
            .or_else(|| self.normal[w].pop_front())
    }

    fn steal(&self, thief: WorkerId) -> Option<T> {
        let n = self.normal.len();
        if !self.high.is_empty() {
            if let Some(it) = steal_random(n, thief, |v| self.high[v].pop_front()) {
                return Some(it);
            }
        }
        steal_random(n, thief, |v| self.normal[v].pop_front())
    }

    fn allows_stealing(&self) -> bool {
        true
    }

    fn queued(&self) -> usize {
        self.normal.iter().chain(&self.high).map(TaskQueue::len).sum()
    }
}
