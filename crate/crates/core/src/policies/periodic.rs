use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use super::queue::TaskQueue;
use super::{steal_random, Placement, PolicyKind, QueueItem, SchedulingPolicy};
use crate::sched::{Priority, WorkerId};

/// Number of shared high-priority queues.
pub const HIGH_QUEUES: usize = 2;

/// Dequeue attempts per worker between two balancing passes.
pub const BALANCE_PERIOD: u32 = 100;

/// Per-worker queues, two shared high-priority queues and one shared
/// low-priority queue. Every [`BALANCE_PERIOD`] dequeue attempts a worker
/// evens out the most and least loaded per-worker queues.
pub struct PeriodicPriorityPolicy<T> {
    local: Vec<TaskQueue<T>>,
    high: [TaskQueue<T>; HIGH_QUEUES],
    low: TaskQueue<T>,
    attempts: Vec<AtomicU32>,
    next: AtomicUsize,
    next_high: AtomicUsize,
    balance_passes: AtomicUsize,
}

impl<T: QueueItem> PeriodicPriorityPolicy<T> {
    pub fn new(num_workers: usize) -> Self {
        PeriodicPriorityPolicy {
            local: (0..num_workers).map(|_| TaskQueue::new()).collect(),
            high: [TaskQueue::new(), TaskQueue::new()],
            low: TaskQueue::new(),
            attempts: (0..num_workers).map(|_| AtomicU32::new(0)).collect(),
            next: AtomicUsize::new(0),
            next_high: AtomicUsize::new(0),
            balance_passes: AtomicUsize::new(0),
        }
    }

    /// How many balancing passes have run so far.
    pub fn balance_passes(&self) -> usize {
        self.balance_passes.load(Ordering::Relaxed)
    }

    fn balance(&self) {
        self.balance_passes.fetch_add(1, Ordering::Relaxed);
        let lens: Vec<usize> = self.local.iter().map(TaskQueue::len).collect();
        let Some((max_i, &max_len)) = lens.iter().enumerate().max_by_key(|(_, l)| **l) else {
            return;
        };
        let Some((min_i, &min_len)) = lens.iter().enumerate().min_by_key(|(_, l)| **l) else {
            return;
        };
        let moved = (max_len - min_len) / 2;
        if max_i != min_i && moved > 0 {
            let batch = self.local[max_i].take_front(moved);
            self.local[min_i].extend_back(batch);
        }
    }
}

impl<T: QueueItem> SchedulingPolicy<T> for PeriodicPriorityPolicy<T> {
    fn kind(&self) -> PolicyKind {
        PolicyKind::PeriodicPriority
    }

    fn num_workers(&self) -> usize {
        self.local.len()
    }

    fn enqueue(&self, item: T, hint: Option<WorkerId>) -> Placement {
        match item.priority() {
            Priority::High => {
                let q = self.next_high.fetch_add(1, Ordering::Relaxed) % HIGH_QUEUES;
                self.high[q].push_back(item);
                Placement::Shared
            }
            Priority::Low => {
                self.low.push_back(item);
                Placement::Shared
            }
            Priority::Normal => {
                let n = self.local.len();
                let w = match hint {
                    Some(w) => w.index() % n,
                    None => self.next.fetch_add(1, Ordering::Relaxed) % n,
                };
                self.local[w].push_back(item);
                Placement::Worker(WorkerId::new(w))
            }
        }
    }

    fn dequeue(&self, worker: WorkerId) -> Option<T> {
        let w = worker.index();
        let n = self.attempts[w].fetch_add(1, Ordering::Relaxed) + 1;
        if n.is_multiple_of(BALANCE_PERIOD) {
            self.balance();
        }
        let first = w % HIGH_QUEUES;
        (0..HIGH_QUEUES)
            .find_map(|k| self.high[(first + k) % HIGH_QUEUES].pop_front())
            .or_else(|| self.local[w].pop_front())
            .or_else(|| self.low.pop_front())
    }

    fn steal(&self, thief: WorkerId) -> Option<T> {
        steal_random(self.local.len(), thief, |v| self.local[v].pop_front())
    }

    fn allows_stealing(&self) -> bool {
        true
    }

    fn queued(&self) -> usize {
        self.local.iter().chain(&self.high).map(TaskQueue::len).sum::<usize>() + self.low.len()
    }
}
