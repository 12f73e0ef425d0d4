use std::sync::atomic::{AtomicUsize, Ordering};

use super::queue::TaskQueue;
use super::{steal_random, Placement, PolicyKind, QueueItem, SchedulingPolicy};
use crate::sched::WorkerId;

/// Arora-Blumofe-Plaxton work stealing: a deque per worker. The owner pushes
/// and pops at the top (back), thieves take from the bottom (front).
pub struct AbpPolicy<T> {
    deques: Vec<TaskQueue<T>>,
    next: AtomicUsize,
}

impl<T: QueueItem> AbpPolicy<T> {
    pub fn new(num_workers: usize) -> Self {
        AbpPolicy {
            deques: (0..num_workers).map(|_| TaskQueue::new()).collect(),
            next: AtomicUsize::new(0),
        }
    }
}

impl<T: QueueItem> SchedulingPolicy<T> for AbpPolicy<T> {
    fn kind(&self) -> PolicyKind {
        PolicyKind::AbpStealing
    }

    fn num_workers(&self) -> usize {
        self.deques.len()
    }

    fn enqueue(&self, item: T, hint: Option<WorkerId>) -> Placement {
        let n = self.deques.len();
        let w = match hint {
            Some(w) => w.index() % n,
            None => self.next.fetch_add(1, Ordering::Relaxed) % n,
        };
        self.deques[w].push_back(item);
        Placement::Worker(WorkerId::new(w))
    }

    fn enqueue_yielded(&self, item: T, worker: WorkerId) -> Placement {
        let w = worker.index() % self.deques.len();
        self.deques[w].push_front(item);
        Placement::Worker(WorkerId::new(w))
    }

    fn dequeue(&self, worker: WorkerId) -> Option<T> {
        self.deques[worker.index()].pop_back()
    }

    fn steal(&self, thief: WorkerId) -> Option<T> {
        steal_random(self.deques.len(), thief, |v| self.deques[v].pop_front())
    }

    fn allows_stealing(&self) -> bool {
        true
    }

    fn queued(&self) -> usize {
        self.deques.iter().map(TaskQueue::len).sum()
    }
}
