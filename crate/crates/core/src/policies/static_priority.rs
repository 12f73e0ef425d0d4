use std::sync::atomic::{AtomicUsize, Ordering};

use super::queue::TaskQueue;
use super::{Placement, PolicyKind, QueueItem, SchedulingPolicy};
use crate::sched::WorkerId;

/// Round-robin placement onto per-worker queues. Once an item is assigned a
/// worker it stays there: there is no stealing, and re-enqueued items go
/// back to the worker they were pinned to.
pub struct StaticPriorityPolicy<T> {
    queues: Vec<TaskQueue<T>>,
    next: AtomicUsize,
}

impl<T: QueueItem> StaticPriorityPolicy<T> {
    pub fn new(num_workers: usize) -> Self {
        StaticPriorityPolicy {
            queues: (0..num_workers).map(|_| TaskQueue::new()).collect(),
            next: AtomicUsize::new(0),
        }
    }
}

impl<T: QueueItem> SchedulingPolicy<T> for StaticPriorityPolicy<T> {
    fn kind(&self) -> PolicyKind {
        PolicyKind::StaticPriority
    }

    fn num_workers(&self) -> usize {
        self.queues.len()
    }

    // The hint is ignored: placement is round-robin only.
    fn enqueue(&self, mut item: T, _hint: Option<WorkerId>) -> Placement {
        let w = match item.pinned_worker() {
            Some(w) => w,
            None => {
                let w = WorkerId::new(self.next.fetch_add(1, Ordering::Relaxed) % self.queues.len());
                item.pin_to(w);
                w
            }
        };
        self.queues[w.index()].push_back(item);
        Placement::Worker(w)
    }

    fn dequeue(&self, worker: WorkerId) -> Option<T> {
        self.queues[worker.index()].pop_front()
    }

    fn steal(&self, _thief: WorkerId) -> Option<T> {
        None
    }

    fn allows_stealing(&self) -> bool {
        false
    }

    fn queued(&self) -> usize {
        self.queues.iter().map(TaskQueue::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::testing::*;

    #[test]
    fn round_robin_assignment() {
        let p = StaticPriorityPolicy::new(4);
        let placed: Vec<_> = (0..8)
            .map(|id| match p.enqueue(Item::new(id), None) {
                Placement::Worker(w) => w.index(),
                Placement::Shared => panic!("static placement is per worker"),
            })
            .collect();
        assert_eq!(placed, vec![0, 1, 2, 3, 0, 1, 2, 3]);
        for wi in 0..4 {
            let mine = drain(&p, w(wi));
            assert_eq!(mine, vec![wi, wi + 4]);
        }
    }

    #[test]
    fn never_steals() {
        let p = StaticPriorityPolicy::new(2);
        for id in 0..200 {
            p.enqueue(Item::new(id), None);
        }
        // Worker 1's queue holds 100 items; worker 0 cannot take them.
        assert!(p.steal(w(0)).is_none());
        assert!(p.steal(w(1)).is_none());
        assert_eq!(p.queued(), 200);
    }

    #[test]
    fn pinned_items_return_to_their_worker() {
        let p = StaticPriorityPolicy::new(3);
        p.enqueue(Item::new(0), None);
        p.enqueue(Item::new(1), None);
        let it = p.dequeue(w(1)).unwrap();
        assert_eq!(it.pinned, Some(w(1)));
        // Re-enqueue (e.g. after a suspension) with a misleading hint.
        p.enqueue(it, Some(w(2)));
        assert!(p.dequeue(w(2)).is_none());
        assert_eq!(p.dequeue(w(1)).unwrap().id, 1);
    }
}
