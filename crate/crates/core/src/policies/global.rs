use super::queue::TaskQueue;
use super::{Placement, PolicyKind, QueueItem, SchedulingPolicy};
use crate::sched::WorkerId;

/// One shared FIFO that every worker pulls from.
pub struct GlobalPolicy<T> {
    queue: TaskQueue<T>,
    num_workers: usize,
}

impl<T: QueueItem> GlobalPolicy<T> {
    pub fn new(num_workers: usize) -> Self {
        GlobalPolicy {
            queue: TaskQueue::new(),
            num_workers,
        }
    }
}

impl<T: QueueItem> SchedulingPolicy<T> for GlobalPolicy<T> {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Global
    }

    fn num_workers(&self) -> usize {
        self.num_workers
    }

    fn enqueue(&self, item: T, _hint: Option<WorkerId>) -> Placement {
        self.queue.push_back(item);
        Placement::Shared
    }

    fn dequeue(&self, _worker: WorkerId) -> Option<T> {
        self.queue.pop_front()
    }

    // The shared queue is already visible to everyone.
    fn steal(&self, _thief: WorkerId) -> Option<T> {
        None
    }

    fn allows_stealing(&self) -> bool {
        false
    }

    fn work_is_shared(&self) -> bool {
        true
    }

    fn queued(&self) -> usize {
        self.queue.len()
    }
}
