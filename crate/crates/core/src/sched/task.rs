use std::any::Any;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::context::Stack;
use super::wait::Parked;
use super::worker::WorkerCtx;
use crate::par::TaskEnv;
use crate::policies::QueueItem;

/// Process-wide unique task identifier. Ids increase monotonically in
/// creation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(u64);

static NEXT_TASK_ID: AtomicU64 = AtomicU64::new(1);

impl TaskId {
    pub(crate) fn next() -> Self {
        TaskId(NEXT_TASK_ID.fetch_add(1, Ordering::Relaxed))
    }

    pub fn as_u64(self) -> u64 {
        self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task#{}", self.0)
    }
}

/// Index of a worker within one runtime, in `0..num_workers`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkerId(usize);

impl WorkerId {
    pub fn new(index: usize) -> Self {
        WorkerId(index)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "worker#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Priority {
    High,
    #[default]
    Normal,
    Low,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskState {
    Pending,
    Running,
    Suspended,
    Finished,
}

impl TaskState {
    pub fn can_become(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Pending, Running) | (Running, Suspended) | (Running, Finished) | (Suspended, Running)
        )
    }
}

pub(crate) type Body = Box<dyn FnOnce() + Send + 'static>;

/// Why a running task handed control back to its worker.
pub(crate) enum Exit {
    None,
    Finished,
    Yield,
    /// `call(slot, parked)` registers the parked task once the switch is done.
    Suspend {
        call: unsafe fn(*mut u8, Parked),
        slot: *mut u8,
    },
}

pub(crate) struct ExecContext {
    pub(crate) sp: usize,
    pub(crate) stack: Option<Stack>,
    /// Worker currently running this task; refreshed on every resume.
    pub(crate) worker: *const WorkerCtx,
}

pub(crate) struct Task {
    pub(crate) id: TaskId,
    pub(crate) priority: Priority,
    pub(crate) state: TaskState,
    pub(crate) pinned: Option<WorkerId>,
    pub(crate) last_worker: Option<WorkerId>,
    pub(crate) body: Option<Body>,
    pub(crate) env: Option<Arc<TaskEnv>>,
    pub(crate) ctx: ExecContext,
    pub(crate) exit: Exit,
    pub(crate) panic: Option<Box<dyn Any + Send>>,
}

// A task is touched by one worker at a time; the raw pointers inside refer
// to the worker currently driving it.
unsafe impl Send for Task {}

impl Task {
    pub(crate) fn new(body: Body, priority: Priority, env: Option<Arc<TaskEnv>>) -> Box<Task> {
        Box::new(Task {
            id: TaskId::next(),
            priority,
            state: TaskState::Pending,
            pinned: None,
            last_worker: None,
            body: Some(body),
            env,
            ctx: ExecContext {
                sp: 0,
                stack: None,
                worker: std::ptr::null(),
            },
            exit: Exit::None,
            panic: None,
        })
    }

    pub(crate) fn set_state(&mut self, next: TaskState) {
        debug_assert!(
            self.state.can_become(next),
            "{}: illegal transition {:?} -> {:?}",
            self.id,
            self.state,
            next
        );
        self.state = next;
    }

    /// Started but not finished: its stack holds live frames.
    fn mid_flight(&self) -> bool {
        self.ctx.stack.is_some() && self.state != TaskState::Finished
    }
}

impl Drop for Task {
    fn drop(&mut self) {
        if self.mid_flight() {
            // Frames on this stack may be borrowed by other tasks; never
            // unmap it while they could still be reachable.
            log::error!("{} dropped while suspended; leaking its stack", self.id);
            std::mem::forget(self.ctx.stack.take());
        }
    }
}

impl QueueItem for Box<Task> {
    fn priority(&self) -> Priority {
        self.priority
    }

    fn pinned_worker(&self) -> Option<WorkerId> {
        self.pinned
    }

    fn pin_to(&mut self, worker: WorkerId) {
        self.pinned = Some(worker);
    }
}
