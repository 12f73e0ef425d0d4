//! Cooperative user-level task scheduler.
//!
//! A [`Runtime`] owns a fixed pool of OS worker threads. Tasks run on their
//! own stacks and give up their worker only at explicit points: completion,
//! [`yield_now`], or a suspension such as [`suspend_current`]. A suspended
//! task never blocks its worker.

mod context;
mod runtime;
mod task;
pub(crate) mod wait;
pub(crate) mod worker;

use crate::policies::PolicyKind;

pub use runtime::{
    current_task_id, current_worker, global_runtime, runtime_ensure_started, spawn, Runtime, RuntimeConfig,
    DEFAULT_SPIN_BEFORE_PARK, DEFAULT_STACK_SIZE,
};
pub use task::{Priority, TaskId, TaskState, WorkerId};
pub use wait::{in_task, suspend_current, yield_now, WakeToken};

pub(crate) use runtime::{ambient, ambient_num_workers, panic_message, Shared};
pub(crate) use task::{Body, Task};
pub(crate) use wait::{block_on, Waker};
pub(crate) use worker::current_task_ptr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error("runtime already started with {running:?} workers/policy, requested {requested:?}")]
    ConfigConflict {
        running: (usize, PolicyKind),
        requested: (usize, PolicyKind),
    },
    #[error("invalid runtime configuration: {0}")]
    InvalidConfig(String),
    #[error("runtime is shutting down")]
    ShutDown,
    #[error("{0} cannot be called from one of the runtime's own workers")]
    FromWorker(&'static str),
    #[error("wake token already resumed")]
    AlreadyResumed,
    #[error("wake token does not belong to a suspended task")]
    NotSuspended,
    #[error("cannot start worker thread: {0}")]
    Io(String),
}
