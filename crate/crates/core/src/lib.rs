//! Fork-join and tasking with OpenMP semantics on a cooperative user-level
//! task scheduler.
//!
//! - [`sched`]: worker pool, task lifecycle, suspension.
//! - [`policies`]: the seven queue disciplines.
//! - [`par`]: parallel regions, work sharing, synchronization, explicit
//!   tasks with dependences, runtime queries.
//! - [`tooling`]: lifecycle event callbacks.
//!
//! ```
//! use std::sync::atomic::{AtomicUsize, Ordering};
//!
//! let hits = AtomicUsize::new(0);
//! fj_core::par::fork(4, |_| {
//!     fj_core::par::for_loop(fj_core::par::SchedKind::Dynamic(8), 0, 99, 1, |_| {
//!         hits.fetch_add(1, Ordering::Relaxed);
//!     })
//!     .unwrap();
//! })
//! .unwrap();
//! assert_eq!(hits.load(Ordering::Relaxed), 100);
//! ```
//!
//! Context switching is implemented for x86_64 only.

pub mod par;
pub mod policies;
pub mod sched;
pub mod tooling;

pub use par::{fork, task_spawn, taskwait};
pub use policies::PolicyKind;
pub use sched::{runtime_ensure_started, Priority, Runtime, RuntimeConfig, SchedError, TaskId, WorkerId};
pub use tooling::{register_tool, ToolCallbacks, ToolEvent};
