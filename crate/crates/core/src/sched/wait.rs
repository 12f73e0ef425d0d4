//! Suspension without blocking the worker.
//!
//! A task that has to wait registers itself somewhere and switches back to
//! its worker. The registration closure runs on the worker *after* the
//! switch, so whoever later wakes the task can never observe it half
//! suspended. Outside a task the same primitives fall back to blocking the
//! calling OS thread.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};

use super::context;
use super::runtime::Shared;
use super::task::{Exit, Task};
use super::worker::{current_task_ptr, WorkerCtx};
use super::SchedError;

/// A suspended task, owned by whoever is responsible for waking it.
pub(crate) struct Parked {
    pub(crate) task: Box<Task>,
    pub(crate) shared: Arc<Shared>,
}

impl Parked {
    /// Makes the task runnable again.
    pub(crate) fn unpark(self) {
        self.shared.resume(self.task);
    }
}

pub(crate) struct ThreadSignal {
    ready: Mutex<bool>,
    cv: Condvar,
}

impl ThreadSignal {
    fn new() -> Self {
        ThreadSignal {
            ready: Mutex::new(false),
            cv: Condvar::new(),
        }
    }

    fn notify(&self) {
        *self.ready.lock() = true;
        self.cv.notify_one();
    }

    fn wait(&self) {
        let mut ready = self.ready.lock();
        while !*ready {
            self.cv.wait(&mut ready);
        }
    }
}

/// Wakes either a parked task or a blocked OS thread.
pub(crate) enum Waker {
    Task(Parked),
    Thread(Arc<ThreadSignal>),
}

impl Waker {
    pub(crate) fn wake(self) {
        match self {
            Waker::Task(p) => p.unpark(),
            Waker::Thread(s) => s.notify(),
        }
    }
}

/// True when called from inside a running task.
pub fn in_task() -> bool {
    !current_task_ptr().is_null()
}

unsafe fn call_register<F: FnOnce(Parked)>(slot: *mut u8, parked: Parked) {
    // SAFETY: `slot` points at the `Option<F>` in `park_current`'s frame,
    // which stays intact while the task is switched out.
    let f = unsafe { (*(slot as *mut Option<F>)).take() };
    match f {
        Some(f) => f(parked),
        None => std::process::abort(),
    }
}

/// Suspends the current task and hands it to `register` once it is fully
/// switched out. Returns after someone unparks it. `register` runs on the
/// same OS thread as the caller.
///
/// Returns `false` without calling `register` when not inside a task.
pub(crate) fn park_current<F: FnOnce(Parked)>(register: F) -> bool {
    let task = current_task_ptr();
    if task.is_null() {
        return false;
    }
    let mut slot = Some(register);
    // SAFETY: `task` is the running task on this thread. Its worker context
    // stays valid while the worker loop runs, and `switch` returns only
    // once a worker resumes us, passing its own context pointer.
    unsafe {
        (*task).exit = Exit::Suspend {
            call: call_register::<F>,
            slot: &mut slot as *mut Option<F> as *mut u8,
        };
        switch_to_worker(task);
    }
    true
}

/// Switches from the running task back to its worker; returns on resume.
///
/// # Safety
/// `task` must be the task currently running on this thread.
pub(crate) unsafe fn switch_to_worker(task: *mut Task) {
    unsafe {
        let worker: *const WorkerCtx = (*task).ctx.worker;
        let resumed_by = context::switch(&mut (*task).ctx.sp, (*worker).sched_sp(), 0);
        (*task).ctx.worker = resumed_by as *const WorkerCtx;
    }
}

/// Waits until the waker handed to `register` is woken. Inside a task this
/// suspends the task; elsewhere it blocks the thread.
pub(crate) fn block_on<F: FnOnce(Waker)>(register: F) {
    if in_task() {
        park_current(|p| register(Waker::Task(p)));
    } else {
        let signal = Arc::new(ThreadSignal::new());
        register(Waker::Thread(signal.clone()));
        signal.wait();
    }
}

/// Gives up the worker so other tasks can run; the caller is re-queued and
/// continues after this call.
///
/// Outside a task this is a no-op (and a debug assertion).
pub fn yield_now() {
    let task = current_task_ptr();
    debug_assert!(!task.is_null(), "yield_now called outside a task");
    if task.is_null() {
        return;
    }
    // SAFETY: see `park_current`.
    unsafe {
        (*task).exit = Exit::Yield;
        switch_to_worker(task);
    }
}

enum TokenState {
    Unarmed,
    Parked(Waker),
    Resumed,
}

/// Handle for resuming a task suspended with [`suspend_current`].
///
/// Tokens are cheap to clone; all clones refer to the same suspension, and
/// only the first `resume` succeeds.
#[derive(Clone)]
pub struct WakeToken(Arc<Mutex<TokenState>>);

impl Default for WakeToken {
    fn default() -> Self {
        WakeToken(Arc::new(Mutex::new(TokenState::Unarmed)))
    }
}

impl WakeToken {
    /// A token not attached to any suspension; resuming it fails.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn resume(&self) -> Result<(), SchedError> {
        let waker = {
            let mut st = self.0.lock();
            match std::mem::replace(&mut *st, TokenState::Resumed) {
                TokenState::Parked(w) => w,
                TokenState::Resumed => return Err(SchedError::AlreadyResumed),
                TokenState::Unarmed => {
                    *st = TokenState::Unarmed;
                    return Err(SchedError::NotSuspended);
                }
            }
        };
        waker.wake();
        Ok(())
    }

    pub fn is_resumed(&self) -> bool {
        matches!(*self.0.lock(), TokenState::Resumed)
    }
}

impl std::fmt::Debug for WakeToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let st = match *self.0.lock() {
            TokenState::Unarmed => "unarmed",
            TokenState::Parked(_) => "parked",
            TokenState::Resumed => "resumed",
        };
        f.debug_tuple("WakeToken").field(&st).finish()
    }
}

/// Suspends the caller until the token passed to `publish` is resumed.
///
/// `publish` runs once the caller is fully suspended, so it may hand the
/// token to code that resumes it immediately. The worker running the caller
/// moves on to other tasks meanwhile. Called outside a task, the calling
/// thread blocks instead.
pub fn suspend_current(publish: impl FnOnce(WakeToken)) {
    let token = WakeToken::default();
    let token_ref = &token;
    block_on(move |waker| {
        *token_ref.0.lock() = TokenState::Parked(waker);
        let handle = token_ref.clone();
        if catch_unwind(AssertUnwindSafe(|| publish(handle))).is_err() {
            log::error!("wake token publisher panicked; the suspended task stays resumable through existing clones");
        }
    });
}
