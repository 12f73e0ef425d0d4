//! OpenMP-style parallel constructs on top of the task scheduler.
//!
//! Every construct is a free function that acts on the calling task's
//! environment: its team, its member number and its settings. Waiting
//! constructs (barriers, locks, `ordered`, `taskwait`, dependences) suspend
//! the calling task instead of blocking its worker. Called from a plain OS
//! thread they behave as if run by the only member of a one-thread team.

mod loops;
mod sync;
mod tasks;
mod team;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use parking_lot::Mutex;

use crate::sched::{self, block_on, current_task_ptr, SchedError, Waker};

pub use loops::{
    dispatch_init, dispatch_next, for_loop, ordered, ordered_exit, ordered_wait, static_init, Chunk, LoopAssignment,
    SchedKind,
};
pub use sync::{
    atomic_update, critical, critical_enter, critical_exit, lock_init, lock_set, lock_test, lock_unset,
    nest_lock_init, nest_lock_set, nest_lock_test, nest_lock_unset, AtomicCell, AtomicF64, NestLock, SimpleLock,
    DEFAULT_CRITICAL,
};
pub use tasks::{task_spawn, taskwait, DepKey, DepMode};
pub use team::{barrier, fork, master, master_check, sections, sections_next, single, single_enter, TeamId};

pub(crate) use team::Team;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParError {
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("team size must not be negative (got {0})")]
    NegativeTeamSize(i32),
    #[error("number of threads must be positive (got {0})")]
    NonPositiveNumThreads(i32),
    #[error("loop increment must not be zero")]
    ZeroIncrement,
    #[error("chunk size must be at least 1 (got {0})")]
    InvalidChunk(i64),
    #[error("thread {tid} is not a member of a team of {size}")]
    InvalidMember { tid: usize, size: usize },
    #[error("{0:?} is not a static schedule")]
    NotStatic(SchedKind),
    #[error("loop has too many iterations")]
    TooManyIterations,
    #[error("members registered different loops for the same construct")]
    LoopMismatch,
    #[error("no loop is active for this member")]
    NoActiveLoop,
    #[error("iteration {0} is not part of the active loop")]
    OrderedOutOfRange(i64),
    #[error("ordered region for iteration {0} entered twice")]
    OrderedDuplicate(i64),
    #[error("iteration {0} is not inside its ordered region")]
    OrderedNotCurrent(i64),
    #[error("lock is already held by the caller")]
    LockReentrant,
    #[error("lock is not held")]
    LockNotHeld,
    #[error("lock is held by someone else")]
    LockNotOwner,
}

/// A count that can be awaited until it drops to zero.
pub(crate) struct WaitCounter {
    count: AtomicUsize,
    waiters: Mutex<Vec<Waker>>,
}

impl WaitCounter {
    pub(crate) fn new(initial: usize) -> Self {
        WaitCounter {
            count: AtomicUsize::new(initial),
            waiters: Mutex::new(Vec::new()),
        }
    }

    pub(crate) fn add(&self, n: usize) {
        self.count.fetch_add(n, Ordering::SeqCst);
    }

    pub(crate) fn done(&self) {
        if self.count.fetch_sub(1, Ordering::SeqCst) == 1 {
            let ws = std::mem::take(&mut *self.waiters.lock());
            for w in ws {
                w.wake();
            }
        }
    }

    pub(crate) fn get(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub(crate) fn wait_zero(&self) {
        if self.get() == 0 {
            return;
        }
        block_on(|w| {
            let mut ws = self.waiters.lock();
            if self.get() == 0 {
                drop(ws);
                w.wake();
            } else {
                ws.push(w);
            }
        });
    }
}

#[derive(Default)]
pub(crate) struct MemberState {
    pub(crate) single_seq: u64,
    pub(crate) loop_seq: u64,
    pub(crate) sections_seq: u64,
    pub(crate) current_loop: Option<loops::ActiveLoop>,
    pub(crate) sections: Option<(u64, Arc<team::SectionsShared>)>,
}

/// Per-task view of the parallel constructs.
pub(crate) struct TaskEnv {
    pub(crate) team: Option<Arc<Team>>,
    pub(crate) thread_num: usize,
    /// Team size for forks without an explicit size; 0 means "workers".
    nthreads: AtomicUsize,
    dynamic: AtomicBool,
    pub(crate) member: Mutex<MemberState>,
    pub(crate) children: WaitCounter,
    pub(crate) deps: Mutex<tasks::DependencyTable>,
}

impl TaskEnv {
    pub(crate) fn root() -> Self {
        Self::with(None, 0, 0, false)
    }

    fn with(team: Option<Arc<Team>>, thread_num: usize, nthreads: usize, dynamic: bool) -> Self {
        TaskEnv {
            team,
            thread_num,
            nthreads: AtomicUsize::new(nthreads),
            dynamic: AtomicBool::new(dynamic),
            member: Mutex::new(MemberState::default()),
            children: WaitCounter::new(0),
            deps: Mutex::new(tasks::DependencyTable::default()),
        }
    }

    /// Environment of member `thread_num` of `team`, inheriting settings.
    pub(crate) fn member_of(team: Arc<Team>, thread_num: usize, parent: &TaskEnv) -> Self {
        Self::with(Some(team), thread_num, parent.nthreads(), parent.dynamic())
    }

    /// Environment of an explicit task created by `parent`.
    pub(crate) fn child_of(parent: &TaskEnv) -> Self {
        Self::with(parent.team.clone(), parent.thread_num, parent.nthreads(), parent.dynamic())
    }

    fn nthreads(&self) -> usize {
        self.nthreads.load(Ordering::Relaxed)
    }

    fn dynamic(&self) -> bool {
        self.dynamic.load(Ordering::Relaxed)
    }

    pub(crate) fn team_size(&self) -> usize {
        self.team.as_ref().map_or(1, |t| t.size)
    }

    pub(crate) fn default_team_size(&self) -> usize {
        match self.nthreads() {
            0 => sched::ambient_num_workers(),
            n => n,
        }
    }
}

thread_local! {
    static THREAD_ENV: Arc<TaskEnv> = Arc::new(TaskEnv::root());
}

/// Environment of the caller: the running task's, or the thread's own.
pub(crate) fn current_env() -> Arc<TaskEnv> {
    let t = current_task_ptr();
    if t.is_null() {
        return THREAD_ENV.with(Arc::clone);
    }
    // SAFETY: a running task's fields are only touched by the task itself.
    unsafe { (*t).env.get_or_insert_with(|| Arc::new(TaskEnv::root())).clone() }
}

/// Member number of the caller within its team; 0 outside a region.
pub fn get_thread_num() -> usize {
    current_env().thread_num
}

/// Size of the caller's team; 1 outside a region.
pub fn get_num_threads() -> usize {
    current_env().team_size()
}

/// Team size a fork without an explicit size would use.
pub fn get_max_threads() -> usize {
    current_env().default_team_size()
}

pub fn get_num_procs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// True inside a region whose team, or an enclosing team, has more than
/// one member.
pub fn in_parallel() -> bool {
    current_env().team.as_ref().is_some_and(|t| t.active)
}

/// Sets the size of subsequent forks that do not request one.
pub fn set_num_threads(n: i32) -> Result<(), ParError> {
    if n <= 0 {
        return Err(ParError::NonPositiveNumThreads(n));
    }
    current_env().nthreads.store(n as usize, Ordering::Relaxed);
    Ok(())
}

/// Stored only; teams are never resized.
pub fn set_dynamic(on: bool) {
    current_env().dynamic.store(on, Ordering::Relaxed);
}

pub fn get_dynamic() -> bool {
    current_env().dynamic()
}

/// Id of the caller's innermost team.
pub fn current_team_id() -> Option<TeamId> {
    current_env().team.as_ref().map(|t| t.id)
}

/// Id of the team enclosing the caller's innermost team.
pub fn parent_team_id() -> Option<TeamId> {
    current_env().team.as_ref()?.parent.as_ref().map(|p| p.id)
}

fn origin() -> Instant {
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    *ORIGIN.get_or_init(Instant::now)
}

/// Seconds since a fixed point early in the process; never decreases.
pub fn get_wtime() -> f64 {
    origin().elapsed().as_secs_f64()
}

/// Resolution of [`get_wtime`] in seconds.
pub fn get_wtick() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-parameter.
    let rc = unsafe { libc::clock_getres(libc::CLOCK_MONOTONIC, &mut ts) };
    let tick = ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9;
    if rc == 0 && tick > 0.0 {
        tick
    } else {
        1e-9
    }
}
