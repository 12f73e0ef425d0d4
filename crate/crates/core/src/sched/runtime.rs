use std::any::Any;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::{JoinHandle, Thread};

use parking_lot::{Condvar, Mutex};

use super::task::{Body, Priority, Task, TaskId, WorkerId};
use super::worker::{current_task_ptr, current_worker_ptr, run_worker};
use super::SchedError;
use crate::policies::{build_policy, Placement, PolicyKind, SchedulingPolicy};
use crate::tooling::{self, TaskCreate, ToolCallbacks, ToolEvent, Tooling};

/// Default usable stack size of one task.
pub const DEFAULT_STACK_SIZE: usize = 256 * 1024;

/// Default number of empty polls before an idle worker sleeps.
pub const DEFAULT_SPIN_BEFORE_PARK: u32 = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuntimeConfig {
    pub num_workers: usize,
    pub policy: PolicyKind,
    pub spin_before_park: u32,
    pub stack_size: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            num_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            policy: PolicyKind::default(),
            spin_before_park: DEFAULT_SPIN_BEFORE_PARK,
            stack_size: DEFAULT_STACK_SIZE,
        }
    }
}

impl RuntimeConfig {
    pub fn new(num_workers: usize, policy: PolicyKind) -> Self {
        RuntimeConfig {
            num_workers,
            policy,
            ..Self::default()
        }
    }

    /// Defaults, overridden by `FJ_NUM_THREADS` and `FJ_POLICY`.
    pub fn from_env() -> Result<Self, SchedError> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("FJ_NUM_THREADS") {
            cfg.num_workers = v
                .trim()
                .parse()
                .map_err(|_| SchedError::InvalidConfig(format!("FJ_NUM_THREADS={v:?} is not a positive integer")))?;
        }
        if let Ok(v) = std::env::var("FJ_POLICY") {
            cfg.policy = v.parse().map_err(|e| SchedError::InvalidConfig(format!("FJ_POLICY: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        if self.num_workers == 0 {
            return Err(SchedError::InvalidConfig("num_workers must be at least 1".into()));
        }
        if self.stack_size < 16 * 1024 {
            return Err(SchedError::InvalidConfig("stack_size must be at least 16 KiB".into()));
        }
        Ok(())
    }
}

const RUNNING: u8 = 0;
const DRAINING: u8 = 1;
const STOPPED: u8 = 2;

pub(crate) struct WorkerSlot {
    pub(crate) sleeping: AtomicBool,
    thread: OnceLock<Thread>,
}

pub(crate) struct Shared {
    pub(crate) config: RuntimeConfig,
    pub(crate) policy: Box<dyn SchedulingPolicy<Box<Task>>>,
    pub(crate) slots: Vec<WorkerSlot>,
    pub(crate) sleepers: AtomicUsize,
    /// Workers looking for a task before going to sleep, including woken
    /// ones that have not looked yet.
    pub(crate) searching: AtomicUsize,
    work_shared: bool,
    pub(crate) tool: Tooling,
    state: AtomicU8,
    live: AtomicUsize,
    idle_waiters: AtomicUsize,
    idle_lock: Mutex<()>,
    idle_cv: Condvar,
    wake_cursor: AtomicUsize,
    panicked: AtomicU64,
    threads: Mutex<Vec<JoinHandle<()>>>,
    shutdown_lock: Mutex<()>,
}

impl Shared {
    pub(crate) fn is_stopped(&self) -> bool {
        self.state.load(Ordering::Acquire) == STOPPED
    }

    fn on_own_worker(&self) -> bool {
        let w = current_worker_ptr();
        // SAFETY: a non-null worker pointer refers to the live context of
        // the worker loop running on this thread.
        !w.is_null() && std::ptr::eq(unsafe { &*(*w).shared }, self)
    }

    /// Counts a new task as live, or refuses it once shutdown has begun.
    /// Tasks created by this runtime's own tasks are still accepted while
    /// draining.
    pub(crate) fn admit(&self) -> Result<(), SchedError> {
        self.live.fetch_add(1, Ordering::SeqCst);
        let state = self.state.load(Ordering::SeqCst);
        if state == RUNNING || (state == DRAINING && self.on_own_worker()) {
            return Ok(());
        }
        self.task_finished();
        Err(SchedError::ShutDown)
    }

    /// Queues an admitted task.
    pub(crate) fn submit(&self, task: Box<Task>, hint: Option<WorkerId>) {
        let placement = self.policy.enqueue(task, hint);
        self.wake_for(placement);
    }

    /// Makes a suspended task runnable again.
    pub(crate) fn resume(&self, task: Box<Task>) {
        let hint = task.pinned.or(task.last_worker);
        self.submit(task, hint);
    }

    pub(crate) fn requeue_yielded(&self, task: Box<Task>, worker: WorkerId) {
        let placement = self.policy.enqueue_yielded(task, worker);
        self.wake_for(placement);
    }

    /// Creates, admits, reports and queues an explicit task.
    pub(crate) fn spawn_task(&self, body: Body, priority: Priority) -> Result<TaskId, SchedError> {
        self.admit()?;
        let task = Task::new(body, priority, None);
        let id = task.id;
        self.tool.emit(ToolEvent::TaskCreate(TaskCreate {
            creator: current_task_id(),
            new_task: id,
            deps_count: 0,
        }));
        self.submit(task, current_worker());
        Ok(id)
    }

    pub(crate) fn task_finished(&self) {
        if self.live.fetch_sub(1, Ordering::SeqCst) == 1 && self.idle_waiters.load(Ordering::SeqCst) > 0 {
            let _g = self.idle_lock.lock();
            self.idle_cv.notify_all();
        }
    }

    pub(crate) fn note_panic(&self, id: TaskId, payload: Box<dyn Any + Send>) {
        self.panicked.fetch_add(1, Ordering::Relaxed);
        log::error!("{id} panicked: {}", panic_message(payload.as_ref()));
    }

    fn wait_live_zero(&self) {
        self.idle_waiters.fetch_add(1, Ordering::SeqCst);
        let mut g = self.idle_lock.lock();
        while self.live.load(Ordering::SeqCst) != 0 {
            self.idle_cv.wait(&mut g);
        }
        drop(g);
        self.idle_waiters.fetch_sub(1, Ordering::SeqCst);
    }

    fn wake_for(&self, placement: Placement) {
        fence(Ordering::SeqCst);
        if self.sleepers.load(Ordering::SeqCst) == 0 {
            return;
        }
        match placement {
            Placement::Worker(w) if !self.work_shared => {
                self.try_wake(w.index());
            }
            // A searching worker will find it, and wakes another if it
            // was the last one searching.
            _ if self.searching.load(Ordering::SeqCst) > 0 => {}
            Placement::Worker(w) => {
                if !self.try_wake(w.index()) {
                    self.wake_any();
                }
            }
            Placement::Shared => self.wake_any(),
        }
    }

    /// Called by the last searching worker when it finds a task: there may
    /// be more.
    pub(crate) fn wake_surplus(&self) {
        if self.work_shared && self.sleepers.load(Ordering::SeqCst) > 0 {
            self.wake_any();
        }
    }

    /// Wakes worker `w` if it sleeps. The woken worker starts out counted
    /// as searching.
    fn try_wake(&self, w: usize) -> bool {
        let slot = &self.slots[w];
        if !slot.sleeping.load(Ordering::SeqCst) || !slot.sleeping.swap(false, Ordering::SeqCst) {
            return false;
        }
        self.searching.fetch_add(1, Ordering::SeqCst);
        self.sleepers.fetch_sub(1, Ordering::SeqCst);
        if let Some(t) = slot.thread.get() {
            t.unpark();
        }
        true
    }

    fn wake_any(&self) {
        let n = self.slots.len();
        let start = self.wake_cursor.fetch_add(1, Ordering::Relaxed);
        for k in 0..n {
            if self.try_wake((start + k) % n) {
                return;
            }
        }
    }

    fn wake_all(&self) {
        for slot in &self.slots {
            if slot.sleeping.swap(false, Ordering::SeqCst) {
                self.searching.fetch_add(1, Ordering::SeqCst);
                self.sleepers.fetch_sub(1, Ordering::SeqCst);
            }
            if let Some(t) = slot.thread.get() {
                t.unpark();
            }
        }
    }

    fn shutdown(&self) -> Result<(), SchedError> {
        if self.on_own_worker() {
            return Err(SchedError::FromWorker("shutdown"));
        }
        let _g = self.shutdown_lock.lock();
        if self.is_stopped() {
            return Ok(());
        }
        self.state.store(DRAINING, Ordering::SeqCst);
        self.wait_live_zero();
        self.state.store(STOPPED, Ordering::SeqCst);
        self.wake_all();
        let threads = std::mem::take(&mut *self.threads.lock());
        for t in threads {
            if t.join().is_err() {
                log::error!("a worker thread panicked");
            }
        }
        Ok(())
    }
}

pub(crate) fn panic_message(payload: &(dyn Any + Send)) -> &str {
    if let Some(s) = payload.downcast_ref::<&'static str>() {
        s
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s
    } else {
        "<non-string panic payload>"
    }
}

struct Owner {
    shared: Arc<Shared>,
}

impl Drop for Owner {
    fn drop(&mut self) {
        if self.shared.is_stopped() {
            return;
        }
        if self.shared.on_own_worker() {
            let shared = self.shared.clone();
            std::thread::spawn(move || {
                let _ = shared.shutdown();
            });
        } else if let Err(e) = self.shared.shutdown() {
            log::error!("runtime shutdown on drop failed: {e}");
        }
    }
}

/// Handle to a worker pool. Clones share the pool; it shuts down when the
/// last handle is dropped or [`Runtime::shutdown`] is called.
#[derive(Clone)]
pub struct Runtime {
    owner: Arc<Owner>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("num_workers", &self.num_workers())
            .field("policy", &self.policy())
            .field("shut_down", &self.is_shut_down())
            .finish()
    }
}

impl PartialEq for Runtime {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.owner.shared, &other.owner.shared)
    }
}

impl Eq for Runtime {}

impl Runtime {
    /// Starts a pool using the globally registered tool, if any.
    pub fn start(config: RuntimeConfig) -> Result<Runtime, SchedError> {
        Self::start_with_tool(config, tooling::global_default())
    }

    /// Starts a pool with `tool` installed before the first worker runs.
    pub fn start_with_tool(config: RuntimeConfig, tool: ToolCallbacks) -> Result<Runtime, SchedError> {
        config.validate()?;
        let tool = match std::env::var_os("FJ_TOOL_LOG") {
            Some(path) => match ToolCallbacks::json_lines(&path) {
                Ok(log) => tool.merged(log),
                Err(e) => {
                    log::error!("FJ_TOOL_LOG={}: {e}", path.to_string_lossy());
                    tool
                }
            },
            None => tool,
        };
        let n = config.num_workers;
        let policy = build_policy(config.policy, n);
        let shared = Arc::new(Shared {
            work_shared: policy.work_is_shared(),
            policy,
            slots: (0..n)
                .map(|_| WorkerSlot {
                    sleeping: AtomicBool::new(false),
                    thread: OnceLock::new(),
                })
                .collect(),
            sleepers: AtomicUsize::new(0),
            searching: AtomicUsize::new(0),
            tool: Tooling::new(tool),
            state: AtomicU8::new(RUNNING),
            live: AtomicUsize::new(0),
            idle_waiters: AtomicUsize::new(0),
            idle_lock: Mutex::new(()),
            idle_cv: Condvar::new(),
            wake_cursor: AtomicUsize::new(0),
            panicked: AtomicU64::new(0),
            threads: Mutex::new(Vec::with_capacity(n)),
            shutdown_lock: Mutex::new(()),
            config,
        });
        for i in 0..n {
            let sh = shared.clone();
            let spawned = std::thread::Builder::new()
                .name(format!("fj-worker-{i}"))
                .spawn(move || {
                    let _ = sh.slots[i].thread.set(std::thread::current());
                    run_worker(sh, WorkerId::new(i));
                });
            match spawned {
                Ok(h) => shared.threads.lock().push(h),
                Err(e) => {
                    let _ = shared.shutdown();
                    return Err(SchedError::Io(e.to_string()));
                }
            }
        }
        Ok(Runtime {
            owner: Arc::new(Owner { shared }),
        })
    }

    pub(crate) fn shared(&self) -> &Arc<Shared> {
        &self.owner.shared
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.owner.shared.config
    }

    pub fn num_workers(&self) -> usize {
        self.owner.shared.config.num_workers
    }

    pub fn policy(&self) -> PolicyKind {
        self.owner.shared.config.policy
    }

    /// Queues `body` as a new task.
    pub fn spawn<F>(&self, body: F, priority: Priority) -> Result<TaskId, SchedError>
    where
        F: FnOnce() + Send + 'static,
    {
        self.owner
            .shared
            .spawn_task(Box::new(body), priority)
    }

    /// Blocks until no task is pending, running or suspended.
    pub fn wait_idle(&self) -> Result<(), SchedError> {
        if self.owner.shared.on_own_worker() {
            return Err(SchedError::FromWorker("wait_idle"));
        }
        self.owner.shared.wait_live_zero();
        Ok(())
    }

    /// Runs every remaining task to completion, then stops the workers.
    /// Later spawns from outside the pool are rejected. Repeated calls do
    /// nothing.
    pub fn shutdown(&self) -> Result<(), SchedError> {
        self.owner.shared.shutdown()
    }

    pub fn is_shut_down(&self) -> bool {
        self.owner.shared.state.load(Ordering::Acquire) != RUNNING
    }

    /// Replaces this runtime's tool callbacks for subsequent events.
    pub fn register_tool(&self, callbacks: ToolCallbacks) {
        self.owner.shared.tool.install(callbacks);
    }

    /// Number of tool handler invocations that panicked.
    pub fn tool_failures(&self) -> u64 {
        self.owner.shared.tool.failures()
    }

    /// Number of tasks whose body panicked without anyone to report to.
    pub fn panicked_tasks(&self) -> u64 {
        self.owner.shared.panicked.load(Ordering::Relaxed)
    }

    /// Runs `f` as a task on this runtime and returns its result. Blocks the
    /// caller (or suspends it, when called from a task).
    pub fn run<R, F>(&self, f: F) -> Result<R, SchedError>
    where
        F: FnOnce() -> R + Send,
        R: Send,
    {
        let result: Arc<Mutex<Option<std::thread::Result<R>>>> = Arc::new(Mutex::new(None));
        let done = Arc::new(Mutex::new(DoneState::Pending));
        let body = {
            let result = result.clone();
            let done = done.clone();
            move || {
                let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
                *result.lock() = Some(r);
                let prev = std::mem::replace(&mut *done.lock(), DoneState::Done);
                if let DoneState::Waiting(w) = prev {
                    w.wake();
                }
            }
        };
        let body: Box<dyn FnOnce() + Send + '_> = Box::new(body);
        // SAFETY: the caller waits below until the body has run, so nothing
        // it borrows can go away first.
        let body: Body = unsafe { std::mem::transmute::<Box<dyn FnOnce() + Send + '_>, Body>(body) };
        self.owner
            .shared
            .spawn_task(body, Priority::Normal)?;
        super::wait::block_on(|w| {
            let mut st = done.lock();
            if matches!(*st, DoneState::Done) {
                drop(st);
                w.wake();
            } else {
                *st = DoneState::Waiting(w);
            }
        });
        let r = result.lock().take().expect("task finished without a result");
        match r {
            Ok(v) => Ok(v),
            Err(p) => std::panic::resume_unwind(p),
        }
    }
}

enum DoneState {
    Pending,
    Waiting(super::wait::Waker),
    Done,
}

static GLOBAL: Mutex<Option<Runtime>> = Mutex::new(None);

/// Returns the process-wide runtime, starting it with `config` if none is
/// running. A running runtime with a different worker count or policy is an
/// error and stays untouched. After shutdown a new one may be started.
pub fn runtime_ensure_started(config: RuntimeConfig) -> Result<Runtime, SchedError> {
    let mut g = GLOBAL.lock();
    if let Some(rt) = g.as_ref().filter(|rt| !rt.is_shut_down()) {
        let running = rt.config();
        if running.num_workers != config.num_workers || running.policy != config.policy {
            return Err(SchedError::ConfigConflict {
                running: (running.num_workers, running.policy),
                requested: (config.num_workers, config.policy),
            });
        }
        return Ok(rt.clone());
    }
    let rt = Runtime::start(config)?;
    *g = Some(rt.clone());
    Ok(rt)
}

/// The process-wide runtime, if one is running.
pub fn global_runtime() -> Option<Runtime> {
    GLOBAL.lock().as_ref().filter(|rt| !rt.is_shut_down()).cloned()
}

/// Runtime used by free functions: the caller's own pool on a worker,
/// otherwise the process-wide one, started from the environment if needed.
pub(crate) fn ambient() -> Result<Arc<Shared>, SchedError> {
    let w = current_worker_ptr();
    if !w.is_null() {
        // SAFETY: see `Shared::on_own_worker`.
        return Ok(unsafe { (&*w).shared.clone() });
    }
    let mut g = GLOBAL.lock();
    if let Some(rt) = g.as_ref().filter(|rt| !rt.is_shut_down()) {
        return Ok(rt.shared().clone());
    }
    let rt = Runtime::start(RuntimeConfig::from_env()?)?;
    let shared = rt.shared().clone();
    *g = Some(rt);
    Ok(shared)
}

/// Worker count the ambient runtime has or would start with.
pub(crate) fn ambient_num_workers() -> usize {
    let w = current_worker_ptr();
    if !w.is_null() {
        // SAFETY: see `Shared::on_own_worker`.
        return unsafe { (&*w).shared.config.num_workers };
    }
    if let Some(rt) = global_runtime() {
        return rt.num_workers();
    }
    RuntimeConfig::from_env().map_or(1, |c| c.num_workers)
}

/// Spawns on the ambient runtime.
pub fn spawn<F>(body: F, priority: Priority) -> Result<TaskId, SchedError>
where
    F: FnOnce() + Send + 'static,
{
    ambient()?.spawn_task(Box::new(body), priority)
}

/// The worker running the caller, if any.
pub fn current_worker() -> Option<WorkerId> {
    let w = current_worker_ptr();
    // SAFETY: see `Shared::on_own_worker`.
    (!w.is_null()).then(|| unsafe { (&*w).id })
}

/// The task running the caller, if any.
pub fn current_task_id() -> Option<TaskId> {
    let t = current_task_ptr();
    // SAFETY: the running task is exclusively accessed by its own code.
    (!t.is_null()).then(|| unsafe { (*t).id })
}
