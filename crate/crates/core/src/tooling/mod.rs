//! First-party instrumentation callbacks.
//!
//! A tool registers a [`ToolCallbacks`] set. Handlers run synchronously on
//! the thread where the event happens and may be called concurrently from
//! several workers. A panicking handler is contained, counted and logged.

mod sink;

use std::panic::{catch_unwind, AssertUnwindSafe, Location};
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::par::TeamId;
use crate::sched::{TaskId, WorkerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    ThreadBegin,
    ThreadEnd,
    ParallelBegin,
    ParallelEnd,
    TaskCreate,
    TaskSchedule,
    ImplicitTask,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::ThreadBegin,
        EventKind::ThreadEnd,
        EventKind::ParallelBegin,
        EventKind::ParallelEnd,
        EventKind::TaskCreate,
        EventKind::TaskSchedule,
        EventKind::ImplicitTask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ThreadBegin => "thread_begin",
            EventKind::ThreadEnd => "thread_end",
            EventKind::ParallelBegin => "parallel_begin",
            EventKind::ParallelEnd => "parallel_end",
            EventKind::TaskCreate => "task_create",
            EventKind::TaskSchedule => "task_schedule",
            EventKind::ImplicitTask => "implicit_task",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn bit(self) -> u8 {
        1 << self.index()
    }
}

/// Why the previously running task left its worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScheduleCause {
    Complete,
    Yield,
    Suspend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PriorTask {
    pub task: TaskId,
    pub cause: ScheduleCause,
}

/// A worker switched from `prior` (if it just ran one) to `next_task` (if
/// it found one).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskSchedule {
    pub prior: Option<PriorTask>,
    pub next_task: Option<TaskId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParallelBegin {
    /// Task that encountered the region; `None` for a plain OS thread.
    pub parent_task: Option<TaskId>,
    pub team_id: TeamId,
    pub team_size: usize,
    /// Source location of the `fork` call.
    pub codeptr: Option<&'static Location<'static>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskCreate {
    pub creator: Option<TaskId>,
    pub new_task: TaskId,
    pub deps_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Begin,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImplicitTask {
    pub phase: Phase,
    pub team_id: TeamId,
    pub thread_num: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToolEvent {
    ThreadBegin(WorkerId),
    ThreadEnd(WorkerId),
    ParallelBegin(ParallelBegin),
    ParallelEnd(TeamId),
    TaskCreate(TaskCreate),
    TaskSchedule(TaskSchedule),
    ImplicitTask(ImplicitTask),
}

impl ToolEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            ToolEvent::ThreadBegin(_) => EventKind::ThreadBegin,
            ToolEvent::ThreadEnd(_) => EventKind::ThreadEnd,
            ToolEvent::ParallelBegin(_) => EventKind::ParallelBegin,
            ToolEvent::ParallelEnd(_) => EventKind::ParallelEnd,
            ToolEvent::TaskCreate(_) => EventKind::TaskCreate,
            ToolEvent::TaskSchedule(_) => EventKind::TaskSchedule,
            ToolEvent::ImplicitTask(_) => EventKind::ImplicitTask,
        }
    }
}

type Handler = Arc<dyn Fn(&ToolEvent) + Send + Sync>;

/// A set of event handlers. Each handler has its own flag, and a master
/// switch gates them all; an event fires only when both are on.
#[derive(Clone)]
pub struct ToolCallbacks {
    handlers: [Option<Handler>; 7],
    flags: [bool; 7],
    pub enabled: bool,
}

impl Default for ToolCallbacks {
    fn default() -> Self {
        ToolCallbacks {
            handlers: Default::default(),
            flags: [false; 7],
            enabled: true,
        }
    }
}

impl std::fmt::Debug for ToolCallbacks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let active: Vec<_> = EventKind::ALL
            .iter()
            .filter(|k| self.is_enabled(**k))
            .map(|k| k.as_str())
            .collect();
        f.debug_struct("ToolCallbacks")
            .field("enabled", &self.enabled)
            .field("active", &active)
            .finish()
    }
}

macro_rules! typed_handler {
    ($(#[$m:meta])* $name:ident, $variant:ident, $arg:ty) => {
        $(#[$m])*
        pub fn $name(self, f: impl Fn($arg) + Send + Sync + 'static) -> Self {
            self.on(EventKind::$variant, move |ev| {
                if let ToolEvent::$variant(x) = ev {
                    f(x)
                }
            })
        }
    };
}

impl ToolCallbacks {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs `f` for `kind` and turns its flag on.
    pub fn on(mut self, kind: EventKind, f: impl Fn(&ToolEvent) + Send + Sync + 'static) -> Self {
        self.handlers[kind.index()] = Some(Arc::new(f));
        self.flags[kind.index()] = true;
        self
    }

    /// One handler for every event kind.
    pub fn all(self, f: impl Fn(&ToolEvent) + Send + Sync + 'static) -> Self {
        let f: Handler = Arc::new(f);
        EventKind::ALL.into_iter().fold(self, |cb, k| {
            let f = f.clone();
            cb.on(k, move |ev| f(ev))
        })
    }

    typed_handler!(on_thread_begin, ThreadBegin, &WorkerId);
    typed_handler!(on_thread_end, ThreadEnd, &WorkerId);
    typed_handler!(on_parallel_begin, ParallelBegin, &ParallelBegin);
    typed_handler!(on_parallel_end, ParallelEnd, &TeamId);
    typed_handler!(on_task_create, TaskCreate, &TaskCreate);
    typed_handler!(on_task_schedule, TaskSchedule, &TaskSchedule);
    typed_handler!(on_implicit_task, ImplicitTask, &ImplicitTask);

    pub fn set_flag(mut self, kind: EventKind, on: bool) -> Self {
        self.flags[kind.index()] = on;
        self
    }

    pub fn set_enabled(mut self, on: bool) -> Self {
        self.enabled = on;
        self
    }

    pub fn is_enabled(&self, kind: EventKind) -> bool {
        self.enabled && self.flags[kind.index()] && self.handlers[kind.index()].is_some()
    }

    /// Handlers of both sets; where both handle a kind, `self` runs first.
    pub fn merged(self, other: ToolCallbacks) -> ToolCallbacks {
        let mut out = ToolCallbacks::default();
        for k in EventKind::ALL {
            let a = self.is_enabled(k).then(|| self.handlers[k.index()].clone()).flatten();
            let b = other.is_enabled(k).then(|| other.handlers[k.index()].clone()).flatten();
            let h: Option<Handler> = match (a, b) {
                (Some(a), Some(b)) => Some(Arc::new(move |ev: &ToolEvent| {
                    a(ev);
                    b(ev);
                })),
                (a, b) => a.or(b),
            };
            if let Some(h) = h {
                out.handlers[k.index()] = Some(h);
                out.flags[k.index()] = true;
            }
        }
        out
    }

    /// Appends one JSON object per event to `path`.
    pub fn json_lines(path: impl AsRef<std::path::Path>) -> std::io::Result<ToolCallbacks> {
        sink::json_lines(path.as_ref())
    }

    fn mask(&self) -> u8 {
        EventKind::ALL
            .iter()
            .filter(|k| self.is_enabled(**k))
            .fold(0, |m, k| m | k.bit())
    }
}

/// The tool state of one runtime.
pub(crate) struct Tooling {
    mask: AtomicU8,
    callbacks: RwLock<Arc<ToolCallbacks>>,
    failures: AtomicU64,
}

impl Tooling {
    pub(crate) fn new(cb: ToolCallbacks) -> Self {
        Tooling {
            mask: AtomicU8::new(cb.mask()),
            callbacks: RwLock::new(Arc::new(cb)),
            failures: AtomicU64::new(0),
        }
    }

    pub(crate) fn install(&self, cb: ToolCallbacks) {
        let mut g = self.callbacks.write();
        self.mask.store(cb.mask(), Ordering::Release);
        *g = Arc::new(cb);
    }

    #[inline]
    pub(crate) fn is_on(&self, kind: EventKind) -> bool {
        self.mask.load(Ordering::Relaxed) & kind.bit() != 0
    }

    #[inline]
    pub(crate) fn emit(&self, ev: ToolEvent) {
        if self.is_on(ev.kind()) {
            self.dispatch(&ev);
        }
    }

    #[cold]
    fn dispatch(&self, ev: &ToolEvent) {
        let cb = self.callbacks.read().clone();
        let Some(h) = cb.handlers[ev.kind().index()].as_ref().filter(|_| cb.is_enabled(ev.kind())) else {
            return;
        };
        if let Err(p) = catch_unwind(AssertUnwindSafe(|| h(ev))) {
            self.failures.fetch_add(1, Ordering::Relaxed);
            log::error!(
                "{} handler panicked: {}",
                ev.kind().as_str(),
                crate::sched::panic_message(p.as_ref())
            );
        }
    }

    pub(crate) fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }
}

static GLOBAL_TOOL: Mutex<Option<ToolCallbacks>> = Mutex::new(None);

/// Registers `callbacks` as the process-wide tool. It replaces any earlier
/// registration, applies to the running global runtime at once, and to
/// every runtime started afterwards.
pub fn register_tool(callbacks: ToolCallbacks) {
    *GLOBAL_TOOL.lock() = Some(callbacks.clone());
    if let Some(rt) = crate::sched::global_runtime() {
        rt.register_tool(callbacks);
    }
}

/// Removes the process-wide tool.
pub fn unregister_tool() {
    register_tool(ToolCallbacks::new().set_enabled(false));
    *GLOBAL_TOOL.lock() = None;
}

pub(crate) fn global_default() -> ToolCallbacks {
    GLOBAL_TOOL.lock().clone().unwrap_or_default()
}
