use std::cell::{Cell, RefCell, UnsafeCell};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::atomic::{fence, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::context::{self, Stack};
use super::runtime::Shared;
use super::task::{Exit, Task, TaskId, TaskState, WorkerId};
use super::wait::Parked;
use crate::tooling::{PriorTask, ScheduleCause, TaskSchedule, ToolEvent};

/// Backstop for a missed unpark; wakeups are normally explicit.
const PARK_TIMEOUT: Duration = Duration::from_millis(50);

/// Finished-task stacks kept per worker for reuse.
const STACK_CACHE: usize = 16;

thread_local! {
    static CURRENT_WORKER: Cell<*const WorkerCtx> = const { Cell::new(ptr::null()) };
    static CURRENT_TASK: Cell<*mut Task> = const { Cell::new(ptr::null_mut()) };
}

// Tasks migrate between OS threads at every suspension point. These
// accessors are never inlined so that each call re-reads the thread-local
// of the thread it actually runs on.

#[inline(never)]
pub(crate) fn current_task_ptr() -> *mut Task {
    CURRENT_TASK.with(Cell::get)
}

#[inline(never)]
pub(crate) fn current_worker_ptr() -> *const WorkerCtx {
    CURRENT_WORKER.with(Cell::get)
}

#[inline(never)]
fn set_current_task(t: *mut Task) {
    CURRENT_TASK.with(|c| c.set(t));
}

pub(crate) struct WorkerCtx {
    pub(crate) id: WorkerId,
    pub(crate) shared: Arc<Shared>,
    sched_sp: UnsafeCell<usize>,
    stacks: RefCell<Vec<Stack>>,
    last: Cell<Option<PriorTask>>,
}

impl WorkerCtx {
    /// Location where the scheduling loop's context is saved.
    pub(crate) fn sched_sp(&self) -> usize {
        // SAFETY: only the thread owning this worker reads or writes it.
        unsafe { *self.sched_sp.get() }
    }

    fn take_stack(&self) -> Stack {
        if let Some(s) = self.stacks.borrow_mut().pop() {
            return s;
        }
        match Stack::new(self.shared.config.stack_size) {
            Ok(s) => s,
            Err(e) => {
                log::error!("cannot allocate a task stack: {e}");
                std::process::abort();
            }
        }
    }

    fn recycle_stack(&self, s: Stack) {
        let mut cache = self.stacks.borrow_mut();
        if cache.len() < STACK_CACHE {
            cache.push(s);
        }
    }

    fn find_task(&self) -> Option<Box<Task>> {
        let policy = &self.shared.policy;
        policy.dequeue(self.id).or_else(|| policy.steal(self.id))
    }

    fn report_departure(&self, next: Option<TaskId>) {
        let prior = self.last.take();
        if prior.is_none() && next.is_none() {
            return;
        }
        self.shared.tool.emit(ToolEvent::TaskSchedule(TaskSchedule {
            prior,
            next_task: next,
        }));
    }

    fn run_task(&self, mut task: Box<Task>) {
        self.report_departure(Some(task.id));
        task.set_state(TaskState::Running);
        task.last_worker = Some(self.id);
        if task.ctx.stack.is_none() {
            let stack = self.take_stack();
            let data = &mut *task as *mut Task as usize;
            // SAFETY: the stack was just taken out of circulation.
            task.ctx.sp = unsafe { context::prepare(&stack, task_entry, data) };
            task.ctx.stack = Some(stack);
        }
        let raw = Box::into_raw(task);
        set_current_task(raw);
        // SAFETY: `raw` is owned by this call until the task switches back,
        // and nobody else can reach it in the meantime.
        let mut task = unsafe {
            context::switch(self.sched_sp.get(), (*raw).ctx.sp, self as *const WorkerCtx as usize);
            set_current_task(ptr::null_mut());
            Box::from_raw(raw)
        };
        let id = task.id;
        match std::mem::replace(&mut task.exit, Exit::None) {
            Exit::Finished => {
                task.set_state(TaskState::Finished);
                self.last.set(Some(PriorTask {
                    task: id,
                    cause: ScheduleCause::Complete,
                }));
                if let Some(s) = task.ctx.stack.take() {
                    self.recycle_stack(s);
                }
                if let Some(payload) = task.panic.take() {
                    self.shared.note_panic(id, payload);
                }
                drop(task);
                self.shared.task_finished();
            }
            Exit::Yield => {
                task.set_state(TaskState::Suspended);
                self.last.set(Some(PriorTask {
                    task: id,
                    cause: ScheduleCause::Yield,
                }));
                self.shared.requeue_yielded(task, self.id);
            }
            Exit::Suspend { call, slot } => {
                task.set_state(TaskState::Suspended);
                self.last.set(Some(PriorTask {
                    task: id,
                    cause: ScheduleCause::Suspend,
                }));
                let parked = Parked {
                    task,
                    shared: self.shared.clone(),
                };
                // SAFETY: `call`/`slot` were installed by `park_current` for
                // exactly this suspension.
                unsafe { call(slot, parked) };
            }
            Exit::None => unreachable!("task switched out without an exit reason"),
        }
    }

    fn main_loop(&self) {
        let shared = &*self.shared;
        let slot = &shared.slots[self.id.index()];
        // Whether this worker is counted in `shared.searching`.
        let mut searching = false;
        loop {
            if !searching {
                if let Some(t) = self.find_task() {
                    self.run_task(t);
                    continue;
                }
                self.report_departure(None);
                shared.searching.fetch_add(1, Ordering::SeqCst);
            }
            let mut found = None;
            for _ in 0..shared.config.spin_before_park.max(1) {
                if let Some(t) = self.find_task() {
                    found = Some(t);
                    break;
                }
                std::hint::spin_loop();
            }
            searching = false;
            let last = shared.searching.fetch_sub(1, Ordering::SeqCst) == 1;
            if let Some(t) = found {
                if last {
                    shared.wake_surplus();
                }
                self.run_task(t);
                continue;
            }
            if shared.is_stopped() {
                break;
            }

            slot.sleeping.store(true, Ordering::SeqCst);
            shared.sleepers.fetch_add(1, Ordering::SeqCst);
            fence(Ordering::SeqCst);
            let late = self.find_task();
            if late.is_none() && !shared.is_stopped() {
                std::thread::park_timeout(PARK_TIMEOUT);
            }
            if slot.sleeping.swap(false, Ordering::SeqCst) {
                shared.sleepers.fetch_sub(1, Ordering::SeqCst);
            } else {
                // Whoever cleared the flag counted this worker as searching.
                searching = true;
            }
            if let Some(t) = late {
                if searching {
                    searching = false;
                    if shared.searching.fetch_sub(1, Ordering::SeqCst) == 1 {
                        shared.wake_surplus();
                    }
                }
                self.run_task(t);
            }
        }
        if searching {
            shared.searching.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

extern "C" fn task_entry(arg: usize, data: usize) -> ! {
    let task = data as *mut Task;
    // SAFETY: `data` is the task pointer installed by `run_task`, and `arg`
    // the worker that switched in. The task is exclusively ours while running.
    unsafe {
        (*task).ctx.worker = arg as *const WorkerCtx;
        if let Some(body) = (*task).body.take() {
            if let Err(payload) = catch_unwind(AssertUnwindSafe(body)) {
                (*task).panic = Some(payload);
            }
        }
        (*task).exit = Exit::Finished;
        let worker = (*task).ctx.worker;
        context::switch(&mut (*task).ctx.sp, (*worker).sched_sp(), 0);
    }
    // A finished context is never resumed.
    std::process::abort()
}

pub(crate) fn run_worker(shared: Arc<Shared>, id: WorkerId) {
    let ctx = WorkerCtx {
        id,
        shared,
        sched_sp: UnsafeCell::new(0),
        stacks: RefCell::new(Vec::new()),
        last: Cell::new(None),
    };
    CURRENT_WORKER.with(|c| c.set(&ctx as *const WorkerCtx));
    ctx.shared.tool.emit(ToolEvent::ThreadBegin(id));
    ctx.main_loop();
    ctx.report_departure(None);
    ctx.shared.tool.emit(ToolEvent::ThreadEnd(id));
    CURRENT_WORKER.with(|c| c.set(ptr::null()));
}
