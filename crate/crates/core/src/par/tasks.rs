use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{current_env, ParError, TaskEnv};
use crate::sched::{self, current_task_id, current_worker, Priority, Shared, Task, TaskId};
use crate::tooling::{TaskCreate, ToolEvent};

/// Identifies the storage a dependence refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepKey(usize);

impl DepKey {
    pub fn new(key: usize) -> Self {
        DepKey(key)
    }

    /// The address of `value`.
    pub fn of<T: ?Sized>(value: &T) -> Self {
        DepKey(value as *const T as *const () as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DepMode {
    In,
    Out,
    InOut,
}

/// One explicit task with dependences, as seen by its successors.
pub(crate) struct DepNode {
    /// Unfinished predecessors, plus one while edges are being added.
    remaining: AtomicUsize,
    /// `None` once the task has finished.
    successors: Mutex<Option<Vec<Arc<DepNode>>>>,
    task: Mutex<Option<Box<Task>>>,
}

impl DepNode {
    fn new() -> Self {
        DepNode {
            remaining: AtomicUsize::new(1),
            successors: Mutex::new(Some(Vec::new())),
            task: Mutex::new(None),
        }
    }

    fn is_done(&self) -> bool {
        self.successors.lock().is_none()
    }

    /// Makes `succ` wait for `self`, unless `self` already finished.
    fn precede(&self, succ: &Arc<DepNode>) {
        if let Some(v) = self.successors.lock().as_mut() {
            succ.remaining.fetch_add(1, Ordering::AcqRel);
            v.push(succ.clone());
        }
    }

    fn release(&self, shared: &Shared) {
        if self.remaining.fetch_sub(1, Ordering::AcqRel) == 1 {
            if let Some(t) = self.task.lock().take() {
                shared.submit(t, current_worker());
            }
        }
    }

    fn complete(&self, shared: &Shared) {
        let succ = self.successors.lock().take().unwrap_or_default();
        for s in succ {
            s.release(shared);
        }
    }
}

#[derive(Default)]
struct KeyState {
    last_writer: Option<Arc<DepNode>>,
    readers: Vec<Arc<DepNode>>,
}

/// Dependences among the children of one task.
#[derive(Default)]
pub(crate) struct DependencyTable {
    keys: HashMap<DepKey, KeyState>,
}

impl DependencyTable {
    /// Records `node`'s accesses and returns its predecessors: the last
    /// writer for `In`, the last writer and every reader since for `Out` and
    /// `InOut`.
    fn register(&mut self, node: &Arc<DepNode>, deps: &[(DepKey, DepMode)]) -> Vec<Arc<DepNode>> {
        let mut preds: Vec<Arc<DepNode>> = Vec::new();
        let mut add = |p: &Arc<DepNode>| {
            if !Arc::ptr_eq(p, node) && !preds.iter().any(|q| Arc::ptr_eq(q, p)) {
                preds.push(p.clone());
            }
        };
        for &(key, mode) in deps {
            let st = self.keys.entry(key).or_default();
            match mode {
                DepMode::In => {
                    if let Some(w) = &st.last_writer {
                        add(w);
                    }
                    st.readers.retain(|r| !r.is_done());
                    if !st.readers.iter().any(|r| Arc::ptr_eq(r, node)) {
                        st.readers.push(node.clone());
                    }
                }
                DepMode::Out | DepMode::InOut => {
                    if let Some(w) = &st.last_writer {
                        add(w);
                    }
                    for r in &st.readers {
                        add(r);
                    }
                    st.readers.clear();
                    st.last_writer = Some(node.clone());
                }
            }
        }
        preds
    }
}

/// Creates an explicit task. It starts once every task it depends on has
/// finished, under the usual rules: `In` waits for the previous writer of
/// the key, `Out` and `InOut` also wait for every reader since. Dependences
/// only relate tasks created by the same parent.
pub fn task_spawn<F>(body: F, deps: &[(DepKey, DepMode)]) -> Result<TaskId, ParError>
where
    F: FnOnce() + Send + 'static,
{
    let shared = sched::ambient()?;
    shared.admit()?;
    let parent = current_env();
    let env = Arc::new(TaskEnv::child_of(&parent));
    parent.children.add(1);
    let team = parent.team.clone();
    if let Some(team) = &team {
        team.pending.add(1);
    }
    let node = (!deps.is_empty()).then(|| Arc::new(DepNode::new()));
    let run = {
        let node = node.clone();
        let shared = shared.clone();
        let parent = parent.clone();
        move || {
            let r = catch_unwind(AssertUnwindSafe(body));
            if let Some(node) = node {
                node.complete(&shared);
            }
            if let Err(p) = r {
                match &team {
                    Some(team) => team.record_panic(p),
                    None => shared.note_panic(current_task_id().expect("runs as a task"), p),
                }
            }
            if let Some(team) = &team {
                team.pending.done();
            }
            parent.children.done();
        }
    };
    let task = Task::new(Box::new(run), Priority::Normal, Some(env));
    let id = task.id;
    shared.tool.emit(ToolEvent::TaskCreate(TaskCreate {
        creator: current_task_id(),
        new_task: id,
        deps_count: deps.len(),
    }));
    match node {
        None => shared.submit(task, current_worker()),
        Some(node) => {
            let preds = parent.deps.lock().register(&node, deps);
            *node.task.lock() = Some(task);
            for p in &preds {
                p.precede(&node);
            }
            node.release(&shared);
        }
    }
    Ok(id)
}

/// Waits until every task created directly by the caller has finished.
pub fn taskwait() {
    current_env().children.wait_zero();
}
