use std::any::Any;
use std::collections::HashMap;
use std::fmt;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe, Location};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{current_env, loops, ParError, TaskEnv, WaitCounter};
use crate::sched::{self, block_on, current_task_id, Body, Priority, Runtime, Shared, Task, Waker, WorkerId};
use crate::tooling::{ImplicitTask, ParallelBegin, Phase, ToolEvent};

/// Identifier of one parallel region instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TeamId(u64);

impl TeamId {
    fn next() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        TeamId(NEXT.fetch_add(1, Ordering::Relaxed))
    }

    pub fn from_raw(v: u64) -> Self {
        TeamId(v)
    }

    pub fn as_u64(self) -> u64 {
        self.0
    }
}

impl fmt::Display for TeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "team#{}", self.0)
    }
}

struct BarrierState {
    arrived: usize,
    generation: u64,
    waiters: Vec<Waker>,
    /// A member panicked; nobody waits at this barrier any more.
    broken: bool,
}

pub(crate) struct SectionsShared {
    cursor: AtomicUsize,
    total: usize,
}

pub(crate) struct Team {
    pub(crate) id: TeamId,
    pub(crate) size: usize,
    pub(crate) parent: Option<Arc<Team>>,
    /// This team or an enclosing one has more than one member.
    pub(crate) active: bool,
    barrier: Mutex<BarrierState>,
    singles: Mutex<HashMap<u64, usize>>,
    pub(crate) loops: Mutex<HashMap<u64, (Arc<loops::LoopDispatch>, usize)>>,
    sections: Mutex<HashMap<u64, (Arc<SectionsShared>, usize)>>,
    /// Members still running plus explicit tasks not yet finished.
    pub(crate) pending: WaitCounter,
    panic: Mutex<Option<Box<dyn Any + Send>>>,
}

impl Team {
    fn new(size: usize, parent: Option<Arc<Team>>) -> Self {
        let active = size > 1 || parent.as_ref().is_some_and(|p| p.active);
        Team {
            id: TeamId::next(),
            size,
            parent,
            active,
            barrier: Mutex::new(BarrierState {
                arrived: 0,
                generation: 0,
                waiters: Vec::new(),
                broken: false,
            }),
            singles: Mutex::new(HashMap::new()),
            loops: Mutex::new(HashMap::new()),
            sections: Mutex::new(HashMap::new()),
            pending: WaitCounter::new(0),
            panic: Mutex::new(None),
        }
    }

    /// Keeps the first panic raised inside the region.
    pub(crate) fn record_panic(&self, payload: Box<dyn Any + Send>) {
        let mut p = self.panic.lock();
        if p.is_none() {
            *p = Some(payload);
        }
    }

    /// Releases every member waiting at the barrier; they and any later
    /// arrivals panic instead of waiting for a member that will not come.
    fn break_barrier(&self) {
        let mut st = self.barrier.lock();
        st.broken = true;
        let ws = std::mem::take(&mut st.waiters);
        drop(st);
        for w in ws {
            w.wake();
        }
    }

    fn barrier_wait(&self) {
        if self.size == 1 {
            return;
        }
        let mut st = self.barrier.lock();
        if st.broken {
            drop(st);
            panic!("barrier abandoned: another member of {} panicked", self.id);
        }
        st.arrived += 1;
        if st.arrived == self.size {
            st.arrived = 0;
            st.generation += 1;
            let ws = std::mem::take(&mut st.waiters);
            drop(st);
            for w in ws {
                w.wake();
            }
            return;
        }
        block_on(move |w| st.waiters.push(w));
        if self.barrier.lock().broken {
            panic!("barrier abandoned: another member of {} panicked", self.id);
        }
    }

    #[cfg(test)]
    pub(crate) fn barrier_generation(&self) -> u64 {
        self.barrier.lock().generation
    }
}

/// Runs `body(thread_num)` on a new team and returns once every member and
/// every task created in the region has finished.
///
/// `num_threads == 0` uses [`get_max_threads`](super::get_max_threads). A
/// panic in any member is re-raised here after the join.
#[track_caller]
pub fn fork<F>(num_threads: i32, body: F) -> Result<(), ParError>
where
    F: Fn(usize) + Sync,
{
    let codeptr = Location::caller();
    let shared = sched::ambient()?;
    fork_on(&shared, num_threads, &body, codeptr)
}

impl Runtime {
    /// [`fork`] on this runtime rather than the ambient one.
    #[track_caller]
    pub fn fork<F>(&self, num_threads: i32, body: F) -> Result<(), ParError>
    where
        F: Fn(usize) + Sync,
    {
        let codeptr = Location::caller();
        fork_on(self.shared(), num_threads, &body, codeptr)
    }
}

fn fork_on<F>(shared: &Arc<Shared>, num_threads: i32, body: &F, codeptr: &'static Location<'static>) -> Result<(), ParError>
where
    F: Fn(usize) + Sync,
{
    if num_threads < 0 {
        return Err(ParError::NegativeTeamSize(num_threads));
    }
    let parent = current_env();
    let size = match num_threads {
        0 => parent.default_team_size(),
        n => n as usize,
    };
    for admitted in 0..size {
        if let Err(e) = shared.admit() {
            for _ in 0..admitted {
                shared.task_finished();
            }
            return Err(e.into());
        }
    }
    let team = Arc::new(Team::new(size, parent.team.clone()));
    shared.tool.emit(ToolEvent::ParallelBegin(ParallelBegin {
        parent_task: current_task_id(),
        team_id: team.id,
        team_size: size,
        codeptr: Some(codeptr),
    }));
    team.pending.add(size);
    let body_addr = body as *const F as usize;
    let workers = shared.config.num_workers;
    for i in 0..size {
        let env = Arc::new(TaskEnv::member_of(team.clone(), i, &parent));
        let member_team = team.clone();
        let member_shared = shared.clone();
        let run: Body = Box::new(move || member_main::<F>(&member_shared, &member_team, i, body_addr));
        let task = Task::new(run, Priority::Low, Some(env));
        shared.submit(task, Some(WorkerId::new(i % workers)));
    }
    team.pending.wait_zero();
    shared.tool.emit(ToolEvent::ParallelEnd(team.id));
    if let Some(p) = team.panic.lock().take() {
        resume_unwind(p);
    }
    Ok(())
}

fn member_main<F: Fn(usize) + Sync>(shared: &Shared, team: &Team, thread_num: usize, body_addr: usize) {
    shared.tool.emit(ToolEvent::ImplicitTask(ImplicitTask {
        phase: Phase::Begin,
        team_id: team.id,
        thread_num,
    }));
    // SAFETY: `fork_on` keeps `body` alive until `pending` reaches zero,
    // which cannot happen before this member's `done` below.
    let body = unsafe { &*(body_addr as *const F) };
    if let Err(p) = catch_unwind(AssertUnwindSafe(|| body(thread_num))) {
        team.record_panic(p);
        team.break_barrier();
    }
    shared.tool.emit(ToolEvent::ImplicitTask(ImplicitTask {
        phase: Phase::End,
        team_id: team.id,
        thread_num,
    }));
    team.pending.done();
}

/// Waits until every member of the caller's team has arrived. A no-op
/// outside a region or in a team of one.
pub fn barrier() {
    if let Some(team) = &current_env().team {
        team.barrier_wait();
    }
}

/// True for exactly one member of the team (the first to arrive) per
/// encounter of a single construct. Every member must call it the same
/// number of times.
pub fn single_enter() -> bool {
    let env = current_env();
    let Some(team) = env.team.as_ref().filter(|t| t.size > 1) else {
        return true;
    };
    let seq = {
        let mut m = env.member.lock();
        m.single_seq += 1;
        m.single_seq
    };
    let mut map = team.singles.lock();
    let arrived = map.entry(seq).or_insert(0);
    *arrived += 1;
    let first = *arrived == 1;
    if *arrived == team.size {
        map.remove(&seq);
    }
    first
}

/// Runs `f` on one member, then waits for the whole team.
pub fn single<R>(f: impl FnOnce() -> R) -> Option<R> {
    let r = single_enter().then(f);
    barrier();
    r
}

/// True iff the caller is member 0.
pub fn master_check() -> bool {
    current_env().thread_num == 0
}

/// Runs `f` on member 0 only; no barrier.
pub fn master<R>(f: impl FnOnce() -> R) -> Option<R> {
    master_check().then(f)
}

/// Hands out each index in `0..total` to exactly one member. Each member
/// calls this repeatedly until it returns `None`.
pub fn sections_next(total: usize) -> Option<usize> {
    let env = current_env();
    let team = env.team.as_ref().filter(|t| t.size > 1);
    let mut m = env.member.lock();
    if m.sections.is_none() {
        m.sections_seq += 1;
        let seq = m.sections_seq;
        let shared = match team {
            Some(team) => team
                .sections
                .lock()
                .entry(seq)
                .or_insert_with(|| {
                    let s = SectionsShared {
                        cursor: AtomicUsize::new(0),
                        total,
                    };
                    (Arc::new(s), 0)
                })
                .0
                .clone(),
            None => Arc::new(SectionsShared {
                cursor: AtomicUsize::new(0),
                total,
            }),
        };
        m.sections = Some((seq, shared));
    }
    let (seq, s) = m.sections.as_ref().expect("sections state set above");
    let claim = s.cursor.fetch_add(1, Ordering::Relaxed);
    if claim < s.total {
        return Some(claim);
    }
    let seq = *seq;
    m.sections = None;
    drop(m);
    if let Some(team) = team {
        let mut map = team.sections.lock();
        if let Some(entry) = map.get_mut(&seq) {
            entry.1 += 1;
            if entry.1 == team.size {
                map.remove(&seq);
            }
        }
    }
    None
}

/// Runs `f(i)` for each section index across the team, then waits for the
/// whole team.
pub fn sections(total: usize, mut f: impl FnMut(usize)) {
    while let Some(i) = sections_next(total) {
        f(i);
    }
    barrier();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::PolicyKind;
    use crate::sched::RuntimeConfig;
    use std::collections::HashSet;

    fn rt(workers: usize) -> Runtime {
        Runtime::start(RuntimeConfig::new(workers, PolicyKind::PriorityLocal)).unwrap()
    }

    #[test]
    fn members_get_every_thread_num() {
        let rt = rt(2);
        let seen = Mutex::new(HashSet::new());
        rt.fork(4, |i| {
            seen.lock().insert(i);
            assert_eq!(super::super::get_num_threads(), 4);
            assert_eq!(super::super::get_thread_num(), i);
        })
        .unwrap();
        assert_eq!(seen.into_inner(), (0..4).collect());
    }

    #[test]
    fn negative_team_size_is_rejected() {
        let rt = rt(1);
        assert_eq!(rt.fork(-1, |_| {}), Err(ParError::NegativeTeamSize(-1)));
    }

    #[test]
    fn barrier_generations_advance() {
        let rt = rt(2);
        let gens = Mutex::new(Vec::new());
        rt.fork(3, |_| {
            barrier();
            barrier();
            let env = current_env();
            gens.lock().push(env.team.as_ref().unwrap().barrier_generation());
        })
        .unwrap();
        assert!(gens.into_inner().iter().all(|g| *g >= 2));
    }

    #[test]
    fn member_panic_surfaces_after_join() {
        let rt = rt(2);
        let finished = AtomicUsize::new(0);
        let r = catch_unwind(AssertUnwindSafe(|| {
            rt.fork(3, |i| {
                if i == 1 {
                    panic!("member failed");
                }
                finished.fetch_add(1, Ordering::Relaxed);
            })
        }));
        assert!(r.is_err());
        assert_eq!(finished.load(Ordering::Relaxed), 2);
    }

    #[test]
    fn member_panic_releases_barrier() {
        let rt = rt(2);
        let r = catch_unwind(AssertUnwindSafe(|| {
            rt.fork(4, |i| {
                if i == 3 {
                    panic!("first");
                }
                barrier();
            })
        }));
        let msg = r.unwrap_err();
        assert_eq!(msg.downcast_ref::<&str>(), Some(&"first"));
    }
}
