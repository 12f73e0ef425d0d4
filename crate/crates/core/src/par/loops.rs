use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{barrier, current_env, ParError};
use crate::sched::{block_on, Waker};

/// How a loop's iterations are divided among the team.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchedKind {
    /// One contiguous block per member, sizes differing by at most one.
    StaticBlock,
    /// Chunks of the given size dealt out round-robin.
    StaticChunked(i64),
    /// Chunks of the given size claimed on demand.
    Dynamic(i64),
    /// On-demand chunks of `max(ceil(remaining / team size), chunk)`.
    Guided(i64),
}

impl SchedKind {
    fn chunk(self) -> Option<i64> {
        match self {
            SchedKind::StaticBlock => None,
            SchedKind::StaticChunked(c) | SchedKind::Dynamic(c) | SchedKind::Guided(c) => Some(c),
        }
    }

    fn validate(self) -> Result<(), ParError> {
        match self.chunk() {
            Some(c) if c < 1 => Err(ParError::InvalidChunk(c)),
            _ => Ok(()),
        }
    }
}

/// Number of iterations of `lower..=upper` stepping by `incr`.
fn trip_count(lower: i64, upper: i64, incr: i64) -> Result<u64, ParError> {
    if incr == 0 {
        return Err(ParError::ZeroIncrement);
    }
    let (l, u, s) = (lower as i128, upper as i128, incr as i128);
    let n = if s > 0 {
        if l > u {
            0
        } else {
            (u - l) / s + 1
        }
    } else if l < u {
        0
    } else {
        (l - u) / -s + 1
    };
    u64::try_from(n).map_err(|_| ParError::TooManyIterations)
}

fn value_at(lower: i64, incr: i64, k: u64) -> i64 {
    (lower as i128 + k as i128 * incr as i128) as i64
}

/// One member's share of a statically scheduled loop.
///
/// The member runs `lower..=upper` stepping by `incr`, then repeats shifted
/// by `stride` while it stays inside the loop. An empty share has its bounds
/// crossed with respect to `incr`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoopAssignment {
    pub lower: i64,
    pub upper: i64,
    pub stride: i64,
    pub last_iter: bool,
    pub incr: i64,
    chunk: u64,
    last_value: i64,
}

impl LoopAssignment {
    fn empty(lower: i64, incr: i64) -> Self {
        LoopAssignment {
            lower,
            upper: lower.wrapping_sub(incr),
            stride: incr,
            last_iter: false,
            incr,
            chunk: 0,
            last_value: lower,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.chunk == 0
    }

    /// Every iteration value of this share, in order.
    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        let fwd = self.incr > 0;
        let last = self.last_value as i128;
        let within = move |v: i128| if fwd { v <= last } else { v >= last };
        let chunk = self.chunk;
        let incr = self.incr as i128;
        (0u64..)
            .map(move |k| self.lower as i128 + k as i128 * self.stride as i128)
            .take_while(move |s| chunk > 0 && within(*s))
            .flat_map(move |s| {
                (0..chunk as i128)
                    .map(move |j| s + j * incr)
                    .take_while(move |v| within(*v))
                    .map(|v| v as i64)
            })
    }
}

/// Computes member `tid`'s share of `lower..=upper` (step `incr`) under a
/// static schedule for a team of `team_size`.
pub fn static_init(
    team_size: usize,
    tid: usize,
    sched: SchedKind,
    lower: i64,
    upper: i64,
    incr: i64,
) -> Result<LoopAssignment, ParError> {
    if team_size == 0 || tid >= team_size {
        return Err(ParError::InvalidMember { tid, size: team_size });
    }
    sched.validate()?;
    let n = trip_count(lower, upper, incr)?;
    let t = team_size as u64;
    let tid = tid as u64;
    if n == 0 {
        return Ok(LoopAssignment::empty(lower, incr));
    }
    let last_value = value_at(lower, incr, n - 1);
    let span = (n as i128 * incr as i128).clamp(i64::MIN as i128, i64::MAX as i128) as i64;
    match sched {
        SchedKind::StaticBlock => {
            let (q, r) = (n / t, n % t);
            let count = q + u64::from(tid < r);
            if count == 0 {
                return Ok(LoopAssignment::empty(lower, incr));
            }
            let start = tid * q + tid.min(r);
            Ok(LoopAssignment {
                lower: value_at(lower, incr, start),
                upper: value_at(lower, incr, start + count - 1),
                stride: span,
                last_iter: tid == n.min(t) - 1,
                incr,
                chunk: count,
                last_value,
            })
        }
        SchedKind::StaticChunked(c) => {
            let c = c as u64;
            let chunks = n.div_ceil(c);
            if tid >= chunks {
                return Ok(LoopAssignment::empty(lower, incr));
            }
            let start = tid * c;
            let len = c.min(n - start);
            let stride = (c as i128 * t as i128 * incr as i128).clamp(i64::MIN as i128, i64::MAX as i128) as i64;
            Ok(LoopAssignment {
                lower: value_at(lower, incr, start),
                upper: value_at(lower, incr, start + len - 1),
                stride,
                last_iter: tid == (chunks - 1) % t,
                incr,
                chunk: c,
                last_value,
            })
        }
        other => Err(ParError::NotStatic(other)),
    }
}

/// A contiguous run of iterations handed out by [`dispatch_next`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub lower: i64,
    /// Inclusive.
    pub upper: i64,
    pub incr: i64,
    /// Contains the loop's final iteration.
    pub last_iter: bool,
}

impl Chunk {
    pub fn iter(&self) -> impl Iterator<Item = i64> {
        let (lower, incr) = (self.lower as i128, self.incr as i128);
        let n = (self.upper as i128 - lower) / incr + 1;
        (0..n).map(move |k| (lower + k * incr) as i64)
    }
}

#[derive(Default)]
struct OrderedState {
    next: u64,
    in_body: Option<u64>,
    waiting: BTreeMap<u64, Waker>,
}

/// Shared state of one loop construct instance.
pub(crate) struct LoopDispatch {
    sched: SchedKind,
    lower: i64,
    upper: i64,
    incr: i64,
    n: u64,
    size: usize,
    next: AtomicU64,
    ordered: Mutex<OrderedState>,
}

impl LoopDispatch {
    fn same_loop(&self, sched: SchedKind, lower: i64, upper: i64, incr: i64) -> bool {
        (self.sched, self.lower, self.upper, self.incr) == (sched, lower, upper, incr)
    }

    fn chunk(&self, first: u64, len: u64) -> Chunk {
        let last = first + len - 1;
        Chunk {
            lower: value_at(self.lower, self.incr, first),
            upper: value_at(self.lower, self.incr, last),
            incr: self.incr,
            last_iter: last == self.n - 1,
        }
    }

    fn claim_shared(&self) -> Option<(u64, u64)> {
        match self.sched {
            SchedKind::Dynamic(c) => {
                let c = c as u64;
                let mut cur = self.next.load(Ordering::Relaxed);
                loop {
                    if cur >= self.n {
                        return None;
                    }
                    let len = c.min(self.n - cur);
                    match self
                        .next
                        .compare_exchange_weak(cur, cur + len, Ordering::AcqRel, Ordering::Relaxed)
                    {
                        Ok(_) => return Some((cur, len)),
                        Err(v) => cur = v,
                    }
                }
            }
            SchedKind::Guided(c) => {
                let t = self.size as u64;
                let mut cur = self.next.load(Ordering::Relaxed);
                loop {
                    if cur >= self.n {
                        return None;
                    }
                    let rem = self.n - cur;
                    let len = rem.div_ceil(t).max(c as u64).min(rem);
                    match self
                        .next
                        .compare_exchange_weak(cur, cur + len, Ordering::AcqRel, Ordering::Relaxed)
                    {
                        Ok(_) => return Some((cur, len)),
                        Err(v) => cur = v,
                    }
                }
            }
            _ => unreachable!("static schedules are claimed per member"),
        }
    }

    /// Logical index of iteration value `v`.
    fn index_of(&self, v: i64) -> Option<u64> {
        let off = v as i128 - self.lower as i128;
        let incr = self.incr as i128;
        if off % incr != 0 {
            return None;
        }
        let k = off / incr;
        (0..self.n as i128).contains(&k).then_some(k as u64)
    }
}

pub(crate) struct ActiveLoop {
    dispatch: Arc<LoopDispatch>,
    seq: u64,
    tid: usize,
    /// Static schedules: next chunk number of this member.
    round: u64,
    finished: bool,
}

fn finish_loop(active: &mut ActiveLoop) {
    if active.finished {
        return;
    }
    active.finished = true;
    let env = current_env();
    if let Some(team) = env.team.as_ref().filter(|t| t.size > 1) {
        let mut map = team.loops.lock();
        if let Some(entry) = map.get_mut(&active.seq) {
            entry.1 += 1;
            if entry.1 == team.size {
                map.remove(&active.seq);
            }
        }
    }
}

/// Registers the caller for a loop construct. All members of the team must
/// register the same loop, in the same order.
pub fn dispatch_init(sched: SchedKind, lower: i64, upper: i64, incr: i64) -> Result<(), ParError> {
    sched.validate()?;
    let n = trip_count(lower, upper, incr)?;
    let env = current_env();
    let size = env.team_size();
    let fresh = || {
        Arc::new(LoopDispatch {
            sched,
            lower,
            upper,
            incr,
            n,
            size,
            next: AtomicU64::new(0),
            ordered: Mutex::new(OrderedState::default()),
        })
    };
    let mut m = env.member.lock();
    if let Some(prev) = m.current_loop.as_mut() {
        finish_loop(prev);
    }
    m.loop_seq += 1;
    let seq = m.loop_seq;
    let dispatch = match env.team.as_ref().filter(|t| t.size > 1) {
        Some(team) => {
            let mut map = team.loops.lock();
            let entry = map.entry(seq).or_insert_with(|| (fresh(), 0));
            if !entry.0.same_loop(sched, lower, upper, incr) {
                m.loop_seq -= 1;
                return Err(ParError::LoopMismatch);
            }
            entry.0.clone()
        }
        None => fresh(),
    };
    m.current_loop = Some(ActiveLoop {
        dispatch,
        seq,
        tid: env.thread_num,
        round: 0,
        finished: false,
    });
    Ok(())
}

/// Claims the caller's next chunk of the loop registered with
/// [`dispatch_init`]; `None` once the caller's share is exhausted.
pub fn dispatch_next() -> Result<Option<Chunk>, ParError> {
    let env = current_env();
    let mut m = env.member.lock();
    let active = m.current_loop.as_mut().ok_or(ParError::NoActiveLoop)?;
    if active.finished {
        return Ok(None);
    }
    let d = active.dispatch.clone();
    let claim = match d.sched {
        SchedKind::Dynamic(_) | SchedKind::Guided(_) => d.claim_shared(),
        SchedKind::StaticBlock => {
            let a = static_init(d.size, active.tid, d.sched, d.lower, d.upper, d.incr)?;
            let first = (active.round == 0 && !a.is_empty()).then(|| {
                let k = d.index_of(a.lower).expect("static share lies in the loop");
                (k, a.chunk)
            });
            active.round += 1;
            first
        }
        SchedKind::StaticChunked(c) => {
            let c = c as u64;
            let idx = (active.round * d.size as u64 + active.tid as u64).checked_mul(c);
            active.round += 1;
            idx.filter(|k| *k < d.n).map(|k| (k, c.min(d.n - k)))
        }
    };
    match claim {
        Some((first, len)) => Ok(Some(d.chunk(first, len))),
        None => {
            finish_loop(active);
            Ok(None)
        }
    }
}

fn active_dispatch() -> Result<Arc<LoopDispatch>, ParError> {
    let env = current_env();
    let m = env.member.lock();
    m.current_loop
        .as_ref()
        .map(|a| a.dispatch.clone())
        .ok_or(ParError::NoActiveLoop)
}

/// Waits until every earlier iteration of the active loop has left its
/// ordered region. Every iteration must pass through its ordered region
/// exactly once.
pub fn ordered_wait(iteration: i64) -> Result<(), ParError> {
    let d = active_dispatch()?;
    let k = d.index_of(iteration).ok_or(ParError::OrderedOutOfRange(iteration))?;
    let mut st = d.ordered.lock();
    if k < st.next || st.in_body == Some(k) || st.waiting.contains_key(&k) {
        return Err(ParError::OrderedDuplicate(iteration));
    }
    if k == st.next && st.in_body.is_none() {
        st.in_body = Some(k);
        return Ok(());
    }
    block_on(move |w| {
        st.waiting.insert(k, w);
    });
    Ok(())
}

/// Leaves the ordered region of `iteration`, admitting the next one.
pub fn ordered_exit(iteration: i64) -> Result<(), ParError> {
    let d = active_dispatch()?;
    let k = d.index_of(iteration).ok_or(ParError::OrderedOutOfRange(iteration))?;
    let mut st = d.ordered.lock();
    if st.in_body != Some(k) {
        return Err(ParError::OrderedNotCurrent(iteration));
    }
    st.in_body = None;
    st.next = k + 1;
    if let Some(w) = st.waiting.remove(&(k + 1)) {
        st.in_body = Some(k + 1);
        drop(st);
        w.wake();
    }
    Ok(())
}

/// Runs `f` inside the ordered region of `iteration`.
pub fn ordered<R>(iteration: i64, f: impl FnOnce() -> R) -> Result<R, ParError> {
    ordered_wait(iteration)?;
    let r = f();
    ordered_exit(iteration)?;
    Ok(r)
}

/// Work-shares `lower..=upper` (step `incr`) across the team, calling
/// `body` for each iteration the caller receives, then waits for the whole
/// team.
pub fn for_loop(
    sched: SchedKind,
    lower: i64,
    upper: i64,
    incr: i64,
    mut body: impl FnMut(i64),
) -> Result<(), ParError> {
    dispatch_init(sched, lower, upper, incr)?;
    while let Some(c) = dispatch_next()? {
        for i in c.iter() {
            body(i);
        }
    }
    barrier();
    Ok(())
}
