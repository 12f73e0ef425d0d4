use std::cell::Cell;
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{
    AtomicI32, AtomicI64, AtomicIsize, AtomicU32, AtomicU64, AtomicUsize, Ordering,
};
use std::sync::{Arc, OnceLock};

use parking_lot::Mutex;

use super::ParError;
use crate::sched::{block_on, current_task_id, Waker};

/// Identity of a lock holder: the running task, or the OS thread outside
/// any task.
fn holder() -> u64 {
    const THREAD_BIT: u64 = 1 << 63;
    static NEXT: AtomicU64 = AtomicU64::new(1);
    thread_local! {
        static THREAD_HOLDER: Cell<u64> = const { Cell::new(0) };
    }
    if let Some(t) = current_task_id() {
        return t.as_u64();
    }
    THREAD_HOLDER.with(|h| {
        if h.get() == 0 {
            h.set(THREAD_BIT | NEXT.fetch_add(1, Ordering::Relaxed));
        }
        h.get()
    })
}

#[derive(Default)]
struct LockState {
    owner: Option<u64>,
    depth: usize,
    waiters: VecDeque<(u64, Waker)>,
}

/// Shared core of both lock kinds. Ownership passes directly from the
/// releasing holder to the longest waiting task.
#[derive(Default)]
struct LockCore {
    st: Mutex<LockState>,
}

impl LockCore {
    fn set(&self, nestable: bool) -> Result<usize, ParError> {
        let me = holder();
        let mut st = self.st.lock();
        match st.owner {
            None => {
                st.owner = Some(me);
                st.depth = 1;
                Ok(1)
            }
            Some(o) if o == me => {
                if !nestable {
                    return Err(ParError::LockReentrant);
                }
                st.depth += 1;
                Ok(st.depth)
            }
            Some(_) => {
                block_on(move |w| st.waiters.push_back((me, w)));
                Ok(1)
            }
        }
    }

    fn test(&self, nestable: bool) -> usize {
        let me = holder();
        let mut st = self.st.lock();
        match st.owner {
            None => {
                st.owner = Some(me);
                st.depth = 1;
                1
            }
            Some(o) if o == me && nestable => {
                st.depth += 1;
                st.depth
            }
            Some(_) => 0,
        }
    }

    fn unset(&self) -> Result<usize, ParError> {
        let me = holder();
        let mut st = self.st.lock();
        match st.owner {
            None => return Err(ParError::LockNotHeld),
            Some(o) if o != me => return Err(ParError::LockNotOwner),
            Some(_) => {}
        }
        st.depth -= 1;
        if st.depth > 0 {
            return Ok(st.depth);
        }
        match st.waiters.pop_front() {
            Some((next, w)) => {
                st.owner = Some(next);
                st.depth = 1;
                drop(st);
                w.wake();
            }
            None => st.owner = None,
        }
        Ok(0)
    }

    fn depth(&self) -> usize {
        self.st.lock().depth
    }
}

/// A lock whose waiters suspend rather than block their worker.
#[derive(Default)]
pub struct SimpleLock {
    core: LockCore,
}

impl SimpleLock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Acquires the lock, suspending until it is free.
    pub fn set(&self) -> Result<(), ParError> {
        self.core.set(false).map(|_| ())
    }

    /// Acquires the lock if it is free; never waits.
    pub fn test(&self) -> bool {
        self.core.test(false) > 0
    }

    pub fn unset(&self) -> Result<(), ParError> {
        self.core.unset().map(|_| ())
    }

    pub fn is_locked(&self) -> bool {
        self.core.depth() > 0
    }
}

/// A lock its holder may acquire repeatedly; it is released when every
/// acquisition has been undone.
#[derive(Default)]
pub struct NestLock {
    core: LockCore,
}

impl NestLock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Acquires the lock, or deepens the caller's hold on it. Returns the
    /// new depth.
    pub fn set(&self) -> usize {
        self.core.set(true).expect("nestable locks allow re-entry")
    }

    /// New depth on success, 0 if someone else holds the lock.
    pub fn test(&self) -> usize {
        self.core.test(true)
    }

    /// Undoes one acquisition; returns the remaining depth.
    pub fn unset(&self) -> Result<usize, ParError> {
        self.core.unset()
    }

    pub fn depth(&self) -> usize {
        self.core.depth()
    }
}

pub fn lock_init() -> SimpleLock {
    SimpleLock::new()
}

pub fn lock_set(l: &SimpleLock) -> Result<(), ParError> {
    l.set()
}

pub fn lock_unset(l: &SimpleLock) -> Result<(), ParError> {
    l.unset()
}

pub fn lock_test(l: &SimpleLock) -> bool {
    l.test()
}

pub fn nest_lock_init() -> NestLock {
    NestLock::new()
}

pub fn nest_lock_set(l: &NestLock) -> usize {
    l.set()
}

pub fn nest_lock_unset(l: &NestLock) -> Result<usize, ParError> {
    l.unset()
}

pub fn nest_lock_test(l: &NestLock) -> usize {
    l.test()
}

/// Name shared by all unnamed critical sections.
pub const DEFAULT_CRITICAL: &str = "<default>";

fn critical_lock(name: Option<&str>) -> Arc<SimpleLock> {
    static REGISTRY: OnceLock<Mutex<HashMap<String, Arc<SimpleLock>>>> = OnceLock::new();
    let name = name.unwrap_or(DEFAULT_CRITICAL);
    let mut reg = REGISTRY.get_or_init(Default::default).lock();
    if let Some(l) = reg.get(name) {
        return l.clone();
    }
    reg.entry(name.to_string()).or_default().clone()
}

/// Enters the critical section `name` (`None` for the unnamed one),
/// excluding every other task in a section of the same name.
pub fn critical_enter(name: Option<&str>) -> Result<(), ParError> {
    critical_lock(name).set()
}

pub fn critical_exit(name: Option<&str>) -> Result<(), ParError> {
    critical_lock(name).unset()
}

pub fn critical<R>(name: Option<&str>, f: impl FnOnce() -> R) -> Result<R, ParError> {
    let l = critical_lock(name);
    l.set()?;
    let r = f();
    l.unset()?;
    Ok(r)
}

/// A cell updatable by [`atomic_update`].
pub trait AtomicCell {
    type Value: Copy;

    /// Applies `op` atomically and returns the new value.
    fn update_with(&self, op: &mut dyn FnMut(Self::Value) -> Self::Value) -> Self::Value;
}

macro_rules! atomic_cell {
    ($($atomic:ty => $v:ty),* $(,)?) => {$(
        impl AtomicCell for $atomic {
            type Value = $v;

            fn update_with(&self, op: &mut dyn FnMut($v) -> $v) -> $v {
                let mut cur = self.load(Ordering::Relaxed);
                loop {
                    let new = op(cur);
                    match self.compare_exchange_weak(cur, new, Ordering::AcqRel, Ordering::Relaxed) {
                        Ok(_) => return new,
                        Err(v) => cur = v,
                    }
                }
            }
        }
    )*};
}

atomic_cell!(
    AtomicI32 => i32,
    AtomicI64 => i64,
    AtomicIsize => isize,
    AtomicU32 => u32,
    AtomicU64 => u64,
    AtomicUsize => usize,
);

/// An `f64` with atomic read-modify-write.
#[derive(Default, Debug)]
pub struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        AtomicF64(AtomicU64::new(v.to_bits()))
    }

    pub fn load(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }

    pub fn store(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Release);
    }
}

impl AtomicCell for AtomicF64 {
    type Value = f64;

    fn update_with(&self, op: &mut dyn FnMut(f64) -> f64) -> f64 {
        let new = self.0.update_with(&mut |bits| op(f64::from_bits(bits)).to_bits());
        f64::from_bits(new)
    }
}

/// Atomically replaces the value of `cell` with `op(value)`; returns the
/// new value. `op` may run more than once.
pub fn atomic_update<A: AtomicCell + ?Sized>(cell: &A, mut op: impl FnMut(A::Value) -> A::Value) -> A::Value {
    cell.update_with(&mut op)
}
