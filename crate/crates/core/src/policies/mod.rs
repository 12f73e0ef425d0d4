//! Pluggable queue disciplines.
//!
//! Every policy implements [`SchedulingPolicy`]: `enqueue` from any thread,
//! `dequeue` by the owning worker, `steal` by a worker whose own `dequeue`
//! came back empty. The seven built-in disciplines are selected with
//! [`PolicyKind`].

mod abp;
mod global;
mod hierarchical;
mod local;
mod periodic;
mod queue;
mod static_priority;

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::sched::{Priority, WorkerId};

pub use abp::AbpPolicy;
pub use global::GlobalPolicy;
pub use hierarchical::HierarchicalPolicy;
pub use local::LocalPolicy;
pub use periodic::PeriodicPriorityPolicy;
pub use static_priority::StaticPriorityPolicy;

/// The built-in scheduling policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PolicyKind {
    /// One normal and one high-priority queue per worker; high drains first.
    #[default]
    PriorityLocal,
    /// One queue per worker, round-robin placement, no stealing.
    StaticPriority,
    /// One queue per worker with stealing, no priority tier.
    Local,
    /// A single shared queue.
    Global,
    /// Per-worker deques: owner works LIFO at the top, thieves take the bottom.
    AbpStealing,
    /// A binary tree of queues; workers walk from their leaf toward the root.
    Hierarchical,
    /// Per-worker queues plus two shared high-priority queues and one shared
    /// low-priority queue, with a periodic balancing pass.
    PeriodicPriority,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::PriorityLocal,
        PolicyKind::StaticPriority,
        PolicyKind::Local,
        PolicyKind::Global,
        PolicyKind::AbpStealing,
        PolicyKind::Hierarchical,
        PolicyKind::PeriodicPriority,
    ];

    /// The lowercase dashed name used by `FJ_POLICY` and the bench CLI.
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::PriorityLocal => "priority-local",
            PolicyKind::StaticPriority => "static-priority",
            PolicyKind::Local => "local",
            PolicyKind::Global => "global",
            PolicyKind::AbpStealing => "abp",
            PolicyKind::Hierarchical => "hierarchical",
            PolicyKind::PeriodicPriority => "periodic-priority",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scheduling policy `{0}` (expected one of priority-local, static-priority, local, global, abp, hierarchical, periodic-priority)")]
pub struct ParsePolicyError(pub String);

impl FromStr for PolicyKind {
    type Err = ParsePolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == needle)
            .ok_or_else(|| ParsePolicyError(s.to_string()))
    }
}

/// What a policy needs to know about the items it stores.
pub trait QueueItem: Send + 'static {
    fn priority(&self) -> Priority;
    /// Worker this item has been permanently assigned to, if any.
    fn pinned_worker(&self) -> Option<WorkerId>;
    fn pin_to(&mut self, worker: WorkerId);
}

/// Which workers can see a freshly enqueued item. The runtime uses this to
/// decide whom to wake.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Only visible to this worker's `dequeue` (and to thieves, if the
    /// policy steals).
    Worker(WorkerId),
    /// Visible to every worker's `dequeue`.
    Shared,
}

pub trait SchedulingPolicy<T: QueueItem>: Send + Sync {
    fn kind(&self) -> PolicyKind;

    fn num_workers(&self) -> usize;

    /// Makes `item` available. `hint` is the preferred worker, usually the
    /// one that created the item.
    fn enqueue(&self, item: T, hint: Option<WorkerId>) -> Placement;

    /// Re-queues an item that gave up its worker voluntarily. Policies with
    /// LIFO owner access put it where the owner reaches it last.
    fn enqueue_yielded(&self, item: T, worker: WorkerId) -> Placement {
        self.enqueue(item, Some(worker))
    }

    fn dequeue(&self, worker: WorkerId) -> Option<T>;

    fn steal(&self, thief: WorkerId) -> Option<T>;

    /// Whether `steal` can ever return an item.
    fn allows_stealing(&self) -> bool;

    /// Whether any worker may end up running an item, whatever its
    /// placement.
    fn work_is_shared(&self) -> bool {
        self.allows_stealing()
    }

    /// Approximate number of queued items.
    fn queued(&self) -> usize;
}

/// Builds the policy for `kind` over `num_workers` workers.
pub fn build_policy<T: QueueItem>(kind: PolicyKind, num_workers: usize) -> Box<dyn SchedulingPolicy<T>> {
    let n = num_workers.max(1);
    match kind {
        PolicyKind::PriorityLocal => Box::new(LocalPolicy::with_priorities(n)),
        PolicyKind::Local => Box::new(LocalPolicy::new(n)),
        PolicyKind::StaticPriority => Box::new(StaticPriorityPolicy::new(n)),
        PolicyKind::Global => Box::new(GlobalPolicy::new(n)),
        PolicyKind::AbpStealing => Box::new(AbpPolicy::new(n)),
        PolicyKind::Hierarchical => Box::new(HierarchicalPolicy::new(n)),
        PolicyKind::PeriodicPriority => Box::new(PeriodicPriorityPolicy::new(n)),
    }
}

thread_local! {
    static VICTIM_RNG: RefCell<SmallRng> = RefCell::new(SmallRng::from_os_rng());
}

/// Tries up to `n` randomly chosen victims other than `thief`.
pub(crate) fn steal_random<T>(n: usize, thief: WorkerId, mut try_victim: impl FnMut(usize) -> Option<T>) -> Option<T> {
    if n < 2 {
        return None;
    }
    for _ in 0..n {
        let v = VICTIM_RNG.with(|r| r.borrow_mut().random_range(0..n - 1));
        let victim = if v >= thief.index() { v + 1 } else { v };
        if let Some(item) = try_victim(victim) {
            return Some(item);
        }
    }
    // Random probing can miss the one loaded victim; finish with a sweep.
    (1..n)
        .map(|off| (thief.index() + off) % n)
        .find_map(try_victim)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// A bare queue item for exercising policies without a runtime.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Item {
        pub id: usize,
        pub priority: Priority,
        pub pinned: Option<WorkerId>,
    }

    impl Item {
        pub fn new(id: usize) -> Self {
            Item {
                id,
                priority: Priority::Normal,
                pinned: None,
            }
        }

        pub fn with_priority(id: usize, priority: Priority) -> Self {
            Item {
                id,
                priority,
                pinned: None,
            }
        }
    }

    impl QueueItem for Item {
        fn priority(&self) -> Priority {
            self.priority
        }
        fn pinned_worker(&self) -> Option<WorkerId> {
            self.pinned
        }
        fn pin_to(&mut self, worker: WorkerId) {
            self.pinned = Some(worker);
        }
    }

    pub fn w(i: usize) -> WorkerId {
        WorkerId::new(i)
    }

    /// Drains everything visible to `worker` via dequeue, then steal.
    pub fn drain(p: &dyn SchedulingPolicy<Item>, worker: WorkerId) -> Vec<usize> {
        let mut out = Vec::new();
        while let Some(it) = p.dequeue(worker).or_else(|| p.steal(worker)) {
            out.push(it.id);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use std::collections::HashSet;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
            assert_eq!(k.to_string(), k.as_str());
        }
        assert_eq!("ABP".parse::<PolicyKind>().unwrap(), PolicyKind::AbpStealing);
        assert!("fifo".parse::<PolicyKind>().is_err());
        let distinct: HashSet<_> = PolicyKind::ALL.iter().map(|k| k.as_str()).collect();
        assert_eq!(distinct.len(), 7);
    }

    #[test]
    fn every_policy_is_empty_initially() {
        for k in PolicyKind::ALL {
            let p = build_policy::<Item>(k, 4);
            assert_eq!(p.kind(), k);
            for i in 0..4 {
                assert!(p.dequeue(w(i)).is_none(), "{k}");
                assert!(p.steal(w(i)).is_none(), "{k}");
            }
        }
    }

    #[test]
    fn single_threaded_conservation() {
        for k in PolicyKind::ALL {
            let p = build_policy::<Item>(k, 3);
            for id in 0..300 {
                let prio = match id % 3 {
                    0 => Priority::High,
                    1 => Priority::Normal,
                    _ => Priority::Low,
                };
                p.enqueue(Item::with_priority(id, prio), Some(w(id % 3)));
            }
            let mut seen = Vec::new();
            for i in 0..3 {
                seen.extend(drain(p.as_ref(), w(i)));
            }
            seen.sort_unstable();
            assert_eq!(seen, (0..300).collect::<Vec<_>>(), "{k}");
            assert_eq!(p.queued(), 0, "{k}");
        }
    }

    #[test]
    fn concurrent_conservation() {
        const N: usize = 20_000;
        const WORKERS: usize = 4;
        for k in PolicyKind::ALL {
            let p: Arc<dyn SchedulingPolicy<Item>> = Arc::from(build_policy::<Item>(k, WORKERS));
            let taken = Arc::new(AtomicUsize::new(0));
            let seen: Vec<AtomicUsize> = (0..N).map(|_| AtomicUsize::new(0)).collect();
            let seen = Arc::new(seen);
            std::thread::scope(|s| {
                for wi in 0..WORKERS {
                    let p = p.clone();
                    let taken = taken.clone();
                    let seen = seen.clone();
                    s.spawn(move || {
                        for id in (wi..N).step_by(WORKERS) {
                            p.enqueue(Item::new(id), Some(w(wi)));
                            if id % 3 == 0 {
                                if let Some(it) = p.dequeue(w(wi)).or_else(|| p.steal(w(wi))) {
                                    seen[it.id].fetch_add(1, Ordering::Relaxed);
                                    taken.fetch_add(1, Ordering::Relaxed);
                                }
                            }
                        }
                    });
                }
            });
            for wi in 0..WORKERS {
                while let Some(it) = p.dequeue(w(wi)).or_else(|| p.steal(w(wi))) {
                    seen[it.id].fetch_add(1, Ordering::Relaxed);
                    taken.fetch_add(1, Ordering::Relaxed);
                }
            }
            assert_eq!(taken.load(Ordering::Relaxed), N, "{k}");
            assert!(seen.iter().all(|c| c.load(Ordering::Relaxed) == 1), "{k}");
        }
    }
}
