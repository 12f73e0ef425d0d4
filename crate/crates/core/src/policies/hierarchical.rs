use super::queue::TaskQueue;
use super::{Placement, PolicyKind, QueueItem, SchedulingPolicy};
use crate::sched::WorkerId;

/// A complete binary tree of queues with one leaf per worker.
///
/// Nodes are heap-indexed: the root is 1 and node `i` has children `2i` and
/// `2i + 1`. The leaf count is the worker count rounded up to a power of two;
/// leaves past the last worker stay idle. New items enter at the root. A
/// worker polls its leaf, and when that is empty walks toward the root; the
/// first non-empty ancestor hands one item down, node by node, to the leaf.
pub struct HierarchicalPolicy<T> {
    /// Index 0 is unused.
    nodes: Vec<TaskQueue<T>>,
    leaves: usize,
    num_workers: usize,
}

fn level(node: usize) -> u32 {
    usize::BITS - 1 - node.leading_zeros()
}

impl<T: QueueItem> HierarchicalPolicy<T> {
    pub fn new(num_workers: usize) -> Self {
        let leaves = num_workers.max(1).next_power_of_two();
        HierarchicalPolicy {
            nodes: (0..2 * leaves).map(|_| TaskQueue::new()).collect(),
            leaves,
            num_workers,
        }
    }

    /// Total number of tree nodes (root is node 1).
    pub fn node_count(&self) -> usize {
        2 * self.leaves - 1
    }

    pub fn leaf_of(&self, worker: WorkerId) -> usize {
        self.leaves + worker.index()
    }

    /// Places `item` directly at `node`, bypassing the root.
    ///
    /// # Panics
    /// If `node` is not in `1..=node_count()`.
    pub fn inject_at(&self, node: usize, item: T) {
        assert!((1..=self.node_count()).contains(&node), "no tree node {node}");
        self.nodes[node].push_back(item);
    }

    fn pull_down(&self, from: usize, leaf: usize) -> Option<T> {
        let mut item = self.nodes[from].pop_front()?;
        let mut cur = from;
        while cur != leaf {
            let child = leaf >> (level(leaf) - level(cur) - 1);
            self.nodes[child].push_back(item);
            // Another worker sharing this subtree may beat us to it; the item
            // stays in the tree either way.
            item = self.nodes[child].pop_front()?;
            cur = child;
        }
        Some(item)
    }
}

impl<T: QueueItem> SchedulingPolicy<T> for HierarchicalPolicy<T> {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Hierarchical
    }

    fn num_workers(&self) -> usize {
        self.num_workers
    }

    fn enqueue(&self, item: T, _hint: Option<WorkerId>) -> Placement {
        self.nodes[1].push_back(item);
        Placement::Shared
    }

    fn dequeue(&self, worker: WorkerId) -> Option<T> {
        let leaf = self.leaf_of(worker);
        if let Some(it) = self.nodes[leaf].pop_front() {
            return Some(it);
        }
        let mut node = leaf / 2;
        while node >= 1 {
            if !self.nodes[node].is_empty() {
                return self.pull_down(node, leaf);
            }
            node /= 2;
        }
        None
    }

    /// Anything left off this worker's root path: sibling subtrees and idle
    /// leaves.
    fn steal(&self, _thief: WorkerId) -> Option<T> {
        self.nodes[1..].iter().find_map(TaskQueue::pop_front)
    }

    fn allows_stealing(&self) -> bool {
        true
    }

    fn queued(&self) -> usize {
        self.nodes.iter().map(TaskQueue::len).sum()
    }
}
