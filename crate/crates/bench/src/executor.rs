//! Ways of running a kernel's index space.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use fj_core::par::{static_init, SchedKind};
use fj_core::policies::PolicyKind;
use fj_core::sched::{Runtime, RuntimeConfig};
use fj_core::tooling::ToolCallbacks;

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExecutorKind {
    /// fork + static loop scheduling on the user-level task runtime.
    Amt,
    /// A fixed pool of OS threads with the same static partitioning.
    OsPool,
    /// The calling thread only.
    Serial,
}

impl ExecutorKind {
    pub const ALL: [ExecutorKind; 3] = [ExecutorKind::Amt, ExecutorKind::OsPool, ExecutorKind::Serial];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecutorKind::Amt => "amt",
            ExecutorKind::OsPool => "ospool",
            ExecutorKind::Serial => "serial",
        }
    }
}

impl fmt::Display for ExecutorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExecutorKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExecutorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| BenchError::UnknownExecutor(s.to_string()))
    }
}

enum Inner {
    Amt(Runtime),
    Pool(rayon::ThreadPool),
    Serial,
}

pub struct Executor {
    inner: Inner,
    threads: usize,
}

impl Executor {
    pub fn amt(threads: usize, policy: PolicyKind) -> Result<Self, BenchError> {
        Self::amt_with_tool(threads, policy, ToolCallbacks::new())
    }

    /// Like [`Executor::amt`], with `tool` registered on the runtime.
    pub fn amt_with_tool(threads: usize, policy: PolicyKind, tool: ToolCallbacks) -> Result<Self, BenchError> {
        let rt = Runtime::start_with_tool(RuntimeConfig::new(threads, policy), tool)?;
        Ok(Executor {
            inner: Inner::Amt(rt),
            threads,
        })
    }

    pub fn os_pool(threads: usize) -> Result<Self, BenchError> {
        if threads == 0 {
            return Err(BenchError::InvalidConfig("threads must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("ospool-{i}"))
            .build()
            .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        Ok(Executor {
            inner: Inner::Pool(pool),
            threads,
        })
    }

    pub fn serial() -> Self {
        Executor {
            inner: Inner::Serial,
            threads: 1,
        }
    }

    pub fn new(kind: ExecutorKind, threads: usize, policy: PolicyKind) -> Result<Self, BenchError> {
        match kind {
            ExecutorKind::Amt => Self::amt(threads, policy),
            ExecutorKind::OsPool => Self::os_pool(threads),
            ExecutorKind::Serial => Ok(Self::serial()),
        }
    }

    pub fn kind(&self) -> ExecutorKind {
        match self.inner {
            Inner::Amt(_) => ExecutorKind::Amt,
            Inner::Pool(_) => ExecutorKind::OsPool,
            Inner::Serial => ExecutorKind::Serial,
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn runtime(&self) -> Option<&Runtime> {
        match &self.inner {
            Inner::Amt(rt) => Some(rt),
            _ => None,
        }
    }

    /// Calls `body` on ranges covering `0..total` exactly once. With
    /// `parallel` set, the space is split into one static block per member
    /// of a team of [`threads`](Self::threads); otherwise `body` gets the
    /// whole space on the calling thread.
    pub fn run_range(&self, total: usize, parallel: bool, body: &(dyn Fn(Range<usize>) + Sync)) -> Result<(), BenchError> {
        if total == 0 {
            return Ok(());
        }
        if !parallel {
            body(0..total);
            return Ok(());
        }
        let t = self.threads;
        let member = |tid: usize| {
            let a = static_init(t, tid, SchedKind::StaticBlock, 0, total as i64 - 1, 1)
                .expect("valid member of a valid loop");
            if !a.is_empty() {
                body(a.lower as usize..a.upper as usize + 1);
            }
        };
        match &self.inner {
            Inner::Amt(rt) => rt.fork(t as i32, member)?,
            Inner::Pool(pool) => {
                pool.broadcast(|ctx| member(ctx.index()));
            }
            Inner::Serial => body(0..total),
        }
        Ok(())
    }
}
