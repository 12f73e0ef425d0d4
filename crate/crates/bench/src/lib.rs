//! Dense vector and matrix kernels timed on the fj-core runtime, on a pool
//! of OS threads, or serially, with MFLOP/s samples written as CSV.
//!
//! Each kernel goes parallel only once its output has at least
//! [`KernelKind::threshold`] elements; below that it runs on the caller.

pub mod executor;
pub mod kernels;
pub mod sweep;

pub use executor::{Executor, ExecutorKind};
pub use kernels::{checksum, kernel_run, reference, KernelKind, Workload};
pub use sweep::{
    arithmetic_sizes, best_of, mflops, ratios, read_ratios, read_samples, run_sweep, run_sweep_on, write_ratios,
    write_samples, BenchmarkConfig, RatioRecord, SampleRecord, DEFAULT_REPS,
};

use fj_core::par::ParError;
use fj_core::sched::SchedError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("unknown kernel {0:?}")]
    UnknownKernel(String),
    #[error("unknown executor {0:?}")]
    UnknownExecutor(String),
    #[error("size must be positive (got {0})")]
    InvalidSize(usize),
    #[error("element count of size {0} overflows")]
    SizeOverflow(usize),
    #[error("expected inputs of {expected} elements, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("{kernel} n={size} on {executor}: checksum {got:#018x} differs from serial {expected:#018x}")]
    ChecksumMismatch {
        kernel: KernelKind,
        size: usize,
        executor: ExecutorKind,
        got: u64,
        expected: u64,
    },
    #[error(transparent)]
    Par(#[from] ParError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<SchedError> for BenchError {
    fn from(e: SchedError) -> Self {
        BenchError::Par(e.into())
    }
}
