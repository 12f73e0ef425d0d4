//! Size sweeps, samples and ratios.

use std::collections::BTreeMap;
use std::path::Path;

use fj_core::policies::PolicyKind;
use serde::{Deserialize, Serialize};

use crate::executor::{Executor, ExecutorKind};
use crate::kernels::{KernelKind, Workload};
use crate::BenchError;

pub const DEFAULT_REPS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub kernel: KernelKind,
    pub threads: usize,
    pub policy: PolicyKind,
    /// Vector length, or matrix dimension for the matrix kernels.
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub executor: ExecutorKind,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.sizes.is_empty() {
            return bad("no sizes given");
        }
        if self.sizes[0] == 0 {
            return bad("sizes must be positive");
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sizes must be strictly increasing");
        }
        for &n in &self.sizes {
            self.kernel.elements(n)?;
        }
        Ok(())
    }
}

/// `steps` evenly spaced sizes from `min` to `max` inclusive, rounded down.
pub fn arithmetic_sizes(min: usize, max: usize, steps: usize) -> Result<Vec<usize>, BenchError> {
    let bad = |m: String| Err(BenchError::InvalidConfig(m));
    if min == 0 || max < min || steps == 0 {
        return bad(format!("bad sweep {min}..={max} in {steps} steps"));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    if steps - 1 > max - min {
        return bad(format!("{steps} distinct sizes do not fit in {min}..={max}"));
    }
    let span = (max - min) as u128;
    Ok((0..steps)
        .map(|i| min + (span * i as u128 / (steps - 1) as u128) as usize)
        .collect())
}

/// One timed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub kernel: String,
    pub policy: String,
    pub executor: String,
    pub threads: usize,
    pub size: usize,
    pub trial: usize,
    pub seconds: f64,
    pub mflops: f64,
}

/// Best-of-trials throughput of the runtime over a baseline in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub kernel: String,
    pub threads: usize,
    pub size: usize,
    pub mflops_amt: f64,
    pub mflops_baseline: f64,
    pub ratio: f64,
}

/// Shortest time a sample may report, so that throughput stays finite.
const MIN_SECONDS: f64 = 1e-9;

pub fn mflops(kernel: KernelKind, n: usize, seconds: f64) -> f64 {
    kernel.flops(n) / (seconds * 1e6)
}

/// Runs every size `reps` times. Each run's output is checked against the
/// serial reference before it is recorded; a mismatch aborts the sweep.
pub fn run_sweep(cfg: &BenchmarkConfig) -> Result<Vec<SampleRecord>, BenchError> {
    cfg.validate()?;
    let exec = Executor::new(cfg.executor, cfg.threads, cfg.policy)?;
    run_sweep_on(cfg, &exec)
}

/// [`run_sweep`] on an existing executor; `cfg.executor` and
/// `cfg.threads` are ignored.
pub fn run_sweep_on(cfg: &BenchmarkConfig, exec: &Executor) -> Result<Vec<SampleRecord>, BenchError> {
    cfg.validate()?;
    let policy = match exec.kind() {
        ExecutorKind::Amt => cfg.policy.to_string(),
        _ => "none".to_string(),
    };
    let mut out = Vec::with_capacity(cfg.sizes.len() * cfg.reps);
    for &n in &cfg.sizes {
        let mut w = Workload::new(cfg.kernel, n)?;
        let expected = w.expected_checksum();
        for trial in 0..cfg.reps {
            let seconds = w.run(exec)?.as_secs_f64().max(MIN_SECONDS);
            let got = w.checksum();
            if got != expected {
                return Err(BenchError::ChecksumMismatch {
                    kernel: cfg.kernel,
                    size: n,
                    executor: exec.kind(),
                    got,
                    expected,
                });
            }
            log::debug!("{} n={n} trial={trial} {seconds:.3e}s", cfg.kernel);
            out.push(SampleRecord {
                kernel: cfg.kernel.to_string(),
                policy: policy.clone(),
                executor: exec.kind().to_string(),
                threads: exec.threads(),
                size: n,
                trial,
                seconds,
                mflops: mflops(cfg.kernel, n, seconds),
            });
        }
    }
    Ok(out)
}

/// Highest throughput per `(kernel, threads, size)`.
pub fn best_of(samples: &[SampleRecord]) -> BTreeMap<(String, usize, usize), f64> {
    let mut best: BTreeMap<(String, usize, usize), f64> = BTreeMap::new();
    for s in samples {
        let e = best.entry((s.kernel.clone(), s.threads, s.size)).or_insert(f64::NEG_INFINITY);
        *e = e.max(s.mflops);
    }
    best
}

/// One ratio per cell present in both sample sets.
pub fn ratios(amt: &[SampleRecord], baseline: &[SampleRecord]) -> Vec<RatioRecord> {
    let base = best_of(baseline);
    best_of(amt)
        .into_iter()
        .filter_map(|(key, m_amt)| {
            let m_base = *base.get(&key)?;
            let (kernel, threads, size) = key;
            Some(RatioRecord {
                kernel,
                threads,
                size,
                mflops_amt: m_amt,
                mflops_baseline: m_base,
                ratio: m_amt / m_base,
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}

/// Header: `kernel,policy,executor,threads,size,trial,seconds,mflops`.
pub fn write_samples(path: impl AsRef<Path>, rows: &[SampleRecord]) -> Result<(), BenchError> {
    write_csv(path.as_ref(), rows)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>, BenchError> {
    read_csv(path.as_ref())
}

/// Header: `kernel,threads,size,mflops_amt,mflops_baseline,ratio`.
pub fn write_ratios(path: impl AsRef<Path>, rows: &[RatioRecord]) -> Result<(), BenchError> {
    write_csv(path.as_ref(), rows)
}

pub fn read_ratios(path: impl AsRef<Path>) -> Result<Vec<RatioRecord>, BenchError> {
    read_csv(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(executor: ExecutorKind, sizes: Vec<usize>, reps: usize) -> BenchmarkConfig {
        BenchmarkConfig {
            kernel: KernelKind::DVecDVecAdd,
            threads: 2,
            policy: PolicyKind::default(),
            sizes,
            reps,
            executor,
        }
    }

    fn sample(executor: &str, size: usize, mflops: f64) -> SampleRecord {
        SampleRecord {
            kernel: "daxpy".into(),
            policy: "none".into(),
            executor: executor.into(),
            threads: 4,
            size,
            trial: 0,
            seconds: 1.0,
            mflops,
        }
    }

    #[test]
    fn sizes() {
        assert_eq!(arithmetic_sizes(1, 10, 10).unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(arithmetic_sizes(1000, 1_000_000, 20).unwrap().len(), 20);
        assert_eq!(arithmetic_sizes(5, 5, 1).unwrap(), vec![5]);
        let s = arithmetic_sizes(1000, 1_000_000, 20).unwrap();
        assert_eq!((s[0], s[19]), (1000, 1_000_000));
        assert!(arithmetic_sizes(1, 3, 4).is_err());
        assert!(arithmetic_sizes(0, 3, 2).is_err());
        assert!(arithmetic_sizes(5, 3, 2).is_err());
    }

    #[test]
    fn validation() {
        assert!(cfg(ExecutorKind::Serial, vec![3, 2], 1).validate().is_err());
        assert!(cfg(ExecutorKind::Serial, vec![2, 2], 1).validate().is_err());
        assert!(cfg(ExecutorKind::Serial, vec![], 1).validate().is_err());
        assert!(cfg(ExecutorKind::Serial, vec![0, 1], 1).validate().is_err());
        assert!(cfg(ExecutorKind::Serial, vec![1], 0).validate().is_err());
        assert!(cfg(ExecutorKind::Serial, vec![1, 2], 1).validate().is_ok());
    }

    #[test]
    fn serial_sweep_records() {
        let recs = run_sweep(&cfg(ExecutorKind::Serial, vec![100], 3)).unwrap();
        assert_eq!(recs.len(), 3);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.trial, i);
            assert!(r.seconds > 0.0);
            assert_eq!(r.mflops, 100.0 / (r.seconds * 1e6));
            assert_eq!(r.executor, "serial");
        }
    }

    #[test]
    fn parallel_sweeps_pass_the_gate() {
        for executor in [ExecutorKind::Amt, ExecutorKind::OsPool] {
            let c = BenchmarkConfig {
                kernel: KernelKind::DMatDMatMult,
                sizes: vec![50, 60],
                ..cfg(executor, vec![], 2)
            };
            assert_eq!(run_sweep(&c).unwrap().len(), 4);
        }
    }

    #[test]
    fn best_and_ratio() {
        let amt = vec![sample("amt", 10, 10.0), sample("amt", 10, 12.0), sample("amt", 10, 11.0), sample("amt", 20, 8.0)];
        let base = vec![sample("ospool", 10, 6.0), sample("ospool", 30, 1.0)];
        assert_eq!(best_of(&amt)[&("daxpy".to_string(), 4, 10)], 12.0);
        let r = ratios(&amt, &base);
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].size, r[0].mflops_amt, r[0].mflops_baseline, r[0].ratio), (10, 12.0, 6.0, 2.0));
    }

    #[test]
    fn csv_headers_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s.csv");
        let rows = vec![sample("amt", 10, 1.25)];
        write_samples(&s, &rows).unwrap();
        let text = std::fs::read_to_string(&s).unwrap();
        assert_eq!(text.lines().next().unwrap(), "kernel,policy,executor,threads,size,trial,seconds,mflops");
        assert_eq!(read_samples(&s).unwrap(), rows);

        let r = dir.path().join("r.csv");
        let rr = ratios(&rows, &[sample("ospool", 10, 0.5)]);
        write_ratios(&r, &rr).unwrap();
        let text = std::fs::read_to_string(&r).unwrap();
        assert_eq!(text.lines().next().unwrap(), "kernel,threads,size,mflops_amt,mflops_baseline,ratio");
        assert_eq!(read_ratios(&r).unwrap(), rr);
    }
}
