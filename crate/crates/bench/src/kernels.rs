//! The four dense kernels, their inputs and a serial reference.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::executor::Executor;
use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    /// `c[i] = a[i] + b[i]`
    DVecDVecAdd,
    /// `b[i] = b[i] + 3.0 * a[i]`
    Daxpy,
    /// `C[i,j] = A[i,j] + B[i,j]`
    DMatDMatAdd,
    /// `C = A * B`
    DMatDMatMult,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::DVecDVecAdd,
        KernelKind::Daxpy,
        KernelKind::DMatDMatAdd,
        KernelKind::DMatDMatMult,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::DVecDVecAdd => "dvecdvecadd",
            KernelKind::Daxpy => "daxpy",
            KernelKind::DMatDMatAdd => "dmatdmatadd",
            KernelKind::DMatDMatMult => "dmatdmatmult",
        }
    }

    pub fn is_matrix(self) -> bool {
        matches!(self, KernelKind::DMatDMatAdd | KernelKind::DMatDMatMult)
    }

    /// Element count from which the kernel runs in parallel.
    pub fn threshold(self) -> usize {
        match self {
            KernelKind::DVecDVecAdd | KernelKind::Daxpy => 38_000,
            KernelKind::DMatDMatAdd => 36_100,
            KernelKind::DMatDMatMult => 3_025,
        }
    }

    /// Number of elements in the output for size `n`; `n` is the vector
    /// length or the matrix dimension.
    pub fn elements(self, n: usize) -> Result<usize, BenchError> {
        if n == 0 {
            return Err(BenchError::InvalidSize(n));
        }
        if self.is_matrix() {
            n.checked_mul(n).ok_or(BenchError::SizeOverflow(n))
        } else {
            Ok(n)
        }
    }

    /// Floating-point operations per run: one per add, two per
    /// multiply-add.
    pub fn flops(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            KernelKind::DVecDVecAdd => n,
            KernelKind::Daxpy => 2.0 * n,
            KernelKind::DMatDMatAdd => n * n,
            KernelKind::DMatDMatMult => 2.0 * n * n * n,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| BenchError::UnknownKernel(s.to_string()))
    }
}

/// First operand: `(i mod 7) + 1` over the row-major index.
pub fn input_a(len: usize) -> Vec<f64> {
    (0..len).map(|i| (i % 7 + 1) as f64).collect()
}

/// Second operand: `(i mod 5) + 1` over the row-major index.
pub fn input_b(len: usize) -> Vec<f64> {
    (0..len).map(|i| (i % 5 + 1) as f64).collect()
}

/// FNV-1a over the bit patterns of `values`.
pub fn checksum(values: &[f64]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// Straightforward serial evaluation, used as the correctness oracle.
pub fn reference(kernel: KernelKind, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    match kernel {
        KernelKind::DVecDVecAdd | KernelKind::DMatDMatAdd => a.iter().zip(b).map(|(x, y)| x + y).collect(),
        KernelKind::Daxpy => a.iter().zip(b).map(|(x, y)| y + 3.0 * x).collect(),
        KernelKind::DMatDMatMult => {
            let mut c = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += a[i * n + k] * b[k * n + j];
                    }
                    c[i * n + j] = s;
                }
            }
            c
        }
    }
}

/// Output buffer shared by the members of one run; each writes a disjoint
/// range.
#[derive(Clone, Copy)]
struct OutPtr(*mut f64);

// SAFETY: members only write to disjoint index ranges.
unsafe impl Send for OutPtr {}
unsafe impl Sync for OutPtr {}

impl OutPtr {
    /// # Safety
    /// `range` must be in bounds and not touched by anyone else meanwhile.
    unsafe fn slice<'a>(self, start: usize, len: usize) -> &'a mut [f64] {
        std::slice::from_raw_parts_mut(self.0.add(start), len)
    }
}

/// Inputs and output of one kernel at one size.
pub struct Workload {
    kernel: KernelKind,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl Workload {
    /// The standard deterministic inputs.
    pub fn new(kernel: KernelKind, n: usize) -> Result<Self, BenchError> {
        let len = kernel.elements(n)?;
        Self::with_inputs(kernel, n, input_a(len), input_b(len))
    }

    pub fn with_inputs(kernel: KernelKind, n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self, BenchError> {
        let len = kernel.elements(n)?;
        if a.len() != len || b.len() != len {
            return Err(BenchError::InputLength {
                expected: len,
                got: a.len().min(b.len()),
            });
        }
        Ok(Workload {
            kernel,
            n,
            a,
            b,
            c: vec![0.0; len],
        })
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// True if the kernel runs in parallel at this size.
    pub fn above_threshold(&self) -> bool {
        self.c.len() >= self.kernel.threshold()
    }

    /// Executes the kernel once and returns the time spent in it. Output
    /// preparation is not timed.
    pub fn run(&mut self, exec: &Executor) -> Result<Duration, BenchError> {
        let n = self.n;
        let len = self.c.len();
        match self.kernel {
            // `b` is both input and output; start each run from the input.
            KernelKind::Daxpy => self.c.copy_from_slice(&self.b),
            KernelKind::DMatDMatMult => self.c.fill(0.0),
            _ => {}
        }
        let (a, b) = (&self.a[..], &self.b[..]);
        let out = OutPtr(self.c.as_mut_ptr());
        let parallel = self.above_threshold();
        let t0 = Instant::now();
        match self.kernel {
            KernelKind::DVecDVecAdd | KernelKind::DMatDMatAdd => exec.run_range(len, parallel, &|r| {
                // SAFETY: ranges handed out by the executor are disjoint.
                let c = unsafe { out.slice(r.start, r.len()) };
                for ((c, x), y) in c.iter_mut().zip(&a[r.clone()]).zip(&b[r]) {
                    *c = x + y;
                }
            })?,
            KernelKind::Daxpy => exec.run_range(len, parallel, &|r| {
                // SAFETY: as above.
                let c = unsafe { out.slice(r.start, r.len()) };
                for (c, x) in c.iter_mut().zip(&a[r]) {
                    *c += 3.0 * x;
                }
            })?,
            KernelKind::DMatDMatMult => exec.run_range(n, parallel, &|rows| {
                for i in rows {
                    // SAFETY: each row belongs to exactly one member.
                    let c = unsafe { out.slice(i * n, n) };
                    for k in 0..n {
                        let aik = a[i * n + k];
                        let brow = &b[k * n..(k + 1) * n];
                        for (c, bkj) in c.iter_mut().zip(brow) {
                            *c += aik * bkj;
                        }
                    }
                }
            })?,
        }
        Ok(t0.elapsed())
    }

    pub fn output(&self) -> &[f64] {
        &self.c
    }

    pub fn checksum(&self) -> u64 {
        checksum(&self.c)
    }

    /// Checksum of the serial reference on the same inputs.
    pub fn expected_checksum(&self) -> u64 {
        checksum(&reference(self.kernel, self.n, &self.a, &self.b))
    }
}

/// Runs `kernel` at size `n` once on `exec` with the standard inputs and
/// returns the output checksum and the wall time in seconds.
pub fn kernel_run(kernel: KernelKind, n: usize, exec: &Executor) -> Result<(u64, f64), BenchError> {
    let mut w = Workload::new(kernel, n)?;
    let t = w.run(exec)?;
    Ok((w.checksum(), t.as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_and_names() {
        assert_eq!(KernelKind::DVecDVecAdd.threshold(), 38_000);
        assert_eq!(KernelKind::Daxpy.threshold(), 38_000);
        assert_eq!(KernelKind::DMatDMatAdd.threshold(), 36_100);
        assert_eq!(KernelKind::DMatDMatMult.threshold(), 3_025);
        for k in KernelKind::ALL {
            assert_eq!(k.as_str().parse::<KernelKind>().unwrap(), k);
        }
        assert!("DAXPY".parse::<KernelKind>().is_ok());
        assert!("gemm".parse::<KernelKind>().is_err());
    }

    #[test]
    fn flop_counts() {
        assert_eq!(KernelKind::Daxpy.flops(10), 20.0);
        assert_eq!(KernelKind::DMatDMatAdd.flops(1), 1.0);
        // n multiplies and n adds for each of the n² outputs.
        let n = 3usize;
        assert_eq!(KernelKind::DMatDMatMult.flops(n), (n * n * (n + n)) as f64);
        assert_eq!(KernelKind::DVecDVecAdd.flops(7), 7.0);
    }

    #[test]
    fn element_counts() {
        assert_eq!(KernelKind::DMatDMatAdd.elements(190).unwrap(), 36_100);
        assert_eq!(KernelKind::DMatDMatMult.elements(55).unwrap(), 3_025);
        assert!(matches!(
            KernelKind::DMatDMatMult.elements(usize::MAX),
            Err(BenchError::SizeOverflow(_))
        ));
        assert!(KernelKind::Daxpy.elements(0).is_err());
    }

    #[test]
    fn input_patterns() {
        assert_eq!(input_a(9), vec![1., 2., 3., 4., 5., 6., 7., 1., 2.]);
        assert_eq!(input_b(6), vec![1., 2., 3., 4., 5., 1.]);
    }

    #[test]
    fn vector_add_small() {
        let mut w = Workload::new(KernelKind::DVecDVecAdd, 4).unwrap();
        w.run(&Executor::serial()).unwrap();
        assert_eq!(w.output(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn daxpy_small() {
        let a = vec![1., 2., 3.];
        let mut w = Workload::with_inputs(KernelKind::Daxpy, 3, a.clone(), a).unwrap();
        w.run(&Executor::serial()).unwrap();
        assert_eq!(w.output(), &[4., 8., 12.]);
        // Repeated runs start from the same input.
        w.run(&Executor::serial()).unwrap();
        assert_eq!(w.output(), &[4., 8., 12.]);
    }

    #[test]
    fn matmul_identity() {
        let a = vec![1., 2., 3., 4.];
        let id = vec![1., 0., 0., 1.];
        let mut w = Workload::with_inputs(KernelKind::DMatDMatMult, 2, a.clone(), id).unwrap();
        w.run(&Executor::serial()).unwrap();
        assert_eq!(w.output(), &a[..]);
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = vec![1., 2., 3., 4.];
        let b = vec![5., 6., 7., 8.];
        assert_eq!(reference(KernelKind::DMatDMatMult, 2, &a, &b), vec![19., 22., 43., 50.]);
    }

    #[test]
    fn bad_input_length() {
        assert!(Workload::with_inputs(KernelKind::DMatDMatAdd, 2, vec![0.; 3], vec![0.; 4]).is_err());
    }

    #[test]
    fn checksum_is_bitwise() {
        assert_ne!(checksum(&[0.0]), checksum(&[-0.0]));
        assert_eq!(checksum(&[1.5, 2.5]), checksum(&[1.5, 2.5]));
        assert_ne!(checksum(&[1.5, 2.5]), checksum(&[2.5, 1.5]));
        assert_eq!(checksum(&[]), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn serial_matches_reference_everywhere() {
        for k in KernelKind::ALL {
            for n in [1, 2, 5, 17] {
                let mut w = Workload::new(k, n).unwrap();
                w.run(&Executor::serial()).unwrap();
                assert_eq!(w.checksum(), w.expected_checksum(), "{k} n={n}");
            }
        }
    }
}
