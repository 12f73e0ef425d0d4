use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Parser;
use fj_bench::{
    arithmetic_sizes, best_of, ratios, run_sweep, write_ratios, write_samples, BenchmarkConfig, ExecutorKind,
    KernelKind, DEFAULT_REPS,
};
use fj_core::policies::PolicyKind;

/// Time a dense kernel over a range of sizes and write MFLOP/s samples.
///
/// Sizes are vector lengths, or matrix dimensions for the matrix kernels.
/// The default range covers roughly 10^3 to 10^6 elements.
#[derive(Parser, Debug)]
#[command(name = "bench", version)]
struct Args {
    /// dvecdvecadd, daxpy, dmatdmatadd or dmatdmatmult.
    #[arg(long)]
    kernel: KernelKind,
    /// Team size; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
    /// Scheduling policy of the runtime (amt executor only).
    #[arg(long, default_value_t = PolicyKind::default())]
    policy: PolicyKind,
    /// amt, ospool or serial.
    #[arg(long, default_value_t = ExecutorKind::Amt)]
    executor: ExecutorKind,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    max_size: Option<usize>,
    /// Number of sizes, evenly spaced from min to max.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Runs per size; the best one counts for ratios.
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    /// Samples CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also run the baseline executor and write per-size ratios here.
    #[arg(long)]
    ratios: Option<PathBuf>,
    /// Executor the ratios compare against.
    #[arg(long, default_value_t = ExecutorKind::OsPool)]
    baseline: ExecutorKind,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let (def_min, def_max) = if args.kernel.is_matrix() { (32, 1000) } else { (1_000, 1_000_000) };
    let sizes = arithmetic_sizes(
        args.min_size.unwrap_or(def_min),
        args.max_size.unwrap_or(def_max),
        args.steps,
    )?;
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cfg = BenchmarkConfig {
        kernel: args.kernel,
        threads,
        policy: args.policy,
        sizes,
        reps: args.reps,
        executor: args.executor,
    };
    if args.ratios.is_some() && (args.executor != ExecutorKind::Amt || args.baseline == ExecutorKind::Amt) {
        bail!("--ratios compares the amt executor against a different --baseline");
    }

    let mut samples = run_sweep(&cfg).with_context(|| format!("{} on {}", cfg.kernel, cfg.executor))?;
    print_best(&cfg, &samples);
    if let Some(path) = &args.ratios {
        let base_cfg = BenchmarkConfig {
            executor: args.baseline,
            ..cfg.clone()
        };
        let base = run_sweep(&base_cfg).with_context(|| format!("{} on {}", cfg.kernel, args.baseline))?;
        print_best(&base_cfg, &base);
        let r = ratios(&samples, &base);
        write_ratios(path, &r).with_context(|| format!("writing {}", path.display()))?;
        samples.extend(base);
    }
    write_samples(&args.out, &samples).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn print_best(cfg: &BenchmarkConfig, samples: &[fj_bench::SampleRecord]) {
    println!("{} on {} ({} threads, best of {}):", cfg.kernel, cfg.executor, cfg.threads, cfg.reps);
    for ((_, _, size), mflops) in best_of(samples) {
        println!("  n={size:>9}  {mflops:>12.1} MFLOP/s");
    }
}
