//! Batch sweeps over independent seeded trials. Property suites and
//! acceptance checks run hundreds to thousands of isolated simulations; each
//! trial is a pure function of its seed, so the sweep is data-parallel.
//! With the `parallel` feature (default) trials run on a rayon pool;
//! results always come back in seed order, so the output is identical
//! either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Derive a well-mixed trial seed from a base seed and trial index.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    // splitmix64 step.
    let mut z = base
        .wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Run `f` over `n` trials seeded from `base`, in seed order.
pub fn run_trials<R, F>(base: u64, n: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .map(|i| f(trial_seed(base, i)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_trials_seq(base, n, f)
    }
}

/// The sequential path, always available (benchmarks compare against it).
pub fn run_trials_seq<R, F>(base: u64, n: u64, f: F) -> Vec<R>
where
    F: Fn(u64) -> R,
{
    (0..n).map(|i| f(trial_seed(base, i))).collect()
}
