//! Reproducible parallel random streams and mergeable accumulators.
//!
//! Path `i` of a run with master seed `s` always draws from ChaCha8 keyed by
//! `s` on stream `i`, whichever worker or thread evaluates it. Workers are
//! contiguous blocks of path indices; their partial sums are merged in worker
//! order, so results depend on `(seed, n, workers)` only and never on the
//! thread count.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

/// Generator for one path.
#[derive(Clone)]
pub struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng
    }
}

/// Random generator for path `index` under master seed `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    StreamFactory::new(seed).stream(index)
}

/// Splits `0..n` into `workers` contiguous blocks of near-equal size.
pub fn partition(n: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.max(1);
    (0..workers)
        .map(|w| (w * n / workers)..((w + 1) * n / workers))
        .collect()
}

/// Streaming mean and variance (Welford), mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Runs `n` independent replicas of `sample`, each writing `width` values,
/// and returns one accumulator per value.
///
/// `sample(rng, index, out)` fills `out` for path `index`.
pub fn run_replicas<F>(n: usize, seed: u64, workers: usize, width: usize, sample: F) -> Result<Vec<Welford>>
where
    F: Fn(&mut ChaCha8Rng, usize, &mut [f64]) -> Result<()> + Sync,
{
    run_replicas_from(0, n, seed, workers, width, sample)
}

/// As [`run_replicas`], with path indices (and streams) starting at `first`.
pub fn run_replicas_from<F>(first: u64, n: usize, seed: u64, workers: usize, width: usize, sample: F) -> Result<Vec<Welford>>
where
    F: Fn(&mut ChaCha8Rng, usize, &mut [f64]) -> Result<()> + Sync,
{
    let factory = StreamFactory::new(seed);
    let blocks = partition(n, workers);
    let partials: Vec<Vec<Welford>> = blocks
        .into_par_iter()
        .map(|block| {
            let mut acc = vec![Welford::default(); width];
            let mut out = vec![0.0; width];
            for i in block {
                let mut rng = factory.stream(first + i as u64);
                sample(&mut rng, i, &mut out)?;
                for (a, v) in acc.iter_mut().zip(&out) {
                    a.push(*v);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Welford::default(); width];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// Runs `f` on a dedicated pool of `threads` threads.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
