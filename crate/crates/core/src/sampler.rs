//! Seeded block and fiber sampling.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg, Result};

/// A ChaCha8 generator on stream `stream` of `seed`. Different streams of
/// one seed are independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Single-owner sampling state. Identical seeds and call sequences give
/// identical outputs.
#[derive(Debug, Clone)]
pub struct Sampler {
    seed: u64,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A uniformly random mode in `0..ndim`.
    pub fn sample_block(&mut self, ndim: usize) -> Result<usize> {
        if ndim < 2 {
            return arg(format!("block sampling needs at least 2 blocks, got {ndim}"));
        }
        Ok(self.rng.random_range(0..ndim))
    }

    /// A uniformly random `batch`-subset of `1..=num_fibers`, sorted.
    pub fn sample_fibers(&mut self, num_fibers: usize, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 || batch > num_fibers {
            return arg(format!("batch size {batch} must lie in [1, {num_fibers}]"));
        }
        if batch == num_fibers {
            return Ok((1..=num_fibers).collect());
        }
        Ok(floyd(&mut self.rng, num_fibers, batch))
    }
}

/// Floyd's subset sampling: `batch` distinct values from `1..=n`, sorted.
fn floyd(rng: &mut impl Rng, n: usize, batch: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    if batch <= 64 {
        for j in n - batch..n {
            let t = rng.random_range(0..=j);
            out.push(if out.contains(&t) { j } else { t });
        }
    } else {
        let mut seen = HashSet::with_capacity(batch);
        for j in n - batch..n {
            let t = rng.random_range(0..=j);
            let v = if seen.insert(t) { t } else { j };
            seen.insert(v);
            out.push(v);
        }
    }
    out.sort_unstable();
    for v in &mut out {
        *v += 1;
    }
    out
}
