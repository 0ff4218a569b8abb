//! Deterministic parallel reductions over path indices.
//!
//! Paths are cut into fixed-size chunks; each chunk is reduced sequentially
//! into its own accumulator and the accumulators are merged in chunk order.
//! The result therefore depends on the chunk size only, never on the number
//! of worker threads.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::Result;

pub const CHUNK: usize = 4096;
/// Chunks in flight at once; bounds accumulator memory.
const GROUP: usize = 8;

pub fn ordered_reduce<A, I, W, M>(n: usize, init: I, work: W, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    W: Fn(Range<usize>, &mut A) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let mut total = init();
    let mut start = 0;
    while start < chunks {
        let end = (start + GROUP).min(chunks);
        let parts: Vec<Result<A>> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                work(c * CHUNK..((c + 1) * CHUNK).min(n), &mut acc)?;
                Ok(acc)
            })
            .collect();
        for p in parts {
            merge(&mut total, p?);
        }
        start = end;
    }
    Ok(total)
}

/// Running sums of a scalar statistic and its square.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let m = self.mean();
        ((self.sum_sq - self.n as f64 * m * m) / (self.n as f64 - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_of_pool_size() {
        let f = || {
            ordered_reduce(
                50_000,
                || 0.0f64,
                |r, acc| {
                    for m in r {
                        *acc += (m as f64).sqrt().sin();
                    }
                    Ok(())
                },
                |a, b| *a += b,
            )
            .unwrap()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f);
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(f);
        assert_eq!(one.to_bits(), three.to_bits());
    }

    #[test]
    fn moments() {
        let mut m = Moments::default();
        for v in [1.0, 2.0, 3.0, 4.0] {
            m.push(v);
        }
        assert_eq!(m.mean(), 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
    }
}
