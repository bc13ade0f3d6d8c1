//! Monte Carlo bookkeeping and reproducible per-task random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let mut acc = MeanAccumulator::default();
        xs.iter().for_each(|&x| acc.push(x));
        acc.estimate()
    }

    /// Number of standard errors separating the mean from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.std_error
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.mean - target).abs() <= n_se * self.std_error
    }
}

/// Welford accumulator; `merge` combines partial results from parallel tasks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(mut self, other: MeanAccumulator) -> MeanAccumulator {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
        self
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn estimate(&self) -> McEstimate {
        let var = if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            f64::NAN
        };
        McEstimate {
            mean: self.mean,
            std_error: (var / self.count as f64).sqrt(),
            samples: self.count,
        }
    }
}

/// Counter-based stream `stream` of the generator seeded by `seed`. Streams
/// are independent of each other and of scheduling, so results do not depend
/// on the thread count.
pub fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn estimate_matches_two_pass() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let e = McEstimate::from_samples(&xs);
        let mean = 31.0 / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!((e.mean - mean).abs() < 1e-14);
        assert!((e.std_error - (var / 5.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn merge_is_order_free() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let mut a = MeanAccumulator::default();
        let mut b = MeanAccumulator::default();
        xs[..37].iter().for_each(|&x| a.push(x));
        xs[37..].iter().for_each(|&x| b.push(x));
        let whole = McEstimate::from_samples(&xs);
        let merged = a.merge(b).estimate();
        assert!((whole.mean - merged.mean).abs() < 1e-15);
        assert!((whole.std_error - merged.std_error).abs() < 1e-15);
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a: f64 = task_rng(7, 0).random();
        let b: f64 = task_rng(7, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, task_rng(7, 0).random::<f64>());
    }
}
