use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Estimate<T> {
    pub mean: T,
    pub std_error: T,
    pub samples: usize,
}

impl<T: Real> Estimate<T> {
    pub fn from_samples(xs: &[T]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: T::nan(),
                std_error: T::nan(),
                samples: 0,
            };
        }
        let nf = T::from_usize_lossy(n);
        let mean = xs.iter().copied().sum::<T>() / nf;
        let se = if n > 1 {
            let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / T::from_usize_lossy(n - 1);
            (var / nf).sqrt()
        } else {
            T::zero()
        };
        Self {
            mean,
            std_error: se,
            samples: n,
        }
    }

    /// `|mean - target| <= k · SE`.
    pub fn within(&self, target: T, k: T) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

/// Ratio `E[a]/E[b]` with a delta-method standard error.
pub fn ratio_estimate<T: Real>(a: &[T], b: &[T]) -> Estimate<T> {
    let n = a.len();
    let ea = Estimate::from_samples(a);
    let eb = Estimate::from_samples(b);
    let r = ea.mean / eb.mean;
    if n < 2 {
        return Estimate {
            mean: r,
            std_error: T::zero(),
            samples: n,
        };
    }
    // residuals a_i - r b_i
    let res: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - r * y).collect();
    let er = Estimate::from_samples(&res);
    Estimate {
        mean: r,
        std_error: er.std_error / eb.mean.abs(),
        samples: n,
    }
}

/// Per-path RNG: ChaCha8 seeded from `seed`, stream = path index.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let e = Estimate::from_samples(&[1.0f64, 2.0, 3.0, 4.0]);
        assert!((e.mean - 2.5).abs() < 1e-15);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.std_error - sd / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_of_proportional_samples_is_exact() {
        let b = [1.0f64, 2.0, 3.0];
        let a: Vec<f64> = b.iter().map(|x| 2.0 * x).collect();
        let r = ratio_estimate(&a, &b);
        assert!((r.mean - 2.0).abs() < 1e-15);
        assert!(r.std_error.abs() < 1e-15);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: u64 = path_rng(1, 0).random();
        let b: u64 = path_rng(1, 1).random();
        let c: u64 = path_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
