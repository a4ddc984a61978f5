//! Monte Carlo summaries and ordered parallel maps over paths.

use rayon::prelude::*;

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Summary {
    /// Mean and `sd/√n`. Deviations are taken from the first sample so a
    /// constant sample gives that constant exactly and a zero error.
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let x0 = xs[0];
        let d_mean = xs.iter().map(|x| x - x0).sum::<f64>() / n as f64;
        let mean = x0 + d_mean;
        if n < 2 {
            return Summary {
                mean,
                stderr: f64::NAN,
                n,
            };
        }
        let ss: f64 = xs.iter().map(|x| (x - x0 - d_mean).powi(2)).sum();
        let var = ss / (n - 1) as f64;
        Summary {
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Running sums for a mean and standard error without storing samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Accumulator {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn summary(&self) -> Summary {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            f64::NAN
        };
        Summary {
            mean,
            stderr: (var / n).sqrt(),
            n: self.n,
        }
    }
}

/// `f(0), …, f(n-1)` evaluated in parallel, returned in index order.
pub fn map_paths<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
