//! Small summary-statistics helpers shared by the Monte Carlo estimators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Acceptance width, in standard errors, used by every mean check and CI.
pub const CONFIDENCE_Z: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl MeanEstimate {
    /// Sample mean and standard error. Summation runs in slice order so the
    /// result is bit-reproducible.
    pub fn from_samples(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, count };
        }
        let n = count as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std_error = if count > 1 {
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error, count }
    }

    pub fn ci_low(&self) -> f64 {
        self.mean - CONFIDENCE_Z * self.std_error
    }

    pub fn ci_high(&self) -> f64 {
        self.mean + CONFIDENCE_Z * self.std_error
    }
}

/// Median of a sample (mean of the two central order statistics for even sizes).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Runs `f(0..reps)` on the current rayon pool and returns results in index
/// order, independent of scheduling.
pub fn replicates<T, F>(reps: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..reps as u64).into_par_iter().map(f).collect()
}
