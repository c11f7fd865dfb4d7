//! Running statistics for autocorrelated trajectory samples.

use crate::scalar::Real;

/// Mean estimate with a standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub stderr: T,
}

/// Batch-means accumulator: samples are grouped into consecutive batches of
/// fixed size, and the spread of the batch means gives the standard error.
/// A trailing partial batch contributes to the mean but not to the spread.
#[derive(Debug, Clone)]
pub struct BatchMeans<T> {
    batch_size: usize,
    current: T,
    current_len: usize,
    means: Vec<T>,
    total: T,
    count: usize,
}

impl<T: Real> BatchMeans<T> {
    /// Sizes batches so that `expected_samples` fill `n_batches` of them.
    pub fn new(n_batches: usize, expected_samples: usize) -> Self {
        let n_batches = n_batches.max(1);
        Self::with_batch_size(expected_samples.div_ceil(n_batches).max(1))
    }

    pub fn with_batch_size(batch_size: usize) -> Self {
        Self {
            batch_size: batch_size.max(1),
            current: T::zero(),
            current_len: 0,
            means: Vec::new(),
            total: T::zero(),
            count: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, x: T) {
        self.total += x;
        self.count += 1;
        self.current += x;
        self.current_len += 1;
        if self.current_len == self.batch_size {
            self.means
                .push(self.current / T::lit(self.batch_size as f64));
            self.current = T::zero();
            self.current_len = 0;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> T {
        self.total
    }

    pub fn batch_means(&self) -> &[T] {
        &self.means
    }

    pub fn mean(&self) -> T {
        if self.count == 0 {
            T::zero()
        } else {
            self.total / T::lit(self.count as f64)
        }
    }

    /// Standard error of the mean from completed batches; NaN with fewer than two.
    pub fn stderr(&self) -> T {
        stderr_of_means(&self.means)
    }

    pub fn estimate(&self) -> Estimate<T> {
        Estimate {
            mean: self.mean(),
            stderr: self.stderr(),
        }
    }

    /// Combines accumulators with equal batch sizes (e.g. independent chains).
    pub fn merge(parts: &[Self]) -> Self {
        let batch_size = parts.first().map_or(1, |p| p.batch_size);
        let mut out = Self::with_batch_size(batch_size);
        for p in parts {
            debug_assert_eq!(p.batch_size, batch_size);
            out.means.extend_from_slice(&p.means);
            out.total += p.total;
            out.count += p.count;
        }
        out
    }
}

/// `sd(means) / sqrt(len)`; NaN for fewer than two values.
pub fn stderr_of_means<T: Real>(means: &[T]) -> T {
    let nb = means.len();
    if nb < 2 {
        return T::nan();
    }
    let n = T::lit(nb as f64);
    let mean = means.iter().copied().sum::<T>() / n;
    let var = means.iter().map(|&m| (m - mean) * (m - mean)).sum::<T>() / (n - T::one());
    (var / n).sqrt()
}

/// Ordinary least-squares fit `y ≈ intercept + slope * x`; returns `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).map(|(s, _)| s)
}
