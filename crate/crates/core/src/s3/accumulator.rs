use crate::scalar::Real;
use crate::stats::{BatchMeans, Estimate};

/// Running sums of the stable and windowed unstable contributions.
///
/// The ring holds the most recent `K_max` unstable integrands, newest first
/// when read back. Samples are only taken once `k >= warmup` and the ring is
/// full, so every `K` window sees exactly `K` valid entries.
#[derive(Debug, Clone)]
pub struct SensitivityAccumulator<T> {
    k_grid: Vec<usize>,
    k_max: usize,
    warmup: usize,
    ring: Vec<T>,
    head: usize,
    filled: usize,
    center: bool,
    j_sum: T,
    stable: BatchMeans<T>,
    unstable: Vec<T>,
    total: Vec<BatchMeans<T>>,
    window: Vec<T>,
}

impl<T: Real> SensitivityAccumulator<T> {
    /// `k_grid` must be sorted and deduplicated.
    pub fn new(
        k_grid: &[usize],
        warmup: usize,
        expected_samples: usize,
        batches: usize,
        center: bool,
    ) -> Self {
        let k_max = k_grid.iter().copied().max().unwrap_or(0);
        Self {
            k_grid: k_grid.to_vec(),
            k_max,
            warmup,
            ring: vec![T::zero(); k_max.max(1)],
            head: 0,
            filled: 0,
            center,
            j_sum: T::zero(),
            stable: BatchMeans::new(batches, expected_samples),
            unstable: vec![T::zero(); k_grid.len()],
            total: vec![BatchMeans::new(batches, expected_samples); k_grid.len()],
            window: vec![T::zero(); k_grid.len()],
        }
    }

    pub fn k_grid(&self) -> &[usize] {
        &self.k_grid
    }

    /// Number of accumulated samples.
    pub fn samples(&self) -> usize {
        self.stable.count()
    }

    /// Whether a sample at time `k` would be accumulated.
    pub fn is_active(&self, k: usize) -> bool {
        k >= self.warmup && self.filled >= self.k_max
    }

    /// Adds the contributions at time `k`: `DJ_k·v_k` to the stable sum and
    /// `−J_k (u_k + … + u_{k−K+1})` to each unstable sum.
    pub fn accumulate(&mut self, k: usize, j: T, dj_dot_v: T) {
        if !self.is_active(k) {
            return;
        }
        let j = if self.center {
            self.j_sum += j;
            j - self.j_sum / T::lit((self.samples() + 1) as f64)
        } else {
            j
        };
        self.stable.push(dj_dot_v);

        // Window sums over the ring, newest first, shared across the grid.
        let len = self.ring.len();
        let mut running = T::zero();
        let mut gi = 0;
        for t in 0..=self.k_max {
            while gi < self.k_grid.len() && self.k_grid[gi] == t {
                self.window[gi] = running;
                gi += 1;
            }
            if t < self.k_max {
                running += self.ring[(self.head + len - 1 - t) % len];
            }
        }
        for (i, &w) in self.window.iter().enumerate() {
            let contrib = -j * w;
            self.unstable[i] += contrib;
            self.total[i].push(dj_dot_v + contrib);
        }
    }

    /// Records the newest unstable integrand.
    pub fn push_integrand(&mut self, u: T) {
        if self.k_max == 0 {
            return;
        }
        self.ring[self.head] = u;
        self.head = (self.head + 1) % self.ring.len();
        self.filled = (self.filled + 1).min(self.k_max);
    }

    pub fn stable(&self) -> Estimate<T> {
        self.stable.estimate()
    }

    /// Normalized unstable contribution for each grid entry.
    pub fn unstable_means(&self) -> Vec<T> {
        let n = T::lit(self.samples().max(1) as f64);
        self.unstable.iter().map(|&u| u / n).collect()
    }

    /// Normalized total (stable + unstable) for each grid entry.
    pub fn totals(&self) -> Vec<Estimate<T>> {
        self.total.iter().map(BatchMeans::estimate).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_use_last_k_entries() {
        let mut acc = SensitivityAccumulator::<f64>::new(&[0, 1, 2, 3], 0, 10, 1, false);
        for u in [1.0, 2.0, 4.0] {
            acc.push_integrand(u);
        }
        acc.accumulate(3, 1.0, 0.5);
        assert_eq!(acc.unstable_means(), vec![0.0, -4.0, -6.0, -7.0]);
        let totals: Vec<f64> = acc.totals().iter().map(|e| e.mean).collect();
        assert_eq!(totals, vec![0.5, -3.5, -5.5, -6.5]);
    }

    #[test]
    fn ring_wraps() {
        let mut acc = SensitivityAccumulator::<f64>::new(&[2], 0, 10, 1, false);
        for u in [1.0, 2.0, 4.0, 8.0] {
            acc.push_integrand(u);
        }
        acc.accumulate(4, 2.0, 0.0);
        assert_eq!(acc.unstable_means(), vec![-24.0]);
    }

    #[test]
    fn waits_for_warmup_and_full_ring() {
        let mut acc = SensitivityAccumulator::<f64>::new(&[3], 2, 10, 1, false);
        acc.push_integrand(1.0);
        acc.push_integrand(1.0);
        acc.accumulate(2, 1.0, 1.0);
        assert_eq!(acc.samples(), 0);
        acc.push_integrand(1.0);
        acc.accumulate(1, 1.0, 1.0);
        assert_eq!(acc.samples(), 0);
        acc.accumulate(3, 1.0, 1.0);
        assert_eq!(acc.samples(), 1);
    }

    #[test]
    fn centering_removes_constant_observable() {
        let mut acc = SensitivityAccumulator::<f64>::new(&[1], 0, 10, 1, true);
        for _ in 0..5 {
            acc.push_integrand(3.0);
            acc.accumulate(10, 7.0, 0.0);
        }
        assert_eq!(acc.unstable_means(), vec![0.0]);
    }
}
