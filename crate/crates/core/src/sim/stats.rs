//! Accumulators for steady-state output analysis.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Count, sum and sum of squares of scalar observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Tally {
    pub fn add(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as f64;
        let m = self.sum / n;
        Some(((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0))
    }
}

const MAX_SLICES: usize = 2048;

/// Weighted running sums cut into equal-weight slices. When the slice list
/// fills up, neighbouring slices are merged and the width doubles, so memory
/// stays bounded whatever the run length.
#[derive(Debug, Clone)]
pub(crate) struct Slices {
    width: f64,
    done: Vec<(f64, f64)>,
    sum: f64,
    weight: f64,
}

impl Slices {
    pub fn new(width: f64) -> Self {
        Self {
            width,
            done: Vec::new(),
            sum: 0.0,
            weight: 0.0,
        }
    }

    /// Adds `rate` held over `weight` units (weight 1 for a single
    /// observation).
    pub fn add(&mut self, rate: f64, mut weight: f64) {
        while weight > 0.0 {
            if self.done.len() == MAX_SLICES {
                self.compact();
            }
            let take = (self.width - self.weight).min(weight);
            self.sum += rate * take;
            self.weight += take;
            weight -= take;
            if self.weight >= self.width * (1.0 - 1e-12) {
                self.done.push((self.sum, self.weight));
                self.sum = 0.0;
                self.weight = 0.0;
            }
        }
    }

    fn compact(&mut self) {
        let merged: Vec<(f64, f64)> = self
            .done
            .chunks(2)
            .map(|c| c.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1)))
            .collect();
        self.done = merged;
        self.width *= 2.0;
        // the open slice now has twice the room; nothing to move
    }

    /// Means of `batches` contiguous groups of complete slices; fewer when
    /// there are not enough slices.
    pub fn batch_means(&self, batches: usize) -> Vec<f64> {
        let m = self.done.len();
        let b = batches.min(m);
        (0..b)
            .map(|g| {
                let (lo, hi) = (g * m / b, (g + 1) * m / b);
                let (s, w) = self.done[lo..hi]
                    .iter()
                    .fold((0.0, 0.0), |a, x| (a.0 + x.0, a.1 + x.1));
                s / w
            })
            .collect()
    }
}

/// Point estimate with a symmetric 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    /// Number of independent observations (batch or replication means)
    /// behind the interval.
    pub samples: usize,
}

impl Estimate {
    pub fn contains(&self, x: f64, widths: f64) -> bool {
        (self.mean - x).abs() <= widths * self.half_width
    }

    pub fn std_error(&self) -> f64 {
        if self.samples < 2 {
            return f64::INFINITY;
        }
        self.half_width / t_quantile(self.samples - 1)
    }

    /// Standardized deviation of the mean from `x`, mapped to the standard
    /// normal score with the same two-sided tail probability.
    pub fn z_score(&self, x: f64) -> f64 {
        let diff = self.mean - x;
        let se = self.std_error();
        if diff == 0.0 || se.is_infinite() {
            return 0.0;
        }
        if se == 0.0 {
            return diff.signum() * f64::INFINITY;
        }
        let t = StudentsT::new(0.0, 1.0, (self.samples - 1) as f64).expect("positive degrees of freedom");
        let tail = t.sf((diff / se).abs());
        let z = -Normal::standard().inverse_cdf(tail);
        diff.signum() * z
    }
}

/// 0.975 quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Half-width of the t interval for the mean of `samples`; infinite with
/// fewer than two samples.
pub fn half_width(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let mean = sorted_sum(samples) / n as f64;
    let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = sorted_sum(&dev) / (n - 1) as f64;
    t_quantile(n - 1) * (var / n as f64).sqrt()
}

/// Sum in ascending order, so the result does not depend on input order.
pub fn sorted_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tally_moments() {
        let mut t = Tally::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            t.add(x);
        }
        assert_eq!(t.mean(), Some(2.5));
        assert!((t.variance().unwrap() - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(Tally::default().mean(), None);
    }

    #[test]
    fn slices_preserve_totals() {
        let mut s = Slices::new(1e-3);
        for k in 0..100_000 {
            s.add((k % 7) as f64, 0.37);
        }
        let total: f64 = s.done.iter().map(|x| x.1).sum::<f64>() + s.weight;
        assert!((total - 37_000.0).abs() < 1e-6);
        assert!(s.done.len() <= MAX_SLICES);
        let b = s.batch_means(20);
        assert_eq!(b.len(), 20);
        for m in b {
            assert!((m - 3.0).abs() < 0.01, "{m}");
        }
    }

    #[test]
    fn long_first_interval_does_not_explode() {
        let mut s = Slices::new(1e-9);
        s.add(1.0, 1e6);
        assert!(s.done.len() <= MAX_SLICES);
    }

    #[test]
    fn t_quantiles() {
        assert!((t_quantile(3) - 3.182446305).abs() < 1e-6);
        assert!((t_quantile(19) - 2.093024054).abs() < 1e-6);
    }

    #[test]
    fn sorted_sum_is_order_free() {
        let a = [1e16, 1.0, -1e16, 3.5];
        let b = [3.5, -1e16, 1.0, 1e16];
        assert_eq!(sorted_sum(&a), sorted_sum(&b));
    }

    #[test]
    fn z_scores_match_tail_probability() {
        let e = Estimate {
            mean: 3.182446305,
            half_width: 3.182446305,
            samples: 4,
        };
        assert!((e.std_error() - 1.0).abs() < 1e-6);
        assert!((e.z_score(0.0) - 1.959964).abs() < 1e-4);
        assert!((e.z_score(2.0 * e.mean) + 1.959964).abs() < 1e-4);
        assert_eq!(e.z_score(e.mean), 0.0);
        let single = Estimate { samples: 1, ..e };
        assert_eq!(single.z_score(100.0), 0.0);
    }
}
