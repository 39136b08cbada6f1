//! Streaming central-moment accumulator (mean through fourth moment).
//!
//! Single-pass Pébay updates with an associative merge, so replicate blocks can
//! be accumulated in parallel and combined in a fixed reduction order for
//! bit-stable output.

use serde::Serialize;

/// Running count, mean and centered power sums `M2..M4`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MomentAccumulator {
    pub count: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.count as f64;
        self.count += 1;
        let n = self.count as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    /// Combine two accumulators; associative up to floating-point rounding.
    pub fn merge(a: &Self, b: &Self) -> Self {
        if a.count == 0 {
            return *b;
        }
        if b.count == 0 {
            return *a;
        }
        let na = a.count as f64;
        let nb = b.count as f64;
        let n = na + nb;
        let delta = b.mean - a.mean;
        let delta2 = delta * delta;
        let mean = a.mean + delta * nb / n;
        let m2 = a.m2 + b.m2 + delta2 * na * nb / n;
        let m3 = a.m3
            + b.m3
            + delta * delta2 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * b.m2 - nb * a.m2) / n;
        let m4 = a.m4
            + b.m4
            + delta2 * delta2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * delta2 * (na * na * b.m2 + nb * nb * a.m2) / (n * n)
            + 4.0 * delta * (na * b.m3 - nb * a.m3) / n;
        MomentAccumulator {
            count: a.count + b.count,
            mean,
            m2,
            m3,
            m4,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; `None` for fewer than two observations.
    pub fn variance(&self) -> Option<f64> {
        if self.count < 2 {
            None
        } else {
            Some(self.m2 / (self.count as f64 - 1.0))
        }
    }

    /// Third central moment `E (X - mean)^3` (population normalisation).
    pub fn central3(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m3 / self.count as f64
        }
    }

    /// Fourth central moment (population normalisation).
    pub fn central4(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m4 / self.count as f64
        }
    }

    pub fn skewness(&self) -> Option<f64> {
        let var = self.m2 / self.count as f64;
        if self.count < 2 || var <= 0.0 {
            return None;
        }
        Some(self.central3() / var.powf(1.5))
    }

    pub fn excess_kurtosis(&self) -> Option<f64> {
        let var = self.m2 / self.count as f64;
        if self.count < 2 || var <= 0.0 {
            return None;
        }
        Some(self.central4() / (var * var) - 3.0)
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.count as f64).sqrt())
    }
}
