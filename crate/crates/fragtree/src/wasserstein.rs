//! Order-2 minimal transport distance between one-dimensional empirical
//! distributions: sorted matching is the optimal coupling in 1-d.

/// `W_2` between two equal-size samples (consumes and sorts copies).
pub fn w2_equal_size(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "use w2 for unequal sizes");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("no NaN in samples"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("no NaN in samples"));
    let n = a.len() as f64;
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (sum / n).sqrt()
}

/// `W_2` between samples of any sizes: quantile resampling to the smaller size
/// (evenly spaced order statistics), then sorted matching.
pub fn w2(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return w2_equal_size(a, b);
    }
    let m = a.len().min(b.len());
    let qa = quantile_resample(a, m);
    let qb = quantile_resample(b, m);
    w2_equal_size(&qa, &qb)
}

fn quantile_resample(sample: &[f64], m: usize) -> Vec<f64> {
    let mut s = sample.to_vec();
    s.sort_by(|x, y| x.partial_cmp(y).expect("no NaN in samples"));
    (0..m)
        .map(|i| {
            // Midpoint quantiles (i + 1/2)/m against the empirical CDF.
            let q = (i as f64 + 0.5) / m as f64;
            let pos = q * s.len() as f64 - 0.5;
            let k = pos.floor().clamp(0.0, s.len() as f64 - 1.0) as usize;
            let frac = (pos - k as f64).clamp(0.0, 1.0);
            if k + 1 < s.len() {
                s[k] * (1.0 - frac) + s[k + 1] * frac
            } else {
                s[k]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn distance_to_self_is_zero() {
        let a = vec![3.0, -1.0, 2.5, 0.0, 9.0];
        assert_eq!(w2_equal_size(&a, &a), 0.0);
    }

    #[test]
    fn shift_moves_by_shift() {
        // W2 between X and X + c is exactly |c|.
        let mut rng = SplitMix64::new(2);
        let a: Vec<f64> = (0..1000).map(|_| rng.next_f64()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.7).collect();
        assert!((w2_equal_size(&a, &b) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_triangle() {
        let mut rng = SplitMix64::new(8);
        let a: Vec<f64> = (0..500).map(|_| rng.next_f64()).collect();
        let b: Vec<f64> = (0..500).map(|_| 2.0 * rng.next_f64()).collect();
        let c: Vec<f64> = (0..500).map(|_| rng.next_f64() - 0.5).collect();
        let ab = w2_equal_size(&a, &b);
        assert!((ab - w2_equal_size(&b, &a)).abs() < 1e-15);
        assert!(ab <= w2_equal_size(&a, &c) + w2_equal_size(&c, &b) + 1e-12);
    }

    #[test]
    fn unequal_sizes_resample() {
        let mut rng = SplitMix64::new(5);
        let a: Vec<f64> = (0..2000).map(|_| rng.next_f64()).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.next_f64()).collect();
        // Same underlying distribution: distance should be small.
        assert!(w2(&a, &b) < 0.05);
    }
}
