//! Adaptive Gauss–Kronrod quadrature (G7, K15).
//!
//! Worst-interval-first refinement; the Kronrod/Gauss defect drives both the
//! local error estimate and the split priority.

use std::collections::BinaryHeap;

// 15-point Kronrod abscissae (positive half) and weights; the embedded 7-point
// Gauss rule uses the odd-index nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_813_0,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_17,
    0.207_784_955_007_898_47,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// One G7K15 panel: returns (kronrod value, error estimate).
fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut resabs = fc.abs() * WGK[7];
    for (i, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[i] * (f1 + f2);
        resabs += WGK[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * (f1 + f2);
        }
    }
    kronrod *= half;
    gauss *= half;
    resabs *= half.abs();
    let defect = (kronrod - gauss).abs();
    // GSL-style rescaling keeps the estimate meaningful when the defect is tiny.
    let err = if defect > 0.0 {
        let scaled = (200.0 * defect).powf(1.5);
        if scaled < resabs {
            scaled
        } else {
            defect
        }
    } else {
        0.0
    };
    (kronrod, err.max(f64::EPSILON * resabs * 50.0))
}

#[derive(PartialEq)]
struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl Eq for Interval {}

impl Ord for Interval {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Integrate `f` over `[a, b]`; returns `(value, error_estimate)`.
///
/// Stops when the summed panel error drops below
/// `max(abs_tol, rel_tol * |value|)` or after `max_panels` subdivisions.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> (f64, f64) {
    let (v, e) = panel(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Interval {
        a,
        b,
        value: v,
        error: e,
    });
    let mut total_value = v;
    let mut total_error = e;
    while heap.len() < max_panels {
        if total_error <= abs_tol.max(rel_tol * total_value.abs()) {
            break;
        }
        let worst = heap.pop().expect("heap nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval at floating-point resolution; keep its estimate.
            heap.push(worst);
            break;
        }
        let (v1, e1) = panel(&f, worst.a, mid);
        let (v2, e2) = panel(&f, mid, worst.b);
        total_value += v1 + v2 - worst.value;
        total_error += e1 + e2 - worst.error;
        heap.push(Interval {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Interval {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    (total_value, total_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let (v, e) = integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12, 0.0, 100);
        // [x^4/4 - x^2 + x] from -1 to 3 = (81/4 - 9 + 3) - (1/4 - 1 - 1) = 16
        assert!((v - 16.0).abs() < 1e-12, "{v}");
        assert!(e < 1e-9);
    }

    #[test]
    fn oscillatory_with_decay() {
        // int_0^50 cos(10 x) e^{-x} dx = (1 - e^{-50}(cos 500 - 10 sin 500)) / 101
        let (v, _) = integrate(|x| (10.0 * x).cos() * (-x).exp(), 0.0, 50.0, 1e-12, 1e-12, 2000);
        let expected =
            (1.0 - (-50.0f64).exp() * ((500.0f64).cos() - 10.0 * (500.0f64).sin())) / 101.0;
        assert!((v - expected).abs() < 1e-11, "{v} vs {expected}");
    }

    #[test]
    fn integrable_peak() {
        // Narrow Lorentzian: int 1/(eps^2 + x^2) dx = (2/eps) atan(1/eps)
        let eps = 1e-3;
        let (v, err) = integrate(|x| 1.0 / (eps * eps + x * x), -1.0, 1.0, 0.0, 1e-10, 5000);
        let expected = 2.0 * (1.0 / eps) * (1.0 / eps).atan();
        assert!((v - expected).abs() < 1e-6 * expected, "{v} vs {expected}");
        assert!(err < 1e-7 * expected);
    }
}
