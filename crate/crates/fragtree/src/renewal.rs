//! Numerical renewal-equation solvers.
//!
//! In the additive variable `t = ln x`, the mean `m(t) = E N(e^t)` satisfies
//! `m = 1 + mu * m` on `t >= 0`, where `mu` is the (sub-probability) measure of
//! the log-inverse fragment sizes `X_j = -ln V_j` summed over `j`. The variance
//! satisfies the same equation with forcing
//! `h(t) = E (sum_j m(t - X_j) - m(t))^2 - 1`.
//!
//! These solvers discretise `mu` on a uniform grid and run the forward
//! recurrence; they are the module-independent oracle for the spectral
//! expansions.

use crate::error::FragError;
use crate::law::{Family, SplitLaw};
use crate::rng::SplitMix64;
use crate::Result;
use rayon::prelude::*;
use statrs::distribution::ContinuousCDF;

/// `mu` binned on a uniform grid of step `h` up to `t_max`.
///
/// `mu_mass[k]` approximates `mu(((k-1/2) h, (k+1/2) h])` for `k >= 2`; bin 1
/// also absorbs the mass below `3h/2` so the forward recurrence never needs a
/// lag-zero term.
#[derive(Debug, Clone)]
pub struct MeasureGrid {
    pub h: f64,
    pub t_max: f64,
    pub mu_mass: Vec<f64>,
    /// Total mass of `mu` (including beyond `t_max`); equals `phi(0)`, the
    /// expected number of positive components.
    pub total_mass: f64,
    /// Mass of the tilted measure `e^{-x} d mu` on the grid; the exact tilted
    /// measure is a probability measure, so this should sit near 1.
    pub tilt_check: f64,
}

/// Bin the measure `mu = sum_j law(-ln V_j)` on a grid.
///
/// Closed-form binning for the built-in families (per-component CDFs of
/// `-ln V_j`); Monte Carlo over `n_samples` draws otherwise.
pub fn discretize_measure(
    law: &SplitLaw,
    h: f64,
    t_max: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MeasureGrid> {
    if h <= 0.0 || t_max <= h {
        return Err(FragError::Config("measure grid needs 0 < h < t_max".into()));
    }
    let k_max = (t_max / h).round() as usize;
    let mut mu_mass = vec![0.0; k_max + 1];
    let mut total_mass;
    match law.family() {
        Family::BinaryUniform => {
            // X = -ln U with U uniform: P(X <= x) = 1 - e^{-x}, two components.
            let cdf = |x: f64| 1.0 - (-x).exp();
            total_mass = 2.0;
            fill_from_cdf(&mut mu_mass, h, 2.0, cdf);
        }
        Family::MaryUniform { .. } | Family::SimplexSplit { .. } => {
            let m = law.parts() as f64;
            // V_j ~ Beta(1, m-1): P(-ln V <= x) = (1 - e^{-x})^{m-1}.
            let cdf = move |x: f64| (1.0 - (-x).exp()).powf(m - 1.0);
            total_mass = m;
            fill_from_cdf(&mut mu_mass, h, m, cdf);
        }
        Family::QuadSplit { d } => {
            // V = U_1 ... U_d: X ~ Gamma(d, 1).
            let gamma = statrs::distribution::Gamma::new(*d as f64, 1.0)
                .map_err(|e| FragError::Config(e.to_string()))?;
            let b = law.parts() as f64;
            total_mass = b;
            fill_from_cdf(&mut mu_mass, h, b, move |x| gamma.cdf(x));
        }
        Family::Beta { a, a_prime } => {
            let beta1 = statrs::distribution::Beta::new(*a, *a_prime)
                .map_err(|e| FragError::Config(e.to_string()))?;
            let beta2 = statrs::distribution::Beta::new(*a_prime, *a)
                .map_err(|e| FragError::Config(e.to_string()))?;
            total_mass = 2.0;
            // P(-ln V <= x) = P(V >= e^{-x}) = 1 - CDF_V(e^{-x}), per component.
            let cdf = move |x: f64| {
                (1.0 - beta1.cdf((-x).exp())) + (1.0 - beta2.cdf((-x).exp()))
            };
            fill_from_cdf(&mut mu_mass, h, 1.0, cdf);
        }
        Family::Deterministic { .. } | Family::LatticeDeterministic { .. } => {
            let weights = law.fixed_weights().expect("deterministic weights");
            total_mass = weights.len() as f64;
            for w in weights {
                let x = -w.ln();
                let k = ((x / h).round() as usize).max(1);
                if k < mu_mass.len() {
                    mu_mass[k] += 1.0;
                }
            }
        }
        Family::Empirical { .. } => {
            if n_samples < 100_000 {
                return Err(FragError::Config(
                    "empirical measure binning needs n_samples >= 1e5".into(),
                ));
            }
            let mut rng = SplitMix64::new(seed);
            let mut buf = Vec::with_capacity(law.parts());
            let w = 1.0 / n_samples as f64;
            total_mass = 0.0;
            for _ in 0..n_samples {
                law.sample_into(&mut rng, &mut buf);
                for &v in &buf {
                    if v > 0.0 {
                        total_mass += w;
                        let k = (((-v.ln()) / h).round() as usize).max(1);
                        if k < mu_mass.len() {
                            mu_mass[k] += w;
                        }
                    }
                }
            }
        }
    }
    let tilt_check: f64 = mu_mass
        .iter()
        .enumerate()
        .map(|(k, &m)| m * (-(k as f64) * h).exp())
        .sum();
    Ok(MeasureGrid {
        h,
        t_max,
        mu_mass,
        total_mass,
        tilt_check,
    })
}

/// Midpoint-bin a two-sided-continuous component CDF, clamping the sub-`3h/2`
/// mass into bin 1.
fn fill_from_cdf<F: Fn(f64) -> f64>(mu_mass: &mut [f64], h: f64, scale: f64, cdf: F) {
    let k_max = mu_mass.len() - 1;
    mu_mass[1] = scale * cdf(1.5 * h);
    for k in 2..=k_max {
        let lo = (k as f64 - 0.5) * h;
        let hi = (k as f64 + 0.5) * h;
        mu_mass[k] = scale * (cdf(hi) - cdf(lo));
    }
}

/// A solution of `F = f + mu * F` on the grid.
#[derive(Debug, Clone)]
pub struct RenewalSolution {
    pub h: f64,
    /// `values[k] = F(k h)`.
    pub values: Vec<f64>,
    /// Forcing evaluated on the grid (kept for reports).
    pub forcing: Vec<f64>,
    /// Per-point forcing error (3 standard errors), when the forcing was
    /// itself estimated by Monte Carlo.
    pub forcing_error: Option<Vec<f64>>,
}

impl RenewalSolution {
    /// Linear interpolation of `F(t)`, zero for `t < 0`.
    pub fn at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let pos = t / self.h;
        let k = pos.floor() as usize;
        if k + 1 >= self.values.len() {
            return *self.values.last().expect("nonempty grid");
        }
        let frac = pos - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    /// Same solution evaluated at `x = e^t`.
    pub fn at_x(&self, x: f64) -> f64 {
        self.at(x.ln())
    }

    pub fn t_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.h
    }
}

/// Forward recurrence `F(kh) = f(kh) + sum_{j>=1} mu[j] F((k-j)h)`.
///
/// The forcing must vanish for `t < 0`; instability beyond `e^{2 t_max}`
/// aborts (the mean solution grows like `e^t`).
pub fn solve_renewal<F: Fn(f64) -> f64>(grid: &MeasureGrid, forcing: F) -> Result<RenewalSolution> {
    let k_max = grid.mu_mass.len() - 1;
    let cap = (2.0 * grid.t_max).exp();
    let mut values = vec![0.0; k_max + 1];
    let mut fvals = vec![0.0; k_max + 1];
    for k in 0..=k_max {
        let mut acc = forcing(k as f64 * grid.h);
        fvals[k] = acc;
        for j in 1..=k {
            let m = grid.mu_mass[j];
            if m != 0.0 {
                acc += m * values[k - j];
            }
        }
        if !acc.is_finite() || acc.abs() > cap {
            return Err(FragError::RenewalUnstable {
                t: k as f64 * grid.h,
            });
        }
        values[k] = acc;
    }
    Ok(RenewalSolution {
        h: grid.h,
        values,
        forcing: fvals,
        forcing_error: None,
    })
}

/// Solve the mean equation (`forcing = 1` on `t >= 0`), i.e. `m(t) = E N(e^t)`.
pub fn solve_mean(grid: &MeasureGrid) -> Result<RenewalSolution> {
    solve_renewal(grid, |_| 1.0)
}

/// Richardson-style error estimate: re-solve on a coarsened (2h) grid and
/// report `|F_h - F_2h|` at the shared points (first-order discretisation).
pub fn discretization_error(
    law: &SplitLaw,
    grid: &MeasureGrid,
    solution: &RenewalSolution,
    seed: u64,
) -> Result<Vec<f64>> {
    let coarse_grid = discretize_measure(law, 2.0 * grid.h, grid.t_max, 100_000, seed)?;
    let coarse = solve_renewal(&coarse_grid, |_| 1.0)?;
    Ok(solution
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| (v - coarse.at(k as f64 * grid.h)).abs())
        .collect())
}

/// Estimate the variance forcing `h(t) = E (sum_j m(t - X_j) - m(t))^2 - 1`
/// by Monte Carlo over split vectors (exact for deterministic laws), then
/// solve the renewal equation with it.
///
/// The forcing is sampled on a thinned grid (every `thin`-th point, default
/// 10) and linearly interpolated in between; it is continuous a.e. so this is
/// an `O(thin * h)` perturbation.
pub fn variance_renewal(
    grid: &MeasureGrid,
    mean_solution: &RenewalSolution,
    law: &SplitLaw,
    n_samples: usize,
    thin: usize,
    seed: u64,
) -> Result<RenewalSolution> {
    let k_max = grid.mu_mass.len() - 1;
    let thin = thin.max(1);
    let deterministic = law.is_deterministic();
    let thinned: Vec<usize> = (0..=k_max).step_by(thin).chain(std::iter::once(k_max)).collect();
    let estimates: Vec<(usize, f64, f64)> = thinned
        .par_iter()
        .map(|&k| {
            let t = k as f64 * grid.h;
            if deterministic {
                let weights = law.fixed_weights().expect("deterministic weights");
                let s: f64 = weights
                    .iter()
                    .map(|w| mean_solution.at(t + w.ln()))
                    .sum::<f64>()
                    - mean_solution.at(t);
                return (k, s * s - 1.0, 0.0);
            }
            let mut rng = SplitMix64::new(crate::rng::mix64(seed ^ (k as u64) << 20));
            let mut buf = Vec::with_capacity(law.parts());
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n_samples {
                law.sample_into(&mut rng, &mut buf);
                let s: f64 = buf
                    .iter()
                    .filter(|&&v| v > 0.0)
                    .map(|&v| mean_solution.at(t + v.ln()))
                    .sum::<f64>()
                    - mean_solution.at(t);
                let q = s * s;
                sum += q;
                sum_sq += q * q;
            }
            let n = n_samples as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            (k, mean - 1.0, 3.0 * (var / n).sqrt())
        })
        .collect();
    // Linear interpolation of the forcing between thinned points.
    let mut forcing = vec![0.0; k_max + 1];
    let mut ferr = vec![0.0; k_max + 1];
    for w in estimates.windows(2) {
        let (k0, f0, e0) = w[0];
        let (k1, f1, e1) = w[1];
        let span = (k1 - k0).max(1) as f64;
        for k in k0..=k1 {
            let frac = (k - k0) as f64 / span;
            forcing[k] = f0 * (1.0 - frac) + f1 * frac;
            ferr[k] = e0 * (1.0 - frac) + e1 * frac;
        }
    }
    if let Some(&(k, f, e)) = estimates.last() {
        forcing[k] = f;
        ferr[k] = e;
    }
    let mut solution = solve_renewal(grid, |t| {
        let k = (t / grid.h).round() as usize;
        forcing[k.min(k_max)]
    })?;
    solution.forcing_error = Some(ferr);
    Ok(solution)
}

/// Export a solution as CSV: `t, x = e^t, value, error_estimate`.
pub fn solution_to_csv(solution: &RenewalSolution, errors: Option<&[f64]>) -> String {
    let mut out = String::from("t,x,value,error_estimate\n");
    for (k, &v) in solution.values.iter().enumerate() {
        let t = k as f64 * solution.h;
        let err = errors.and_then(|e| e.get(k)).copied().unwrap_or(f64::NAN);
        out.push_str(&format!("{t},{x},{v},{err}\n", x = t.exp()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::SplitLaw;

    #[test]
    fn binary_measure_mass_and_tilt() {
        let law = SplitLaw::binary_uniform();
        let grid = discretize_measure(&law, 1e-3, 10.0, 0, 1).unwrap();
        assert!((grid.total_mass - 2.0).abs() < 1e-12);
        // Tilted measure is a probability measure up to O(h) + truncated tail.
        assert!((grid.tilt_check - 1.0).abs() < 2e-3, "tilt {}", grid.tilt_check);
        assert!(grid.mu_mass.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn total_mass_is_phi_zero() {
        for law in [
            SplitLaw::mary_uniform(5).unwrap(),
            SplitLaw::quad_split(3).unwrap(),
            SplitLaw::beta(2.0, 7.0).unwrap(),
        ] {
            let grid = discretize_measure(&law, 2e-3, 8.0, 0, 1).unwrap();
            let phi0 = crate::transforms::phi(&law, num_complex::Complex64::new(0.0, 0.0))
                .unwrap()
                .value
                .re;
            assert!(
                (grid.total_mass - phi0).abs() < 1e-9,
                "{}: {} vs {phi0}",
                law.spec_string(),
                grid.total_mass
            );
            assert!((grid.tilt_check - 1.0).abs() < 5e-3, "{}", law.spec_string());
        }
    }

    #[test]
    fn empirical_binning_close_to_closed_form() {
        let mut rng = SplitMix64::new(5);
        let binary = SplitLaw::binary_uniform();
        let rows: Vec<Vec<f64>> = (0..120_000).map(|_| binary.sample(&mut rng)).collect();
        let law = SplitLaw::empirical("inline".into(), rows).unwrap();
        let grid = discretize_measure(&law, 0.01, 6.0, 120_000, 3).unwrap();
        assert!((grid.total_mass - 2.0).abs() < 1e-9);
        assert!((grid.tilt_check - 1.0).abs() < 0.02, "tilt {}", grid.tilt_check);
    }

    #[test]
    fn zero_forcing_zero_solution() {
        let law = SplitLaw::binary_uniform();
        let grid = discretize_measure(&law, 1e-2, 5.0, 0, 1).unwrap();
        let sol = solve_renewal(&grid, |_| 0.0).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_mean_matches_exact() {
        // m(x) = 2x - 1: relative error <= 2% on x in [2, 100] at h = 1e-3.
        let law = SplitLaw::binary_uniform();
        let grid = discretize_measure(&law, 1e-3, 5.0, 0, 1).unwrap();
        let sol = solve_mean(&grid).unwrap();
        for x in [2.0, 5.0, 20.0, 100.0] {
            let exact = 2.0 * x - 1.0;
            let got = sol.at_x(x);
            let rel = (got - exact).abs() / exact;
            assert!(rel <= 0.02, "x = {x}: {got} vs {exact} (rel {rel:.4})");
        }
    }

    #[test]
    fn halving_h_halves_the_error() {
        let law = SplitLaw::binary_uniform();
        let x = 50.0;
        let exact = 2.0 * x - 1.0;
        let err_at = |h: f64| {
            let grid = discretize_measure(&law, h, 5.0, 0, 1).unwrap();
            (solve_mean(&grid).unwrap().at_x(x) - exact).abs()
        };
        let e1 = err_at(2e-3);
        let e2 = err_at(1e-3);
        let ratio = e1 / e2;
        assert!(
            (1.4..=2.8).contains(&ratio),
            "first-order convergence violated: {e1} / {e2} = {ratio}"
        );
    }

    #[test]
    fn mean_solution_monotone() {
        let law = SplitLaw::mary_uniform(4).unwrap();
        let grid = discretize_measure(&law, 2e-3, 6.0, 0, 1).unwrap();
        let sol = solve_mean(&grid).unwrap();
        for w in sol.values.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn deterministic_recurrence_is_reproducible() {
        let law = SplitLaw::mary_uniform(3).unwrap();
        let grid = discretize_measure(&law, 1e-2, 6.0, 0, 1).unwrap();
        let a = solve_mean(&grid).unwrap();
        let b = solve_mean(&grid).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn mean_growth_rate_is_inverse_alpha() {
        // m(t)/e^t -> 1/alpha; mary(3): alpha = 5/6.
        let law = SplitLaw::mary_uniform(3).unwrap();
        let grid = discretize_measure(&law, 1e-3, 8.0, 0, 1).unwrap();
        let sol = solve_mean(&grid).unwrap();
        let t = 8.0;
        let ratio = sol.at(t) / t.exp();
        let expected = 6.0 / 5.0;
        assert!(
            (ratio - expected).abs() / expected < 0.03,
            "ratio {ratio} vs {expected}"
        );
    }

    #[test]
    fn deterministic_variance_forcing_is_zero() {
        // For a deterministic law the mean recursion is exact, so h(t) ~ 0 and
        // the variance solution stays at the discretisation floor.
        let law = SplitLaw::deterministic(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let grid = discretize_measure(&law, 1e-3, 5.0, 0, 1).unwrap();
        let mean = solve_mean(&grid).unwrap();
        let var = variance_renewal(&grid, &mean, &law, 0, 10, 1).unwrap();
        let scale = mean.at(5.0);
        // Deterministic forcing has no Monte Carlo error at all.
        assert!(var.forcing_error.as_ref().unwrap().iter().all(|&e| e == 0.0));
        // h(t) is (sum m(t - X_j) - m(t))^2 - 1 with the discretised m, so it
        // vanishes only up to discretisation; the solution stays o(mean^2).
        let v = var.at(5.0).abs();
        assert!(v < 0.05 * scale * scale, "sigma^2 ~ {v} vs mean {scale}");
    }

    #[test]
    fn binary_variance_constant() {
        // sigma^2(ln x)/x at x = 1000 within 10% of 8 ln 2 - 5.
        let law = SplitLaw::binary_uniform();
        let grid = discretize_measure(&law, 2e-3, 7.5, 0, 1).unwrap();
        let mean = solve_mean(&grid).unwrap();
        let var = variance_renewal(&grid, &mean, &law, 60_000, 10, 77).unwrap();
        let x = 1000.0;
        let beta = 8.0 * 2.0f64.ln() - 5.0;
        let got = var.at_x(x) / x;
        assert!(
            (got - beta).abs() / beta < 0.10,
            "sigma^2(x)/x = {got} vs beta = {beta}"
        );
        // Nonnegative up to solver error.
        assert!(var.values.iter().all(|&v| v > -0.05));
    }

    #[test]
    fn csv_export_shape() {
        let law = SplitLaw::binary_uniform();
        let grid = discretize_measure(&law, 0.5, 2.0, 0, 1).unwrap();
        let sol = solve_mean(&grid).unwrap();
        let csv = solution_to_csv(&sol, None);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x,value,error_estimate");
        assert_eq!(lines.len(), sol.values.len() + 1);
    }
}
