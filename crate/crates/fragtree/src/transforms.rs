//! Analytic transforms of a split law.
//!
//! * `phi(z)  = sum_j E V_j^z` (with `0^z := 0`), the Mellin-type transform whose
//!   roots of `phi(lambda) = 1` drive every asymptotic in the toolkit;
//! * `phi'(z)`, whose value at 1 gives the entropy constant `alpha = -phi'(1)`;
//! * `psi(z, w) = Cov(sum_j V_j^z, sum_k V_k^w)`.
//!
//! Every built-in family carries a closed form; `EmpiricalSamples` falls back to
//! Monte Carlo with a reported error bound. Monte Carlo twins of the closed
//! forms are exposed for cross-validation.

use crate::error::FragError;
use crate::law::{Family, SplitLaw};
use crate::rng::SplitMix64;
use crate::special::{beta as cbeta, digamma, ln_gamma};
use crate::Result;
use num_complex::Complex64;
use serde::Serialize;

/// Default sample count for Monte Carlo transform fallbacks.
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;

/// How a transform value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

/// A transform evaluation together with an absolute error bound.
#[derive(Debug, Clone, Copy)]
pub struct TransformValue {
    pub value: Complex64,
    /// Upper bound on the absolute error (0 for closed forms).
    pub error_bound: f64,
    pub method: Method,
}

impl TransformValue {
    fn exact(value: Complex64) -> Self {
        TransformValue {
            value,
            error_bound: 0.0,
            method: Method::ClosedForm,
        }
    }
}

#[inline]
fn cpow(v: f64, z: Complex64) -> Complex64 {
    // v > 0 real; 0^z is handled by the callers (zero components are skipped).
    (z * v.ln()).exp()
}

fn near_nonpositive_integer(z: Complex64) -> bool {
    z.im.abs() < 1e-12 && z.re <= 0.5 && (z.re - z.re.round()).abs() < 1e-12
}

/// `phi(z) = sum_j E V_j^z`.
///
/// Closed forms for all built-in families (meromorphic in `z`); the empirical
/// family averages over its stored rows and requires `Re z >= 0`.
pub fn phi(law: &SplitLaw, z: Complex64) -> Result<TransformValue> {
    match law.family() {
        Family::BinaryUniform => {
            let den = z + 1.0;
            if den.norm() < 1e-12 {
                return Err(FragError::PoleOfPhi { z });
            }
            Ok(TransformValue::exact(2.0 / den))
        }
        Family::MaryUniform { m } => mary_phi(*m, z),
        Family::SimplexSplit { d } => mary_phi(*d + 1, z),
        Family::QuadSplit { d } => {
            let den = z + 1.0;
            if den.norm() < 1e-12 {
                return Err(FragError::PoleOfPhi { z });
            }
            Ok(TransformValue::exact((2.0 / den).powu(*d)))
        }
        Family::Beta { a, a_prime } => {
            let (ga, gap) = beta_moments(*a, *a_prime, z)?;
            Ok(TransformValue::exact(ga + gap))
        }
        Family::Deterministic { weights } => {
            Ok(TransformValue::exact(weights.iter().map(|&w| cpow(w, z)).sum()))
        }
        Family::LatticeDeterministic { .. } => {
            let w = law.fixed_weights().expect("lattice law has weights");
            Ok(TransformValue::exact(w.iter().map(|&w| cpow(w, z)).sum()))
        }
        Family::Empirical { .. } => {
            if z.re < 0.0 {
                return Err(FragError::Domain { z });
            }
            Ok(mc_mean_of_power_sum(law.empirical_rows(), z))
        }
    }
}

/// `phi` for the m-ary family: `prod_{k=1}^{m-1} (k+1) / (z+k)`.
fn mary_phi(m: u32, z: Complex64) -> Result<TransformValue> {
    let mut acc = Complex64::new(1.0, 0.0);
    for k in 1..m as i64 {
        let den = z + k as f64;
        if den.norm() < 1e-12 {
            return Err(FragError::PoleOfPhi { z });
        }
        acc *= (k + 1) as f64 / den;
    }
    Ok(TransformValue::exact(acc))
}

/// `E V^z` and `E (1-V)^z` for `V ~ Beta(a, a')`.
fn beta_moments(a: f64, a_prime: f64, z: Complex64) -> Result<(Complex64, Complex64)> {
    if near_nonpositive_integer(z + a) || near_nonpositive_integer(z + a_prime) {
        return Err(FragError::PoleOfPhi { z });
    }
    let ca = Complex64::new(a, 0.0);
    let cap = Complex64::new(a_prime, 0.0);
    let norm = ln_gamma(ca + cap);
    let ga = (ln_gamma(z + ca) - ln_gamma(z + ca + cap) + norm - ln_gamma(ca)).exp();
    let gap = (ln_gamma(z + cap) - ln_gamma(z + cap + ca) + norm - ln_gamma(cap)).exp();
    Ok((ga, gap))
}

/// `phi'(z)`, analytic for the closed-form families.
pub fn phi_prime(law: &SplitLaw, z: Complex64) -> Result<TransformValue> {
    match law.family() {
        Family::BinaryUniform => {
            let den = z + 1.0;
            if den.norm() < 1e-12 {
                return Err(FragError::PoleOfPhi { z });
            }
            Ok(TransformValue::exact(-2.0 / (den * den)))
        }
        Family::MaryUniform { m } => mary_phi_prime(*m, z),
        Family::SimplexSplit { d } => mary_phi_prime(*d + 1, z),
        Family::QuadSplit { d } => {
            let den = z + 1.0;
            if den.norm() < 1e-12 {
                return Err(FragError::PoleOfPhi { z });
            }
            let p = phi(law, z)?.value;
            Ok(TransformValue::exact(-(*d as f64) / den * p))
        }
        Family::Beta { a, a_prime } => {
            let (ga, gap) = beta_moments(*a, *a_prime, z)?;
            let ca = Complex64::new(*a, 0.0);
            let cap = Complex64::new(*a_prime, 0.0);
            let da = digamma(z + ca) - digamma(z + ca + cap);
            let dap = digamma(z + cap) - digamma(z + cap + ca);
            Ok(TransformValue::exact(ga * da + gap * dap))
        }
        Family::Deterministic { .. } | Family::LatticeDeterministic { .. } => {
            let w = law.fixed_weights().expect("deterministic law has weights");
            Ok(TransformValue::exact(
                w.iter().map(|&w| cpow(w, z) * w.ln()).sum(),
            ))
        }
        Family::Empirical { .. } => phi_prime_fd(law, z),
    }
}

fn mary_phi_prime(m: u32, z: Complex64) -> Result<TransformValue> {
    let p = mary_phi(m, z)?.value;
    let mut s = Complex64::new(0.0, 0.0);
    for k in 1..m as i64 {
        s += 1.0 / (z + k as f64);
    }
    Ok(TransformValue::exact(-p * s))
}

/// Central finite difference of `phi` with step 1e-6 and one Richardson level.
pub fn phi_prime_fd(law: &SplitLaw, z: Complex64) -> Result<TransformValue> {
    let h = 1e-6;
    let d = |h: f64| -> Result<(Complex64, f64)> {
        let plus = phi(law, z + h)?;
        let minus = phi(law, z - h)?;
        Ok((
            (plus.value - minus.value) / (2.0 * h),
            (plus.error_bound + minus.error_bound) / (2.0 * h),
        ))
    };
    let (d1, e1) = d(h)?;
    let (d2, e2) = d(h / 2.0)?;
    let value = (4.0 * d2 - d1) / 3.0;
    // Richardson defect plus propagated sampling error.
    let error_bound = (d2 - d1).norm() / 3.0 + e1.max(e2) * 2.0;
    Ok(TransformValue {
        value,
        error_bound,
        method: Method::MonteCarlo,
    })
}

/// `psi(z, w) = E[(sum_j V_j^z)(sum_k V_k^w)] - phi(z) phi(w)`.
pub fn psi(law: &SplitLaw, z: Complex64, w: Complex64) -> Result<TransformValue> {
    match law.family() {
        Family::BinaryUniform => {
            let a = 2.0 / (z + w + 1.0);
            let b = 2.0 * cbeta(z + 1.0, w + 1.0);
            let c = 4.0 / ((z + 1.0) * (w + 1.0));
            Ok(TransformValue::exact(a + b - c))
        }
        Family::MaryUniform { m } => mary_psi(law, *m, z, w),
        Family::SimplexSplit { d } => mary_psi(law, *d + 1, z, w),
        Family::QuadSplit { d } => {
            // sum_{j,k} E V_j^z V_k^w = 2^d (1/(1+z+w) + B(z+1, w+1))^d; coordinates
            // where the two cells agree contribute E U^{z+w}, the rest B(z+1, w+1).
            let inner = 1.0 / (z + w + 1.0) + cbeta(z + 1.0, w + 1.0);
            let second = (2.0 * inner).powu(*d);
            let pz = phi(law, z)?.value;
            let pw = phi(law, w)?.value;
            Ok(TransformValue::exact(second - pz * pw))
        }
        Family::Beta { a, a_prime } => {
            let ca = Complex64::new(*a, 0.0);
            let cap = Complex64::new(*a_prime, 0.0);
            let b0 = cbeta(ca, cap);
            let cross = (cbeta(ca + z, cap + w) + cbeta(ca + w, cap + z)) / b0;
            let pzw = phi(law, z + w)?.value;
            let pz = phi(law, z)?.value;
            let pw = phi(law, w)?.value;
            Ok(TransformValue::exact(pzw + cross - pz * pw))
        }
        Family::Deterministic { .. } | Family::LatticeDeterministic { .. } => {
            Ok(TransformValue::exact(Complex64::new(0.0, 0.0)))
        }
        Family::Empirical { .. } => {
            if z.re < 0.0 || w.re < 0.0 {
                return Err(FragError::Domain { z });
            }
            Ok(mc_covariance(law.empirical_rows(), z, w))
        }
    }
}

fn mary_psi(law: &SplitLaw, m: u32, z: Complex64, w: Complex64) -> Result<TransformValue> {
    // (V_1, ..., V_m) ~ Dirichlet(1, ..., 1), so for j != k
    // E V_j^z V_k^w = (m-1)! Gamma(1+z) Gamma(1+w) / Gamma(m+z+w),
    // and there are m(m-1) ordered off-diagonal pairs.
    let pzw = phi(law, z + w)?.value;
    let log_scale = (m as f64 - 1.0).ln() + ln_gamma(Complex64::new(m as f64 + 1.0, 0.0)).re;
    let cross =
        (log_scale + ln_gamma(z + 1.0) + ln_gamma(w + 1.0) - ln_gamma(z + w + m as f64)).exp();
    let pz = phi(law, z)?.value;
    let pw = phi(law, w)?.value;
    Ok(TransformValue::exact(pzw + cross - pz * pw))
}

/// Monte Carlo `phi` over `n` sampled split vectors.
pub fn phi_monte_carlo(law: &SplitLaw, z: Complex64, n: usize, seed: u64) -> Result<TransformValue> {
    if z.re < 0.0 {
        return Err(FragError::Domain { z });
    }
    let mut rng = SplitMix64::new(seed);
    let mut buf = Vec::with_capacity(law.parts());
    let mut sum = Complex64::new(0.0, 0.0);
    let mut sum_sq = 0.0;
    for _ in 0..n {
        law.sample_into(&mut rng, &mut buf);
        let s: Complex64 = buf.iter().filter(|&&v| v > 0.0).map(|&v| cpow(v, z)).sum();
        sum += s;
        sum_sq += s.norm_sqr();
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean.norm_sqr()).max(0.0);
    Ok(TransformValue {
        value: mean,
        error_bound: 3.0 * (var / n as f64).sqrt(),
        method: Method::MonteCarlo,
    })
}

/// Monte Carlo `psi` (sample covariance of the two power sums).
pub fn psi_monte_carlo(
    law: &SplitLaw,
    z: Complex64,
    w: Complex64,
    n: usize,
    seed: u64,
) -> Result<TransformValue> {
    if z.re < 0.0 || w.re < 0.0 {
        return Err(FragError::Domain { z });
    }
    let mut rng = SplitMix64::new(seed);
    let mut rows = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(law.parts());
    for _ in 0..n {
        law.sample_into(&mut rng, &mut buf);
        rows.push(buf.clone());
    }
    Ok(mc_covariance(&rows, z, w))
}

fn mc_mean_of_power_sum(rows: &[Vec<f64>], z: Complex64) -> TransformValue {
    let n = rows.len();
    let mut sum = Complex64::new(0.0, 0.0);
    let mut sum_sq = 0.0;
    for row in rows {
        let s: Complex64 = row.iter().filter(|&&v| v > 0.0).map(|&v| cpow(v, z)).sum();
        sum += s;
        sum_sq += s.norm_sqr();
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean.norm_sqr()).max(0.0);
    TransformValue {
        value: mean,
        error_bound: 3.0 * (var / n as f64).sqrt(),
        method: Method::MonteCarlo,
    }
}

fn mc_covariance(rows: &[Vec<f64>], z: Complex64, w: Complex64) -> TransformValue {
    let n = rows.len();
    let sums: Vec<(Complex64, Complex64)> = rows
        .iter()
        .map(|row| {
            let sz: Complex64 = row.iter().filter(|&&v| v > 0.0).map(|&v| cpow(v, z)).sum();
            let sw: Complex64 = row.iter().filter(|&&v| v > 0.0).map(|&v| cpow(v, w)).sum();
            (sz, sw)
        })
        .collect();
    let mean_z: Complex64 = sums.iter().map(|s| s.0).sum::<Complex64>() / n as f64;
    let mean_w: Complex64 = sums.iter().map(|s| s.1).sum::<Complex64>() / n as f64;
    let mut cov = Complex64::new(0.0, 0.0);
    let mut var_of_prod = 0.0;
    for (sz, sw) in &sums {
        let term = (sz - mean_z) * (sw - mean_w);
        cov += term;
        var_of_prod += term.norm_sqr();
    }
    cov /= n as f64;
    let spread = (var_of_prod / n as f64 - cov.norm_sqr()).max(0.0);
    TransformValue {
        value: cov,
        error_bound: 3.0 * (spread / n as f64).sqrt(),
        method: Method::MonteCarlo,
    }
}

/// Heuristic scan for Condition B(delta): `limsup_t |phi(delta + it)| < 1`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionBReport {
    pub delta: f64,
    pub t_max: f64,
    pub grid_step: f64,
    /// Max of `|phi(delta + it)|` over the scanned grid.
    pub sup_estimate: f64,
    /// Grid point attaining the maximum.
    pub attained_at: f64,
    /// A grid scan over a finite window is a diagnostic, never a proof.
    pub heuristic: bool,
}

pub fn check_condition_b(
    law: &SplitLaw,
    delta: f64,
    t_max: f64,
    grid_step: f64,
) -> Result<ConditionBReport> {
    if delta < 0.0 || grid_step <= 0.0 || t_max <= grid_step {
        return Err(FragError::Config(
            "condition B scan needs delta >= 0 and 0 < grid < t_max".into(),
        ));
    }
    let mut sup = f64::NEG_INFINITY;
    let mut attained = grid_step;
    let mut t = grid_step;
    while t <= t_max {
        let v = phi(law, Complex64::new(delta, t))?.value.norm();
        if v > sup {
            sup = v;
            attained = t;
        }
        t += grid_step;
    }
    Ok(ConditionBReport {
        delta,
        t_max,
        grid_step,
        sup_estimate: sup,
        attained_at: attained,
        heuristic: true,
    })
}
