//! The distributional fixed point of the periodic phase.
//!
//! In the `Re lambda_2 > 1/2` phase, the rescaled size converges in `l_2` to
//! `Re(Xi e^{i tau_2 ln x})`, where `L(Xi)` is the unique fixed point with mean
//! `gamma` of the map
//!
//! ```text
//! T: eta -> L( sum_{r=1}^b V_r^{lambda_2} Z^{(r)} ),   Z^{(r)} iid ~ eta.
//! ```
//!
//! `T` is an `l_2` contraction with factor `sqrt(xi)`, `xi = phi(2 Re lambda_2) < 1`,
//! so iterating it on empirical measures converges geometrically; the iteration
//! carries a common-random-numbers witness that certifies the contraction rate
//! on the way.

use crate::error::FragError;
use crate::law::SplitLaw;
use crate::rng::{mix64, SplitMix64};
use crate::simulate::SimulationEnsemble;
use crate::spectral::MomentModel;
use crate::transforms::{phi, psi};
use crate::wasserstein;
use crate::Result;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

/// Weighted complex sample representing one iterate of `T`.
#[derive(Debug, Clone)]
pub struct EmpiricalComplexMeasure {
    pub samples: Vec<Complex64>,
    /// Target mean `gamma`; the iteration recentres onto it each generation.
    pub declared_mean: Complex64,
    pub generation: u32,
}

impl EmpiricalComplexMeasure {
    pub fn point_mass(gamma: Complex64, n: usize) -> Self {
        EmpiricalComplexMeasure {
            samples: vec![gamma; n],
            declared_mean: gamma,
            generation: 0,
        }
    }

    pub fn mean(&self) -> Complex64 {
        self.samples.iter().sum::<Complex64>() / self.samples.len() as f64
    }

    /// `E |Z|^2` of the sample.
    pub fn second_abs_moment(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// `E Z^2` (complex second moment).
    pub fn second_moment(&self) -> Complex64 {
        self.samples.iter().map(|z| z * z).sum::<Complex64>() / self.samples.len() as f64
    }

    /// Shift all samples so the mean is exactly `declared_mean`.
    pub fn recentre(&mut self) {
        let shift = self.declared_mean - self.mean();
        for z in self.samples.iter_mut() {
            *z += shift;
        }
    }

    /// CSV export: `re,im` per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im\n");
        for z in &self.samples {
            out.push_str(&format!("{},{}\n", z.re, z.im));
        }
        out
    }
}

/// Certificate that `T` contracts: `xi = E sum_r |V_r^{lambda_2}|^2 = phi(2 sigma_2)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContractionCertificate {
    pub lambda2: Complex64,
    pub xi: f64,
    /// `sqrt(xi)`, the `l_2` Lipschitz bound of `T`.
    pub lipschitz_bound: f64,
}

pub fn contraction_certificate(
    law: &SplitLaw,
    lambda2: Complex64,
) -> Result<ContractionCertificate> {
    let xi = phi(law, Complex64::new(2.0 * lambda2.re, 0.0))?.value.re;
    if xi >= 1.0 - 1e-6 {
        return Err(FragError::InvalidCertificate { xi });
    }
    Ok(ContractionCertificate {
        lambda2,
        xi,
        lipschitz_bound: xi.sqrt(),
    })
}

/// One application of `T` to an empirical measure: every output sample draws a
/// fresh split vector and `b` input samples with replacement. Pure map — the
/// recentring happens in [`iterate_to_fixed_point`].
pub fn apply_t(
    measure: &EmpiricalComplexMeasure,
    law: &SplitLaw,
    lambda2: Complex64,
    seed: u64,
) -> EmpiricalComplexMeasure {
    let (samples, _) = apply_t_coupled(measure, None, law, lambda2, seed);
    EmpiricalComplexMeasure {
        samples,
        declared_mean: measure.declared_mean,
        generation: measure.generation + 1,
    }
}

/// Apply `T` to `measure`, and optionally to a coupled difference vector with
/// the same `(V, index)` draws. Chunked deterministically on the seed.
fn apply_t_coupled(
    measure: &EmpiricalComplexMeasure,
    witness: Option<&[Complex64]>,
    law: &SplitLaw,
    lambda2: Complex64,
    seed: u64,
) -> (Vec<Complex64>, Option<Vec<Complex64>>) {
    let n = measure.samples.len();
    let b = law.parts();
    let pairs: Vec<(Complex64, Option<Complex64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::new(mix64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9)));
            let mut split = Vec::with_capacity(b);
            law.sample_into(&mut rng, &mut split);
            let mut z = Complex64::new(0.0, 0.0);
            let mut wz = Complex64::new(0.0, 0.0);
            for &v in split.iter() {
                let idx = (rng.next_u64() % n as u64) as usize;
                let factor = if v > 0.0 {
                    (lambda2 * v.ln()).exp()
                } else {
                    Complex64::new(0.0, 0.0)
                };
                z += factor * measure.samples[idx];
                if let Some(w) = witness {
                    wz += factor * w[idx];
                }
            }
            (z, witness.map(|_| wz))
        })
        .collect();
    let samples = pairs.iter().map(|p| p.0).collect();
    let coupled = witness.map(|_| pairs.iter().map(|p| p.1.unwrap()).collect());
    (samples, coupled)
}

/// Convergence record of the fixed-point iteration.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointDiagnostics {
    pub generations: u32,
    pub xi: f64,
    /// RMS of the common-random-numbers coupling difference per generation;
    /// certified to shrink by ~sqrt(xi) per step.
    pub contraction_witness: Vec<f64>,
    /// Sorted-matching `W_2` between the real parts of the last two generations.
    pub final_w2_real: f64,
    pub converged: bool,
}

/// Iterate `T` from the point mass at `gamma` until the first and second
/// moments (mean, `E|Z|^2`, `E Z^2`) stabilise within `tol`, or `max_gen`.
pub fn iterate_to_fixed_point(
    law: &SplitLaw,
    lambda2: Complex64,
    gamma: Complex64,
    n_samples: usize,
    max_gen: u32,
    tol: f64,
    seed: u64,
) -> Result<(EmpiricalComplexMeasure, FixedPointDiagnostics)> {
    let cert = contraction_certificate(law, lambda2)?;
    let mut measure = EmpiricalComplexMeasure::point_mass(gamma, n_samples);
    // Coupled difference to the previous generation (zero for the point mass).
    let mut witness: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n_samples];
    let mut witness_rms = Vec::new();
    let mut prev_samples = measure.samples.clone();
    let mut prev_abs2 = measure.second_abs_moment();
    let mut prev_sq = measure.second_moment();
    let mut converged = false;
    let mut first_step = true;
    for gen in 0..max_gen {
        let step_seed = mix64(seed ^ ((gen as u64 + 1) << 32));
        let (samples, coupled) = apply_t_coupled(
            &measure,
            (!first_step).then_some(&witness[..]),
            law,
            lambda2,
            step_seed,
        );
        if first_step {
            // First coupled difference: distance from the point mass.
            witness = samples.iter().map(|z| z - gamma).collect();
            first_step = false;
        } else {
            witness = coupled.expect("witness requested");
        }
        prev_samples = measure.samples.clone();
        measure.samples = samples;
        measure.generation = gen + 1;
        measure.recentre();
        let rms = (witness.iter().map(|w| w.norm_sqr()).sum::<f64>() / n_samples as f64).sqrt();
        witness_rms.push(rms);
        let abs2 = measure.second_abs_moment();
        let sq = measure.second_moment();
        let scale = abs2.max(1.0);
        if gen >= 2
            && (abs2 - prev_abs2).abs() < tol * scale
            && (sq - prev_sq).norm() < tol * scale
        {
            converged = true;
            break;
        }
        prev_abs2 = abs2;
        prev_sq = sq;
    }
    if !converged {
        return Err(FragError::NonConvergence { max_gen });
    }
    let re_prev: Vec<f64> = prev_samples.iter().map(|z| z.re).collect();
    let re_cur: Vec<f64> = measure.samples.iter().map(|z| z.re).collect();
    let final_w2 = wasserstein::w2_equal_size(&re_prev, &re_cur);
    let diagnostics = FixedPointDiagnostics {
        generations: measure.generation,
        xi: cert.xi,
        contraction_witness: witness_rms,
        final_w2_real: final_w2,
        converged,
    };
    Ok((measure, diagnostics))
}

/// Analytic second moments of the fixed point, from the defining recursion:
///
/// `E|Xi|^2 = |gamma|^2 (1 + psi(l2, conj l2) / (1 - xi))`,
/// `E Xi^2  = gamma^2 (1 - phi(2 l2) + psi(l2, l2)) / (1 - phi(2 l2))`.
///
/// Independent of the iteration path; used as its oracle.
pub fn fixed_point_second_moments(
    law: &SplitLaw,
    lambda2: Complex64,
    gamma: Complex64,
) -> Result<(f64, Complex64)> {
    let xi = phi(law, Complex64::new(2.0 * lambda2.re, 0.0))?.value.re;
    let psi_mixed = psi(law, lambda2, lambda2.conj())?.value.re;
    let abs2 = gamma.norm_sqr() * (1.0 + psi_mixed / (1.0 - xi));
    let phi2 = phi(law, 2.0 * lambda2)?.value;
    let psi_plain = psi(law, lambda2, lambda2)?.value;
    let sq = gamma * gamma * (1.0 - phi2 + psi_plain) / (1.0 - phi2);
    Ok((abs2, sq))
}

/// Order-2 transport distance between the rescaled simulated sample
/// `(N_i - x/alpha) / x^{sigma_2}` and the periodic limit sample
/// `Re(Xi_j e^{i tau_2 ln x})`.
pub fn periodic_limit_distance(
    ensemble: &SimulationEnsemble,
    fixed_point: &EmpiricalComplexMeasure,
    model: &MomentModel,
) -> Result<f64> {
    let lambda2 = model.lambda2.ok_or(FragError::PhaseMismatch {
        required: "Periodic",
        actual: "no lambda2 in moment model",
    })?;
    let raw = ensemble.raw.as_ref().ok_or(FragError::RawValuesMissing)?;
    let x = ensemble.x;
    let sigma2 = lambda2.re;
    let tau2 = lambda2.im.abs();
    let scale = x.powf(sigma2);
    let rescaled: Vec<f64> = raw
        .iter()
        .map(|&n| (n - x / model.alpha) / scale)
        .collect();
    let rotation = (Complex64::i() * tau2 * x.ln()).exp();
    let target: Vec<f64> = fixed_point
        .samples
        .iter()
        .map(|z| (z * rotation).re)
        .collect();
    Ok(wasserstein::w2(&rescaled, &target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::SplitLaw;
    use crate::spectral::{classify_phase, find_roots, mean_expansion};
    use num_complex::Complex64 as C;

    fn quad9_lambda2() -> C {
        let theta = 2.0 * std::f64::consts::PI / 9.0;
        2.0 * C::new(theta.cos(), theta.sin()) - 1.0
    }

    #[test]
    fn certificate_values() {
        // xi = phi(2 sigma_2) < 1 whenever sigma_2 > 1/2 (phi decreasing, phi(1) = 1).
        let law = SplitLaw::quad_split(9).unwrap();
        let l2 = quad9_lambda2();
        let cert = contraction_certificate(&law, l2).unwrap();
        let sigma2 = l2.re;
        let expected = (2.0 / (1.0 + 2.0 * sigma2)).powi(9);
        assert!((cert.xi - expected).abs() < 1e-12);
        assert!(cert.xi < 1.0);
        assert!((cert.lipschitz_bound - cert.xi.sqrt()).abs() < 1e-15);

        // mary(27) in the periodic phase has a valid certificate too.
        let mary = SplitLaw::mary_uniform(27).unwrap();
        let spec = find_roots(&mary, 0.05, 60.0, 1e-10).unwrap();
        let rep = classify_phase(&mary, &spec);
        let cert27 = contraction_certificate(&mary, rep.lambda2.unwrap()).unwrap();
        assert!(cert27.xi < 1.0, "xi = {}", cert27.xi);
    }

    #[test]
    fn certificate_rejects_subcritical() {
        // For binary, lambda2 would sit at Re <= 1/2 where phi(2 Re) >= 1.
        let law = SplitLaw::binary_uniform();
        assert!(matches!(
            contraction_certificate(&law, C::new(0.4, 1.0)),
            Err(FragError::InvalidCertificate { .. })
        ));
    }

    #[test]
    fn apply_t_preserves_mean_of_point_mass() {
        let law = SplitLaw::quad_split(9).unwrap();
        let l2 = quad9_lambda2();
        let gamma = C::new(0.3, -0.15);
        let m0 = EmpiricalComplexMeasure::point_mass(gamma, 50_000);
        let m1 = apply_t(&m0, &law, l2, 99);
        assert_eq!(m1.generation, 1);
        // E out = gamma * phi(lambda2) = gamma.
        let spread = (m1.second_abs_moment() / m1.samples.len() as f64).sqrt();
        assert!(
            (m1.mean() - gamma).norm() <= 4.0 * spread + 1e-3,
            "mean {} vs {gamma}",
            m1.mean()
        );
    }

    #[test]
    fn apply_t_second_moment_vs_enumeration() {
        // Deterministic split law and artificial lambda2: E|out|^2 over the
        // with-replacement resampling enumerates exactly.
        let law = SplitLaw::deterministic(vec![0.3, 0.7]).unwrap();
        let l2 = C::new(0.8, 1.1);
        let zs = [
            C::new(1.0, 0.0),
            C::new(-0.5, 0.7),
            C::new(0.2, -1.3),
            C::new(0.0, 0.4),
        ];
        let m = zs.len();
        let w: Vec<C> = [0.3f64, 0.7]
            .iter()
            .map(|v| (l2 * v.ln()).exp())
            .collect();
        // Brute force over all m^2 index pairs.
        let mut exact = 0.0;
        for i1 in 0..m {
            for i2 in 0..m {
                exact += (w[0] * zs[i1] + w[1] * zs[i2]).norm_sqr();
            }
        }
        exact /= (m * m) as f64;
        let measure = EmpiricalComplexMeasure {
            samples: zs.to_vec(),
            declared_mean: C::new(0.0, 0.0),
            generation: 0,
        };
        let out = apply_t(&measure, &law, l2, 7);
        let got = out.second_abs_moment();
        // 3 standard errors of the empirical second moment.
        let n = out.samples.len() as f64;
        let var: f64 = out
            .samples
            .iter()
            .map(|z| (z.norm_sqr() - got).powi(2))
            .sum::<f64>()
            / n;
        assert!(
            (got - exact).abs() <= 3.0 * (var / n).sqrt(),
            "{got} vs exact {exact}"
        );
    }

    #[test]
    fn iterate_mean_and_second_moment_oracle() {
        let law = SplitLaw::quad_split(9).unwrap();
        let spec = find_roots(&law, 0.05, 60.0, 1e-10).unwrap();
        let model = mean_expansion(&law, &spec).unwrap();
        let gamma = model.gamma.unwrap();
        let l2 = model.lambda2.unwrap();
        let n = 60_000;
        let (fp, diag) =
            iterate_to_fixed_point(&law, l2, gamma, n, 60, 5e-4, 2025).unwrap();
        assert!(diag.converged);
        // Mean pinned to gamma by recentring.
        assert!((fp.mean() - gamma).norm() < 1e-12);
        // Analytic second moments as oracle.
        let (abs2, sq) = fixed_point_second_moments(&law, l2, gamma).unwrap();
        let spread = fp.samples.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>() / n as f64;
        let se_abs2 = ((spread - abs2 * abs2).max(0.0) / n as f64).sqrt();
        assert!(
            (fp.second_abs_moment() - abs2).abs() <= 3.0 * se_abs2 + 0.02 * abs2,
            "E|Z|^2 = {} vs oracle {abs2}",
            fp.second_abs_moment()
        );
        assert!(
            (fp.second_moment() - sq).norm() <= 0.05 * sq.norm() + 3.0 * se_abs2,
            "E Z^2 = {} vs oracle {sq}",
            fp.second_moment()
        );
    }

    #[test]
    fn contraction_witness_shrinks_at_rate_sqrt_xi() {
        let law = SplitLaw::quad_split(9).unwrap();
        let l2 = quad9_lambda2();
        let gamma = {
            let spec = find_roots(&law, 0.05, 60.0, 1e-10).unwrap();
            mean_expansion(&law, &spec).unwrap().gamma.unwrap()
        };
        let (_, diag) = iterate_to_fixed_point(&law, l2, gamma, 40_000, 60, 5e-4, 31).unwrap();
        let rate = diag.xi.sqrt();
        // Uniformly over g >= 2 with Monte Carlo slack.
        for w in diag.contraction_witness.windows(2).skip(1) {
            if w[0] < 1e-6 {
                continue;
            }
            assert!(
                w[1] <= w[0] * (rate + 0.12),
                "witness grew: {} -> {} (sqrt xi = {rate:.4})",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn doubling_samples_shrinks_jitter() {
        // Monte Carlo scaling of the second-moment jitter across seeds.
        let law = SplitLaw::quad_split(9).unwrap();
        let l2 = quad9_lambda2();
        let gamma = C::new(0.28, -0.15);
        let spread = |n: usize| {
            let vals: Vec<f64> = (0..6)
                .map(|s| {
                    let (fp, _) =
                        iterate_to_fixed_point(&law, l2, gamma, n, 60, 1e-3, 100 + s).unwrap();
                    fp.second_abs_moment()
                })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt()
        };
        let s1 = spread(2_000);
        let s2 = spread(8_000);
        // Quadrupling n should halve the jitter, within generous slack.
        assert!(
            s2 < s1 * 0.85 + 1e-4,
            "jitter did not shrink: {s1} -> {s2}"
        );
    }

    #[test]
    fn conjugation_equivariance() {
        let law = SplitLaw::quad_split(9).unwrap();
        let l2 = quad9_lambda2();
        let gamma = C::new(0.3, -0.12);
        let (fp_a, _) = iterate_to_fixed_point(&law, l2, gamma, 30_000, 60, 1e-3, 55).unwrap();
        let (fp_b, _) =
            iterate_to_fixed_point(&law, l2.conj(), gamma.conj(), 30_000, 60, 1e-3, 55).unwrap();
        // The conjugate pipeline yields the conjugate distribution: compare moments.
        assert!((fp_a.mean() - fp_b.mean().conj()).norm() < 1e-12);
        let rel = (fp_a.second_abs_moment() - fp_b.second_abs_moment()).abs()
            / fp_a.second_abs_moment();
        assert!(rel < 0.05, "E|Z|^2 differ by {rel}");
        assert!(
            (fp_a.second_moment() - fp_b.second_moment().conj()).norm()
                < 0.05 * fp_a.second_moment().norm()
        );
    }

    #[test]
    fn distance_to_self_is_zero() {
        use crate::simulate::ensemble;
        let law = SplitLaw::quad_split(9).unwrap();
        let spec = find_roots(&law, 0.05, 60.0, 1e-10).unwrap();
        let model = mean_expansion(&law, &spec).unwrap();
        let ens = ensemble(&law, 40.0, 500, 3, true).unwrap();
        // Build a "fixed point" whose rotated real parts replicate the rescaled
        // sample exactly: distance must vanish.
        let l2 = model.lambda2.unwrap();
        let rot = (C::i() * l2.im.abs() * ens.x.ln()).exp();
        let fp = EmpiricalComplexMeasure {
            samples: ens
                .raw
                .as_ref()
                .unwrap()
                .iter()
                .map(|&nv| {
                    let r = (nv - ens.x / model.alpha) / ens.x.powf(l2.re);
                    C::new(r, 0.0) / rot
                })
                .collect(),
            declared_mean: model.gamma.unwrap(),
            generation: 1,
        };
        let d = periodic_limit_distance(&ens, &fp, &model).unwrap();
        assert!(d < 1e-12, "distance {d}");
    }

    #[test]
    fn normal_phase_rejected() {
        use crate::simulate::ensemble;
        let law = SplitLaw::binary_uniform();
        let spec = find_roots(&law, 0.05, 50.0, 1e-10).unwrap();
        let model = mean_expansion(&law, &spec).unwrap();
        let ens = ensemble(&law, 10.0, 100, 1, true).unwrap();
        let fp = EmpiricalComplexMeasure::point_mass(C::new(0.0, 0.0), 100);
        assert!(matches!(
            periodic_limit_distance(&ens, &fp, &model),
            Err(FragError::PhaseMismatch { .. })
        ));
    }
}
