//! Spectrum of the characteristic equation `phi(lambda) = 1` and the constants
//! of the moment asymptotics.
//!
//! The root set in a strip `{delta <= Re z <= 1, |Im z| <= imag_bound}` decides
//! the phase of the limit law of `N(x)`:
//!
//! * `Re lambda_2 < 1/2`  — Normal: `Var N(x) ~ beta x`, Gaussian limit;
//! * `Re lambda_2 = 1/2`  — CriticalLine: `Var N(x) ~ beta x ln x`, Gaussian limit;
//! * `Re lambda_2 > 1/2`  — Periodic: mean and variance carry oscillating
//!   `x^{lambda_2}` terms and the limit is non-normal.
//!
//! Rational `phi` goes through a companion matrix; everything else through
//! argument-principle winding counts with recursive bisection. Both paths end
//! in Newton refinement with residual certificates.

use crate::error::FragError;
use crate::law::{Family, SplitLaw};
use crate::quad;
use crate::rng::SplitMix64;
use crate::transforms::{phi, phi_prime, psi, Method};
use crate::Result;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_IMAG_BOUND: f64 = 60.0;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Threshold on `|phi'(lambda)|` below which a root is flagged as ill-conditioned.
pub const SIMPLICITY_FLOOR: f64 = 1e-8;

/// One certified root of `phi(lambda) = 1`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Root {
    pub lambda: Complex64,
    pub multiplicity: u32,
    /// `|phi(lambda) - 1|` at the refined location.
    pub residual: f64,
    pub phi_prime: Complex64,
    /// Multiplicity 1 and `|phi'|` above [`SIMPLICITY_FLOOR`].
    pub simple: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RootMethod {
    CompanionMatrix,
    ArgumentPrinciple,
}

/// All roots of the characteristic equation in a strip, sorted by decreasing
/// real part (ties by increasing `|Im|`, positive imaginary part first).
#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    pub roots: Vec<Root>,
    pub delta: f64,
    pub imag_bound: f64,
    pub tol: f64,
    pub method: RootMethod,
    /// For rational `phi`: every root in the complex plane (needed for the
    /// exact mean formula and the rational variance constant).
    pub all_roots: Option<Vec<Root>>,
}

impl Spectrum {
    /// The root at 1 (always present; construction fails otherwise).
    pub fn lambda1(&self) -> &Root {
        self.roots
            .iter()
            .find(|r| (r.lambda - 1.0).norm() < 1e-6)
            .expect("spectrum certified to contain lambda_1 = 1")
    }

    /// Strip roots other than `lambda_1`.
    pub fn secondary_roots(&self) -> Vec<&Root> {
        self.roots
            .iter()
            .filter(|r| (r.lambda - 1.0).norm() >= 1e-6)
            .collect()
    }
}

fn sort_roots(roots: &mut [Root]) {
    roots.sort_by(|a, b| {
        b.lambda
            .re
            .partial_cmp(&a.lambda.re)
            .unwrap()
            .then(a.lambda.im.abs().partial_cmp(&b.lambda.im.abs()).unwrap())
            .then(b.lambda.im.partial_cmp(&a.lambda.im).unwrap())
    });
}

/// Locate all roots of `phi(lambda) = 1` with `delta <= Re lambda <= 1` and
/// `|Im lambda| <= imag_bound`, refined until `|phi(lambda) - 1| <= tol`.
pub fn find_roots(law: &SplitLaw, delta: f64, imag_bound: f64, tol: f64) -> Result<Spectrum> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(FragError::Config(format!(
            "root strip requires 0 < delta < 1, got {delta}"
        )));
    }
    let (mut roots, method, all_roots) = match rational_char_poly(law) {
        Some(poly) => {
            let all = companion_path(law, &poly, tol)?;
            let strip: Vec<Root> = all
                .iter()
                .filter(|r| {
                    r.lambda.re >= delta - 1e-12
                        && r.lambda.re <= 1.0 + 1e-9
                        && r.lambda.im.abs() <= imag_bound
                })
                .cloned()
                .collect();
            (strip, RootMethod::CompanionMatrix, Some(all))
        }
        None => {
            let strip = argument_principle_path(law, delta, imag_bound, tol)?;
            (strip, RootMethod::ArgumentPrinciple, None)
        }
    };
    sort_roots(&mut roots);
    // lambda_1 = 1 must always be present with a tight residual.
    let l1 = roots
        .iter()
        .find(|r| (r.lambda - 1.0).norm() < 1e-6)
        .ok_or(FragError::CountMismatch {
            expected: 1,
            found: 0,
        })?;
    if l1.residual > 1e-10 {
        return Err(FragError::QuadratureFailure {
            value: 1.0,
            error: l1.residual,
        });
    }
    Ok(Spectrum {
        roots,
        delta,
        imag_bound,
        tol,
        method,
        all_roots,
    })
}

/// Monic polynomial (ascending coefficients) whose roots coincide with the
/// roots of `phi(lambda) = 1`, for the rational families.
///
/// Denominator-clearing can introduce spurious roots at poles of `phi`; the
/// companion path filters those by residual before refinement.
fn rational_char_poly(law: &SplitLaw) -> Option<Vec<f64>> {
    match law.family() {
        Family::BinaryUniform => Some(vec![-1.0, 1.0]), // (z + 1) - 2
        Family::MaryUniform { m } => mary_poly(*m),
        Family::SimplexSplit { d } => mary_poly(*d + 1),
        Family::QuadSplit { d } => {
            // (1 + z)^d - 2^d
            let d = *d as usize;
            let mut coeffs = vec![0.0; d + 1];
            let mut binom = 1.0f64;
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c = binom;
                binom = binom * (d - k) as f64 / (k + 1) as f64;
            }
            coeffs[0] -= (2.0f64).powi(d as i32);
            Some(coeffs)
        }
        // Beta(a, 1) with integer a: phi(z) = 1 is z (z+1) ... (z+a-1) = a!.
        Family::Beta { a, a_prime } if *a_prime == 1.0 && a.fract() == 0.0 && *a >= 2.0 && *a <= 150.0 => {
            let a = *a as u32;
            let mut coeffs = vec![1.0];
            for k in 0..a {
                coeffs = poly_mul_linear(&coeffs, k as f64);
            }
            let fact: f64 = (1..=a as u64).product::<u64>() as f64;
            coeffs[0] -= fact;
            Some(coeffs)
        }
        _ => None,
    }
}

fn mary_poly(m: u32) -> Option<Vec<f64>> {
    if !(2..=150).contains(&m) {
        return None; // coefficients overflow f64 far above this
    }
    // prod_{k=1}^{m-1} (z + k) - m!
    let mut coeffs = vec![1.0];
    for k in 1..m {
        coeffs = poly_mul_linear(&coeffs, k as f64);
    }
    let fact: f64 = (1..=m as u128).product::<u128>() as f64;
    coeffs[0] -= fact;
    Some(coeffs)
}

/// Multiply ascending-coefficient poly by `(z + c)`.
fn poly_mul_linear(coeffs: &[f64], c: f64) -> Vec<f64> {
    let mut out = vec![0.0; coeffs.len() + 1];
    for (i, &a) in coeffs.iter().enumerate() {
        out[i] += a * c;
        out[i + 1] += a;
    }
    out
}

/// Eigenvalues of the companion matrix of a monic polynomial.
fn companion_eigenvalues(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    debug_assert!((coeffs[n] - 1.0).abs() < 1e-12, "polynomial must be monic");
    if n == 1 {
        return vec![Complex64::new(-coeffs[0], 0.0)];
    }
    let mat = DMatrix::<f64>::from_fn(n, n, |i, j| {
        if j == n - 1 {
            -coeffs[i]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    mat.complex_eigenvalues().iter().cloned().collect()
}

fn companion_path(law: &SplitLaw, poly: &[f64], tol: f64) -> Result<Vec<Root>> {
    let eigen = companion_eigenvalues(poly);
    let mut refined: Vec<Complex64> = Vec::new();
    for z0 in eigen {
        // Spurious companion roots (from clearing denominators) sit at poles of
        // phi; there the residual is huge and Newton has nothing to refine.
        let near_one = match phi(law, z0) {
            Ok(v) => (v.value - 1.0).norm() < 0.5,
            Err(_) => false,
        };
        if !near_one {
            continue;
        }
        if let Some(z) = newton(law, z0, tol) {
            refined.push(z);
        }
    }
    Ok(certify(law, refined, tol))
}

/// Newton iteration on `phi(z) - 1`; returns the converged point.
fn newton(law: &SplitLaw, mut z: Complex64, tol: f64) -> Option<Complex64> {
    for _ in 0..80 {
        let f = phi(law, z).ok()?.value - 1.0;
        if f.norm() < tol * 1e-3 {
            return Some(z);
        }
        let df = phi_prime(law, z).ok()?.value;
        if df.norm() < 1e-14 {
            return None;
        }
        let step = f / df;
        z -= step;
        if step.norm() < 1e-14 * (1.0 + z.norm()) {
            return Some(z);
        }
    }
    let f = phi(law, z).ok()?.value - 1.0;
    (f.norm() < tol).then_some(z)
}

/// Cluster refined points, certify residuals and conjugate symmetry.
fn certify(law: &SplitLaw, mut points: Vec<Complex64>, tol: f64) -> Vec<Root> {
    // Snap near-real roots and enforce exact conjugate pairing.
    for z in points.iter_mut() {
        if z.im.abs() < 1e-9 {
            z.im = 0.0;
        }
    }
    let mut clusters: Vec<(Complex64, u32)> = Vec::new();
    'outer: for z in points {
        for (c, mult) in clusters.iter_mut() {
            if (*c - z).norm() < 1e-7 {
                *mult += 1;
                continue 'outer;
            }
        }
        clusters.push((z, 1));
    }
    clusters
        .into_iter()
        .filter_map(|(z, mult)| {
            let residual = (phi(law, z).ok()?.value - 1.0).norm();
            if residual > tol {
                return None;
            }
            let dp = phi_prime(law, z).ok()?.value;
            Some(Root {
                lambda: z,
                multiplicity: mult,
                residual,
                phi_prime: dp,
                simple: mult == 1 && dp.norm() > SIMPLICITY_FLOOR,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    re_lo: f64,
    re_hi: f64,
    im_lo: f64,
    im_hi: f64,
}

impl Rect {
    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re_lo, self.im_lo),
            Complex64::new(self.re_hi, self.im_lo),
            Complex64::new(self.re_hi, self.im_hi),
            Complex64::new(self.re_lo, self.im_hi),
        ]
    }

    fn center(&self) -> Complex64 {
        Complex64::new(
            0.5 * (self.re_lo + self.re_hi),
            0.5 * (self.im_lo + self.im_hi),
        )
    }

    fn diameter(&self) -> f64 {
        ((self.re_hi - self.re_lo).powi(2) + (self.im_hi - self.im_lo).powi(2)).sqrt()
    }

    fn contains(&self, z: Complex64, margin: f64) -> bool {
        z.re >= self.re_lo - margin
            && z.re <= self.re_hi + margin
            && z.im >= self.im_lo - margin
            && z.im <= self.im_hi + margin
    }
}

/// Winding number of `phi(z) - 1` along a rectangle boundary.
///
/// Trapezoid phase tracking starting at 512 points per edge, doubled until the
/// winding stabilises to an integer within 0.25. Fails if `phi - 1` vanishes
/// on the contour (the caller then nudges the rectangle).
fn winding_rect(law: &SplitLaw, rect: &Rect) -> Result<i64> {
    let corners = rect.corners();
    let mut pts_per_edge = 512usize;
    let mut prev: Option<i64> = None;
    for _ in 0..6 {
        let mut total_arg = 0.0f64;
        let mut ok = true;
        'edges: for e in 0..4 {
            let z0 = corners[e];
            let z1 = corners[(e + 1) % 4];
            let mut f_prev = phi(law, z0)?.value - 1.0;
            if f_prev.norm() < 1e-12 {
                return Err(FragError::WindingUnstable(0));
            }
            for i in 1..=pts_per_edge {
                let t = i as f64 / pts_per_edge as f64;
                let z = z0 + (z1 - z0) * t;
                let f = phi(law, z)?.value - 1.0;
                if f.norm() < 1e-12 {
                    return Err(FragError::WindingUnstable(0));
                }
                let step = (f / f_prev).arg();
                if step.abs() > std::f64::consts::FRAC_PI_2 {
                    // Phase jump too coarse to trust; try a finer contour.
                    ok = false;
                    break 'edges;
                }
                total_arg += step;
                f_prev = f;
            }
        }
        if ok {
            let w = total_arg / (2.0 * std::f64::consts::PI);
            let rounded = w.round() as i64;
            if (w - rounded as f64).abs() < 0.25 {
                if prev == Some(rounded) {
                    return Ok(rounded);
                }
                prev = Some(rounded);
            } else {
                prev = None;
            }
        }
        pts_per_edge *= 2;
    }
    Err(FragError::WindingUnstable(6))
}

/// Winding number of `phi - 1` on a circle (multiplicity certificate).
fn winding_circle(law: &SplitLaw, center: Complex64, radius: f64) -> Result<i64> {
    let n = 256;
    let mut total = 0.0;
    let mut f_prev = phi(law, center + radius)?.value - 1.0;
    for i in 1..=n {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let z = center + radius * Complex64::new(theta.cos(), theta.sin());
        let f = phi(law, z)?.value - 1.0;
        if f.norm() < 1e-13 {
            return Err(FragError::WindingUnstable(0));
        }
        total += (f / f_prev).arg();
        f_prev = f;
    }
    Ok((total / (2.0 * std::f64::consts::PI)).round() as i64)
}

fn argument_principle_path(
    law: &SplitLaw,
    delta: f64,
    imag_bound: f64,
    tol: f64,
) -> Result<Vec<Root>> {
    // Right edge at 1.25: every root satisfies Re <= 1, and lambda_1 = 1 must
    // not sit on the contour. Small irrational-ish nudges keep lattice root
    // ladders off the top and bottom edges.
    let mut rect = Rect {
        re_lo: delta,
        re_hi: 1.25,
        im_lo: -imag_bound - 7.3e-4,
        im_hi: imag_bound + 7.3e-4,
    };
    let mut expected = None;
    for _ in 0..5 {
        match winding_rect(law, &rect) {
            Ok(w) => {
                expected = Some(w);
                break;
            }
            Err(FragError::WindingUnstable(_)) => {
                rect.re_lo = (rect.re_lo - 3.1e-4).max(1e-6);
                rect.im_lo -= 5.7e-4;
                rect.im_hi += 5.7e-4;
            }
            Err(e) => return Err(e),
        }
    }
    let expected = expected.ok_or(FragError::WindingUnstable(5))?;
    let mut found: Vec<(Complex64, u32)> = Vec::new();
    isolate(law, rect, expected, tol, 0, &mut found)?;
    let total: u32 = found.iter().map(|f| f.1).sum();
    if total as i64 != expected {
        return Err(FragError::CountMismatch {
            expected,
            found: total as usize,
        });
    }
    let mut points = Vec::new();
    for (z, mult) in found {
        for _ in 0..mult {
            points.push(z);
        }
    }
    let roots = certify(law, points, tol);
    let strip: Vec<Root> = roots
        .into_iter()
        .filter(|r| r.lambda.im.abs() <= imag_bound && r.lambda.re >= delta - 1e-12)
        .collect();
    Ok(strip)
}

/// Recursively bisect `rect` (known winding `count`) until each cell isolates
/// one root, then polish with Newton.
fn isolate(
    law: &SplitLaw,
    rect: Rect,
    count: i64,
    tol: f64,
    depth: u32,
    out: &mut Vec<(Complex64, u32)>,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    if depth > 60 {
        return Err(FragError::WindingUnstable(depth as usize));
    }
    if count == 1 || rect.diameter() < 1e-6 {
        if let Some(z) = newton(law, rect.center(), tol) {
            if rect.contains(z, 2.0 * rect.diameter()) {
                out.push((z, count as u32));
                return Ok(());
            }
        }
        // Newton failed from the centre; fall through to split further unless
        // the cell is already tiny.
        if rect.diameter() < 1e-9 {
            return Err(FragError::WindingUnstable(depth as usize));
        }
    }
    let split_re = rect.re_hi - rect.re_lo >= rect.im_hi - rect.im_lo;
    // Retry with shifted split fractions if a root sits on the split line.
    for frac in [0.5, 0.53, 0.47, 0.59, 0.41] {
        let (a, b) = if split_re {
            let mid = rect.re_lo + frac * (rect.re_hi - rect.re_lo);
            (
                Rect { re_hi: mid, ..rect },
                Rect { re_lo: mid, ..rect },
            )
        } else {
            let mid = rect.im_lo + frac * (rect.im_hi - rect.im_lo);
            (
                Rect { im_hi: mid, ..rect },
                Rect { im_lo: mid, ..rect },
            )
        };
        let wa = match winding_rect(law, &a) {
            Ok(w) => w,
            Err(FragError::WindingUnstable(_)) => continue,
            Err(e) => return Err(e),
        };
        let wb = match winding_rect(law, &b) {
            Ok(w) => w,
            Err(FragError::WindingUnstable(_)) => continue,
            Err(e) => return Err(e),
        };
        if wa + wb != count {
            continue;
        }
        isolate(law, a, wa, tol, depth + 1, out)?;
        isolate(law, b, wb, tol, depth + 1, out)?;
        return Ok(());
    }
    Err(FragError::WindingUnstable(depth as usize))
}

/// Phase of the limit law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Normal,
    CriticalLine,
    Periodic,
    Degenerate,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Normal => "Normal",
            Phase::CriticalLine => "CriticalLine",
            Phase::Periodic => "Periodic",
            Phase::Degenerate => "Degenerate",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub lambda2: Option<Complex64>,
    /// `Re lambda_2`.
    pub sigma2: Option<f64>,
    /// `Im lambda_2 > 0`.
    pub tau2: Option<f64>,
    /// `sigma2 - 1/2`; tiny values flag a law near the phase boundary.
    pub boundary_margin: Option<f64>,
    /// Roots sharing the deciding vertical line, with simplicity certificates.
    pub line_roots: Vec<(Complex64, bool)>,
    pub tol: f64,
}

/// Classify the phase from a computed spectrum.
///
/// `Degenerate` is returned when a deciding root is not certifiably simple, or
/// when extra roots sit on `Re = 1` (the lattice signature) so that the phase
/// machinery does not apply.
pub fn classify_phase(law: &SplitLaw, spec: &Spectrum) -> PhaseReport {
    let tol = 1e-9f64.max(10.0 * spec.roots.iter().map(|r| r.residual).fold(0.0, f64::max));
    let secondary = spec.secondary_roots();
    if secondary.is_empty() {
        return PhaseReport {
            phase: Phase::Normal,
            lambda2: None,
            sigma2: None,
            tau2: None,
            boundary_margin: None,
            line_roots: Vec::new(),
            tol,
        };
    }
    let sigma2 = secondary
        .iter()
        .map(|r| r.lambda.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let line_roots: Vec<&Root> = secondary
        .iter()
        .filter(|r| (r.lambda.re - sigma2).abs() <= tol)
        .cloned()
        .collect();
    let mut certified = Vec::new();
    let mut all_simple = true;
    for r in &line_roots {
        let mut simple = r.simple;
        if simple {
            // Multiplicity-1 winding on a small circle, when computable.
            if let Ok(w) = winding_circle(law, r.lambda, 1e-4) {
                simple = w == 1;
            }
        }
        all_simple &= simple;
        certified.push((r.lambda, simple));
    }
    let representative = line_roots
        .iter()
        .filter(|r| r.lambda.im > 0.0)
        .min_by(|a, b| a.lambda.im.partial_cmp(&b.lambda.im).unwrap())
        .copied()
        .or_else(|| line_roots.first().copied());
    let lambda2 = representative.map(|r| r.lambda);
    let phase = if sigma2 >= 1.0 - 1e-9 {
        Phase::Degenerate
    } else if !all_simple {
        Phase::Degenerate
    } else if sigma2 < 0.5 - tol {
        Phase::Normal
    } else if sigma2 <= 0.5 + tol {
        Phase::CriticalLine
    } else {
        Phase::Periodic
    };
    PhaseReport {
        phase,
        lambda2,
        sigma2: Some(sigma2),
        tau2: lambda2.map(|l| l.im.abs()),
        boundary_margin: Some(sigma2 - 0.5),
        line_roots: certified,
        tol,
    }
}

/// A variance (or mean-error) constant together with its provenance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BetaEstimate {
    pub value: f64,
    pub error_bound: f64,
    pub method: Method,
}

/// Coefficients of the mean expansion `m(x) = sum_i a_i x^{lambda_i} (+ a_0)`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentModel {
    /// `alpha = -phi'(1)`, the expected entropy of the split vector.
    pub alpha: f64,
    /// `a_i = -1 / (lambda_i phi'(lambda_i))` for the strip roots.
    pub coeffs: Vec<(Complex64, Complex64)>,
    /// For rational `phi`: coefficients over every complex root, making the
    /// expansion exact for `x >= 1`.
    pub exact_coeffs: Option<Vec<(Complex64, Complex64)>>,
    /// `a_0 = -1/(phi(0) - 1)` (rational case only).
    pub a0: Option<f64>,
    /// Second root (positive imaginary part) in the Periodic phase.
    pub lambda2: Option<Complex64>,
    /// Oscillation amplitude `gamma = 2 a_2` (Periodic phase, single conjugate pair).
    pub gamma: Option<Complex64>,
    /// Mean-error exponent, defaulting to the midpoint of `(1/2, sigma2)`.
    pub kappa: Option<f64>,
    pub beta: Option<BetaEstimate>,
}

impl MomentModel {
    /// Evaluate the mean expansion at `x >= 1`. Exact for rational `phi`,
    /// otherwise the sum of the strip terms.
    pub fn mean(&self, x: f64) -> f64 {
        let terms = self.exact_coeffs.as_ref().unwrap_or(&self.coeffs);
        let mut s = self.a0.unwrap_or(0.0);
        for (lambda, a) in terms {
            s += (a * (lambda * x.ln()).exp()).re;
        }
        s
    }

    /// The oscillation-free linear term `x / alpha`.
    pub fn mean_leading(&self, x: f64) -> f64 {
        x / self.alpha
    }
}

/// Build the mean expansion from a spectrum (Theorems on the mean: simple-root
/// residue coefficients; exact constant term in the rational case).
pub fn mean_expansion(law: &SplitLaw, spec: &Spectrum) -> Result<MomentModel> {
    let coeff = |r: &Root| -> Result<(Complex64, Complex64)> {
        if !r.simple {
            return Err(FragError::NonSimpleRoot {
                lambda: r.lambda,
                phi_prime_abs: r.phi_prime.norm(),
            });
        }
        Ok((r.lambda, -1.0 / (r.lambda * r.phi_prime)))
    };
    let coeffs: Vec<_> = spec.roots.iter().map(coeff).collect::<Result<_>>()?;
    let alpha = -spec.lambda1().phi_prime.re;
    let (exact_coeffs, a0) = match &spec.all_roots {
        Some(all) => {
            let ec: Vec<_> = all.iter().map(coeff).collect::<Result<_>>()?;
            let phi0 = phi(law, Complex64::new(0.0, 0.0))?.value.re;
            (Some(ec), Some(-1.0 / (phi0 - 1.0)))
        }
        None => (None, None),
    };
    let report = classify_phase(law, spec);
    let (lambda2, gamma, kappa) = if report.phase == Phase::Periodic {
        let sigma2 = report.sigma2.expect("periodic phase has sigma2");
        // gamma is defined when exactly one conjugate pair sits on the line.
        let gamma = if report.line_roots.len() == 2 {
            report.lambda2.map(|l2| {
                let (_, a2) = coeffs
                    .iter()
                    .find(|(l, _)| (*l - l2).norm() < 1e-9)
                    .expect("lambda2 is a strip root");
                2.0 * a2
            })
        } else {
            None
        };
        (report.lambda2, gamma, Some((0.5 + sigma2) / 2.0))
    } else {
        (None, None, None)
    };
    Ok(MomentModel {
        alpha,
        coeffs,
        exact_coeffs,
        a0,
        lambda2,
        gamma,
        kappa,
        beta: None,
    })
}

/// Variance constant in the Normal phase, by quadrature of
/// `psi(1/2+iu, 1/2-iu) / (|1/2+iu|^2 |1-phi(1/2+iu)|^2)` over the critical line.
pub fn beta_normal(law: &SplitLaw, spec: &Spectrum) -> Result<BetaEstimate> {
    let report = classify_phase(law, spec);
    match report.phase {
        Phase::Normal => {}
        other => {
            return Err(FragError::PhaseMismatch {
                required: "Normal",
                actual: other.name(),
            })
        }
    }
    if spec.delta >= 0.5 {
        return Err(FragError::Config(
            "variance quadrature requires the strip to start below 1/2".into(),
        ));
    }
    let alpha = -spec.lambda1().phi_prime.re;
    let b = law.parts() as f64;
    let integrand = |u: f64| -> f64 {
        let z = Complex64::new(0.5, u);
        let psi_val = psi(law, z, z.conj()).map(|v| v.value.re).unwrap_or(0.0);
        let denom = z.norm_sqr() * (1.0 - phi(law, z).map(|v| v.value).unwrap_or(z)).norm_sqr();
        psi_val / denom
    };
    // Integrand is even in u: integrate [0, U] panels, doubling U until the
    // analytic tail bound (|psi| <= 2 b^2 over |z|^2 |1-phi|^2) is negligible.
    let mut value = 0.0;
    let mut error = 0.0;
    let mut u_hi = 8.0;
    let mut u_lo = 0.0;
    let mut tail;
    loop {
        let (v, e) = quad::integrate(integrand, u_lo, u_hi, 1e-13, 1e-10, 4000);
        value += v;
        error += e;
        // sup |phi(1/2+iu)| for u >= u_hi: probe grid with a safety factor,
        // sharpened by the exact envelope for the rational families.
        let mut sup = (0..=64)
            .map(|k| {
                let u = u_hi * (1.0 + k as f64 / 8.0);
                phi(law, Complex64::new(0.5, u)).map(|v| v.value.norm()).unwrap_or(1.0)
            })
            .fold(0.0, f64::max)
            * 1.25;
        if let Family::QuadSplit { d } = law.family() {
            sup = sup.min((2.0 / (2.25 + u_hi * u_hi).sqrt()).powi(*d as i32));
        }
        if matches!(law.family(), Family::BinaryUniform) {
            sup = sup.min(2.0 / (2.25 + u_hi * u_hi).sqrt());
        }
        if sup < 0.9 {
            let tail_integral = 2.0 * (std::f64::consts::FRAC_PI_2 - (2.0 * u_hi).atan());
            tail = 2.0 * b * b / (1.0 - sup).powi(2) * tail_integral;
            if tail < 1e-6 * value.abs() || u_hi > 1e9 {
                break;
            }
        } else {
            tail = f64::INFINITY;
        }
        u_lo = u_hi;
        u_hi *= 2.0;
        if u_hi > 1e12 {
            return Err(FragError::QuadratureFailure {
                value,
                error: tail,
            });
        }
    }
    let beta = value / (alpha * std::f64::consts::PI);
    let error_bound = (error + tail) / (alpha * std::f64::consts::PI);
    if beta <= 0.0 {
        return Err(FragError::NonpositiveBeta(beta));
    }
    if error_bound > 0.01 * beta {
        return Err(FragError::QuadratureFailure {
            value: beta,
            error: error_bound,
        });
    }
    Ok(BetaEstimate {
        value: beta,
        error_bound,
        method: Method::Quadrature,
    })
}

/// Variance constant by the rational-`phi` closed form (four expectation
/// blocks over the complete root set).
///
/// Requires: rational `phi`, all roots simple, `Re lambda_i < 1/2` for `i >= 2`
/// and `V_j > 0` a.s. The binary-uniform law evaluates its expectations in
/// closed form; other families use `n_mc` Monte Carlo draws and report three
/// standard errors.
pub fn beta_rational(
    law: &SplitLaw,
    spec: &Spectrum,
    n_mc: usize,
    seed: u64,
) -> Result<BetaEstimate> {
    let all = spec
        .all_roots
        .as_ref()
        .ok_or_else(|| FragError::Config("beta_rational needs rational phi".into()))?;
    let alpha = -spec.lambda1().phi_prime.re;
    let b = law.parts();
    // lambda_0 = 0 with a_0 = -1/(b-1) joins the non-unit roots in the sums.
    let mut lambdas = vec![Complex64::new(0.0, 0.0)];
    let mut avec = vec![Complex64::new(-1.0 / (b as f64 - 1.0), 0.0)];
    for r in all {
        if (r.lambda - 1.0).norm() < 1e-9 {
            continue;
        }
        if !r.simple {
            return Err(FragError::NonSimpleRoot {
                lambda: r.lambda,
                phi_prime_abs: r.phi_prime.norm(),
            });
        }
        if r.lambda.re >= 0.5 {
            return Err(FragError::PhaseMismatch {
                required: "Normal (all secondary roots left of 1/2)",
                actual: "root at or right of the critical line",
            });
        }
        lambdas.push(r.lambda);
        avec.push(-1.0 / (r.lambda * r.phi_prime));
    }
    let n_roots = lambdas.len();

    // The four expectation blocks of the formula:
    // T1[i][k] = sum_{j,l} E V_j^{li} V_l^{lk} (Vj ^ Vl)^{1-li-lk},
    // T2[i]    = sum_{j,l} E (V_j^{li} V_l^{1-li} - V_l) 1{Vl <= Vj},
    // T3       = sum_{j,l} E V_l ln(V_j/V_l) 1{Vl < Vj},
    // T4       = sum_{j,l} E (Vj ^ Vl).
    // beta is affine in them:
    //   beta = sum_{ik} c_ik T1_ik + sum_i d_i T2_i + e T3 + f T4 + const.
    let zero = Complex64::new(0.0, 0.0);
    let mut c = vec![vec![zero; n_roots]; n_roots];
    let mut constant = Complex64::new(-1.0 / alpha, 0.0);
    for i in 0..n_roots {
        for k in 0..n_roots {
            let denom = 1.0 - lambdas[i] - lambdas[k];
            if denom.norm() < 1e-10 {
                return Err(FragError::VariancePole(lambdas[i] + lambdas[k]));
            }
            c[i][k] = avec[i] * avec[k] / denom / alpha;
            constant += c[i][k] * (1.0 - 2.0 * phi(law, 1.0 - lambdas[k])?.value);
        }
    }
    let mut d = vec![zero; n_roots];
    for i in 1..n_roots {
        d[i] = -2.0 / (alpha * alpha) * avec[i] / lambdas[i];
        constant += d[i] * (1.0 - phi(law, 1.0 - lambdas[i])?.value);
    }
    let e = -2.0 / (alpha * alpha) * avec[0];
    constant += e * (-alpha);
    let f = 1.0 / (alpha * alpha * alpha);
    constant += f * (-1.0);

    let (beta, mc_err) = if matches!(law.family(), Family::BinaryUniform) {
        // Closed forms: E(U ^ (1-U)) = 1/4; E U (ln(1-U) - ln U) 1{U < 1-U} = ln2/2 - 1/4.
        // With the single root lambda_1 = 1 only T1_{00} = T4 and T3 survive.
        let t4 = 1.0 + 2.0 * 0.25;
        let t3 = 2.0 * (0.5 * 2.0f64.ln() - 0.25);
        let mut beta = constant + f * t4 + e * t3;
        for row in &c {
            for &cik in row {
                beta += cik * t4;
            }
        }
        (beta, 0.0)
    } else {
        // Single Monte Carlo pass folding the affine map per sample; the mean
        // is beta and the spread gives a three-standard-error bound.
        // T1 splits per sample as Acol_k + Brow_i over the (j, l) pairs ordered
        // by which component attains the min, so sum_ik c_ik T1_ik collapses to
        // column and row contractions.
        let ca: Vec<Complex64> = (0..n_roots)
            .map(|k| (0..n_roots).map(|i| c[i][k]).sum())
            .collect();
        let cb: Vec<Complex64> = (0..n_roots)
            .map(|i| (0..n_roots).map(|k| c[i][k]).sum())
            .collect();
        let mut rng = SplitMix64::new(seed);
        let mut buf = Vec::with_capacity(law.parts());
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut sum_im = 0.0;
        for _ in 0..n_mc {
            law.sample_into(&mut rng, &mut buf);
            let mut cs = constant;
            for j in 0..buf.len() {
                for l in 0..buf.len() {
                    let (vj, vl) = (buf[j], buf[l]);
                    if vj <= vl {
                        // min = V_j: V_j (V_l/V_j)^{lambda_k}, a function of k only.
                        let lr = (vl / vj).ln();
                        for (k, lam) in lambdas.iter().enumerate() {
                            cs += ca[k] * vj * (lam * lr).exp();
                        }
                    } else {
                        let lr = (vj / vl).ln();
                        for (i, lam) in lambdas.iter().enumerate() {
                            cs += cb[i] * vl * (lam * lr).exp();
                        }
                    }
                    if vl <= vj {
                        let lr = (vj / vl).ln();
                        for (i, lam) in lambdas.iter().enumerate() {
                            cs += d[i] * vl * ((lam * lr).exp() - 1.0);
                        }
                        if vl < vj {
                            cs += e * vl * lr;
                        }
                    }
                    cs += f * vj.min(vl);
                }
            }
            sum += cs.re;
            sum_im += cs.im;
            sum_sq += cs.re * cs.re;
        }
        let n = n_mc as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        (
            Complex64::new(mean, sum_im / n),
            3.0 * (var / n).sqrt(),
        )
    };

    if beta.im.abs() > 1e-6 + mc_err {
        return Err(FragError::QuadratureFailure {
            value: beta.re,
            error: beta.im.abs(),
        });
    }
    if beta.re <= 0.0 {
        return Err(FragError::NonpositiveBeta(beta.re));
    }
    Ok(BetaEstimate {
        value: beta.re,
        error_bound: mc_err,
        method: if mc_err == 0.0 {
            Method::ClosedForm
        } else {
            Method::MonteCarlo
        },
    })
}

/// Variance constant on the critical line: `beta = sum_{Lambda(1/2)}
/// psi(lambda, conj lambda) / (alpha |lambda phi'(lambda)|^2)`, reported per
/// root so a vanishing term flags the degenerate covariance case.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalBeta {
    pub value: f64,
    pub terms: Vec<(Complex64, f64)>,
}

pub fn beta_critical(law: &SplitLaw, spec: &Spectrum) -> Result<CriticalBeta> {
    let report = classify_phase(law, spec);
    if report.phase != Phase::CriticalLine {
        return Err(FragError::PhaseMismatch {
            required: "CriticalLine",
            actual: report.phase.name(),
        });
    }
    let alpha = -spec.lambda1().phi_prime.re;
    let mut terms = Vec::new();
    let mut total = 0.0;
    for r in spec.secondary_roots() {
        if (r.lambda.re - 0.5).abs() > report.tol.max(1e-6) {
            continue;
        }
        if !r.simple {
            return Err(FragError::NonSimpleRoot {
                lambda: r.lambda,
                phi_prime_abs: r.phi_prime.norm(),
            });
        }
        let p = psi(law, r.lambda, r.lambda.conj())?;
        let term = p.value.re.max(0.0) / (alpha * (r.lambda * r.phi_prime).norm_sqr());
        terms.push((r.lambda, term));
        total += term;
    }
    Ok(CriticalBeta {
        value: total,
        terms,
    })
}

/// One term of the periodic-phase variance expansion
/// `sigma^2(x) ~ sum coeff x^{lambda_i + lambda_k}` over the `Re = sigma2` roots.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeriodicTerm {
    pub lambda_i: Complex64,
    pub lambda_k: Complex64,
    pub coeff: Complex64,
}

pub fn variance_periodic(law: &SplitLaw, spec: &Spectrum) -> Result<Vec<PeriodicTerm>> {
    let report = classify_phase(law, spec);
    if report.phase != Phase::Periodic {
        return Err(FragError::PhaseMismatch {
            required: "Periodic",
            actual: report.phase.name(),
        });
    }
    let sigma2 = report.sigma2.expect("periodic has sigma2");
    let line: Vec<&Root> = spec
        .secondary_roots()
        .into_iter()
        .filter(|r| (r.lambda.re - sigma2).abs() <= report.tol)
        .collect();
    let mut terms = Vec::new();
    for ri in &line {
        for rk in &line {
            let s = ri.lambda + rk.lambda;
            let phis = phi(law, s)?.value;
            if (phis - 1.0).norm() < 1e-10 {
                return Err(FragError::VariancePole(s));
            }
            let coeff = psi(law, ri.lambda, rk.lambda)?.value
                / (ri.lambda * rk.lambda * ri.phi_prime * rk.phi_prime * (1.0 - phis));
            terms.push(PeriodicTerm {
                lambda_i: ri.lambda,
                lambda_k: rk.lambda,
                coeff,
            });
        }
    }
    Ok(terms)
}

/// Evaluate the periodic variance prediction at `x`.
pub fn periodic_variance_value(terms: &[PeriodicTerm], x: f64) -> f64 {
    let lx = x.ln();
    terms
        .iter()
        .map(|t| (t.coeff * ((t.lambda_i + t.lambda_k) * lx).exp()).re)
        .sum()
}

/// Bisect a one-parameter family for the `Re lambda_2 = 1/2` crossing.
pub fn locate_phase_crossing<F>(make_law: F, mut lo: f64, mut hi: f64, tol_a: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<SplitLaw>,
{
    let sigma2_of = |a: f64| -> Result<f64> {
        let law = make_law(a)?;
        let spec = find_roots(&law, DEFAULT_DELTA, 40.0, DEFAULT_TOL)?;
        let report = classify_phase(&law, &spec);
        report.sigma2.ok_or_else(|| {
            FragError::Config(format!("no secondary root found at parameter {a}"))
        })
    };
    let f_lo = sigma2_of(lo)? - 0.5;
    let f_hi = sigma2_of(hi)? - 0.5;
    if f_lo.signum() == f_hi.signum() {
        return Err(FragError::Config(format!(
            "no sign change of Re lambda_2 - 1/2 on [{lo}, {hi}]"
        )));
    }
    while hi - lo > tol_a {
        let mid = 0.5 * (lo + hi);
        let f_mid = sigma2_of(mid)? - 0.5;
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
