//! Complex special functions: log-gamma, digamma, beta.
//!
//! The split-law transforms need `Gamma` ratios and `psi0 = Gamma'/Gamma` at
//! complex arguments, which no common crate provides; the real-argument cases
//! are delegated to `statrs` in the callers where possible.
//!
//! All callers exponentiate `ln_gamma` differences, so the imaginary part is
//! only meaningful modulo `2*pi` and no branch tracking is attempted.

use num_complex::Complex64;

const LANCZOS_G: f64 = 7.0;
// Lanczos coefficients for g = 7, n = 9 (Godfrey's table, as used by Boost and SciPy).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_2PI_HALF: f64 = 0.918_938_533_204_672_7; // ln(2*pi)/2

/// `ln Gamma(z)` for complex `z` off the poles `0, -1, -2, ...`.
pub fn ln_gamma(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        // Reflection: ln Gamma(z) = ln(pi / sin(pi z)) - ln Gamma(1 - z).
        let pi = std::f64::consts::PI;
        return Complex64::new(pi.ln(), 0.0) - ln_sin_pi(z) - ln_gamma(Complex64::new(1.0, 0.0) - z);
    }
    let zm1 = z - 1.0;
    let mut acc = Complex64::new(LANCZOS[0], 0.0);
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (zm1 + i as f64);
    }
    let t = zm1 + LANCZOS_G + 0.5;
    LN_2PI_HALF + (zm1 + 0.5) * t.ln() - t + acc.ln()
}

/// `ln sin(pi z)`, stable for large `|Im z|`.
fn ln_sin_pi(z: Complex64) -> Complex64 {
    let pi = std::f64::consts::PI;
    if z.im >= 0.0 {
        // sin(pi z) = e^{-i pi z} (e^{2 i pi z} - 1) / (2i) with |e^{2 i pi z}| <= 1.
        let w = (Complex64::i() * 2.0 * pi * z).exp();
        (-Complex64::i() * pi * z) + (w - 1.0).ln() - Complex64::new(2.0f64.ln(), pi / 2.0)
    } else {
        ln_sin_pi(z.conj()).conj()
    }
}

/// Digamma `psi0(z) = Gamma'(z)/Gamma(z)` for complex `z` off the poles.
pub fn digamma(z: Complex64) -> Complex64 {
    let pi = std::f64::consts::PI;
    if z.re < 0.5 {
        // psi0(z) = psi0(1 - z) - pi cot(pi z)
        return digamma(Complex64::new(1.0, 0.0) - z) - pi * cot_pi(z);
    }
    let mut z = z;
    let mut shift = Complex64::new(0.0, 0.0);
    while z.re < 8.0 {
        shift -= 1.0 / z;
        z += 1.0;
    }
    // Asymptotic series: psi0(z) ~ ln z - 1/(2z) - sum B_{2n} / (2n z^{2n}).
    let inv2 = 1.0 / (z * z);
    let coeffs = [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ];
    let mut series = Complex64::new(0.0, 0.0);
    let mut p = inv2;
    for c in coeffs {
        series += c * p;
        p *= inv2;
    }
    shift + z.ln() - 0.5 / z - series
}

/// `cot(pi z)`, stable for large `|Im z|`.
fn cot_pi(z: Complex64) -> Complex64 {
    let pi = std::f64::consts::PI;
    if z.im > 0.0 {
        let w = (Complex64::i() * 2.0 * pi * z).exp();
        Complex64::i() * (w + 1.0) / (w - 1.0)
    } else if z.im < 0.0 {
        cot_pi(z.conj()).conj()
    } else {
        let (s, c) = (pi * z.re).sin_cos();
        Complex64::new(c / s, 0.0)
    }
}

/// `ln B(a, b) = ln Gamma(a) + ln Gamma(b) - ln Gamma(a + b)`.
pub fn ln_beta(a: Complex64, b: Complex64) -> Complex64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Euler beta function of complex arguments.
pub fn beta(a: Complex64, b: Complex64) -> Complex64 {
    ln_beta(a, b).exp()
}
