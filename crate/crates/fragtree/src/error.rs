use num_complex::Complex64;
use thiserror::Error;

/// Errors surfaced by the fragmentation toolkit.
#[derive(Debug, Error)]
pub enum FragError {
    #[error("invalid law configuration: {0}")]
    Config(String),

    #[error("phi has a pole at z = {z}")]
    PoleOfPhi { z: Complex64 },

    #[error("transform undefined for Re z < 0 without a meromorphic extension (z = {z})")]
    Domain { z: Complex64 },

    #[error("root {lambda} is not simple (|phi'| = {phi_prime_abs:.3e})")]
    NonSimpleRoot {
        lambda: Complex64,
        phi_prime_abs: f64,
    },

    #[error("root count mismatch: winding number {expected} but {found} refined roots")]
    CountMismatch { expected: i64, found: usize },

    #[error("winding number failed to stabilise on a contour after {0} refinements")]
    WindingUnstable(usize),

    #[error("quadrature failure: error bound {error:.3e} exceeds 1% of value {value:.6e}")]
    QuadratureFailure { value: f64, error: f64 },

    #[error("computed beta is not positive ({0:.6e}); inputs degenerate or wrong phase")]
    NonpositiveBeta(f64),

    #[error("operation requires phase {required} but law is in phase {actual}")]
    PhaseMismatch {
        required: &'static str,
        actual: &'static str,
    },

    #[error("contraction certificate invalid: xi = {xi:.6} >= 1")]
    InvalidCertificate { xi: f64 },

    #[error("fixed-point iteration did not converge within {max_gen} generations")]
    NonConvergence { max_gen: u32 },

    #[error("work cap of {cap} node visits exceeded at x = {x}")]
    WorkCapExceeded { cap: u64, x: f64 },

    #[error("memo cap of {0} entries exceeded in deterministic recursion")]
    MemoCapExceeded(usize),

    #[error("renewal solution exceeded stability cap at t = {t:.3}")]
    RenewalUnstable { t: f64 },

    #[error("phi(lambda_i + lambda_k) = 1 within tolerance at {0}; variance coefficient has a pole")]
    VariancePole(Complex64),

    #[error("x grid too small: {0}")]
    InsufficientRange(String),

    #[error("ensemble does not retain raw values; rerun with keep_raw")]
    RawValuesMissing,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialisation error: {0}")]
    Json(#[from] serde_json::Error),
}
