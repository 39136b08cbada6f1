//! Random fragmentation trees.
//!
//! An object of size `x >= 1` is split into `b` pieces with sizes `V_1 x, ..., V_b x`,
//! where `(V_1, ..., V_b)` is a random vector on the standard simplex; every piece of
//! size `>= 1` is split again, recursively and independently. `N(x)` counts the splits.
//!
//! The toolkit has three legs that check each other:
//!
//! * **analytic** — [`transforms`] evaluates the split transforms `phi`, `phi'` and `psi`;
//!   [`spectral`] locates the roots of `phi(lambda) = 1`, classifies the phase of the
//!   limit law of `N(x)` and computes the constants of the mean/variance expansions.
//! * **integral-equation** — [`renewal`] solves the renewal equations for the mean and the
//!   variance forcing numerically, independently of the spectral expansions.
//! * **stochastic** — [`simulate`] runs the process exactly with reproducible per-node
//!   randomness; [`fixedpoint`] iterates the contraction map of the periodic-phase limit;
//!   [`stats`] ties simulation back to the analytic predictions.
//!
//! The `frag` binary exposes all of this on the command line.

pub mod error;
pub mod fixedpoint;
pub mod law;
pub mod moments;
pub mod quad;
pub mod renewal;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod spectral;
pub mod stats;
pub mod transforms;
pub mod wasserstein;

pub use error::FragError;
pub use law::{Family, LatticeFlag, SplitLaw};

/// Crate result alias.
pub type Result<T> = std::result::Result<T, FragError>;
