//! Serialisable report envelopes shared by the CLI commands.
//!
//! Every artifact embeds the tool version, the law configuration hash and the
//! master seed, so any record can be re-run bit-identically.

use crate::spectral::{BetaEstimate, MomentModel, PhaseReport, Spectrum};
use crate::stats::TestRecord;
use crate::transforms::ConditionBReport;
use serde::Serialize;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool_version: &'static str,
    pub law_spec: String,
    pub law_hash: String,
    pub seed: u64,
    pub bit_stable: bool,
}

#[derive(Debug, Serialize)]
pub struct RootsReport {
    pub provenance: Provenance,
    pub spectrum: Spectrum,
    pub phase: PhaseReport,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub provenance: Provenance,
    pub spectrum: Spectrum,
    pub phase: PhaseReport,
    pub model: MomentModel,
    /// Independent variance constants, when the phase admits them.
    pub beta_quadrature: Option<BetaEstimate>,
    pub beta_rational: Option<BetaEstimate>,
    pub beta_critical: Option<f64>,
    pub condition_b: Option<ConditionBReport>,
    /// Set when `|sigma2 - 1/2|` is within the reported error bars.
    pub near_phase_boundary: bool,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub provenance: Provenance,
    pub phase_claimed: String,
    pub phase_detected: String,
    pub records: Vec<TestRecord>,
    pub all_passed: bool,
}
