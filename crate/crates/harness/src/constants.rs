//! Empirical constants fitted once on calibration data and then frozen.

use crate::error::{HarnessError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Contents of the bundled `constants/frozen_constants.json`.
pub const BUNDLED: &str = include_str!("../constants/frozen_constants.json");

/// Factor applied to the smallest calibration ratio when freezing a lower-bound constant,
/// or the reciprocal applied to the largest ratio for an upper-bound constant.
pub const SAFETY_FACTOR: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenConstants {
    pub version: u32,
    /// Lower-bound constant of `defect ≥ c₂₂ · W₂²/R₀²` (normalized units).
    pub c22: f64,
    /// Lower-bound constant of `defect ≥ c₂₄ · far_log_moment` (normalized units).
    pub c24: f64,
    /// Constant `K` of `|𝒟 − 𝒟̃| ≤ K (ε²√𝒟 + M₂) + budget`.
    pub surrogate_k: f64,
    pub calibration: CalibrationProvenance,
}

/// Where the frozen values came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProvenance {
    pub certificate_seed: u64,
    pub certificate_corpus_size: usize,
    pub surrogate_seed: u64,
    pub surrogate_runs: usize,
    pub safety_factor: f64,
}

impl FrozenConstants {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled constants parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::config::load(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable constants");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }
}

/// Refits every constant from the calibration seeds in `provenance`. Validation seeds are not touched.
pub fn calibrate(provenance: &CalibrationProvenance) -> Result<FrozenConstants> {
    let placeholder = FrozenConstants { version: 1, c22: 0.0, c24: 0.0, surrogate_k: 0.0, calibration: provenance.clone() };
    let corpus = crate::corpus::certificate_corpus(provenance.certificate_seed, provenance.certificate_corpus_size);
    let records = crate::stability::certify_members(&corpus, "calibration", &placeholder)?;
    let fit = crate::stability::fit_constants(&records);
    let runs = crate::lemma::surrogate_suite(provenance.surrogate_seed, provenance.surrogate_runs)?;
    Ok(FrozenConstants { c22: fit.c22, c24: fit.c24, surrogate_k: crate::lemma::fit_k(&runs), ..placeholder })
}
