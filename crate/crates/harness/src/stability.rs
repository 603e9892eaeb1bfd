//! Batch certification, the fit/validation protocol for the certificate constants, and the
//! two-ball example.

use crate::config::{CorpusConfig, StabilityConfig};
use crate::constants::{FrozenConstants, SAFETY_FACTOR};
use crate::corpus::{certificate_corpus, two_ball, CorpusMember};
use crate::error::Result;
use crate::output::OutputDir;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vortexlab_core::certificate::{certify_lattice, StabilityCertificate};
use vortexlab_core::energy::LatticeDensity;

/// Largest admissible `supp_radius_ratio` for in-regime inputs.
pub const T21_LIMIT: f64 = 10.0;

/// Scale-free sides of the two certified inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTerms {
    /// `(defect + bound) / m²`: the defect with its lattice error allowance.
    pub defect_upper: f64,
    /// `W₂² / (m R₀²)`.
    pub w2: f64,
    /// `far_log_moment / m`.
    pub far: f64,
}

pub fn normalized_terms(c: &StabilityCertificate) -> NormalizedTerms {
    let m = c.mass;
    NormalizedTerms {
        defect_upper: (c.defect + c.defect_bound) / (m * m),
        w2: c.w2_sq_close / (m * c.r0 * c.r0),
        far: c.far_log_moment / m,
    }
}

/// `defect ≥ c₂₂·W₂²/R₀²` up to the lattice bound; `None` when the right side vanishes.
pub fn t22_holds(c: &StabilityCertificate, c22: f64) -> Option<bool> {
    let n = normalized_terms(c);
    (n.w2 > 0.0).then(|| n.defect_upper >= c22 * n.w2)
}

/// `defect ≥ c₂₄·far_log_moment` up to the lattice bound; `None` when the right side vanishes.
pub fn t24_holds(c: &StabilityCertificate, c24: f64) -> Option<bool> {
    let n = normalized_terms(c);
    (n.far > 0.0).then(|| n.defect_upper >= c24 * n.far)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub name: String,
    pub family: String,
    pub set: String,
    pub certificate: StabilityCertificate,
    pub t21: bool,
    pub t22: Option<bool>,
    pub t24: Option<bool>,
}

pub fn certify_members(members: &[CorpusMember], set: &str, constants: &FrozenConstants) -> Result<Vec<CertificateRecord>> {
    members
        .par_iter()
        .map(|m| {
            let certificate = certify_lattice(&m.density)?;
            Ok(CertificateRecord {
                name: m.name.clone(),
                family: m.family.to_string(),
                set: set.to_string(),
                t21: certificate.supp_radius_ratio <= T21_LIMIT,
                t22: t22_holds(&certificate, constants.c22),
                t24: t24_holds(&certificate, constants.c24),
                certificate,
            })
        })
        .collect()
}

/// Constants fitted on one set: the safety factor times the smallest in-regime ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantFit {
    pub c22: f64,
    pub c24: f64,
    pub min_ratio_t22: Option<f64>,
    pub min_ratio_t24: Option<f64>,
    pub in_regime: usize,
    pub total: usize,
}

pub fn fit_constants(records: &[CertificateRecord]) -> ConstantFit {
    let ins: Vec<&CertificateRecord> = records.iter().filter(|r| r.certificate.in_regime).collect();
    let ratios = |f: fn(&NormalizedTerms) -> f64| -> Option<f64> {
        ins.iter()
            .map(|r| normalized_terms(&r.certificate))
            .filter(|n| f(n) > 0.0)
            .map(|n| n.defect_upper / f(&n))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
    };
    let min_ratio_t22 = ratios(|n| n.w2);
    let min_ratio_t24 = ratios(|n| n.far);
    ConstantFit {
        c22: SAFETY_FACTOR * min_ratio_t22.unwrap_or(0.0),
        c24: SAFETY_FACTOR * min_ratio_t24.unwrap_or(0.0),
        min_ratio_t22,
        min_ratio_t24,
        in_regime: ins.len(),
        total: records.len(),
    }
}

/// Pass counts of one set against given constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub total: usize,
    pub in_regime: usize,
    pub t21_pass: usize,
    pub t22_checked: usize,
    pub t22_pass: usize,
    pub t24_checked: usize,
    pub t24_pass: usize,
}

impl SetSummary {
    pub fn all_pass(&self) -> bool {
        self.t21_pass == self.in_regime && self.t22_pass == self.t22_checked && self.t24_pass == self.t24_checked
    }
}

pub fn summarize(records: &[CertificateRecord]) -> SetSummary {
    let ins: Vec<&CertificateRecord> = records.iter().filter(|r| r.certificate.in_regime).collect();
    SetSummary {
        total: records.len(),
        in_regime: ins.len(),
        t21_pass: ins.iter().filter(|r| r.t21).count(),
        t22_checked: ins.iter().filter(|r| r.t22.is_some()).count(),
        t22_pass: ins.iter().filter(|r| r.t22 == Some(true)).count(),
        t24_checked: ins.iter().filter(|r| r.t24.is_some()).count(),
        t24_pass: ins.iter().filter(|r| r.t24 == Some(true)).count(),
    }
}

/// Calibration fit and held-out validation against frozen constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub frozen: FrozenConstants,
    pub calibration_fit: ConstantFit,
    pub calibration: SetSummary,
    pub validation: SetSummary,
}

pub fn run_corpus(corpus: &CorpusConfig, frozen: &FrozenConstants) -> Result<(CorpusReport, Vec<CertificateRecord>)> {
    let cal = certify_members(&certificate_corpus(corpus.calibration_seed, corpus.size), "calibration", frozen)?;
    let val = certify_members(&certificate_corpus(corpus.validation_seed, corpus.size), "validation", frozen)?;
    let report = CorpusReport {
        frozen: frozen.clone(),
        calibration_fit: fit_constants(&cal),
        calibration: summarize(&cal),
        validation: summarize(&val),
    };
    Ok((report, cal.into_iter().chain(val).collect()))
}

/// One point of the two-ball family `B₁(0) ∪ B_s(s⁻¹⁰e₁)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBallPoint {
    pub s: f64,
    pub spacing: f64,
    pub defect: f64,
    pub defect_bound: f64,
    /// `s² |ln s|`.
    pub reference: f64,
    pub ratio_to_reference: f64,
    /// Leading-order closed form `10π s² |ln s|` of the same defect.
    pub leading_order: f64,
    pub far_log_moment: f64,
    pub certificate: StabilityCertificate,
}

pub fn two_ball_point(s: f64, cells_per_s: f64) -> Result<TwoBallPoint> {
    let spacing = s / cells_per_s;
    let d: LatticeDensity = two_ball(s, spacing)?;
    let c = certify_lattice(&d)?;
    let reference = s * s * s.ln().abs();
    Ok(TwoBallPoint {
        s,
        spacing,
        defect: c.defect,
        defect_bound: c.defect_bound,
        reference,
        ratio_to_reference: c.defect / reference,
        leading_order: 10.0 * std::f64::consts::PI * reference,
        far_log_moment: c.far_log_moment,
        certificate: c,
    })
}

/// Output of `stability-check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub inputs: Vec<CertificateRecord>,
    pub corpus: Option<CorpusReport>,
}

pub fn stability_batch(config: &StabilityConfig, out: &OutputDir) -> Result<StabilityReport> {
    config.validate()?;
    let frozen = match &config.constants {
        Some(p) => FrozenConstants::load(p)?,
        None => FrozenConstants::bundled(),
    };
    let members: Vec<CorpusMember> = config
        .densities
        .iter()
        .map(|d| Ok(CorpusMember { name: d.name().to_string(), family: "input", density: d.load()? }))
        .collect::<Result<_>>()?;
    let inputs = certify_members(&members, "input", &frozen)?;
    let mut corpus = None;
    if let Some(c) = &config.corpus {
        let (report, records) = run_corpus(c, &frozen)?;
        out.write_json("corpus_certificates.json", &records)?;
        out.write_json("constants_report.json", &report)?;
        corpus = Some(report);
    }
    let report = StabilityReport { inputs, corpus };
    out.write_json("certificates.json", &report.inputs)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::certificate_corpus;

    #[test]
    fn fitted_constants_pass_their_own_calibration_set() {
        let members = certificate_corpus(4, 6);
        let zero = FrozenConstants::bundled();
        let records = certify_members(&members, "calibration", &zero).unwrap();
        let fit = fit_constants(&records);
        assert!(fit.c22 > 0.0 && fit.c24 > 0.0);
        let frozen = FrozenConstants { c22: fit.c22, c24: fit.c24, ..zero };
        let checked = certify_members(&members, "calibration", &frozen).unwrap();
        assert!(summarize(&checked).all_pass());
    }
}
