//! Cohort inclusion criteria.

use super::{NoteKind, PatientRecord, FIVE_YEARS_DAYS};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IneligibilityReason {
    /// No PSA value more than five years after treatment end.
    FollowUp,
    /// No pre-treatment biopsy report with enough recorded cores.
    BiopsyCores,
    /// Another treatment started within five years of the first treatment's end.
    SubsequentTreatment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EligibilityVerdict {
    pub patient_id: String,
    pub reasons: Vec<IneligibilityReason>,
}

impl EligibilityVerdict {
    pub fn eligible(&self) -> bool {
        self.reasons.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum InclusionError {
    #[error("patient {0} has no treatment end date; eligibility is not evaluable")]
    NotEvaluable(String),
}

/// Evaluate the three inclusion criteria for one patient.
///
/// `biopsy_region_count` is the number of systematic cores recorded in the
/// patient's biopsy report, supplied by the generator manifest or by the
/// extraction output (never re-parsed from text here).
pub fn check_inclusion(
    p: &PatientRecord,
    biopsy_core_min: usize,
    biopsy_region_count: Option<usize>,
) -> Result<EligibilityVerdict, InclusionError> {
    let end = p
        .treatment
        .end
        .ok_or_else(|| InclusionError::NotEvaluable(p.id.clone()))?;

    let mut reasons = Vec::new();

    // (a) follow-up: some PSA strictly more than five years after treatment end
    let has_follow_up = p
        .psa
        .iter()
        .any(|s| (s.date - end).num_days() > FIVE_YEARS_DAYS);
    if !has_follow_up {
        reasons.push(IneligibilityReason::FollowUp);
    }

    // (b) a pre-treatment biopsy report with at least `biopsy_core_min` cores
    let has_biopsy = p
        .notes
        .iter()
        .any(|n| n.kind == NoteKind::BiopsyReport && n.date <= p.treatment.start);
    let cores_ok = biopsy_region_count.map(|c| c >= biopsy_core_min).unwrap_or(false);
    if !(has_biopsy && cores_ok) {
        reasons.push(IneligibilityReason::BiopsyCores);
    }

    // (c) no second treatment starting within five years of the first's end
    let subsequent = p.treatments.iter().any(|t| {
        let same_as_first =
            t.kind == p.treatment.kind && t.start == p.treatment.start && t.end == p.treatment.end;
        !same_as_first && t.start > p.treatment.start && (t.start - end).num_days() <= FIVE_YEARS_DAYS
    });
    if subsequent {
        reasons.push(IneligibilityReason::SubsequentTreatment);
    }

    Ok(EligibilityVerdict {
        patient_id: p.id.clone(),
        reasons,
    })
}
