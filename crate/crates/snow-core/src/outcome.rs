//! Biochemical-failure (BF) labeling from post-treatment PSA series.
//!
//! Rules are treatment-specific. Radiation patients fail at the first PSA at
//! least 2 ng/mL above the running post-treatment nadir; prostatectomy
//! patients fail at the first PSA at or above a threshold that is confirmed
//! by the next measurement. All events must fall within five years of the
//! end of treatment.

use crate::cohort::{Cohort, PsaSample, TreatmentKind, FIVE_YEARS_DAYS};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const RADIATION_NADIR_DELTA: f64 = 2.0;
pub const PROSTATECTOMY_MAIN_THRESHOLD: f64 = 0.4;
pub const PROSTATECTOMY_SENSITIVITY_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfRule {
    RadiationNadirPlus2,
    Prostatectomy04Rising,
    Prostatectomy02Confirmed,
}

impl std::fmt::Display for BfRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BfRule::RadiationNadirPlus2 => "radiation_nadir_plus_2",
            BfRule::Prostatectomy04Rising => "prostatectomy_0_4_rising",
            BfRule::Prostatectomy02Confirmed => "prostatectomy_0_2_confirmed",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfLabel {
    pub patient_id: String,
    pub label: bool,
    pub event_date: Option<NaiveDate>,
    pub rule_used: BfRule,
    /// Set when the last sample met the threshold but had no confirming
    /// successor, so the rule evaluated false on an open tail.
    pub indeterminate_tail: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ruleset {
    Main,
    Sensitivity,
}

/// How the confirming sample for the prostatectomy rules is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confirmation {
    /// The immediately next sample (standard confirmatory reading).
    #[default]
    NextSample,
    /// Any later sample.
    AnyLater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeConfig {
    pub ruleset: Ruleset,
    pub confirmation: Confirmation,
    /// Whether "subsequent PSA increasing" requires a strictly greater value.
    pub strict_increase: bool,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        Self {
            ruleset: Ruleset::Main,
            confirmation: Confirmation::NextSample,
            strict_increase: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum OutcomeError {
    #[error("patient {0}: no PSA samples after treatment end")]
    NoPostTreatmentData(String),
    #[error("patient {0}: treatment end date missing")]
    MissingTreatmentEnd(String),
}

/// Post-treatment samples: strictly after treatment end, in date order.
pub fn post_treatment_series(psa: &[PsaSample], treatment_end: NaiveDate) -> Vec<PsaSample> {
    let mut series: Vec<PsaSample> = psa
        .iter()
        .copied()
        .filter(|s| s.date > treatment_end)
        .collect();
    series.sort_by(|a, b| a.date.cmp(&b.date));
    series
}

/// Running (prefix) minimum of each sample's value, inclusive of the sample
/// itself. The nadir in effect at time t never looks ahead of t.
pub fn running_nadirs(series: &[PsaSample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut min = f64::INFINITY;
    for s in series {
        min = min.min(s.value);
        out.push(min);
    }
    out
}

/// Minimum PSA over all samples strictly after treatment end.
pub fn post_treatment_nadir(
    psa: &[PsaSample],
    treatment_end: NaiveDate,
) -> Result<f64, OutcomeError> {
    let series = post_treatment_series(psa, treatment_end);
    running_nadirs(&series)
        .last()
        .copied()
        .ok_or_else(|| OutcomeError::NoPostTreatmentData(String::new()))
}

fn within_window(date: NaiveDate, treatment_end: NaiveDate) -> bool {
    (date - treatment_end).num_days() <= FIVE_YEARS_DAYS
}

/// Radiation rule: first in-window PSA at least 2 ng/mL above the running
/// post-treatment nadir.
pub fn label_radiation(
    patient_id: &str,
    psa: &[PsaSample],
    treatment_end: NaiveDate,
) -> Result<BfLabel, OutcomeError> {
    let series = post_treatment_series(psa, treatment_end);
    if series.is_empty() {
        return Err(OutcomeError::NoPostTreatmentData(patient_id.to_string()));
    }
    let nadirs = running_nadirs(&series);
    for (s, nadir) in series.iter().zip(&nadirs) {
        if !within_window(s.date, treatment_end) {
            break;
        }
        if s.value >= nadir + RADIATION_NADIR_DELTA {
            return Ok(BfLabel {
                patient_id: patient_id.to_string(),
                label: true,
                event_date: Some(s.date),
                rule_used: BfRule::RadiationNadirPlus2,
                indeterminate_tail: false,
            });
        }
    }
    Ok(BfLabel {
        patient_id: patient_id.to_string(),
        label: false,
        event_date: None,
        rule_used: BfRule::RadiationNadirPlus2,
        indeterminate_tail: false,
    })
}

/// Shared prostatectomy scan: first in-window sample at or above `threshold`
/// whose confirming sample satisfies `confirm`.
fn label_prostatectomy_with(
    patient_id: &str,
    psa: &[PsaSample],
    treatment_end: NaiveDate,
    threshold: f64,
    rule: BfRule,
    confirmation: Confirmation,
    confirm: impl Fn(f64, f64) -> bool,
) -> Result<BfLabel, OutcomeError> {
    let series = post_treatment_series(psa, treatment_end);
    if series.is_empty() {
        return Err(OutcomeError::NoPostTreatmentData(patient_id.to_string()));
    }
    let mut indeterminate_tail = false;
    for (i, s) in series.iter().enumerate() {
        if !within_window(s.date, treatment_end) {
            break;
        }
        if s.value < threshold {
            continue;
        }
        let confirmed = match confirmation {
            Confirmation::NextSample => series.get(i + 1).map(|n| confirm(s.value, n.value)),
            Confirmation::AnyLater => {
                if i + 1 < series.len() {
                    Some(series[i + 1..].iter().any(|n| confirm(s.value, n.value)))
                } else {
                    None
                }
            }
        };
        match confirmed {
            Some(true) => {
                return Ok(BfLabel {
                    patient_id: patient_id.to_string(),
                    label: true,
                    event_date: Some(s.date),
                    rule_used: rule,
                    indeterminate_tail: false,
                })
            }
            Some(false) => {}
            None => indeterminate_tail = true, // qualifying sample is the last one
        }
    }
    Ok(BfLabel {
        patient_id: patient_id.to_string(),
        label: false,
        event_date: None,
        rule_used: rule,
        indeterminate_tail,
    })
}

/// Main prostatectomy rule: PSA >= 0.4 ng/mL with the subsequent level
/// increasing (strictly, by default).
pub fn label_prostatectomy(
    patient_id: &str,
    psa: &[PsaSample],
    treatment_end: NaiveDate,
    config: &OutcomeConfig,
) -> Result<BfLabel, OutcomeError> {
    let strict = config.strict_increase;
    label_prostatectomy_with(
        patient_id,
        psa,
        treatment_end,
        PROSTATECTOMY_MAIN_THRESHOLD,
        BfRule::Prostatectomy04Rising,
        config.confirmation,
        move |trigger, next| if strict { next > trigger } else { next >= trigger },
    )
}

/// Sensitivity prostatectomy rule: PSA >= 0.2 ng/mL with the subsequent
/// level also at or above 0.2 ng/mL.
pub fn label_prostatectomy_sensitivity(
    patient_id: &str,
    psa: &[PsaSample],
    treatment_end: NaiveDate,
    config: &OutcomeConfig,
) -> Result<BfLabel, OutcomeError> {
    label_prostatectomy_with(
        patient_id,
        psa,
        treatment_end,
        PROSTATECTOMY_SENSITIVITY_THRESHOLD,
        BfRule::Prostatectomy02Confirmed,
        config.confirmation,
        |_, next| next >= PROSTATECTOMY_SENSITIVITY_THRESHOLD,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCohort {
    pub labels: Vec<BfLabel>,
    pub prevalence: f64,
}

/// Label every patient, dispatching on treatment kind.
pub fn label_cohort(cohort: &Cohort, config: &OutcomeConfig) -> Result<LabeledCohort, OutcomeError> {
    let mut labels = Vec::with_capacity(cohort.patients.len());
    for p in &cohort.patients {
        let end = p
            .treatment
            .end
            .ok_or_else(|| OutcomeError::MissingTreatmentEnd(p.id.clone()))?;
        let label = match (p.treatment.kind, config.ruleset) {
            (TreatmentKind::Radiation, _) => label_radiation(&p.id, &p.psa, end)?,
            (TreatmentKind::Prostatectomy, Ruleset::Main) => {
                label_prostatectomy(&p.id, &p.psa, end, config)?
            }
            (TreatmentKind::Prostatectomy, Ruleset::Sensitivity) => {
                label_prostatectomy_sensitivity(&p.id, &p.psa, end, config)?
            }
        };
        labels.push(label);
    }
    let positives = labels.iter().filter(|l| l.label).count();
    let prevalence = if labels.is_empty() {
        0.0
    } else {
        positives as f64 / labels.len() as f64
    };
    Ok(LabeledCohort { labels, prevalence })
}

/// Export labels as CSV: patient_id, label, event_date, rule_used.
pub fn write_labels_csv(labels: &[BfLabel], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patient_id", "label", "event_date", "rule_used"])?;
    for l in labels {
        w.write_record([
            l.patient_id.as_str(),
            if l.label { "1" } else { "0" },
            &l.event_date.map(|d| d.to_string()).unwrap_or_default(),
            &l.rule_used.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn end() -> NaiveDate {
        date("2010-01-01")
    }

    /// Post-treatment series at fixed 30-day spacing.
    fn series(values: &[f64]) -> Vec<PsaSample> {
        values
            .iter()
            .enumerate()
            .map(|(i, &value)| PsaSample {
                date: end() + chrono::Duration::days(30 * (i as i64 + 1)),
                value,
            })
            .collect()
    }

    #[test]
    fn running_nadir_is_prefix_minimum() {
        let s = series(&[1.2, 0.5, 0.9]);
        assert_eq!(running_nadirs(&s), vec![1.2, 0.5, 0.5]);
        assert_eq!(running_nadirs(&series(&[0.3])), vec![0.3]);
    }

    #[test]
    fn nadir_excludes_samples_on_treatment_end() {
        let mut psa = series(&[0.8, 0.5]);
        psa.insert(0, PsaSample { date: end(), value: 0.1 });
        assert_eq!(post_treatment_nadir(&psa, end()).unwrap(), 0.5);
    }

    #[test]
    fn radiation_boundary_equality_triggers() {
        // nadir reaches 0.5, later value exactly nadir + 2
        let psa = series(&[1.2, 0.5, 2.5]);
        let l = label_radiation("p", &psa, end()).unwrap();
        assert!(l.label);
        assert_eq!(l.event_date, Some(psa[2].date));
    }

    #[test]
    fn radiation_monotone_decline_is_negative() {
        let psa = series(&[2.0, 1.5, 1.0, 0.6]);
        let l = label_radiation("p", &psa, end()).unwrap();
        assert!(!l.label);
        assert_eq!(l.event_date, None);
    }

    #[test]
    fn radiation_event_outside_window_is_negative() {
        let mut psa = series(&[1.0, 0.5]);
        psa.push(PsaSample {
            date: end() + chrono::Duration::days(FIVE_YEARS_DAYS + 10),
            value: 9.0,
        });
        let l = label_radiation("p", &psa, end()).unwrap();
        assert!(!l.label);
    }

    #[test]
    fn prostatectomy_rising_after_threshold() {
        let psa = series(&[0.1, 0.4, 0.6]);
        let l = label_prostatectomy("p", &psa, end(), &OutcomeConfig::default()).unwrap();
        assert!(l.label);
        assert_eq!(l.event_date, Some(psa[1].date));
    }

    #[test]
    fn prostatectomy_flat_subsequent_is_negative_under_strict_default() {
        let psa = series(&[0.1, 0.5, 0.5]);
        let cfg = OutcomeConfig::default();
        let l = label_prostatectomy("p", &psa, end(), &cfg).unwrap();
        assert!(!l.label);
        let lax = OutcomeConfig { strict_increase: false, ..cfg };
        let l = label_prostatectomy("p", &psa, end(), &lax).unwrap();
        assert!(l.label);
    }

    #[test]
    fn prostatectomy_trailing_qualifier_flags_indeterminate_tail() {
        let psa = series(&[0.1, 0.2, 0.5]);
        let l = label_prostatectomy("p", &psa, end(), &OutcomeConfig::default()).unwrap();
        assert!(!l.label);
        assert!(l.indeterminate_tail);
    }

    #[test]
    fn prostatectomy_any_later_confirmation() {
        // next sample dips, later sample rises
        let psa = series(&[0.45, 0.40, 0.70]);
        let strict_next = OutcomeConfig::default();
        assert!(!label_prostatectomy("p", &psa, end(), &strict_next).unwrap().label);
        let any_later = OutcomeConfig { confirmation: Confirmation::AnyLater, ..strict_next };
        let l = label_prostatectomy("p", &psa, end(), &any_later).unwrap();
        assert!(l.label);
        assert_eq!(l.event_date, Some(psa[0].date));
    }

    #[test]
    fn sensitivity_rule_confirms_on_level_not_increase() {
        let l = label_prostatectomy_sensitivity(
            "p",
            &series(&[0.1, 0.2, 0.2]),
            end(),
            &OutcomeConfig::default(),
        )
        .unwrap();
        assert!(l.label);
        let l = label_prostatectomy_sensitivity(
            "p",
            &series(&[0.25, 0.1, 0.1]),
            end(),
            &OutcomeConfig::default(),
        )
        .unwrap();
        assert!(!l.label);
    }

    #[test]
    fn empty_post_treatment_series_errors() {
        let psa = vec![PsaSample { date: date("2009-05-01"), value: 5.0 }];
        assert!(matches!(
            label_radiation("p", &psa, end()),
            Err(OutcomeError::NoPostTreatmentData(_))
        ));
    }

    #[test]
    fn raising_all_values_never_flips_radiation_positive_to_negative() {
        // difference from running nadir is shift-invariant
        let base = series(&[1.2, 0.5, 2.5, 0.4]);
        let l0 = label_radiation("p", &base, end()).unwrap();
        assert!(l0.label);
        for shift in [0.1, 1.0, 10.0] {
            let shifted: Vec<PsaSample> = base
                .iter()
                .map(|s| PsaSample { date: s.date, value: s.value + shift })
                .collect();
            let l = label_radiation("p", &shifted, end()).unwrap();
            assert_eq!(l.label, l0.label);
            assert_eq!(l.event_date, l0.event_date);
        }
    }

    #[test]
    fn inserting_sample_after_event_changes_nothing() {
        let mut psa = series(&[0.1, 0.4, 0.6]);
        let l0 = label_prostatectomy("p", &psa, end(), &OutcomeConfig::default()).unwrap();
        psa.push(PsaSample { date: end() + chrono::Duration::days(400), value: 0.05 });
        let l1 = label_prostatectomy("p", &psa, end(), &OutcomeConfig::default()).unwrap();
        assert_eq!(l0.label, l1.label);
        assert_eq!(l0.event_date, l1.event_date);
    }
}
