//! Cohort file IO. One self-describing JSON document per cohort; loading
//! normalizes PSA order and reports every invariant violation it finds.

use super::{Cohort, PatientRecord};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

/// One invariant violation found while loading, naming patient and field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub patient_id: String,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "patient {}: {}: {}", self.patient_id, self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CohortLoadError {
    #[error("cannot read cohort file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cohort file {path} is not valid JSON: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate patient_id {0}")]
    DuplicateId(String),
    #[error("cohort has {} invariant violations, first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

/// Load and normalize a cohort file. PSA series are sorted by date; all
/// other invariant violations are collected and reported together.
pub fn load_cohort(path: &Path) -> Result<Cohort, CohortLoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| CohortLoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cohort: Cohort =
        serde_json::from_str(&text).map_err(|source| CohortLoadError::Json {
            path: path.display().to_string(),
            source,
        })?;

    let mut seen = BTreeSet::new();
    for p in &cohort.patients {
        if !seen.insert(p.id.clone()) {
            return Err(CohortLoadError::DuplicateId(p.id.clone()));
        }
    }

    for p in &mut cohort.patients {
        p.psa.sort_by(|a, b| a.date.cmp(&b.date));
    }

    let violations: Vec<Violation> = cohort.patients.iter().flat_map(validate_patient).collect();
    if !violations.is_empty() {
        return Err(CohortLoadError::Invalid(violations));
    }
    Ok(cohort)
}

fn validate_patient(p: &PatientRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: String| {
        out.push(Violation {
            patient_id: p.id.clone(),
            field: field.to_string(),
            message,
        })
    };

    if p.treatment.end.is_none() {
        push("treatment.end", "treatment end date is missing".into());
    }
    for (i, s) in p.psa.iter().enumerate() {
        if s.value < 0.0 || !s.value.is_finite() {
            push(&format!("psa[{i}].value"), format!("PSA value {} is not a non-negative number", s.value));
        }
    }
    for w in p.psa.windows(2) {
        if w[0].date == w[1].date {
            push("psa", format!("duplicate PSA sample date {}", w[0].date));
        }
    }
    for n in &p.notes {
        if n.text.trim().is_empty() {
            push(&format!("notes[{}].text", n.id), "note text is empty".into());
        }
    }
    out
}

/// Write a cohort in the canonical on-disk form (the same form `load_cohort`
/// round-trips to bit-for-bit).
pub fn save_cohort(cohort: &Cohort, path: &Path) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(cohort).expect("cohort serializes");
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{
        ClinicalNote, NoteKind, PsaSample, StructuredValue, Treatment, TreatmentKind,
    };
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn sample_patient(id: &str) -> PatientRecord {
        PatientRecord {
            id: id.to_string(),
            treatment: Treatment {
                kind: TreatmentKind::Radiation,
                start: date("2010-01-01"),
                end: Some(date("2010-02-01")),
            },
            treatments: vec![Treatment {
                kind: TreatmentKind::Radiation,
                start: date("2010-01-01"),
                end: Some(date("2010-02-01")),
            }],
            structured: BTreeMap::from([("age".to_string(), StructuredValue::Number(68.0))]),
            psa: vec![
                PsaSample { date: date("2011-05-01"), value: 0.5 },
                PsaSample { date: date("2010-06-01"), value: 1.1 },
            ],
            notes: vec![ClinicalNote {
                id: format!("{id}-n1"),
                date: date("2009-11-01"),
                kind: NoteKind::BiopsyReport,
                text: "DIAGNOSIS: benign.".to_string(),
            }],
        }
    }

    #[test]
    fn loads_and_sorts_psa() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        let cohort = Cohort {
            patients: vec![sample_patient("a"), sample_patient("b"), sample_patient("c")],
        };
        save_cohort(&cohort, &path).unwrap();
        let loaded = load_cohort(&path).unwrap();
        assert_eq!(loaded.patients.len(), 3);
        for p in &loaded.patients {
            assert!(p.psa.windows(2).all(|w| w[0].date < w[1].date));
        }
    }

    #[test]
    fn duplicate_patient_id_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        let cohort = Cohort {
            patients: vec![sample_patient("a"), sample_patient("a")],
        };
        save_cohort(&cohort, &path).unwrap();
        match load_cohort(&path) {
            Err(CohortLoadError::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn violations_name_patient_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        let mut bad = sample_patient("a");
        bad.psa[0].value = -1.0;
        bad.notes[0].text = "  ".to_string();
        save_cohort(&Cohort { patients: vec![bad] }, &path).unwrap();
        match load_cohort(&path) {
            Err(CohortLoadError::Invalid(v)) => {
                assert_eq!(v.len(), 2);
                assert!(v.iter().all(|x| x.patient_id == "a"));
                assert!(v.iter().any(|x| x.field.starts_with("psa")));
                assert!(v.iter().any(|x| x.field.contains("text")));
            }
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        let path2 = dir.path().join("cohort2.json");
        save_cohort(&Cohort { patients: vec![sample_patient("a")] }, &path).unwrap();
        let loaded = load_cohort(&path).unwrap();
        save_cohort(&loaded, &path2).unwrap();
        let reloaded = load_cohort(&path2).unwrap();
        assert_eq!(loaded, reloaded);
        // once normalized (PSA sorted), bytes are stable
        save_cohort(&reloaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
