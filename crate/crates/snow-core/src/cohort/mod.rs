//! Domain data model, cohort file IO, inclusion criteria, and feature-matrix assembly.

mod inclusion;
mod io;
mod matrix;
mod summary;

pub use inclusion::{check_inclusion, EligibilityVerdict, IneligibilityReason, InclusionError};
pub use io::{load_cohort, save_cohort, CohortLoadError, Violation};
pub use matrix::{
    assemble_matrix, exclude_columns, AssembleError, CategoryEncoding, EncodingPolicy,
    FeatureMatrix, MatrixCsvError,
};
pub use summary::{summarize_cohort, CategoricalSummary, CohortSummary, NumericSummary};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Fixed day count used for every "five years" window. 1826 days covers
/// five calendar years including one leap day, so window checks do not
/// depend on which years the dates fall in.
pub const FIVE_YEARS_DAYS: i64 = 1826;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    Radiation,
    Prostatectomy,
}

impl std::fmt::Display for TreatmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreatmentKind::Radiation => write!(f, "radiation"),
            TreatmentKind::Prostatectomy => write!(f, "prostatectomy"),
        }
    }
}

/// One treatment episode. `end` is optional at the serialization boundary so
/// records missing it can be reported as violations instead of failing the
/// whole parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Treatment {
    pub kind: TreatmentKind,
    pub start: NaiveDate,
    pub end: Option<NaiveDate>,
}

/// A single PSA lab measurement in ng/mL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsaSample {
    pub date: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteKind {
    BiopsyReport,
    ProgressNote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub id: String,
    pub date: NaiveDate,
    pub kind: NoteKind,
    pub text: String,
}

/// A named baseline value from the structured part of the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructuredValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// First treatment; the subject of outcome labeling.
    pub treatment: Treatment,
    /// Full treatment history, including the first treatment, used for the
    /// subsequent-treatment inclusion check.
    #[serde(default)]
    pub treatments: Vec<Treatment>,
    /// Baseline values keyed by feature name (age, comorbidity index, ...).
    #[serde(default)]
    pub structured: BTreeMap<String, StructuredValue>,
    #[serde(default)]
    pub psa: Vec<PsaSample>,
    #[serde(default)]
    pub notes: Vec<ClinicalNote>,
}

impl PatientRecord {
    pub fn treatment_kind(&self) -> TreatmentKind {
        self.treatment.kind
    }

    /// End date of the first treatment, if recorded.
    pub fn treatment_end(&self) -> Option<NaiveDate> {
        self.treatment.end
    }

    /// PSA samples dated strictly after the end of treatment, in date order.
    pub fn post_treatment_psa(&self) -> Vec<PsaSample> {
        let Some(end) = self.treatment.end else {
            return Vec::new();
        };
        self.psa.iter().copied().filter(|s| s.date > end).collect()
    }

    /// Notes usable for feature generation: dated no later than treatment end.
    pub fn feature_notes(&self) -> Vec<&ClinicalNote> {
        let Some(end) = self.treatment.end else {
            return Vec::new();
        };
        self.notes.iter().filter(|n| n.date <= end).collect()
    }
}

/// A whole cohort as stored in one cohort file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.id.clone()).collect()
    }

    pub fn get(&self, patient_id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.id == patient_id)
    }
}

/// Which stage of the pipeline produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProducingAgent {
    Extraction,
    PostProcessing,
    Aggregation,
    ClinicianGuided,
    Import,
}

impl std::fmt::Display for ProducingAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProducingAgent::Extraction => "extraction",
            ProducingAgent::PostProcessing => "post_processing",
            ProducingAgent::Aggregation => "aggregation",
            ProducingAgent::ClinicianGuided => "clinician_guided",
            ProducingAgent::Import => "import",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub note_id: String,
    pub agent: ProducingAgent,
    /// Validation-loop iteration that produced the value (0 = first pass).
    pub iteration: u32,
}

/// A single extracted cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum CellValue {
    Number(f64),
    Category(String),
    Missing,
}

impl CellValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, CellValue::Missing)
    }
}

/// One extracted value for (patient, feature, optional subgroup).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub patient_id: String,
    pub feature_name: String,
    pub subgroup: Option<String>,
    pub value: CellValue,
    pub provenance: Provenance,
}

impl FeatureValue {
    /// Fully qualified column name: `feature` or `feature.subgroup`.
    pub fn qualified_name(&self) -> String {
        qualified_name(&self.feature_name, self.subgroup.as_deref())
    }
}

pub fn qualified_name(feature: &str, subgroup: Option<&str>) -> String {
    match subgroup {
        Some(s) => format!("{feature}.{s}"),
        None => feature.to_string(),
    }
}
