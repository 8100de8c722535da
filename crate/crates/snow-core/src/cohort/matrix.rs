//! Feature-matrix assembly from extracted values, with deterministic
//! categorical encoding, column exclusion, and CSV import/export.

use super::{CellValue, FeatureValue, Provenance};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

/// How a categorical feature is turned into numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub enum CategoryEncoding {
    /// Graded categories map to fixed integers (e.g. stage t1 < t2 < t3).
    Ordinal(BTreeMap<String, f64>),
    /// Unordered categories become one indicator column per observed
    /// category, in lexicographic order.
    OneHot,
}

/// Declared, stable encoding for every categorical feature in a run.
#[derive(Debug, Clone, Default)]
pub struct EncodingPolicy {
    per_feature: BTreeMap<String, CategoryEncoding>,
}

impl EncodingPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_ordinal<I>(mut self, feature: &str, mapping: I) -> Self
    where
        I: IntoIterator<Item = (&'static str, f64)>,
    {
        let map = mapping
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        self.per_feature
            .insert(feature.to_string(), CategoryEncoding::Ordinal(map));
        self
    }

    /// Encoding used by the baseline structured features: stage and grade
    /// group are graded, everything else categorical is one-hot.
    pub fn baseline_default() -> Self {
        Self::new()
            .with_ordinal(
                "stage",
                [("t1", 1.0), ("t2", 2.0), ("t3", 3.0), ("t4", 4.0)],
            )
            .with_ordinal(
                "grade_group",
                [("1", 1.0), ("2", 2.0), ("3", 3.0), ("4", 4.0), ("5", 5.0)],
            )
    }

    fn encoding_for(&self, feature: &str) -> CategoryEncoding {
        self.per_feature
            .get(feature)
            .cloned()
            .unwrap_or(CategoryEncoding::OneHot)
    }
}

/// Dense rectangular design matrix with an explicit missing representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    patient_ids: Vec<String>,
    columns: Vec<String>,
    /// Row-major cells; `None` marks a missing value.
    rows: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error(
        "conflicting values for patient {patient_id}, column {column}: \
         {a_value} (note {a_note}, iteration {a_iter}) vs {b_value} (note {b_note}, iteration {b_iter})"
    )]
    ConflictingDuplicate {
        patient_id: String,
        column: String,
        a_value: String,
        a_note: String,
        a_iter: u32,
        b_value: String,
        b_note: String,
        b_iter: u32,
    },
    #[error("ordinal feature {feature} has unmapped category {category:?}")]
    UnmappedCategory { feature: String, category: String },
}

#[derive(Debug, Error)]
pub enum MatrixCsvError {
    #[error("cannot access matrix CSV: {0}")]
    Io(#[from] std::io::Error),
    #[error("matrix CSV malformed: {0}")]
    Csv(#[from] csv::Error),
    #[error("matrix CSV row {row}: bad cell {cell:?}")]
    BadCell { row: usize, cell: String },
    #[error("matrix CSV has no header or no patient_id column")]
    BadHeader,
}

impl FeatureMatrix {
    pub fn new(patient_ids: Vec<String>, columns: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Self {
        assert_eq!(patient_ids.len(), rows.len(), "one row per patient");
        for r in &rows {
            assert_eq!(r.len(), columns.len(), "rectangular matrix");
        }
        Self { patient_ids, columns, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.rows[row][col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|c| c.is_none()).collect())
            .collect()
    }

    /// Join two matrices over the same patients, concatenating columns.
    /// Panics if patient orders differ; callers align first.
    pub fn hstack(&self, other: &FeatureMatrix) -> FeatureMatrix {
        assert_eq!(self.patient_ids, other.patient_ids, "hstack requires aligned patients");
        let columns: Vec<String> = self
            .columns
            .iter()
            .chain(other.columns.iter())
            .cloned()
            .collect();
        let rows = self
            .rows
            .iter()
            .zip(other.rows.iter())
            .map(|(a, b)| a.iter().chain(b.iter()).copied().collect())
            .collect();
        FeatureMatrix::new(self.patient_ids.clone(), columns, rows)
    }

    /// Reorder rows to the given patient order; patients absent from the
    /// matrix get all-missing rows.
    pub fn align_to(&self, patient_ids: &[String]) -> FeatureMatrix {
        let index: BTreeMap<&str, usize> = self
            .patient_ids
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let rows = patient_ids
            .iter()
            .map(|p| match index.get(p.as_str()) {
                Some(&i) => self.rows[i].clone(),
                None => vec![None; self.columns.len()],
            })
            .collect();
        FeatureMatrix::new(patient_ids.to_vec(), self.columns.clone(), rows)
    }

    pub fn to_csv(&self, path: &Path) -> Result<(), MatrixCsvError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["patient_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (pid, row) in self.patient_ids.iter().zip(&self.rows) {
            let mut rec = vec![pid.clone()];
            rec.extend(row.iter().map(|c| match c {
                Some(v) => format_cell(*v),
                None => String::new(),
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<FeatureMatrix, MatrixCsvError> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.is_empty() || &header[0] != "patient_id" {
            return Err(MatrixCsvError::BadHeader);
        }
        let columns: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
        let mut patient_ids = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            patient_ids.push(rec[0].to_string());
            let mut row = Vec::with_capacity(columns.len());
            for cell in rec.iter().skip(1) {
                if cell.is_empty() {
                    row.push(None);
                } else {
                    let v: f64 = cell.parse().map_err(|_| MatrixCsvError::BadCell {
                        row: i,
                        cell: cell.to_string(),
                    })?;
                    row.push(Some(v));
                }
            }
            rows.push(row);
        }
        Ok(FeatureMatrix::new(patient_ids, columns, rows))
    }
}

/// Format a cell so CSV round-trips exactly and output is deterministic.
fn format_cell(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Pivot extracted values into a design matrix.
///
/// Exact duplicate values for one (patient, feature, subgroup) key collapse;
/// conflicting duplicates are fatal and the error carries both provenances.
/// Categories encode per `policy`: ordinal integers for graded features,
/// one-hot columns (`feature=category`, lexicographic) otherwise.
pub fn assemble_matrix(
    values: &[FeatureValue],
    patients: &[String],
    policy: &EncodingPolicy,
) -> Result<FeatureMatrix, AssembleError> {
    // Deduplicate per key and detect conflicts.
    let mut by_key: BTreeMap<(String, String), (CellValue, Provenance)> = BTreeMap::new();
    for v in values {
        let key = (v.patient_id.clone(), v.qualified_name());
        match by_key.get(&key) {
            None => {
                by_key.insert(key, (v.value.clone(), v.provenance.clone()));
            }
            Some((existing, prov)) if *existing != v.value => {
                return Err(AssembleError::ConflictingDuplicate {
                    patient_id: v.patient_id.clone(),
                    column: v.qualified_name(),
                    a_value: describe(existing),
                    a_note: prov.note_id.clone(),
                    a_iter: prov.iteration,
                    b_value: describe(&v.value),
                    b_note: v.provenance.note_id.clone(),
                    b_iter: v.provenance.iteration,
                });
            }
            Some(_) => {}
        }
    }

    // Column space. Numeric (and missing) values give one column per
    // qualified name; categorical values expand per the policy.
    let mut numeric_cols: BTreeSet<String> = BTreeSet::new();
    let mut onehot_cols: BTreeSet<String> = BTreeSet::new();
    for ((_, qualified), (value, _)) in &by_key {
        let feature = qualified.split('.').next().unwrap_or(qualified);
        match value {
            CellValue::Number(_) | CellValue::Missing => {
                numeric_cols.insert(qualified.clone());
            }
            CellValue::Category(c) => match policy.encoding_for(feature) {
                CategoryEncoding::Ordinal(_) => {
                    numeric_cols.insert(qualified.clone());
                }
                CategoryEncoding::OneHot => {
                    onehot_cols.insert(format!("{qualified}={c}"));
                }
            },
        }
    }
    let columns: Vec<String> = numeric_cols
        .iter()
        .cloned()
        .chain(onehot_cols.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let col_index: BTreeMap<&str, usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut rows = vec![vec![None; columns.len()]; patients.len()];
    let row_index: BTreeMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();

    for ((patient, qualified), (value, _)) in &by_key {
        let Some(&r) = row_index.get(patient.as_str()) else {
            continue; // value for a patient outside the requested row set
        };
        let feature = qualified.split('.').next().unwrap_or(qualified);
        match value {
            CellValue::Number(n) => {
                rows[r][col_index[qualified.as_str()]] = Some(*n);
            }
            CellValue::Missing => {}
            CellValue::Category(c) => match policy.encoding_for(feature) {
                CategoryEncoding::Ordinal(map) => {
                    let v = map.get(c).ok_or_else(|| AssembleError::UnmappedCategory {
                        feature: feature.to_string(),
                        category: c.clone(),
                    })?;
                    rows[r][col_index[qualified.as_str()]] = Some(*v);
                }
                CategoryEncoding::OneHot => {
                    // observed category -> 1 in its own column, 0 in siblings
                    let prefix = format!("{qualified}=");
                    for (name, &ci) in &col_index {
                        if name.starts_with(prefix.as_str()) {
                            rows[r][ci] = Some(0.0);
                        }
                    }
                    rows[r][col_index[format!("{qualified}={c}").as_str()]] = Some(1.0);
                }
            },
        }
    }

    Ok(FeatureMatrix::new(patients.to_vec(), columns, rows))
}

fn describe(v: &CellValue) -> String {
    match v {
        CellValue::Number(n) => format!("{n}"),
        CellValue::Category(c) => format!("{c:?}"),
        CellValue::Missing => "missing".to_string(),
    }
}

/// Drop columns matching any pattern. A pattern matches a column when it
/// equals the column name, names its feature (`feature`, `feature.sub`,
/// `feature=cat`), or glob-matches with `*`.
///
/// Returns the reduced matrix plus one warning per pattern that matched
/// nothing.
pub fn exclude_columns(m: &FeatureMatrix, patterns: &[String]) -> (FeatureMatrix, Vec<String>) {
    let mut warnings = Vec::new();
    let mut drop = vec![false; m.columns.len()];
    for pat in patterns {
        let matcher = pattern_matcher(pat);
        let mut hit = false;
        for (i, col) in m.columns.iter().enumerate() {
            if matcher(col) {
                drop[i] = true;
                hit = true;
            }
        }
        if !hit {
            warnings.push(format!("pattern {pat:?} matched no columns"));
        }
    }
    let keep: Vec<usize> = (0..m.columns.len()).filter(|&i| !drop[i]).collect();
    let columns = keep.iter().map(|&i| m.columns[i].clone()).collect();
    let rows = m
        .rows
        .iter()
        .map(|r| keep.iter().map(|&i| r[i]).collect())
        .collect();
    (
        FeatureMatrix::new(m.patient_ids.clone(), columns, rows),
        warnings,
    )
}

fn pattern_matcher(pat: &str) -> Box<dyn Fn(&str) -> bool + '_> {
    if pat.contains('*') {
        let escaped = regex::escape(pat).replace(r"\*", ".*");
        let re = regex::Regex::new(&format!("^{escaped}$")).expect("escaped pattern is valid");
        Box::new(move |col: &str| re.is_match(col))
    } else {
        Box::new(move |col: &str| {
            col == pat
                || col.strip_prefix(pat).is_some_and(|rest| {
                    rest.starts_with('.') || rest.starts_with('=')
                })
        })
    }
}
