//! Cohort summary statistics: count / mean / SD / median for numeric
//! structured fields, counts and percentages for categorical ones.

use super::{Cohort, StructuredValue};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct NumericSummary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalSummary {
    /// category -> (count, percent of cohort)
    pub counts: BTreeMap<String, (usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortSummary {
    pub n_patients: usize,
    pub numeric: BTreeMap<String, NumericSummary>,
    pub categorical: BTreeMap<String, CategoricalSummary>,
}

pub fn summarize_cohort(cohort: &Cohort) -> CohortSummary {
    let n = cohort.patients.len();
    let mut numeric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut categorical: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();

    for p in &cohort.patients {
        for (name, value) in &p.structured {
            match value {
                StructuredValue::Number(v) => numeric.entry(name.clone()).or_default().push(*v),
                StructuredValue::Text(t) => {
                    *categorical
                        .entry(name.clone())
                        .or_default()
                        .entry(t.clone())
                        .or_default() += 1;
                }
            }
        }
    }

    CohortSummary {
        n_patients: n,
        numeric: numeric
            .into_iter()
            .map(|(name, values)| (name, numeric_summary(&values)))
            .collect(),
        categorical: categorical
            .into_iter()
            .map(|(name, counts)| {
                let counts = counts
                    .into_iter()
                    .map(|(cat, c)| {
                        let pct = if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
                        (cat, (c, pct))
                    })
                    .collect();
                (name, CategoricalSummary { counts })
            })
            .collect(),
    }
}

fn numeric_summary(values: &[f64]) -> NumericSummary {
    let count = values.len();
    if count == 0 {
        return NumericSummary { count: 0, mean: f64::NAN, sd: f64::NAN, median: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let sd = if count < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count as f64 - 1.0)).sqrt()
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if count % 2 == 1 {
        sorted[count / 2]
    } else {
        (sorted[count / 2 - 1] + sorted[count / 2]) / 2.0
    };
    NumericSummary { count, mean, sd, median }
}

impl std::fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "patients: {}", self.n_patients)?;
        for (name, s) in &self.numeric {
            writeln!(
                f,
                "{name}: n={} mean={:.1} sd={:.1} median={:.1}",
                s.count, s.mean, s.sd, s.median
            )?;
        }
        for (name, s) in &self.categorical {
            for (cat, (count, pct)) in &s.counts {
                writeln!(f, "{name}={cat}: {count} ({pct:.1}%)")?;
            }
        }
        Ok(())
    }
}
