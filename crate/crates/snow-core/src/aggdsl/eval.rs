//! Interpreter for aggregation programs. Evaluation is total: it returns a
//! value, missing, or missing-with-warnings, and never traps.

use super::{AggregationProgram, BinOp, Expr, Func, SubgroupPattern};
use std::collections::BTreeMap;

/// One patient's feature values visible to a program: scalars and per-
/// subgroup maps. Missing cells are represented as absent entries or `None`.
#[derive(Debug, Clone, Default)]
pub struct PatientValues {
    scalars: BTreeMap<String, Option<f64>>,
    subgroups: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

impl PatientValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_scalar(&mut self, feature: &str, value: Option<f64>) {
        self.scalars.insert(feature.to_string(), value);
    }

    pub fn set_subgroup(&mut self, feature: &str, subgroup: &str, value: Option<f64>) {
        self.subgroups
            .entry(feature.to_string())
            .or_default()
            .insert(subgroup.to_string(), value);
    }

    fn scalar(&self, feature: &str) -> Option<f64> {
        self.scalars.get(feature).copied().flatten()
    }

    fn expand(&self, feature: &str, pattern: &SubgroupPattern) -> Vec<Option<f64>> {
        let Some(map) = self.subgroups.get(feature) else {
            return Vec::new();
        };
        map.iter()
            .filter(|(name, _)| match pattern {
                SubgroupPattern::All => true,
                SubgroupPattern::Prefix(p) => name.starts_with(p.as_str()),
                SubgroupPattern::Exact(s) => name.as_str() == s,
            })
            .map(|(_, v)| *v)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// Final scalar; booleans encode as 1/0; `None` is missing.
    pub value: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum V {
    Number(f64),
    Bool(bool),
    Missing,
    List(Vec<Option<f64>>),
}

/// Evaluate a type-checked program over one patient's values.
///
/// Aggregators skip missing operands; an aggregator whose operands are all
/// missing yields missing, as does division by zero (with a warning).
pub fn evaluate(prog: &AggregationProgram, values: &PatientValues) -> EvalOutcome {
    let mut warnings = Vec::new();
    let v = eval_expr(&prog.ast, values, &mut warnings);
    let value = match v {
        V::Number(n) => Some(n),
        V::Bool(b) => Some(if b { 1.0 } else { 0.0 }),
        V::Missing => None,
        V::List(_) => {
            // unreachable after typecheck; stay total regardless
            warnings.push("program produced a list; treating as missing".into());
            None
        }
    };
    EvalOutcome { value, warnings }
}

fn eval_expr(e: &Expr, values: &PatientValues, warnings: &mut Vec<String>) -> V {
    match e {
        Expr::Number(n) => V::Number(*n),
        Expr::Ref { feature, pattern } => match pattern {
            None => match values.scalar(feature) {
                Some(v) => V::Number(v),
                None => V::Missing,
            },
            Some(SubgroupPattern::Exact(s)) => {
                match values
                    .subgroups
                    .get(feature)
                    .and_then(|m| m.get(s))
                    .copied()
                    .flatten()
                {
                    Some(v) => V::Number(v),
                    None => V::Missing,
                }
            }
            Some(p) => V::List(values.expand(feature, p)),
        },
        Expr::Neg(inner) => match eval_expr(inner, values, warnings) {
            V::Number(n) => V::Number(-n),
            _ => V::Missing,
        },
        Expr::Not(inner) => match eval_expr(inner, values, warnings) {
            V::Bool(b) => V::Bool(!b),
            _ => V::Missing,
        },
        Expr::Binary { op, lhs, rhs } => {
            let a = eval_expr(lhs, values, warnings);
            let b = eval_expr(rhs, values, warnings);
            eval_binary(*op, a, b, warnings)
        }
        Expr::Call { func, args } => eval_call(*func, args, values, warnings),
    }
}

fn eval_binary(op: BinOp, a: V, b: V, warnings: &mut Vec<String>) -> V {
    match op {
        BinOp::And | BinOp::Or => match (a, b) {
            (V::Bool(x), V::Bool(y)) => V::Bool(if op == BinOp::And { x && y } else { x || y }),
            _ => V::Missing,
        },
        _ => {
            let (V::Number(x), V::Number(y)) = (a, b) else {
                return V::Missing;
            };
            match op {
                BinOp::Add => V::Number(x + y),
                BinOp::Sub => V::Number(x - y),
                BinOp::Mul => V::Number(x * y),
                BinOp::Div => {
                    if y == 0.0 {
                        warnings.push("division by zero".into());
                        V::Missing
                    } else {
                        V::Number(x / y)
                    }
                }
                BinOp::Lt => V::Bool(x < y),
                BinOp::Le => V::Bool(x <= y),
                BinOp::Gt => V::Bool(x > y),
                BinOp::Ge => V::Bool(x >= y),
                BinOp::Eq => V::Bool(x == y),
                BinOp::Ne => V::Bool(x != y),
                BinOp::And | BinOp::Or => unreachable!(),
            }
        }
    }
}

/// Collect present (non-missing) numeric operands across aggregator args.
fn present_operands(
    args: &[Expr],
    values: &PatientValues,
    warnings: &mut Vec<String>,
) -> Vec<f64> {
    let mut out = Vec::new();
    for a in args {
        match eval_expr(a, values, warnings) {
            V::Number(n) => out.push(n),
            V::Bool(b) => out.push(if b { 1.0 } else { 0.0 }),
            V::Missing => {}
            V::List(items) => out.extend(items.into_iter().flatten()),
        }
    }
    out
}

fn eval_call(func: Func, args: &[Expr], values: &PatientValues, warnings: &mut Vec<String>) -> V {
    match func {
        Func::Max | Func::Min | Func::Mean | Func::Sum => {
            let xs = present_operands(args, values, warnings);
            if xs.is_empty() {
                return V::Missing;
            }
            let v = match func {
                Func::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Func::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
                Func::Sum => xs.iter().sum(),
                Func::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
                _ => unreachable!(),
            };
            V::Number(v)
        }
        Func::Count => V::Number(present_operands(args, values, warnings).len() as f64),
        Func::CountNonzero => {
            let n = present_operands(args, values, warnings)
                .iter()
                .filter(|v| **v != 0.0)
                .count();
            V::Number(n as f64)
        }
        Func::CountIf => {
            let Expr::Binary { op, lhs, rhs } = &args[0] else {
                return V::Missing;
            };
            // exactly one side is a wildcard list (enforced by the checker)
            let (list_expr, other_expr, list_on_left) = if is_list(lhs) {
                (lhs, rhs, true)
            } else {
                (rhs, lhs, false)
            };
            let V::List(items) = eval_expr(list_expr, values, warnings) else {
                return V::Missing;
            };
            let other = match eval_expr(other_expr, values, warnings) {
                V::Number(n) => n,
                _ => return V::Missing,
            };
            let n = items
                .into_iter()
                .flatten()
                .filter(|&item| {
                    let (x, y) = if list_on_left { (item, other) } else { (other, item) };
                    match eval_binary(*op, V::Number(x), V::Number(y), warnings) {
                        V::Bool(b) => b,
                        _ => false,
                    }
                })
                .count();
            V::Number(n as f64)
        }
        Func::Ratio | Func::Percent => {
            let a = eval_expr(&args[0], values, warnings);
            let b = eval_expr(&args[1], values, warnings);
            let scaled = eval_binary(BinOp::Div, a, b, warnings);
            match (func, scaled) {
                (Func::Percent, V::Number(v)) => V::Number(100.0 * v),
                (_, v) => v,
            }
        }
        Func::Any | Func::All => {
            let mut present = Vec::new();
            for a in args {
                match eval_expr(a, values, warnings) {
                    V::Number(n) => present.push(n != 0.0),
                    V::Bool(b) => present.push(b),
                    V::Missing => {}
                    V::List(items) => present.extend(items.into_iter().flatten().map(|v| v != 0.0)),
                }
            }
            if present.is_empty() {
                return V::Missing;
            }
            V::Bool(if func == Func::Any {
                present.iter().any(|b| *b)
            } else {
                present.iter().all(|b| *b)
            })
        }
    }
}

fn is_list(e: &Expr) -> bool {
    matches!(
        e,
        Expr::Ref {
            pattern: Some(SubgroupPattern::All) | Some(SubgroupPattern::Prefix(_)),
            ..
        }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggdsl::parse;

    fn sources() -> Vec<String> {
        ["cancer_presence", "tumor_percentage", "total_cores_count", "positive_cores_count"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn patient_with_regions(presence: &[(&str, Option<f64>)]) -> PatientValues {
        let mut v = PatientValues::new();
        for (region, val) in presence {
            v.set_subgroup("cancer_presence", region, *val);
        }
        v
    }

    #[test]
    fn bilateral_detects_cancer_on_both_sides() {
        let prog = parse(
            "bilateral_disease",
            "any(cancer_presence.left_*) and any(cancer_presence.right_*)",
            &sources(),
        )
        .unwrap();
        let both = patient_with_regions(&[
            ("left_apex_medial", Some(1.0)),
            ("left_mid_medial", Some(0.0)),
            ("right_base_lateral", Some(1.0)),
        ]);
        assert_eq!(evaluate(&prog, &both).value, Some(1.0));
        let left_only = patient_with_regions(&[
            ("left_apex_medial", Some(1.0)),
            ("right_base_lateral", Some(0.0)),
        ]);
        assert_eq!(evaluate(&prog, &left_only).value, Some(0.0));
    }

    #[test]
    fn percentage_positive_cores() {
        let prog = parse(
            "percentage_positive_cores",
            "100 * positive_cores_count / total_cores_count",
            &sources(),
        )
        .unwrap();
        let mut v = PatientValues::new();
        v.set_scalar("positive_cores_count", Some(6.0));
        v.set_scalar("total_cores_count", Some(12.0));
        assert_eq!(evaluate(&prog, &v).value, Some(50.0));
    }

    #[test]
    fn max_over_all_missing_is_missing() {
        let prog = parse("max_pct", "max(tumor_percentage.*)", &["tumor_percentage".to_string()])
            .unwrap();
        let mut v = PatientValues::new();
        v.set_subgroup("tumor_percentage", "left_apex_medial", None);
        v.set_subgroup("tumor_percentage", "right_apex_medial", None);
        let out = evaluate(&prog, &v);
        assert_eq!(out.value, None);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn aggregators_skip_missing() {
        let prog = parse("m", "mean(tumor_percentage.*)", &["tumor_percentage".to_string()])
            .unwrap();
        let mut v = PatientValues::new();
        v.set_subgroup("tumor_percentage", "a", Some(10.0));
        v.set_subgroup("tumor_percentage", "b", None);
        v.set_subgroup("tumor_percentage", "c", Some(30.0));
        assert_eq!(evaluate(&prog, &v).value, Some(20.0));
    }

    #[test]
    fn division_by_zero_is_missing_with_warning() {
        let prog = parse(
            "p",
            "100 * positive_cores_count / total_cores_count",
            &sources(),
        )
        .unwrap();
        let mut v = PatientValues::new();
        v.set_scalar("positive_cores_count", Some(3.0));
        v.set_scalar("total_cores_count", Some(0.0));
        let out = evaluate(&prog, &v);
        assert_eq!(out.value, None);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn count_if_applies_predicate_elementwise() {
        let prog = parse(
            "c",
            "count_if(tumor_percentage.* >= 50)",
            &["tumor_percentage".to_string()],
        )
        .unwrap();
        let mut v = PatientValues::new();
        v.set_subgroup("tumor_percentage", "a", Some(80.0));
        v.set_subgroup("tumor_percentage", "b", Some(50.0));
        v.set_subgroup("tumor_percentage", "c", Some(20.0));
        v.set_subgroup("tumor_percentage", "d", None);
        assert_eq!(evaluate(&prog, &v).value, Some(2.0));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let prog = parse("c", "count_nonzero(cancer_presence.*)", &sources()).unwrap();
        let v = patient_with_regions(&[
            ("left_apex_medial", Some(1.0)),
            ("right_mid_lateral", Some(0.0)),
            ("right_base_medial", Some(1.0)),
        ]);
        let a = evaluate(&prog, &v);
        let b = evaluate(&prog, &v);
        assert_eq!(a, b);
        assert_eq!(a.value, Some(2.0));
    }
}
