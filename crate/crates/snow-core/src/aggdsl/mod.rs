//! Restricted aggregation expression language.
//!
//! Aggregate features are computed by small, side-effect-free programs over
//! a patient's base feature values instead of ad-hoc generated scripts. The
//! language has numbers, feature references with subgroup wildcards,
//! aggregator calls, arithmetic, comparisons, and boolean connectives — no
//! loops, no recursion, no strings. The grammar reference lives in
//! `docs/aggdsl.md`.

mod codegen;
mod eval;
mod parser;

pub use codegen::{generate_program, CodegenError, CodegenOutcome};
pub use eval::{evaluate, EvalOutcome, PatientValues};
pub use parser::{parse, typecheck, AggError, SourcePos};

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Max,
    Min,
    Mean,
    Sum,
    Count,
    CountNonzero,
    CountIf,
    Ratio,
    Percent,
    Any,
    All,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Max => "max",
            Func::Min => "min",
            Func::Mean => "mean",
            Func::Sum => "sum",
            Func::Count => "count",
            Func::CountNonzero => "count_nonzero",
            Func::CountIf => "count_if",
            Func::Ratio => "ratio",
            Func::Percent => "percent",
            Func::Any => "any",
            Func::All => "all",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "max" => Func::Max,
            "min" => Func::Min,
            "mean" => Func::Mean,
            "sum" => Func::Sum,
            "count" => Func::Count,
            "count_nonzero" => Func::CountNonzero,
            "count_if" => Func::CountIf,
            "ratio" => Func::Ratio,
            "percent" => Func::Percent,
            "any" => Func::Any,
            "all" => Func::All,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div)
    }
}

/// Subgroup selector on a feature reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubgroupPattern {
    /// `feature.*` — every subgroup value of the feature.
    All,
    /// `feature.left_*` — subgroups with the given prefix.
    Prefix(String),
    /// `feature.left_apex_medial` — exactly one subgroup.
    Exact(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Ref {
        feature: String,
        pattern: Option<SubgroupPattern>,
    },
    Call {
        func: Func,
        args: Vec<Expr>,
    },
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    /// Every feature name referenced anywhere in the expression.
    pub fn referenced_features(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Number(_) => {}
            Expr::Ref { feature, .. } => {
                out.insert(feature.clone());
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| a.collect_refs(out)),
            Expr::Neg(e) | Expr::Not(e) => e.collect_refs(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_refs(out);
                rhs.collect_refs(out);
            }
        }
    }
}

/// A parsed, checked aggregation program for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationProgram {
    pub feature_name: String,
    pub source_text: String,
    pub ast: Expr,
    pub declared_sources: Vec<String>,
}

// ---- printer -------------------------------------------------------------

fn precedence(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 3,
        BinOp::Add | BinOp::Sub => 4,
        BinOp::Mul | BinOp::Div => 5,
    }
}

fn fmt_expr(e: &Expr, parent_prec: u8, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
    match e {
        Expr::Number(n) => write!(f, "{n}"),
        Expr::Ref { feature, pattern } => {
            write!(f, "{feature}")?;
            match pattern {
                None => Ok(()),
                Some(SubgroupPattern::All) => write!(f, ".*"),
                Some(SubgroupPattern::Prefix(p)) => write!(f, ".{p}*"),
                Some(SubgroupPattern::Exact(s)) => write!(f, ".{s}"),
            }
        }
        Expr::Call { func, args } => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                fmt_expr(a, 0, f)?;
            }
            write!(f, ")")
        }
        Expr::Neg(inner) => {
            write!(f, "-")?;
            fmt_expr(inner, 6, f)
        }
        Expr::Not(inner) => {
            write!(f, "not ")?;
            fmt_expr(inner, 6, f)
        }
        Expr::Binary { op, lhs, rhs } => {
            let prec = precedence(*op);
            let need_parens = prec < parent_prec;
            if need_parens {
                write!(f, "(")?;
            }
            fmt_expr(lhs, prec, f)?;
            write!(f, " {} ", op.symbol())?;
            // left-associative: right child needs one level more
            fmt_expr(rhs, prec + 1, f)?;
            if need_parens {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fmt_expr(self, 0, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printer_round_trip_fixes_point() {
        let sources = vec!["cancer_presence".to_string(), "total_cores_count".to_string()];
        for text in [
            "100 * count_nonzero(cancer_presence.*) / total_cores_count",
            "any(cancer_presence.left_*) and any(cancer_presence.right_*)",
            "not (count(cancer_presence.*) > 3) or total_cores_count >= 12",
            "-(2 - 3) - 1",
        ] {
            let p1 = parse("f", text, &sources).unwrap();
            let printed = p1.ast.to_string();
            let p2 = parse("f", &printed, &sources).unwrap();
            assert_eq!(p1.ast, p2.ast, "round trip changed AST for {text:?} -> {printed:?}");
            assert_eq!(printed, p2.ast.to_string());
        }
    }
}
