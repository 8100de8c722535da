//! Lexer, recursive-descent parser, and type checker for the aggregation
//! language. The grammar is LL(1); errors carry line/column positions.

use super::{AggregationProgram, BinOp, Expr, Func, SubgroupPattern};
use thiserror::Error;

pub const MAX_PROGRAM_BYTES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourcePos {
    pub line: usize,
    pub column: usize,
}

impl std::fmt::Display for SourcePos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum AggError {
    #[error("program text exceeds {MAX_PROGRAM_BYTES} bytes")]
    TooLong,
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: SourcePos, message: String },
    #[error("reference to undeclared source {feature:?} at {pos}")]
    UndeclaredSource { feature: String, pos: SourcePos },
    #[error("type error: {0}")]
    Type(String),
}

// ---- lexer ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Ident(String),
    /// `.pattern` suffix captured with the leading dot: `*`, `left_*`, `left_apex_medial`
    DotPattern(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    And,
    Or,
    Not,
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn here(&self) -> SourcePos {
        SourcePos { line: self.line, column: self.col }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.pos];
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn error(&self, message: impl Into<String>) -> AggError {
        AggError::Syntax { pos: self.here(), message: message.into() }
    }

    fn next_token(&mut self) -> Result<(Tok, SourcePos), AggError> {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.bump();
        }
        let pos = self.here();
        let Some(c) = self.peek() else {
            return Ok((Tok::Eof, pos));
        };
        let tok = match c {
            b'(' => { self.bump(); Tok::LParen }
            b')' => { self.bump(); Tok::RParen }
            b',' => { self.bump(); Tok::Comma }
            b'+' => { self.bump(); Tok::Plus }
            b'-' => { self.bump(); Tok::Minus }
            b'*' => { self.bump(); Tok::Star }
            b'/' => { self.bump(); Tok::Slash }
            b'<' => {
                self.bump();
                if self.peek() == Some(b'=') { self.bump(); Tok::Le } else { Tok::Lt }
            }
            b'>' => {
                self.bump();
                if self.peek() == Some(b'=') { self.bump(); Tok::Ge } else { Tok::Gt }
            }
            b'=' => {
                self.bump();
                if self.peek() == Some(b'=') { self.bump(); Tok::EqEq } else {
                    return Err(self.error("expected '==' (single '=' is not an operator)"));
                }
            }
            b'!' => {
                self.bump();
                if self.peek() == Some(b'=') { self.bump(); Tok::Ne } else {
                    return Err(self.error("expected '!='"));
                }
            }
            b'.' => {
                self.bump();
                let mut s = String::new();
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    s.push(self.bump() as char);
                }
                if self.peek() == Some(b'*') {
                    self.bump();
                    s.push('*');
                }
                if s.is_empty() {
                    return Err(self.error("expected subgroup pattern after '.'"));
                }
                Tok::DotPattern(s)
            }
            b'0'..=b'9' => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.bump();
                }
                if self.peek() == Some(b'.')
                    && matches!(self.src.get(self.pos + 1), Some(c) if c.is_ascii_digit())
                {
                    self.bump();
                    while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                        self.bump();
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let n: f64 = text
                    .parse()
                    .map_err(|_| self.error(format!("bad number literal {text:?}")))?;
                Tok::Number(n)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.bump();
                }
                let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match word {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    _ => Tok::Ident(word.to_string()),
                }
            }
            other => return Err(self.error(format!("unexpected character {:?}", other as char))),
        };
        Ok((tok, pos))
    }
}

// ---- parser ---------------------------------------------------------------

struct Parser {
    tokens: Vec<(Tok, SourcePos)>,
    idx: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.idx].0
    }

    fn pos(&self) -> SourcePos {
        self.tokens[self.idx].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.idx].0.clone();
        self.idx += 1;
        t
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), AggError> {
        if self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(AggError::Syntax {
                pos: self.pos(),
                message: format!("expected {what}, found {:?}", self.peek()),
            })
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, AggError> {
        self.parse_or()
    }

    fn parse_or(&mut self) -> Result<Expr, AggError> {
        let mut lhs = self.parse_and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.parse_and()?;
            lhs = Expr::Binary { op: BinOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, AggError> {
        let mut lhs = self.parse_cmp()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.parse_cmp()?;
            lhs = Expr::Binary { op: BinOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn parse_cmp(&mut self) -> Result<Expr, AggError> {
        let lhs = self.parse_add()?;
        let op = match self.peek() {
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::EqEq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.parse_add()?;
        Ok(Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) })
    }

    fn parse_add(&mut self) -> Result<Expr, AggError> {
        let mut lhs = self.parse_mul()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_mul()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn parse_mul(&mut self) -> Result<Expr, AggError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, AggError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.parse_unary()?)))
            }
            Tok::Not => {
                self.bump();
                Ok(Expr::Not(Box::new(self.parse_unary()?)))
            }
            _ => self.parse_primary(),
        }
    }

    fn parse_primary(&mut self) -> Result<Expr, AggError> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Expr::Number(n))
            }
            Tok::LParen => {
                self.bump();
                let e = self.parse_expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let pos = self.pos();
                self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name).ok_or_else(|| AggError::Syntax {
                        pos,
                        message: format!("unknown function {name:?}"),
                    })?;
                    self.bump(); // (
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        args.push(self.parse_expr()?);
                        while *self.peek() == Tok::Comma {
                            self.bump();
                            args.push(self.parse_expr()?);
                        }
                    }
                    self.expect(&Tok::RParen, "')'")?;
                    Ok(Expr::Call { func, args })
                } else {
                    let pattern = if let Tok::DotPattern(p) = self.peek().clone() {
                        self.bump();
                        Some(if p == "*" {
                            SubgroupPattern::All
                        } else if let Some(prefix) = p.strip_suffix('*') {
                            SubgroupPattern::Prefix(prefix.to_string())
                        } else {
                            SubgroupPattern::Exact(p)
                        })
                    } else {
                        None
                    };
                    Ok(Expr::Ref { feature: name, pattern })
                }
            }
            other => Err(AggError::Syntax {
                pos: self.pos(),
                message: format!("expected expression, found {other:?}"),
            }),
        }
    }
}

/// Parse and check a program against its declared sources.
pub fn parse(
    feature_name: &str,
    text: &str,
    declared_sources: &[String],
) -> Result<AggregationProgram, AggError> {
    if text.len() > MAX_PROGRAM_BYTES {
        return Err(AggError::TooLong);
    }
    let mut lexer = Lexer::new(text);
    let mut tokens = Vec::new();
    loop {
        let (tok, pos) = lexer.next_token()?;
        let eof = tok == Tok::Eof;
        tokens.push((tok, pos));
        if eof {
            break;
        }
    }
    let mut parser = Parser { tokens, idx: 0 };
    let ast = parser.parse_expr()?;
    if *parser.peek() != Tok::Eof {
        return Err(AggError::Syntax {
            pos: parser.pos(),
            message: format!("unexpected trailing input {:?}", parser.peek()),
        });
    }

    // semantic check: every referenced feature must be declared
    for feature in ast.referenced_features() {
        if !declared_sources.contains(&feature) {
            return Err(AggError::UndeclaredSource {
                feature,
                pos: SourcePos { line: 1, column: 1 },
            });
        }
    }

    typecheck(&ast)?;

    Ok(AggregationProgram {
        feature_name: feature_name.to_string(),
        source_text: text.to_string(),
        ast,
        declared_sources: declared_sources.to_vec(),
    })
}

// ---- type checker ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Number,
    Bool,
    NumberList,
}

/// Check that the expression types to a scalar (number or boolean).
/// Wildcard references are lists and are only legal as aggregator arguments
/// or as the subject of a `count_if` predicate.
pub fn typecheck(ast: &Expr) -> Result<(), AggError> {
    let ty = infer(ast)?;
    if ty == Ty::NumberList {
        return Err(AggError::Type(
            "program result is a subgroup list; wrap it in an aggregator (max, mean, ...)".into(),
        ));
    }
    Ok(())
}

fn infer(e: &Expr) -> Result<Ty, AggError> {
    match e {
        Expr::Number(_) => Ok(Ty::Number),
        Expr::Ref { pattern, .. } => Ok(match pattern {
            Some(SubgroupPattern::All) | Some(SubgroupPattern::Prefix(_)) => Ty::NumberList,
            _ => Ty::Number,
        }),
        Expr::Neg(inner) => {
            expect_ty(inner, Ty::Number, "negation")?;
            Ok(Ty::Number)
        }
        Expr::Not(inner) => {
            expect_ty(inner, Ty::Bool, "'not'")?;
            Ok(Ty::Bool)
        }
        Expr::Binary { op, lhs, rhs } => {
            if op.is_arithmetic() {
                expect_ty(lhs, Ty::Number, op.symbol())?;
                expect_ty(rhs, Ty::Number, op.symbol())?;
                Ok(Ty::Number)
            } else if op.is_comparison() {
                expect_ty(lhs, Ty::Number, op.symbol())?;
                expect_ty(rhs, Ty::Number, op.symbol())?;
                Ok(Ty::Bool)
            } else {
                expect_ty(lhs, Ty::Bool, op.symbol())?;
                expect_ty(rhs, Ty::Bool, op.symbol())?;
                Ok(Ty::Bool)
            }
        }
        Expr::Call { func, args } => infer_call(*func, args),
    }
}

fn expect_ty(e: &Expr, want: Ty, context: &str) -> Result<(), AggError> {
    let got = infer(e)?;
    if got != want {
        return Err(AggError::Type(format!(
            "{context} expects {}, got {}",
            describe_ty(want),
            describe_ty(got)
        )));
    }
    Ok(())
}

fn describe_ty(t: Ty) -> &'static str {
    match t {
        Ty::Number => "a number",
        Ty::Bool => "a boolean",
        Ty::NumberList => "a subgroup list",
    }
}

fn infer_call(func: Func, args: &[Expr]) -> Result<Ty, AggError> {
    let arity_error = |want: &str| {
        Err(AggError::Type(format!(
            "{} expects {want}, got {} arguments",
            func.name(),
            args.len()
        )))
    };
    match func {
        Func::Max | Func::Min | Func::Mean | Func::Sum => {
            if args.is_empty() {
                return arity_error("at least one argument");
            }
            for a in args {
                let t = infer(a)?;
                if t == Ty::Bool {
                    return Err(AggError::Type(format!(
                        "{} aggregates numbers, got a boolean",
                        func.name()
                    )));
                }
            }
            Ok(Ty::Number)
        }
        Func::Count | Func::CountNonzero => {
            if args.len() != 1 {
                return arity_error("exactly one argument");
            }
            if infer(&args[0])? == Ty::Bool {
                return Err(AggError::Type(format!(
                    "{} counts numeric values, got a boolean",
                    func.name()
                )));
            }
            Ok(Ty::Number)
        }
        Func::CountIf => {
            if args.len() != 1 {
                return arity_error("exactly one comparison");
            }
            match &args[0] {
                Expr::Binary { op, lhs, rhs } if op.is_comparison() => {
                    let list_sides = [infer(lhs)?, infer(rhs)?]
                        .iter()
                        .filter(|t| **t == Ty::NumberList)
                        .count();
                    if list_sides != 1 {
                        return Err(AggError::Type(
                            "count_if expects a comparison with exactly one wildcard reference"
                                .into(),
                        ));
                    }
                    Ok(Ty::Number)
                }
                _ => Err(AggError::Type(
                    "count_if expects a comparison like count_if(x.* >= 50)".into(),
                )),
            }
        }
        Func::Ratio | Func::Percent => {
            if args.len() != 2 {
                return arity_error("exactly two arguments");
            }
            expect_ty(&args[0], Ty::Number, func.name())?;
            expect_ty(&args[1], Ty::Number, func.name())?;
            Ok(Ty::Number)
        }
        Func::Any | Func::All => {
            if args.len() != 1 {
                return arity_error("exactly one argument");
            }
            if infer(&args[0])? == Ty::Bool {
                return Err(AggError::Type(format!(
                    "{} tests numeric values for non-zero; pass a reference or list",
                    func.name()
                )));
            }
            Ok(Ty::Bool)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources() -> Vec<String> {
        ["cancer_presence", "total_cores_count", "gleason_score_sum", "positive_cores_count"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn parses_reference_programs() {
        for text in [
            "100 * count_nonzero(cancer_presence.*) / total_cores_count",
            "max(gleason_score_sum.*)",
            "any(cancer_presence.left_*) and any(cancer_presence.right_*)",
            "100 * positive_cores_count / total_cores_count",
            "count_if(gleason_score_sum.* >= 7)",
            "percent(positive_cores_count, total_cores_count)",
        ] {
            parse("f", text, &sources()).unwrap_or_else(|e| panic!("{text}: {e}"));
        }
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse("f", "max(", &sources()).unwrap_err();
        match err {
            AggError::Syntax { pos, .. } => {
                assert_eq!(pos.line, 1);
                assert_eq!(pos.column, 5);
            }
            other => panic!("expected syntax error, got {other}"),
        }
    }

    #[test]
    fn undeclared_source_is_semantic_error() {
        let err = parse("f", "max(unknown_feature.*)", &sources()).unwrap_err();
        assert!(matches!(err, AggError::UndeclaredSource { .. }), "{err}");
    }

    #[test]
    fn wildcard_outside_aggregator_is_type_error() {
        let err = parse("f", "cancer_presence.* + 1", &sources()).unwrap_err();
        assert!(matches!(err, AggError::Type(_)), "{err}");
        let err = parse("f", "cancer_presence.*", &sources()).unwrap_err();
        assert!(matches!(err, AggError::Type(_)), "{err}");
    }

    #[test]
    fn boolean_result_is_allowed() {
        parse("f", "any(cancer_presence.*)", &sources()).unwrap();
    }

    #[test]
    fn count_if_requires_single_wildcard_comparison() {
        parse("f", "count_if(cancer_presence.* > 0)", &sources()).unwrap();
        parse("f", "count_if(7 <= gleason_score_sum.*)", &sources()).unwrap();
        assert!(parse("f", "count_if(total_cores_count > 0)", &sources()).is_err());
        assert!(parse("f", "count_if(cancer_presence.*)", &sources()).is_err());
    }

    #[test]
    fn rejects_oversized_programs() {
        let big = "1 + ".repeat(600) + "1";
        assert!(matches!(parse("f", &big, &sources()), Err(AggError::TooLong)));
    }
}
