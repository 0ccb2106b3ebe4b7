//! Selection conditions for conditional subtasks.
//!
//! Grammar:
//!
//! ```text
//! expr    := or
//! or      := and ("or" and)*
//! and     := unary ("and" unary)*
//! unary   := "not" unary | primary
//! primary := "(" expr ")" | "exists" "(" key ")" | "true" | "false" | key op literal
//! op      := "=" | "==" | "!=" | "≠" | "<" | ">" | "<=" | ">="
//! literal := number | "quoted text" | true | false
//! ```
//!
//! Evaluation is three-valued: a comparison on a key the context does not hold
//! yet is `Unknown`, and `and`/`or`/`not` follow Kleene logic.

use std::fmt;

use super::context::{value_type, CtxValue, ProjectContext, ValueType};
use super::PlanError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    fn from_bool(b: bool) -> Self {
        if b {
            Truth::True
        } else {
            Truth::False
        }
    }

    fn and(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

    fn or(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::True, _) | (_, Truth::True) => Truth::True,
            (Truth::False, Truth::False) => Truth::False,
            _ => Truth::Unknown,
        }
    }

    fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Const(bool),
    Exists(String),
    Compare { key: String, op: CmpOp, value: Literal },
    Not(Box<Condition>),
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
}

impl Condition {
    pub fn parse(src: &str) -> Result<Condition, PlanError> {
        let tokens = tokenize(src)?;
        let mut parser = Parser { tokens, pos: 0, src };
        let cond = parser.parse_or()?;
        if parser.pos != parser.tokens.len() {
            return Err(parser.error("trailing input"));
        }
        Ok(cond)
    }

    /// Context keys the condition reads.
    pub fn keys(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_keys(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_keys<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Condition::Const(_) => {}
            Condition::Exists(k) => out.push(k),
            Condition::Compare { key, .. } => out.push(key),
            Condition::Not(c) => c.collect_keys(out),
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.collect_keys(out);
                b.collect_keys(out);
            }
        }
    }

    /// Keys whose absence currently makes a comparison unknown.
    pub fn missing_keys(&self, ctx: &ProjectContext) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_missing(ctx, &mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_missing(&self, ctx: &ProjectContext, out: &mut Vec<String>) {
        match self {
            Condition::Compare { key, .. } if !ctx.contains(key) => out.push(key.clone()),
            Condition::Not(c) => c.collect_missing(ctx, out),
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.collect_missing(ctx, out);
                b.collect_missing(ctx, out);
            }
            _ => {}
        }
    }

    /// Checks every key against the context vocabulary and literal types.
    pub fn validate(&self) -> Result<(), PlanError> {
        match self {
            Condition::Const(_) => Ok(()),
            Condition::Exists(k) => value_type(k).map(|_| ()).ok_or_else(|| PlanError::UnknownContextKey(k.clone())),
            Condition::Compare { key, op, value } => {
                let ty = value_type(key).ok_or_else(|| PlanError::UnknownContextKey(key.clone()))?;
                let ok = match (ty, value) {
                    (ValueType::Number, Literal::Number(_)) => true,
                    (ValueType::Text, Literal::Text(_)) | (ValueType::Bool, Literal::Bool(_)) => {
                        matches!(op, CmpOp::Eq | CmpOp::Ne)
                    }
                    _ => false,
                };
                if ok {
                    Ok(())
                } else {
                    Err(PlanError::Validation(format!("condition compares `{key}` with an incompatible literal or operator")))
                }
            }
            Condition::Not(c) => c.validate(),
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.validate()?;
                b.validate()
            }
        }
    }

    pub fn evaluate(&self, ctx: &ProjectContext) -> Truth {
        match self {
            Condition::Const(b) => Truth::from_bool(*b),
            Condition::Exists(k) => Truth::from_bool(ctx.contains(k)),
            Condition::Compare { key, op, value } => match ctx.get(key) {
                None => Truth::Unknown,
                Some(actual) => compare(actual, *op, value),
            },
            Condition::Not(c) => c.evaluate(ctx).not(),
            Condition::And(a, b) => a.evaluate(ctx).and(b.evaluate(ctx)),
            Condition::Or(a, b) => a.evaluate(ctx).or(b.evaluate(ctx)),
        }
    }
}

fn compare(actual: &CtxValue, op: CmpOp, lit: &Literal) -> Truth {
    let ord = match (actual, lit) {
        (CtxValue::Number(a), Literal::Number(b)) => a.partial_cmp(b),
        (CtxValue::Text(a), Literal::Text(b)) => Some(a.trim().to_ascii_lowercase().cmp(&b.to_ascii_lowercase())),
        (CtxValue::Bool(a), Literal::Bool(b)) => Some(a.cmp(b)),
        _ => None,
    };
    let Some(ord) = ord else {
        return Truth::False;
    };
    use std::cmp::Ordering::*;
    Truth::from_bool(match op {
        CmpOp::Eq => ord == Equal,
        CmpOp::Ne => ord != Equal,
        CmpOp::Lt => ord == Less,
        CmpOp::Gt => ord == Greater,
        CmpOp::Le => ord != Greater,
        CmpOp::Ge => ord != Less,
    })
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Const(b) => write!(f, "{b}"),
            Condition::Exists(k) => write!(f, "exists({k})"),
            Condition::Compare { key, op, value } => {
                let op = match op {
                    CmpOp::Eq => "=",
                    CmpOp::Ne => "!=",
                    CmpOp::Lt => "<",
                    CmpOp::Gt => ">",
                    CmpOp::Le => "<=",
                    CmpOp::Ge => ">=",
                };
                match value {
                    Literal::Number(n) => write!(f, "{key} {op} {n}"),
                    Literal::Text(s) => write!(f, "{key} {op} {s:?}"),
                    Literal::Bool(b) => write!(f, "{key} {op} {b}"),
                }
            }
            Condition::Not(c) => write!(f, "not ({c})"),
            Condition::And(a, b) => write!(f, "({a}) and ({b})"),
            Condition::Or(a, b) => write!(f, "({a}) or ({b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Op(CmpOp),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>, PlanError> {
    let err = |msg: String| PlanError::Condition { condition: src.to_string(), message: msg };
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '≠' => {
                out.push(Tok::Op(CmpOp::Ne));
                i += 1;
            }
            '=' => {
                i += if chars.get(i + 1) == Some(&'=') { 2 } else { 1 };
                out.push(Tok::Op(CmpOp::Eq));
            }
            '!' if chars.get(i + 1) == Some(&'=') => {
                out.push(Tok::Op(CmpOp::Ne));
                i += 2;
            }
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                out.push(Tok::Op(match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                }));
                i += if eq { 2 } else { 1 };
            }
            '"' | '\'' => {
                let quote = c;
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != quote {
                    j += 1;
                }
                if j == chars.len() {
                    return Err(err("unterminated string literal".into()));
                }
                out.push(Tok::Str(chars[start..j].iter().collect()));
                i = j + 1;
            }
            c if c.is_ascii_digit() || c == '-' || c == '.' => {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_digit() || matches!(chars[i], '.' | 'e' | 'E' | '-' | '+')) {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text.parse::<f64>().map_err(|_| err(format!("bad number `{text}`")))?;
                out.push(Tok::Num(n));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(err(format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> PlanError {
        PlanError::Condition { condition: self.src.to_string(), message: msg.to_string() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn parse_or(&mut self) -> Result<Condition, PlanError> {
        let mut lhs = self.parse_and()?;
        while self.keyword("or") {
            self.pos += 1;
            let rhs = self.parse_and()?;
            lhs = Condition::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Condition, PlanError> {
        let mut lhs = self.parse_unary()?;
        while self.keyword("and") {
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = Condition::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Condition, PlanError> {
        if self.keyword("not") {
            self.pos += 1;
            return Ok(Condition::Not(Box::new(self.parse_unary()?)));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Condition, PlanError> {
        match self.next() {
            Some(Tok::LParen) => {
                let inner = self.parse_or()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(self.error("expected `)`")),
                }
            }
            Some(Tok::Ident(word)) if word.eq_ignore_ascii_case("exists") => {
                if self.next() != Some(Tok::LParen) {
                    return Err(self.error("expected `(` after exists"));
                }
                let key = match self.next() {
                    Some(Tok::Ident(k)) => k,
                    _ => return Err(self.error("expected a key inside exists()")),
                };
                if self.next() != Some(Tok::RParen) {
                    return Err(self.error("expected `)`"));
                }
                Ok(Condition::Exists(key))
            }
            Some(Tok::Ident(word)) if word.eq_ignore_ascii_case("true") => Ok(Condition::Const(true)),
            Some(Tok::Ident(word)) if word.eq_ignore_ascii_case("false") => Ok(Condition::Const(false)),
            Some(Tok::Ident(key)) => {
                let op = match self.next() {
                    Some(Tok::Op(op)) => op,
                    _ => return Err(self.error("expected a comparison operator")),
                };
                let value = match self.next() {
                    Some(Tok::Num(n)) => Literal::Number(n),
                    Some(Tok::Str(s)) => Literal::Text(s),
                    Some(Tok::Ident(w)) if w.eq_ignore_ascii_case("true") => Literal::Bool(true),
                    Some(Tok::Ident(w)) if w.eq_ignore_ascii_case("false") => Literal::Bool(false),
                    _ => return Err(self.error("expected a literal")),
                };
                Ok(Condition::Compare { key, op, value })
            }
            _ => Err(self.error("expected a condition")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(pairs: &[(&str, CtxValue)]) -> ProjectContext {
        let mut c = ProjectContext::new();
        for (k, v) in pairs {
            c.set(k, v.clone()).unwrap();
        }
        c
    }

    #[test]
    fn parses_and_evaluates_comparisons() {
        let c = Condition::parse("problem_type = \"survival\"").unwrap();
        assert_eq!(c.evaluate(&ProjectContext::new()), Truth::Unknown);
        let reg = ctx(&[("problem_type", CtxValue::Text("regression".into()))]);
        assert_eq!(c.evaluate(&reg), Truth::False);
        let surv = ctx(&[("problem_type", CtxValue::Text("Survival".into()))]);
        assert_eq!(c.evaluate(&surv), Truth::True);
    }

    #[test]
    fn kleene_logic() {
        let c = Condition::parse("n_rows < 100 or exists(target_column)").unwrap();
        let empty = ProjectContext::new();
        // unknown or false
        assert_eq!(c.evaluate(&empty), Truth::Unknown);
        let t = ctx(&[("target_column", CtxValue::Text("y".into()))]);
        assert_eq!(c.evaluate(&t), Truth::True);
        let c = Condition::parse("not (n_rows >= 100) and missing_fraction ≠ 0").unwrap();
        let k = ctx(&[("n_rows", CtxValue::Number(50.0))]);
        assert_eq!(c.evaluate(&k), Truth::Unknown);
        let k = ctx(&[("n_rows", CtxValue::Number(500.0))]);
        assert_eq!(c.evaluate(&k), Truth::False);
    }

    #[test]
    fn validation_rejects_unknown_keys_and_type_mismatch() {
        assert!(Condition::parse("colour = \"red\"").unwrap().validate().is_err());
        assert!(Condition::parse("n_rows = \"many\"").unwrap().validate().is_err());
        assert!(Condition::parse("problem_type < \"a\"").unwrap().validate().is_err());
        assert!(Condition::parse("has_time_event_columns = true").unwrap().validate().is_ok());
    }

    #[test]
    fn syntax_errors() {
        for bad in ["", "n_rows <", "(n_rows < 3", "exists n_rows", "n_rows < 3 3", "x $ 2"] {
            assert!(Condition::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn missing_keys_reported() {
        let c = Condition::parse("problem_type = \"survival\" and n_rows > 3").unwrap();
        let k = ctx(&[("n_rows", CtxValue::Number(5.0))]);
        assert_eq!(c.missing_keys(&k), vec!["problem_type".to_string()]);
    }
}
