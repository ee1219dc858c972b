//! Predicates, conjunctions and DNF rules over table attributes.
//!
//! A [`Dgr`] is a disjunction of [`Conjunction`]s. The empty disjunction is the
//! identity rule and selects every row. Categorical attributes use `=` and
//! `!=` in addition to the order comparisons on numeric attributes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Kind, Record, RowId, Schema, Table, Value};
use crate::tree::ModelId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Eq => "=",
            Op::Ne => "!=",
        }
    }

    pub fn is_order(self) -> bool {
        matches!(self, Op::Gt | Op::Ge | Op::Lt | Op::Le)
    }

    /// The complementary operator, used for the right branch of a split.
    pub fn negate(self) -> Op {
        match self {
            Op::Gt => Op::Le,
            Op::Ge => Op::Lt,
            Op::Lt => Op::Ge,
            Op::Le => Op::Gt,
            Op::Eq => Op::Ne,
            Op::Ne => Op::Eq,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// `attribute op constant`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Predicate {
    pub attribute: String,
    pub op: Op,
    pub constant: Value,
}

impl Predicate {
    pub fn new(attribute: impl Into<String>, op: Op, constant: Value) -> Self {
        Self { attribute: attribute.into(), op, constant }
    }

    pub fn num(attribute: impl Into<String>, op: Op, c: f64) -> Self {
        Self::new(attribute, op, Value::Num(c))
    }

    pub fn cat(attribute: impl Into<String>, op: Op, token: impl Into<String>) -> Self {
        Self::new(attribute, op, Value::Cat(token.into()))
    }

    pub fn negate(&self) -> Predicate {
        Predicate { attribute: self.attribute.clone(), op: self.op.negate(), constant: self.constant.clone() }
    }

    /// Checks the attribute exists and that operator and constant fit its kind.
    pub fn check(&self, schema: &Schema) -> Result<usize> {
        let idx = schema
            .index_of(&self.attribute)
            .ok_or_else(|| Error::Schema(format!("unknown attribute `{}`", self.attribute)))?;
        let kind = schema.kind(idx);
        let ok = match (kind, &self.constant) {
            (Kind::Numeric, Value::Num(c)) => self.op.is_order() && c.is_finite(),
            (Kind::Categorical, Value::Cat(_)) => !self.op.is_order(),
            _ => false,
        };
        if !ok {
            return Err(Error::Schema(format!("predicate `{self}` does not fit {kind:?} attribute")));
        }
        Ok(idx)
    }

    /// Evaluates against a single value of the predicate's attribute.
    pub fn holds(&self, v: &Value) -> bool {
        match self.op {
            Op::Eq => v == &self.constant,
            Op::Ne => v != &self.constant,
            op => match (v.as_f64(), self.constant.as_f64()) {
                (Some(x), Some(c)) => match op {
                    Op::Gt => x > c,
                    Op::Ge => x >= c,
                    Op::Lt => x < c,
                    Op::Le => x <= c,
                    _ => unreachable!(),
                },
                _ => false,
            },
        }
    }
}

fn is_bare_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !s.eq_ignore_ascii_case("and")
        && !s.eq_ignore_ascii_case("or")
        && !s.eq_ignore_ascii_case("true")
}

fn write_attr(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    if is_bare_ident(name) {
        f.write_str(name)
    } else {
        write!(f, "`{}`", name.replace('`', "``"))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_attr(f, &self.attribute)?;
        write!(f, " {} ", self.op)?;
        match &self.constant {
            Value::Num(c) => write!(f, "{c}"),
            Value::Cat(s) => write!(f, "\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")),
        }
    }
}

/// A canonical AND of predicates.
///
/// Per attribute only the tightest lower and upper bound survive (a strict
/// bound wins a tie on the constant). Contradictory bounds or categorical
/// constraints mark the conjunction unsatisfiable; the conflicting predicates
/// are kept so the text form still reads as a contradiction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<Predicate>", into = "Vec<Predicate>")]
pub struct Conjunction {
    predicates: Vec<Predicate>,
    unsat: bool,
}

impl From<Vec<Predicate>> for Conjunction {
    fn from(ps: Vec<Predicate>) -> Self {
        Conjunction::new(ps)
    }
}

impl From<Conjunction> for Vec<Predicate> {
    fn from(c: Conjunction) -> Self {
        c.predicates
    }
}

impl Conjunction {
    pub fn new(predicates: impl IntoIterator<Item = Predicate>) -> Self {
        let mut by_attr: BTreeMap<String, Vec<Predicate>> = BTreeMap::new();
        for p in predicates {
            by_attr.entry(p.attribute.clone()).or_default().push(p);
        }
        let mut out = Vec::new();
        let mut unsat = false;
        for ps in by_attr.into_values() {
            unsat |= canonical_attr(ps, &mut out);
        }
        out.sort();
        Self { predicates: out, unsat }
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn is_satisfiable(&self) -> bool {
        !self.unsat
    }

    /// `self ∧ p`, canonicalized.
    pub fn refine(&self, p: Predicate) -> Conjunction {
        Conjunction::new(self.predicates.iter().cloned().chain(std::iter::once(p)))
    }

    pub fn mentions(&self, attribute: &str) -> bool {
        self.predicates.iter().any(|p| p.attribute == attribute)
    }

    pub fn satisfied_by(&self, schema: &Schema, row: &[Value]) -> Result<bool> {
        if self.unsat {
            return Ok(false);
        }
        for p in &self.predicates {
            let idx = p.check(schema)?;
            if !p.holds(&row[idx]) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Canonicalizes the predicates of one attribute into `out`. Returns true when
/// they are contradictory.
fn canonical_attr(ps: Vec<Predicate>, out: &mut Vec<Predicate>) -> bool {
    let mut lower: Option<Predicate> = None;
    let mut upper: Option<Predicate> = None;
    let mut eqs: BTreeSet<Predicate> = BTreeSet::new();
    let mut nes: BTreeSet<Predicate> = BTreeSet::new();
    for p in ps {
        match p.op {
            Op::Gt | Op::Ge => {
                if lower.as_ref().is_none_or(|l| tighter_lower(&p, l)) {
                    lower = Some(p);
                }
            }
            Op::Lt | Op::Le => {
                if upper.as_ref().is_none_or(|u| tighter_upper(&p, u)) {
                    upper = Some(p);
                }
            }
            Op::Eq => {
                eqs.insert(p);
            }
            Op::Ne => {
                nes.insert(p);
            }
        }
    }

    let mut unsat = false;
    if let (Some(l), Some(u)) = (&lower, &upper) {
        let lo = l.constant.as_f64().unwrap_or(f64::NAN);
        let hi = u.constant.as_f64().unwrap_or(f64::NAN);
        let strict = l.op == Op::Gt || u.op == Op::Lt;
        if !(lo < hi || (lo == hi && !strict)) {
            unsat = true;
        }
    }
    out.extend(lower);
    out.extend(upper);

    match eqs.len() {
        0 => out.extend(nes),
        1 => {
            let eq = eqs.into_iter().next().unwrap();
            if let Some(ne) = nes.iter().find(|n| n.constant == eq.constant) {
                unsat = true;
                out.push(ne.clone());
            }
            out.push(eq);
        }
        _ => {
            unsat = true;
            out.extend(eqs);
        }
    }
    unsat
}

fn tighter_lower(p: &Predicate, current: &Predicate) -> bool {
    let (a, b) = (p.constant.as_f64(), current.constant.as_f64());
    match (a, b) {
        (Some(a), Some(b)) => a > b || (a == b && p.op == Op::Gt && current.op == Op::Ge),
        _ => p < current,
    }
}

fn tighter_upper(p: &Predicate, current: &Predicate) -> bool {
    let (a, b) = (p.constant.as_f64(), current.constant.as_f64());
    match (a, b) {
        (Some(a), Some(b)) => a < b || (a == b && p.op == Op::Lt && current.op == Op::Le),
        _ => p < current,
    }
}

impl fmt::Display for Conjunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.predicates.is_empty() {
            return f.write_str("TRUE");
        }
        for (i, p) in self.predicates.iter().enumerate() {
            if i > 0 {
                f.write_str(" AND ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// A rule in disjunctive normal form. Clauses are kept sorted and unique; a
/// clause with no predicates absorbs the whole disjunction, leaving the
/// identity rule.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<Conjunction>", into = "Vec<Conjunction>")]
pub struct Dgr {
    clauses: Vec<Conjunction>,
}

impl From<Vec<Conjunction>> for Dgr {
    fn from(c: Vec<Conjunction>) -> Self {
        Dgr::new(c)
    }
}

impl From<Conjunction> for Dgr {
    fn from(c: Conjunction) -> Self {
        Dgr::new(vec![c])
    }
}

impl From<Dgr> for Vec<Conjunction> {
    fn from(d: Dgr) -> Self {
        d.clauses
    }
}

impl Dgr {
    pub fn new(clauses: impl IntoIterator<Item = Conjunction>) -> Self {
        let mut clauses: Vec<Conjunction> = clauses.into_iter().collect();
        if clauses.iter().any(|c| c.is_empty()) {
            return Self::identity();
        }
        clauses.sort();
        clauses.dedup();
        Self { clauses }
    }

    /// The rule that selects every row.
    pub fn identity() -> Self {
        Self { clauses: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn clauses(&self) -> &[Conjunction] {
        &self.clauses
    }

    pub fn or(&self, other: &Dgr) -> Dgr {
        if self.is_identity() || other.is_identity() {
            return Dgr::identity();
        }
        Dgr::new(self.clauses.iter().chain(&other.clauses).cloned())
    }

    pub fn is_satisfiable(&self) -> bool {
        self.is_identity() || self.clauses.iter().any(Conjunction::is_satisfiable)
    }

    /// Union of every clause's predicates.
    pub fn predicate_set(&self) -> BTreeSet<&Predicate> {
        self.clauses.iter().flat_map(|c| c.predicates()).collect()
    }

    pub fn mentions(&self, attribute: &str) -> bool {
        self.clauses.iter().any(|c| c.mentions(attribute))
    }

    /// Validates every predicate against `schema` and rejects predicates on
    /// the target attribute.
    pub fn check(&self, schema: &Schema) -> Result<()> {
        for p in self.predicate_set() {
            p.check(schema)?;
        }
        if self.mentions(schema.target_name()) {
            return Err(Error::Schema(format!(
                "rule `{self}` constrains the target attribute `{}`",
                schema.target_name()
            )));
        }
        Ok(())
    }

    fn compile(&self, schema: &Schema) -> Result<Vec<Vec<(usize, &Predicate)>>> {
        self.clauses
            .iter()
            .filter(|c| c.is_satisfiable())
            .map(|c| c.predicates().iter().map(|p| Ok((p.check(schema)?, p))).collect())
            .collect()
    }

    pub fn satisfies(&self, schema: &Schema, row: &[Value]) -> Result<bool> {
        if self.is_identity() {
            return Ok(true);
        }
        let compiled = self.compile(schema)?;
        Ok(eval_compiled(&compiled, row))
    }

    /// Row indices of `t` satisfying the rule, in table order.
    pub fn matching_indices(&self, t: &Table) -> Result<Vec<usize>> {
        if self.is_identity() {
            return Ok((0..t.len()).collect());
        }
        let compiled = self.compile(t.schema())?;
        Ok((0..t.len()).filter(|&i| eval_compiled(&compiled, t.row(i))).collect())
    }

    /// `T_r`: the rows of `t` satisfying the rule, order preserved.
    pub fn filter(&self, t: &Table) -> Result<Table> {
        Ok(t.select(&self.matching_indices(t)?))
    }
}

fn eval_compiled(clauses: &[Vec<(usize, &Predicate)>], row: &[Value]) -> bool {
    clauses.iter().any(|c| c.iter().all(|(i, p)| p.holds(&row[*i])))
}

/// Free-function form of [`Dgr::satisfies`].
pub fn satisfies(schema: &Schema, row: &Record, r: &Dgr) -> Result<bool> {
    r.satisfies(schema, row)
}

/// Free-function form of [`Dgr::filter`].
pub fn filter(t: &Table, r: &Dgr) -> Result<Table> {
    r.filter(t)
}

impl fmt::Display for Dgr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return f.write_str("TRUE");
        }
        for (i, c) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(" OR ")?;
            }
            write!(f, "({c})")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Dgr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_dgr(s)
    }
}

// ---- text parser -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(Op),
    And,
    Or,
    True,
    LParen,
    RParen,
}

fn lex(s: &str) -> Result<Vec<(usize, Tok)>> {
    let err = |offset: usize, message: &str| Error::RuleParse { offset, message: message.into() };
    let b: Vec<(usize, char)> = s.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let (off, c) = b[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let next = b.get(i + 1).map(|x| x.1);
        match c {
            '(' => {
                out.push((off, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((off, Tok::RParen));
                i += 1;
            }
            '>' | '<' | '=' | '!' => {
                let (op, width) = match (c, next) {
                    ('>', Some('=')) => (Op::Ge, 2),
                    ('<', Some('=')) => (Op::Le, 2),
                    ('!', Some('=')) => (Op::Ne, 2),
                    ('=', Some('=')) => (Op::Eq, 2),
                    ('>', _) => (Op::Gt, 1),
                    ('<', _) => (Op::Lt, 1),
                    ('=', _) => (Op::Eq, 1),
                    _ => return Err(err(off, "expected `!=`")),
                };
                out.push((off, Tok::Op(op)));
                i += width;
            }
            '≥' | '≤' | '≠' => {
                let op = match c {
                    '≥' => Op::Ge,
                    '≤' => Op::Le,
                    _ => Op::Ne,
                };
                out.push((off, Tok::Op(op)));
                i += 1;
            }
            '∧' => {
                out.push((off, Tok::And));
                i += 1;
            }
            '∨' => {
                out.push((off, Tok::Or));
                i += 1;
            }
            '"' | '\'' => {
                let quote = c;
                let mut text = String::new();
                i += 1;
                loop {
                    match b.get(i) {
                        None => return Err(err(off, "unterminated string")),
                        Some((_, '\\')) => {
                            let (_, e) = *b.get(i + 1).ok_or_else(|| err(off, "dangling escape"))?;
                            text.push(e);
                            i += 2;
                        }
                        Some((_, ch)) if *ch == quote => {
                            i += 1;
                            break;
                        }
                        Some((_, ch)) => {
                            text.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push((off, Tok::Str(text)));
            }
            '`' => {
                let mut text = String::new();
                i += 1;
                loop {
                    match b.get(i) {
                        None => return Err(err(off, "unterminated quoted attribute")),
                        Some((_, '`')) if b.get(i + 1).map(|x| x.1) == Some('`') => {
                            text.push('`');
                            i += 2;
                        }
                        Some((_, '`')) => {
                            i += 1;
                            break;
                        }
                        Some((_, ch)) => {
                            text.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push((off, Tok::Ident(text)));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = i;
                while i < b.len() {
                    let ch = b[i].1;
                    let sign_after_exp =
                        (ch == '-' || ch == '+') && i > start && matches!(b[i - 1].1, 'e' | 'E');
                    if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || sign_after_exp || i == start {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let end = b.get(i).map(|x| x.0).unwrap_or(s.len());
                let text = &s[off..end];
                let v: f64 = text.parse().map_err(|_| err(off, "malformed number"))?;
                if !v.is_finite() {
                    return Err(err(off, "number is not finite"));
                }
                out.push((off, Tok::Num(v)));
            }
            c if c.is_alphanumeric() || c == '_' => {
                let start = i;
                while i < b.len() && (b[i].1.is_alphanumeric() || b[i].1 == '_' || b[i].1 == '.') {
                    i += 1;
                }
                let end = b.get(i).map(|x| x.0).unwrap_or(s.len());
                let word = &s[b[start].0..end];
                let tok = if word.eq_ignore_ascii_case("and") {
                    Tok::And
                } else if word.eq_ignore_ascii_case("or") {
                    Tok::Or
                } else if word.eq_ignore_ascii_case("true") {
                    Tok::True
                } else {
                    Tok::Ident(word.to_string())
                };
                out.push((off, tok));
            }
            _ => return Err(err(off, &format!("unexpected character `{c}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.len)
    }

    fn fail<T>(&self, message: &str) -> Result<T> {
        Err(Error::RuleParse { offset: self.offset(), message: message.into() })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn dgr(&mut self) -> Result<Dgr> {
        let mut clauses = vec![self.clause()?];
        while self.peek() == Some(&Tok::Or) {
            self.bump();
            clauses.push(self.clause()?);
        }
        if self.pos < self.toks.len() {
            return self.fail("expected `OR` or end of rule");
        }
        Ok(Dgr::new(clauses))
    }

    fn clause(&mut self) -> Result<Conjunction> {
        if self.peek() == Some(&Tok::LParen) {
            self.bump();
            let c = self.conjunction()?;
            if self.bump() != Some(Tok::RParen) {
                self.pos -= 1;
                return self.fail("expected `)`");
            }
            Ok(c)
        } else {
            self.conjunction()
        }
    }

    fn conjunction(&mut self) -> Result<Conjunction> {
        if self.peek() == Some(&Tok::True) {
            self.bump();
            return Ok(Conjunction::default());
        }
        let mut preds = vec![self.predicate()?];
        while self.peek() == Some(&Tok::And) {
            self.bump();
            preds.push(self.predicate()?);
        }
        Ok(Conjunction::new(preds))
    }

    fn predicate(&mut self) -> Result<Predicate> {
        let attribute = match self.bump() {
            Some(Tok::Ident(a)) => a,
            _ => {
                self.pos -= 1;
                return self.fail("expected attribute name");
            }
        };
        let op = match self.bump() {
            Some(Tok::Op(op)) => op,
            _ => {
                self.pos -= 1;
                return self.fail("expected comparison operator");
            }
        };
        let constant = match self.bump() {
            Some(Tok::Num(v)) => Value::Num(v),
            Some(Tok::Str(s)) | Some(Tok::Ident(s)) => Value::Cat(s),
            _ => {
                self.pos -= 1;
                return self.fail("expected constant");
            }
        };
        Ok(Predicate { attribute, op, constant })
    }
}

/// Parses the text form, e.g. `(a > 5 AND b <= 3) OR (c = "x")`. `TRUE`
/// denotes the identity rule.
pub fn parse_dgr(s: &str) -> Result<Dgr> {
    let toks = lex(s)?;
    if toks.is_empty() {
        return Err(Error::RuleParse { offset: 0, message: "empty rule".into() });
    }
    Parser { toks, pos: 0, len: s.len() }.dgr()
}

/// Parses a rule and coerces numeric-looking constants on categorical
/// attributes to tokens, then validates it against `schema`.
pub fn parse_dgr_for(s: &str, schema: &Schema) -> Result<Dgr> {
    let raw = parse_dgr(s)?;
    let clauses = raw.clauses().iter().map(|c| {
        Conjunction::new(c.predicates().iter().map(|p| {
            let mut p = p.clone();
            if let (Some(i), Value::Num(v)) = (schema.index_of(&p.attribute), &p.constant) {
                if schema.kind(i) == Kind::Categorical {
                    p.constant = Value::Cat(v.to_string());
                }
            }
            p
        }))
    });
    let d = Dgr::new(clauses);
    d.check(schema)?;
    Ok(d)
}

// ---- overlap and diversity ---------------------------------------------------

/// How two rules' predicate sets are compared.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum OverlapMode {
    /// Exact Jaccard similarity over predicate sets.
    #[default]
    Jaccard,
    /// Soft Jaccard where two numeric predicates on the same attribute count
    /// as the intersection-over-union of the half-lines they admit, clipped to
    /// the given attribute ranges.
    Interval(BTreeMap<String, (f64, f64)>),
}

fn admitted_interval(p: &Predicate, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let c = p.constant.as_f64()?.clamp(lo, hi);
    match p.op {
        Op::Gt | Op::Ge => Some((c, hi)),
        Op::Lt | Op::Le => Some((lo, c)),
        _ => None,
    }
}

fn soft_similarity(p: &Predicate, q: &Predicate, ranges: &BTreeMap<String, (f64, f64)>) -> f64 {
    if p == q {
        return 1.0;
    }
    if p.attribute != q.attribute {
        return 0.0;
    }
    let Some(&(lo, hi)) = ranges.get(&p.attribute) else {
        return 0.0;
    };
    if hi <= lo {
        return 0.0;
    }
    match (admitted_interval(p, lo, hi), admitted_interval(q, lo, hi)) {
        (Some((a0, a1)), Some((b0, b1))) => {
            let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
            let union = a1.max(b1) - a0.min(b0);
            if union > 0.0 {
                inter / union
            } else {
                1.0
            }
        }
        _ => 0.0,
    }
}

/// Similarity of two rules' predicate sets in `[0, 1]`. Two identity rules
/// overlap fully.
pub fn overlap_with(r1: &Dgr, r2: &Dgr, mode: &OverlapMode) -> f64 {
    let p1 = r1.predicate_set();
    let p2 = r2.predicate_set();
    if p1.is_empty() && p2.is_empty() {
        return 1.0;
    }
    match mode {
        OverlapMode::Jaccard => {
            let inter = p1.intersection(&p2).count() as f64;
            let union = p1.union(&p2).count() as f64;
            inter / union
        }
        OverlapMode::Interval(ranges) => {
            let best = |from: &BTreeSet<&Predicate>, to: &BTreeSet<&Predicate>| -> f64 {
                from.iter()
                    .map(|p| to.iter().map(|q| soft_similarity(p, q, ranges)).fold(0.0, f64::max))
                    .sum()
            };
            let s = 0.5 * (best(&p1, &p2) + best(&p2, &p1));
            let denom = p1.len() as f64 + p2.len() as f64 - s;
            if denom <= 0.0 {
                1.0
            } else {
                (s / denom).clamp(0.0, 1.0)
            }
        }
    }
}

pub fn overlap(r1: &Dgr, r2: &Dgr) -> f64 {
    overlap_with(r1, r2, &OverlapMode::Jaccard)
}

/// Weighted overlap of `candidate` with `context`, each context rule weighted
/// by its share of the total context size.
pub fn diversity_of(candidate: &Dgr, context: &[(&Dgr, usize)], mode: &OverlapMode) -> Result<f64> {
    if context.is_empty() {
        return Err(Error::Argument("diversity needs a nonempty context".into()));
    }
    let total: usize = context.iter().map(|c| c.1).sum();
    let value = if total == 0 {
        context.iter().map(|(r, _)| overlap_with(candidate, r, mode)).sum::<f64>() / context.len() as f64
    } else {
        context
            .iter()
            .map(|(r, n)| *n as f64 / total as f64 * overlap_with(candidate, r, mode))
            .sum()
    };
    Ok(value.clamp(0.0, 1.0))
}

pub fn diversity(candidate: &Example, context: &[Example]) -> Result<f64> {
    if let Some(e) = context.iter().find(|e| e.model_id != candidate.model_id) {
        return Err(Error::Argument(format!(
            "context example uses model {} but candidate uses {}",
            e.model_id, candidate.model_id
        )));
    }
    let ctx: Vec<(&Dgr, usize)> = context.iter().map(|e| (&e.rule, e.data.len())).collect();
    diversity_of(&candidate.rule, &ctx, &OverlapMode::Jaccard)
}

// ---- examples ----------------------------------------------------------------

/// A certified `(model, ρ, rule, rows)` tuple: the model predicts every row
/// selected by the rule within `rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub model_id: ModelId,
    pub rho: f64,
    pub rule: Dgr,
    pub data: Table,
    /// Queue priority (sharing index of the parent rule) when it was popped.
    pub ind: f64,
    /// First example of its model group in prompts.
    pub representative: bool,
}

impl Example {
    pub fn new(model_id: ModelId, rho: f64, rule: Dgr, data: Table) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Argument(format!("threshold must be positive, got {rho}")));
        }
        if data.is_empty() {
            return Err(Error::Argument("example data is empty".into()));
        }
        if rule.matching_indices(&data)?.len() != data.len() {
            return Err(Error::Argument(format!("some rows do not satisfy `{rule}`")));
        }
        Ok(Self { model_id, rho, rule, data, ind: 0.0, representative: false })
    }

    pub fn with_ind(mut self, ind: f64) -> Self {
        self.ind = ind;
        self
    }

    /// Weakens the certified threshold to `rho2`; rule and rows are untouched.
    pub fn generalize(&self, rho2: f64) -> Result<Example> {
        if rho2 < self.rho {
            return Err(Error::Monotonicity(format!("{rho2} is below the current threshold {}", self.rho)));
        }
        Ok(Example { rho: rho2, ..self.clone() })
    }

    /// Merges two examples certified by the same model at the same threshold.
    /// The rule becomes the disjunction and rows are unioned by row id.
    pub fn fuse(&self, other: &Example) -> Result<Example> {
        if self.model_id != other.model_id {
            return Err(Error::Fusion(format!(
                "examples use different models ({} and {})",
                self.model_id, other.model_id
            )));
        }
        if self.rho != other.rho {
            return Err(Error::Fusion(format!(
                "thresholds differ ({} and {}); generalize first",
                self.rho, other.rho
            )));
        }
        let seen: HashSet<RowId> = self.data.ids().iter().copied().collect();
        let extra: Vec<usize> =
            (0..other.data.len()).filter(|&i| !seen.contains(&other.data.ids()[i])).collect();
        let data = crate::table::union(&self.data, &other.data.select(&extra))?;
        Ok(Example {
            model_id: self.model_id,
            rho: self.rho,
            rule: self.rule.or(&other.rule),
            data,
            ind: self.ind.max(other.ind),
            representative: self.representative || other.representative,
        })
    }
}

pub fn fuse(e1: &Example, e2: &Example) -> Result<Example> {
    e1.fuse(e2)
}

pub fn generalize(e: &Example, rho2: f64) -> Result<Example> {
    e.generalize(rho2)
}

pub fn refine(r: &Conjunction, p: Predicate) -> Conjunction {
    r.refine(p)
}
