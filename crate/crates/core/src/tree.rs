//! CART-style decision trees for classification (Gini) and regression
//! (weighted child variance), with split ranking and decision-path extraction.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{Conjunction, Dgr, Op, Predicate};
use crate::table::{Kind, Schema, Table, Task, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub u32);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeHyper {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for TreeHyper {
    fn default() -> Self {
        Self { max_depth: 8, min_leaf: 2, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        prediction: Value,
        support: usize,
    },
    Split {
        /// Rows satisfying the predicate go left.
        predicate: Predicate,
        support: usize,
        /// Tokens seen at this node for categorical splits; anything else is
        /// routed to the child with larger support.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        seen: Vec<String>,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn support(&self) -> usize {
        match self {
            Node::Leaf { support, .. } | Node::Split { support, .. } => *support,
        }
    }
}

/// A trained tree plus the threshold discovery certified it at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub id: ModelId,
    pub hyper: TreeHyper,
    pub schema: Schema,
    pub root: Node,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

/// Root-to-leaf predicates for one row.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionPath {
    pub predicates: Vec<Predicate>,
    pub leaf_prediction: Value,
    pub path_key: String,
}

impl DecisionPath {
    pub fn conjunction(&self) -> Conjunction {
        Conjunction::new(self.predicates.iter().cloned())
    }

    pub fn rule(&self) -> Dgr {
        Dgr::from(self.conjunction())
    }
}

/// One ranked split predicate and the impurity of the split it comes from.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitCandidate {
    pub predicate: Predicate,
    pub impurity: f64,
}

/// `1 − Σ p_c²` for the given class counts.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

// Snap impurities to a 1e-12 grid so float noise cannot break ties between
// mathematically equal splits.
fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

enum Targets {
    Class { ids: Vec<usize>, classes: Vec<Value> },
    Real(Vec<f64>),
}

impl Targets {
    fn new(t: &Table) -> Result<Self> {
        match t.schema().task() {
            Task::Classification => {
                let classes: Vec<Value> = {
                    let mut c: Vec<Value> = t.targets().cloned().collect();
                    c.sort();
                    c.dedup();
                    c
                };
                let ids = t.targets().map(|y| classes.binary_search(y).unwrap()).collect();
                Ok(Targets::Class { ids, classes })
            }
            Task::Regression => t
                .targets()
                .map(|y| y.as_f64().ok_or_else(|| Error::Training("regression target is not numeric".into())))
                .collect::<Result<Vec<_>>>()
                .map(Targets::Real),
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self {
            Targets::Class { ids, .. } => rows.windows(2).all(|w| ids[w[0]] == ids[w[1]]),
            Targets::Real(y) => rows.windows(2).all(|w| y[w[0]] == y[w[1]]),
        }
    }

    fn leaf_value(&self, rows: &[usize]) -> Value {
        match self {
            Targets::Class { ids, classes } => {
                let mut counts = vec![0usize; classes.len()];
                for &r in rows {
                    counts[ids[r]] += 1;
                }
                // ties resolve to the smallest class
                let mut best = 0;
                for (c, &n) in counts.iter().enumerate() {
                    if n > counts[best] {
                        best = c;
                    }
                }
                classes[best].clone()
            }
            Targets::Real(y) => Value::Num(rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64),
        }
    }
}

/// Accumulates class counts or centered sums for one side of a split.
#[derive(Clone)]
struct Side {
    n: usize,
    counts: Vec<usize>,
    sum: f64,
    sumsq: f64,
}

impl Side {
    fn new(classes: usize) -> Self {
        Self { n: 0, counts: vec![0; classes], sum: 0.0, sumsq: 0.0 }
    }

    /// n times the impurity of this side.
    fn weighted(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        if self.counts.is_empty() {
            (self.sumsq - self.sum * self.sum / n).max(0.0)
        } else {
            n - self.counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n
        }
    }
}

struct Scorer<'a> {
    t: &'a Table,
    targets: &'a Targets,
    min_leaf: usize,
}

/// A split of a node: `predicate` selects the left child.
struct RawSplit {
    attr: usize,
    predicate: Predicate,
    impurity: f64,
    seen: Vec<String>,
}

impl Scorer<'_> {
    fn n_classes(&self) -> usize {
        match self.targets {
            Targets::Class { classes, .. } => classes.len(),
            Targets::Real(_) => 0,
        }
    }

    fn center(&self, rows: &[usize]) -> f64 {
        match self.targets {
            Targets::Real(y) => rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64,
            Targets::Class { .. } => 0.0,
        }
    }

    fn add(&self, side: &mut Side, r: usize, mean: f64) {
        side.n += 1;
        match self.targets {
            Targets::Class { ids, .. } => side.counts[ids[r]] += 1,
            Targets::Real(y) => {
                let d = y[r] - mean;
                side.sum += d;
                side.sumsq += d * d;
            }
        }
    }

    fn sub(&self, side: &mut Side, r: usize, mean: f64) {
        side.n -= 1;
        match self.targets {
            Targets::Class { ids, .. } => side.counts[ids[r]] -= 1,
            Targets::Real(y) => {
                let d = y[r] - mean;
                side.sum -= d;
                side.sumsq -= d * d;
            }
        }
    }

    /// Every valid split of `rows`, unsorted.
    fn splits(&self, rows: &[usize]) -> Vec<RawSplit> {
        let schema = self.t.schema();
        let n = rows.len();
        let mean = self.center(rows);
        let mut out = Vec::new();
        if n < 2 * self.min_leaf.max(1) {
            return out;
        }
        for attr in schema.feature_indices() {
            let name = &schema.attributes()[attr].name;
            match schema.kind(attr) {
                Kind::Numeric => {
                    let mut sorted: Vec<(f64, usize)> =
                        rows.iter().map(|&r| (self.t.row(r)[attr].as_f64().unwrap(), r)).collect();
                    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let mut left = Side::new(self.n_classes());
                    let mut right = Side::new(self.n_classes());
                    for &(_, r) in &sorted {
                        self.add(&mut right, r, mean);
                    }
                    for i in 0..n - 1 {
                        let r = sorted[i].1;
                        self.add(&mut left, r, mean);
                        self.sub(&mut right, r, mean);
                        let (a, b) = (sorted[i].0, sorted[i + 1].0);
                        if a == b || left.n < self.min_leaf || right.n < self.min_leaf {
                            continue;
                        }
                        let mut c = a + (b - a) / 2.0;
                        if !(c >= a && c < b) {
                            c = a;
                        }
                        out.push(RawSplit {
                            attr,
                            predicate: Predicate::num(name.clone(), Op::Le, c),
                            impurity: (left.weighted() + right.weighted()) / n as f64,
                            seen: Vec::new(),
                        });
                    }
                }
                Kind::Categorical => {
                    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                    for &r in rows {
                        groups.entry(self.t.row(r)[attr].as_str().unwrap()).or_default().push(r);
                    }
                    if groups.len() < 2 {
                        continue;
                    }
                    let seen: Vec<String> = groups.keys().map(|s| s.to_string()).collect();
                    for (tok, members) in &groups {
                        if members.len() < self.min_leaf || n - members.len() < self.min_leaf {
                            continue;
                        }
                        let mut left = Side::new(self.n_classes());
                        let mut right = Side::new(self.n_classes());
                        for &r in rows {
                            if self.t.row(r)[attr].as_str() == Some(tok) {
                                self.add(&mut left, r, mean);
                            } else {
                                self.add(&mut right, r, mean);
                            }
                        }
                        out.push(RawSplit {
                            attr,
                            predicate: Predicate::cat(name.clone(), Op::Eq, *tok),
                            impurity: (left.weighted() + right.weighted()) / n as f64,
                            seen: seen.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    fn best(&self, rows: &[usize]) -> Option<RawSplit> {
        self.splits(rows).into_iter().min_by(|a, b| split_order(&a.predicate, a.impurity, &b.predicate, b.impurity))
    }
}

fn split_order(p: &Predicate, ip: f64, q: &Predicate, iq: f64) -> std::cmp::Ordering {
    snap(ip)
        .total_cmp(&snap(iq))
        .then_with(|| p.attribute.cmp(&q.attribute))
        .then_with(|| p.constant.cmp(&q.constant))
        .then_with(|| p.op.cmp(&q.op))
}

struct Builder<'a> {
    scorer: Scorer<'a>,
    max_depth: usize,
}

impl Builder<'_> {
    fn grow(&self, rows: Vec<usize>, depth: usize) -> Node {
        let targets = self.scorer.targets;
        let leaf = |rows: &[usize]| Node::Leaf { prediction: targets.leaf_value(rows), support: rows.len() };
        if depth >= self.max_depth || targets.is_pure(&rows) {
            return leaf(&rows);
        }
        let Some(split) = self.scorer.best(&rows) else {
            return leaf(&rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| split.predicate.holds(&self.scorer.t.row(i)[split.attr]));
        Node::Split {
            support: rows.len(),
            predicate: split.predicate,
            seen: split.seen,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
        }
    }
}

/// Trains a tree on `t`. Deterministic: equal-impurity splits are ordered by
/// attribute name, then constant.
pub fn train(t: &Table, hyper: &TreeHyper, id: ModelId) -> Result<TreeModel> {
    let min_leaf = hyper.min_leaf.max(1);
    if t.len() < 2 * min_leaf {
        return Err(Error::Training(format!("need at least {} rows, got {}", 2 * min_leaf, t.len())));
    }
    let targets = Targets::new(t)?;
    let builder = Builder { scorer: Scorer { t, targets: &targets, min_leaf }, max_depth: hyper.max_depth };
    let root = builder.grow((0..t.len()).collect(), 0);
    Ok(TreeModel { id, hyper: *hyper, schema: t.schema().clone(), root, rho: None })
}

/// The `k` best split predicates of `t`, both branches of every split,
/// ranked by ascending impurity, then attribute name, constant and operator.
/// Children must hold at least `min_leaf` rows.
pub fn split_candidates_with(t: &Table, k: usize, min_leaf: usize) -> Result<Vec<SplitCandidate>> {
    if t.is_empty() {
        return Err(Error::Argument("cannot rank splits of an empty table".into()));
    }
    let targets = Targets::new(t)?;
    let scorer = Scorer { t, targets: &targets, min_leaf: min_leaf.max(1) };
    let rows: Vec<usize> = (0..t.len()).collect();
    let mut out: Vec<SplitCandidate> = scorer
        .splits(&rows)
        .into_iter()
        .flat_map(|s| {
            let right = s.predicate.negate();
            [
                SplitCandidate { predicate: s.predicate, impurity: s.impurity },
                SplitCandidate { predicate: right, impurity: s.impurity },
            ]
        })
        .collect();
    out.sort_by(|a, b| split_order(&a.predicate, a.impurity, &b.predicate, b.impurity));
    out.truncate(k);
    Ok(out)
}

pub fn split_candidates(t: &Table, k: usize) -> Result<Vec<SplitCandidate>> {
    split_candidates_with(t, k, 1)
}

impl TreeModel {
    pub fn task(&self) -> Task {
        self.schema.task()
    }

    fn descend<'a>(&'a self, row: &[Value], mut visit: impl FnMut(&Predicate, bool)) -> Result<&'a Value> {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { prediction, .. } => return Ok(prediction),
                Node::Split { predicate, seen, left, right, .. } => {
                    let idx = self
                        .schema
                        .index_of(&predicate.attribute)
                        .ok_or_else(|| Error::Schema(format!("unknown attribute `{}`", predicate.attribute)))?;
                    let v = &row[idx];
                    let go_left = match (&predicate.op, v) {
                        (Op::Eq, Value::Cat(tok)) if !seen.is_empty() && !seen.contains(tok) && v != &predicate.constant => {
                            let l = left.support() >= right.support();
                            log::debug!(
                                "unseen token `{tok}` at split `{predicate}`, routed {}",
                                if l { "left" } else { "right" }
                            );
                            l
                        }
                        _ => predicate.holds(v),
                    };
                    visit(predicate, go_left);
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[Value]) -> Result<Value> {
        if row.len() != self.schema.len() {
            return Err(Error::Schema(format!("row has {} values, model expects {}", row.len(), self.schema.len())));
        }
        self.descend(row, |_, _| {}).cloned()
    }

    pub fn path(&self, row: &[Value]) -> Result<DecisionPath> {
        if row.len() != self.schema.len() {
            return Err(Error::Schema(format!("row has {} values, model expects {}", row.len(), self.schema.len())));
        }
        let mut predicates = Vec::new();
        let mut key = String::from("ROOT");
        let leaf = self.descend(row, |p, left| {
            predicates.push(if left { p.clone() } else { p.negate() });
            key.push_str(if left { ".L" } else { ".R" });
        })?;
        Ok(DecisionPath { predicates, leaf_prediction: leaf.clone(), path_key: key })
    }

    /// 0/1 loss for classification, absolute residual for regression.
    pub fn row_error(&self, row: &[Value]) -> Result<f64> {
        let pred = self.predict(row)?;
        let y = &row[self.schema.target()];
        Ok(match self.task() {
            Task::Classification => {
                if &pred == y {
                    0.0
                } else {
                    1.0
                }
            }
            Task::Regression => (pred.as_f64().unwrap_or(f64::NAN) - y.as_f64().unwrap_or(f64::NAN)).abs(),
        })
    }

    fn errors(&self, t: &Table) -> Result<Vec<f64>> {
        if t.is_empty() {
            return Err(Error::Argument("error of an empty table is undefined".into()));
        }
        t.rows().iter().map(|r| self.row_error(r)).collect()
    }

    /// Misclassification rate, or mean absolute error for regression.
    pub fn subset_error(&self, t: &Table) -> Result<f64> {
        let e = self.errors(t)?;
        Ok(e.iter().sum::<f64>() / e.len() as f64)
    }

    /// Largest per-row error.
    pub fn max_residual(&self, t: &Table) -> Result<f64> {
        Ok(self.errors(t)?.into_iter().fold(0.0, f64::max))
    }

    /// Error used to certify a subset: the rate for classification, the
    /// largest residual for regression.
    pub fn acceptance_error(&self, t: &Table) -> Result<f64> {
        match self.task() {
            Task::Classification => self.subset_error(t),
            Task::Regression => self.max_residual(t),
        }
    }

    /// Misclassification rate, or mean squared error for regression.
    pub fn eval_error(&self, t: &Table) -> Result<f64> {
        match self.task() {
            Task::Classification => self.subset_error(t),
            Task::Regression => {
                let e = self.errors(t)?;
                Ok(e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64)
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    pub fn leaf_count(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => go(left) + go(right),
            }
        }
        go(&self.root)
    }
}

pub fn predict(m: &TreeModel, row: &[Value]) -> Result<Value> {
    m.predict(row)
}

pub fn path(m: &TreeModel, row: &[Value]) -> Result<DecisionPath> {
    m.path(row)
}

pub fn subset_error(m: &TreeModel, t: &Table) -> Result<f64> {
    m.subset_error(t)
}

pub fn max_residual(m: &TreeModel, t: &Table) -> Result<f64> {
    m.max_residual(t)
}
