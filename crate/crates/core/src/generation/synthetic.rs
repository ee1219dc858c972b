//! Offline generator: samples inside rule rectangles and labels rows with a
//! configured function or the nearest sample row.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GenerateRequest, GeneratorBackend, RefineRequest};
use crate::discovery::PromptExample;
use crate::error::Result;
use crate::rules::{Conjunction, Op};
use crate::table::{largest_remainder, write_csv_to, Kind, Provenance, Record, Schema, Table, Value};

/// Labelling function: receives a full record (target slot unspecified) and
/// returns the target value.
pub type Oracle = Arc<dyn Fn(&Schema, &[Value]) -> Value + Send + Sync>;

/// Attempts per row before a clause is treated as empty.
const MAX_TRIES: usize = 64;

#[derive(Clone)]
pub struct SyntheticBackend {
    ranges: BTreeMap<usize, (f64, f64)>,
    tokens: BTreeMap<usize, Vec<String>>,
    oracle: Option<Oracle>,
}

impl fmt::Debug for SyntheticBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyntheticBackend")
            .field("ranges", &self.ranges)
            .field("tokens", &self.tokens)
            .field("oracle", &self.oracle.is_some())
            .finish()
    }
}

impl SyntheticBackend {
    /// Observed numeric ranges and categorical tokens come from `reference`.
    pub fn new(reference: &Table, oracle: Option<Oracle>) -> Self {
        let mut tokens: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (i, a) in reference.schema().attributes().iter().enumerate() {
            if a.kind == Kind::Categorical {
                let mut seen: Vec<String> =
                    reference.rows().iter().filter_map(|r| r[i].as_str().map(str::to_string)).collect();
                seen.sort();
                seen.dedup();
                tokens.insert(i, seen);
            }
        }
        Self { ranges: reference.numeric_ranges(), tokens, oracle }
    }

    /// Draws one record inside `clause`, or `None` when its rectangle is empty
    /// within the observed ranges.
    fn sample_in(&self, clause: &Conjunction, ex: &PromptExample, rng: &mut ChaCha8Rng) -> Option<Record> {
        let schema = ex.rows.schema();
        let mut rec = Vec::with_capacity(schema.len());
        for (i, a) in schema.attributes().iter().enumerate() {
            if i == schema.target() {
                rec.push(ex.rows.target(0).clone());
                continue;
            }
            let preds: Vec<_> = clause.predicates().iter().filter(|p| p.attribute == a.name).collect();
            match a.kind {
                Kind::Numeric => {
                    let (mut lo, mut hi) = self.ranges.get(&i).copied().unwrap_or((0.0, 0.0));
                    for p in &preds {
                        let Some(c) = p.constant.as_f64() else { continue };
                        match p.op {
                            Op::Gt | Op::Ge => lo = lo.max(c),
                            Op::Lt | Op::Le => hi = hi.min(c),
                            Op::Eq => (lo, hi) = (c, c),
                            Op::Ne => {}
                        }
                    }
                    if lo > hi {
                        return None;
                    }
                    let ok = |v: f64| preds.iter().all(|p| p.holds(&Value::Num(v)));
                    let v = (0..MAX_TRIES)
                        .map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
                        .find(|&v| ok(v))?;
                    rec.push(Value::Num(v));
                }
                Kind::Categorical => {
                    if let Some(p) = preds.iter().find(|p| p.op == Op::Eq) {
                        rec.push(p.constant.clone());
                        continue;
                    }
                    let ok = |v: &Value| preds.iter().all(|p| p.holds(v));
                    let empirical: Vec<&Value> = ex.rows.rows().iter().map(|r| &r[i]).filter(|v| ok(v)).collect();
                    let v = if let Some(v) = empirical.choose(rng) {
                        (*v).clone()
                    } else {
                        let allowed: Vec<Value> = self
                            .tokens
                            .get(&i)
                            .into_iter()
                            .flatten()
                            .map(|t| Value::Cat(t.clone()))
                            .filter(|v| ok(v))
                            .collect();
                        allowed.choose(rng)?.clone()
                    };
                    rec.push(v);
                }
            }
        }
        Some(rec)
    }

    fn nearest_target(&self, rec: &[Value], rows: &Table) -> Value {
        let schema = rows.schema();
        let dist = |r: &Record| -> f64 {
            schema
                .feature_indices()
                .map(|i| match (&rec[i], &r[i]) {
                    (Value::Num(a), Value::Num(b)) => {
                        let span = self.ranges.get(&i).map_or(1.0, |(lo, hi)| (hi - lo).max(1e-12));
                        ((a - b) / span).powi(2)
                    }
                    (a, b) => f64::from(u8::from(a != b)),
                })
                .sum()
        };
        let best = (0..rows.len())
            .min_by(|&a, &b| dist(rows.row(a)).total_cmp(&dist(rows.row(b))).then(a.cmp(&b)))
            .expect("prompt examples carry at least one row");
        rows.target(best).clone()
    }

    /// Rows for the request, before CSV rendering.
    pub fn sample(&self, req: &GenerateRequest<'_>) -> Vec<Record> {
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let alloc = largest_remainder(req.count, &vec![1.0; req.examples.len()]);
        let mut out = Vec::new();
        for (ex, n) in req.examples.iter().zip(alloc) {
            let clauses: Vec<Conjunction> = if ex.rule.is_identity() {
                vec![Conjunction::new([])]
            } else {
                ex.rule.clauses().iter().filter(|c| c.is_satisfiable()).cloned().collect()
            };
            if clauses.is_empty() || ex.rows.is_empty() {
                log::info!("rule `{}` is unsatisfiable; no rows generated for it", ex.rule);
                continue;
            }
            let mut made = 0;
            for j in 0..n {
                let Some(mut rec) = self.sample_in(&clauses[j % clauses.len()], ex, &mut rng) else { continue };
                let t = req.schema.target();
                rec[t] = match &self.oracle {
                    Some(f) => f(req.schema, &rec),
                    None => self.nearest_target(&rec, &ex.rows),
                };
                out.push(rec);
                made += 1;
            }
            if made < n {
                log::info!("rule `{}`: {} of {n} rows fell outside the observed ranges", ex.rule, n - made);
            }
        }
        out
    }
}

impl GeneratorBackend for SyntheticBackend {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn generate(&mut self, req: &GenerateRequest<'_>) -> Result<String> {
        let rows = self.sample(req);
        let t = Table::new(Arc::new(req.schema.clone()), rows, Provenance::Generated)?;
        let mut buf = Vec::new();
        write_csv_to(&t, &mut buf)?;
        Ok(format!("```csv\n{}```\n", String::from_utf8_lossy(&buf)))
    }

    /// Proposes the best improving candidate rules not already in context.
    fn refine_rules(&mut self, req: &RefineRequest<'_>) -> Result<String> {
        let mut picks: Vec<(usize, f64)> = req
            .candidates
            .iter()
            .enumerate()
            .filter(|(_, (r, d))| *d > 0.0 && !req.context.contains(r))
            .map(|(i, (_, d))| (i, *d))
            .collect();
        picks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut lines: Vec<String> = Vec::new();
        for (i, _) in picks {
            let s = req.candidates[i].0.to_string();
            if lines.len() < req.max_rules && !lines.contains(&s) {
                lines.push(s);
            }
        }
        Ok(lines.join("\n"))
    }
}
