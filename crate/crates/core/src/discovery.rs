//! Priority-queue search for rules whose subsets a small tree predicts within
//! a threshold, with reuse of already trained trees.
//!
//! Each popped rule is first offered to the model pool. If no pooled tree fits
//! the subset, a new tree is trained; when that fails too, the rule is
//! extended with the best split predicates of its subset. The number of
//! children pushed is at least `⌈(1 − ind)·|T_r|⌉` whenever that many split
//! predicates exist.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{Conjunction, Dgr, Example};
use crate::table::{stratified_sample, Table, Task};
use crate::tree::{self, ModelId, TreeHyper, TreeModel};

/// Smallest certified threshold. A subset fitted perfectly is certified at
/// this value so thresholds stay positive.
pub const RHO_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    /// Global error threshold: misclassification rate, or the largest
    /// absolute residual for regression.
    pub rho: f64,
    pub max_models: usize,
    /// Maximum number of queue pops.
    pub max_queue: usize,
    pub hyper: TreeHyper,
    /// Offer popped rules to already trained trees before training.
    pub sharing: bool,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self::for_task(Task::Classification)
    }
}

impl DiscoveryConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            rho: default_rho(task),
            max_models: 32,
            max_queue: 4096,
            hyper: TreeHyper::default(),
            sharing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_models == 0 {
            return Err(Error::Config("max_models must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn default_rho(task: Task) -> f64 {
    match task {
        Task::Classification => 0.05,
        Task::Regression => 10.0,
    }
}

/// One failed-fit expansion, kept to audit the fan-out bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub rule: String,
    pub ind: f64,
    pub subset: usize,
    /// `max(⌈(1 − ind)·|T_r|⌉, 1)`.
    pub required: usize,
    /// Split predicates on offer for the subset.
    pub available: usize,
    pub pushed: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopOutcome {
    Duplicate,
    Unsatisfiable,
    TooSmall,
    Covered,
    Shared,
    Accepted,
    Expanded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pop {
    pub rule: String,
    /// Queue priority of the rule.
    pub priority: f64,
    pub pool_size: usize,
    pub outcome: PopOutcome,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryStats {
    pub models_trained: usize,
    pub shares: usize,
    pub queue_pops: usize,
    pub expansions: Vec<Expansion>,
    pub pops: Vec<Pop>,
}

#[derive(Clone, Debug)]
pub struct DiscoveryResult {
    pub examples: Vec<Example>,
    /// Trees that certified at least one subset, in training order.
    pub models: Vec<TreeModel>,
    pub stats: DiscoveryStats,
    pub wall_time_ms: f64,
}

impl DiscoveryResult {
    pub fn model(&self, id: ModelId) -> Option<&TreeModel> {
        self.models.iter().find(|m| m.id == id)
    }

    /// Examples grouped by model, groups in model order.
    pub fn groups(&self) -> BTreeMap<ModelId, Vec<&Example>> {
        let mut out: BTreeMap<ModelId, Vec<&Example>> = BTreeMap::new();
        for e in &self.examples {
            out.entry(e.model_id).or_default().push(e);
        }
        out
    }
}

/// Fraction of `t_r` that the best pool model predicts within its own
/// threshold; 0 for an empty pool.
pub fn sharing_index(t_r: &Table, pool: &[TreeModel]) -> Result<f64> {
    if t_r.is_empty() {
        return Err(Error::Argument("sharing index of an empty subset".into()));
    }
    let mut best = 0.0f64;
    for m in pool {
        let rho = m.rho.unwrap_or(f64::INFINITY);
        let mut ok = 0usize;
        for r in t_r.rows() {
            if m.row_error(r)? <= rho {
                ok += 1;
            }
        }
        best = best.max(ok as f64 / t_r.len() as f64);
    }
    Ok(best)
}

/// First pool model, in insertion order, whose acceptance error on `t_r` is
/// within its threshold, with that error.
pub fn try_share(t_r: &Table, pool: &[TreeModel]) -> Result<Option<(usize, f64)>> {
    if t_r.is_empty() {
        return Err(Error::Argument("cannot share an empty subset".into()));
    }
    for (i, m) in pool.iter().enumerate() {
        let e = m.acceptance_error(t_r)?;
        if e <= m.rho.unwrap_or(f64::INFINITY) {
            return Ok(Some((i, e)));
        }
    }
    Ok(None)
}

struct Entry {
    rule: Conjunction,
    priority: f64,
    seq: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Max-heap order: higher priority, then fewer predicates, then earlier push.
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.rule.len().cmp(&self.rule.len()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub fn discover(train: &Table, cfg: &DiscoveryConfig) -> Result<DiscoveryResult> {
    cfg.validate()?;
    let start = Instant::now();
    let min_subset = 2 * cfg.hyper.min_leaf.max(1);
    if train.len() < min_subset {
        return Err(Error::Discovery(format!("table has {} rows, need at least {min_subset}", train.len())));
    }

    let mut heap = BinaryHeap::new();
    heap.push(Entry { rule: Conjunction::default(), priority: 0.0, seq: 0 });
    let mut seq = 1u64;
    let mut seen: HashSet<Conjunction> = HashSet::new();
    let mut pool: Vec<TreeModel> = Vec::new();
    let mut examples: Vec<Example> = Vec::new();
    let mut stats = DiscoveryStats::default();
    // Rows certified by some example, and rows in subsets that could be
    // neither fitted nor split further.
    let mut settled = vec![false; train.len()];
    let mut unsettled = train.len();

    while let Some(entry) = heap.pop() {
        if stats.queue_pops >= cfg.max_queue || unsettled == 0 {
            break;
        }
        stats.queue_pops += 1;
        let rule = Dgr::from(entry.rule.clone());
        let record = |outcome: PopOutcome, pool_size: usize, stats: &mut DiscoveryStats| {
            stats.pops.push(Pop { rule: rule.to_string(), priority: entry.priority, pool_size, outcome });
        };
        if !seen.insert(entry.rule.clone()) {
            record(PopOutcome::Duplicate, pool.len(), &mut stats);
            continue;
        }
        if !entry.rule.is_satisfiable() {
            record(PopOutcome::Unsatisfiable, pool.len(), &mut stats);
            continue;
        }
        let idx = rule.matching_indices(train)?;
        if idx.len() < min_subset {
            record(PopOutcome::TooSmall, pool.len(), &mut stats);
            continue;
        }
        if idx.iter().all(|&i| settled[i]) {
            record(PopOutcome::Covered, pool.len(), &mut stats);
            continue;
        }
        let t_r = train.select(&idx);
        let mut settle = |settled: &mut Vec<bool>| {
            for &i in &idx {
                if !settled[i] {
                    settled[i] = true;
                    unsettled -= 1;
                }
            }
        };

        if cfg.sharing {
            if let Some((mi, err)) = try_share(&t_r, &pool)? {
                let m = &mut pool[mi];
                let rho = m.rho.unwrap_or(cfg.rho).min(err.max(RHO_FLOOR));
                m.rho = Some(rho);
                log::debug!("rule `{rule}` shares {} at error {err}", m.id);
                examples.push(Example::new(m.id, rho, rule.clone(), t_r)?.with_ind(entry.priority));
                stats.shares += 1;
                record(PopOutcome::Shared, pool.len(), &mut stats);
                settle(&mut settled);
                continue;
            }
        }

        let ind = sharing_index(&t_r, &pool)?;
        if stats.models_trained >= cfg.max_models {
            log::info!("model budget of {} exhausted", cfg.max_models);
            break;
        }
        let mut m = tree::train(&t_r, &cfg.hyper, ModelId(stats.models_trained as u32))?;
        stats.models_trained += 1;
        let err = m.acceptance_error(&t_r)?;
        if err <= cfg.rho {
            let rho = err.max(RHO_FLOOR);
            m.rho = Some(rho);
            log::debug!("rule `{rule}` certified by new {} at error {err}", m.id);
            examples.push(Example::new(m.id, rho, rule.clone(), t_r)?.with_ind(entry.priority));
            pool.push(m);
            record(PopOutcome::Accepted, pool.len() - 1, &mut stats);
            settle(&mut settled);
            continue;
        }

        let required = (((1.0 - ind) * t_r.len() as f64).ceil() as usize).max(1);
        let candidates = tree::split_candidates_with(&t_r, usize::MAX, 1)?;
        let available = candidates.len();
        let pushed = required.min(available);
        if candidates.is_empty() {
            settle(&mut settled);
        }
        for c in candidates.into_iter().take(pushed) {
            heap.push(Entry { rule: entry.rule.refine(c.predicate), priority: ind, seq });
            seq += 1;
        }
        stats.expansions.push(Expansion { rule: rule.to_string(), ind, subset: t_r.len(), required, available, pushed });
        record(PopOutcome::Expanded, pool.len(), &mut stats);
    }

    if examples.is_empty() {
        return Err(Error::Discovery(format!(
            "no subset could be certified at rho={} within {} models; loosen rho",
            cfg.rho, cfg.max_models
        )));
    }
    let mut examples = fuse_overlapping(examples)?;
    mark_representatives(&mut examples);
    for m in &mut pool {
        if let Some(r) = examples.iter().filter(|e| e.model_id == m.id).map(|e| e.rho).reduce(f64::max) {
            m.rho = Some(m.rho.unwrap_or(r).max(r));
        }
    }
    Ok(DiscoveryResult { examples, models: pool, stats, wall_time_ms: start.elapsed().as_secs_f64() * 1e3 })
}

/// Within each model, fuses examples whose row sets intersect (transitively)
/// after generalizing them to the largest threshold among them.
pub fn fuse_overlapping(examples: Vec<Example>) -> Result<Vec<Example>> {
    let n = examples.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let rows: Vec<HashSet<_>> = examples.iter().map(|e| e.data.ids().iter().copied().collect()).collect();
    for i in 0..n {
        for j in i + 1..n {
            if examples[i].model_id == examples[j].model_id && !rows[i].is_disjoint(&rows[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        components.entry(root).or_default().push(i);
    }
    let mut out = Vec::with_capacity(components.len());
    for members in components.into_values() {
        let rho = members.iter().map(|&i| examples[i].rho).fold(0.0, f64::max);
        let mut fused = examples[members[0]].generalize(rho)?;
        for &i in &members[1..] {
            fused = fused.fuse(&examples[i].generalize(rho)?)?;
        }
        out.push(fused);
    }
    Ok(out)
}

fn mark_representatives(examples: &mut [Example]) {
    let mut best: BTreeMap<ModelId, usize> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        match best.get(&e.model_id) {
            Some(&j) if examples[j].ind >= e.ind => {}
            _ => {
                best.insert(e.model_id, i);
            }
        }
    }
    for (i, e) in examples.iter_mut().enumerate() {
        e.representative = best.get(&e.model_id) == Some(&i);
    }
}

/// A rule with the sample rows shown for it in a prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptExample {
    pub model_id: ModelId,
    pub rule: Dgr,
    pub rows: Table,
    pub representative: bool,
}

/// Samples up to `per_rule` rows per example, stratified on the target.
/// Groups follow model order; the representative example leads its group and
/// the rest keep discovery order.
pub fn build_prompt_examples(examples: &[Example], per_rule: usize, seed: u64) -> Result<Vec<PromptExample>> {
    if per_rule == 0 {
        return Err(Error::Argument("per_rule must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].model_id, !examples[i].representative, i));
    order
        .into_iter()
        .map(|i| {
            let e = &examples[i];
            let n = per_rule.min(e.data.len());
            Ok(PromptExample {
                model_id: e.model_id,
                rule: e.rule.clone(),
                rows: stratified_sample(&e.data, n, seed.wrapping_add(i as u64))?,
                representative: e.representative,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Op, Predicate};
    use crate::table::{Attribute, Kind, Provenance, Record, Schema, Value};
    use std::sync::Arc;

    fn schema(cols: &[&str]) -> Arc<Schema> {
        let mut attrs: Vec<Attribute> = cols.iter().map(|c| Attribute::new(*c, Kind::Numeric)).collect();
        attrs.push(Attribute::new("y", Kind::Categorical));
        Arc::new(Schema::new(attrs, "y", Task::Classification).unwrap())
    }

    fn lbl(s: &str) -> Value {
        Value::Cat(s.into())
    }

    fn table(cols: &[&str], rows: Vec<Record>) -> Table {
        Table::new(schema(cols), rows, Provenance::Original).unwrap()
    }

    fn model_correct_on(t: &Table, id: u32) -> TreeModel {
        let mut m = tree::train(t, &TreeHyper::default(), ModelId(id)).unwrap();
        m.rho = Some(0.05);
        m
    }

    #[test]
    fn sharing_index_examples() {
        let rows: Vec<Record> = (0..10).map(|i| vec![Value::Num(i as f64), lbl("a")]).collect();
        let t = table(&["x"], rows);
        assert_eq!(sharing_index(&t, &[]).unwrap(), 0.0);
        let m = model_correct_on(&t, 0);
        // relabel two rows so the constant model is right on 8 of 10
        let mut rows: Vec<Record> = t.rows().to_vec();
        rows[0][1] = lbl("b");
        rows[1][1] = lbl("b");
        let t8 = table(&["x"], rows.clone());
        assert!((sharing_index(&t8, std::slice::from_ref(&m)).unwrap() - 0.8).abs() < 1e-12);
        rows[0][1] = lbl("a");
        rows[2][1] = lbl("b");
        rows[3][1] = lbl("b");
        rows[4][1] = lbl("b");
        let t6 = table(&["x"], rows);
        // a second model trained on the 6/10 table predicts it perfectly
        let m2 = model_correct_on(&t6, 1);
        let probe: Vec<Record> = (0..10)
            .map(|i| vec![Value::Num(i as f64), lbl(if i == 9 { "b" } else { "a" })])
            .collect();
        let probe = table(&["x"], probe);
        let a = sharing_index(&probe, std::slice::from_ref(&m)).unwrap();
        let both = sharing_index(&probe, &[m2, m]).unwrap();
        assert!((a - 0.9).abs() < 1e-12);
        assert!(both >= a);
    }

    #[test]
    fn try_share_prefers_the_earlier_model() {
        let rows: Vec<Record> = (0..10).map(|i| vec![Value::Num(i as f64), lbl("a")]).collect();
        let t = table(&["x"], rows);
        assert_eq!(try_share(&t, &[]).unwrap(), None);
        let pool = vec![model_correct_on(&t, 0), model_correct_on(&t, 1)];
        assert_eq!(try_share(&t, &pool).unwrap(), Some((0, 0.0)));
    }

    #[test]
    fn homogeneous_table_yields_one_identity_example() {
        let rows: Vec<Record> = (0..40).map(|i| vec![Value::Num(i as f64), lbl("a")]).collect();
        let t = table(&["x"], rows);
        let r = discover(&t, &DiscoveryConfig::for_task(Task::Classification)).unwrap();
        assert_eq!(r.examples.len(), 1);
        assert!(r.examples[0].rule.is_identity());
        assert_eq!(r.stats.models_trained, 1);
        assert!(r.examples[0].representative);
    }

    #[test]
    fn queue_order_prefers_priority_then_shorter_then_earlier() {
        let short = Conjunction::new(vec![Predicate::num("x", Op::Gt, 1.0)]);
        let long = short.refine(Predicate::num("z", Op::Gt, 1.0));
        let mut h = BinaryHeap::new();
        h.push(Entry { rule: long.clone(), priority: 0.5, seq: 0 });
        h.push(Entry { rule: short.clone(), priority: 0.5, seq: 1 });
        h.push(Entry { rule: short.clone(), priority: 0.5, seq: 2 });
        h.push(Entry { rule: long.clone(), priority: 0.9, seq: 3 });
        let order: Vec<u64> = std::iter::from_fn(|| h.pop().map(|e| e.seq)).collect();
        assert_eq!(order, vec![3, 1, 2, 0]);
    }

    #[test]
    fn zero_examples_is_an_error() {
        // identical features with conflicting labels: nothing fits, nothing splits
        let rows: Vec<Record> =
            (0..20).map(|i| vec![Value::Num(1.0), lbl(if i % 2 == 0 { "a" } else { "b" })]).collect();
        let t = table(&["x"], rows);
        let err = discover(&t, &DiscoveryConfig::for_task(Task::Classification)).unwrap_err();
        assert!(matches!(err, Error::Discovery(m) if m.contains("loosen")));
    }

    fn ex(model: u32, ind: f64, lo: f64, t: &Table) -> Example {
        let rule = Dgr::from(Conjunction::new(vec![Predicate::num("x", Op::Ge, lo)]));
        let data = rule.filter(t).unwrap();
        Example::new(ModelId(model), 0.05, rule, data).unwrap().with_ind(ind)
    }

    #[test]
    fn representative_leads_its_group() {
        let rows: Vec<Record> =
            (0..30).map(|i| vec![Value::Num(i as f64), lbl(if i % 3 == 0 { "a" } else { "b" })]).collect();
        let t = table(&["x"], rows);
        let mut es = vec![ex(0, 0.5, 0.0, &t), ex(0, 0.9, 10.0, &t), ex(0, 0.7, 20.0, &t)];
        mark_representatives(&mut es);
        let p = build_prompt_examples(&es, 3, 1).unwrap();
        assert!(p[0].representative);
        assert_eq!(p[0].rule, es[1].rule);
        assert_eq!(p.iter().filter(|x| x.representative).count(), 1);
        // 30 rows at 1:2 → 1 and 2 of a 3-row sample
        let counts = |t: &Table, c: &str| t.targets().filter(|y| y.as_str() == Some(c)).count();
        assert_eq!((counts(&p[2].rows, "a"), counts(&p[2].rows, "b")), (1, 2));
        let all = build_prompt_examples(&es, 1000, 1).unwrap();
        assert_eq!(all[1].rows.len(), 30);
    }

    #[test]
    fn overlapping_examples_fuse_at_the_larger_threshold() {
        let rows: Vec<Record> = (0..30).map(|i| vec![Value::Num(i as f64), lbl("a")]).collect();
        let t = table(&["x"], rows);
        let a = ex(0, 0.1, 0.0, &t);
        let b = Example { rho: 0.08, ..ex(0, 0.2, 10.0, &t) };
        let c = ex(1, 0.3, 10.0, &t);
        let out = fuse_overlapping(vec![a, b, c]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].rho, 0.08);
        assert_eq!(out[0].data.len(), 30);
        assert_eq!(out[1].model_id, ModelId(1));
    }
}
