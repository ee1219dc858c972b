//! Deterministic synthetic datasets and their labelling functions.
//!
//! * `piecewise`: a binary step function of `x` with light label noise and
//!   an unrelated feature `z`. One band of `x` is rare in the training part
//!   and common in the validation and test parts.
//! * `mixture2`: two Gaussian clusters in `x1` with opposite corner rules
//!   on `x2, x3`.
//! * `duplicate_markers`: two marker columns select groups that share one
//!   labelling rule; a third group follows a two-sided rule.
//! * `greedy_trap`: an engineered train/validation split with three
//!   generated batches where the best single batch is not part of the best
//!   combination. See [`greedy_trap_instance`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::generation::synthetic::Oracle;
use crate::generation::{delta_score, ArmCandidate};
use crate::rules::{parse_dgr, Dgr};
use crate::table::{union, Attribute, Kind, Provenance, Record, RowId, Schema, Table, Task, Value};
use crate::tree::{ModelId, TreeHyper};

pub const FIXTURES: [&str; 4] = ["piecewise", "greedy_trap", "duplicate_markers", "mixture2"];

fn num(v: f64) -> Value {
    Value::Num(v)
}

fn bit(b: bool) -> Value {
    Value::Num(f64::from(u8::from(b)))
}

fn numeric_schema(features: &[&str]) -> Arc<Schema> {
    let mut attrs: Vec<Attribute> = features.iter().map(|f| Attribute::new(*f, Kind::Numeric)).collect();
    attrs.push(Attribute::new("y", Kind::Numeric));
    Arc::new(Schema::new(attrs, "y", Task::Classification).expect("fixture schema"))
}

fn rng(name: &str, seed: u64) -> ChaCha8Rng {
    let tag = name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b)));
    ChaCha8Rng::seed_from_u64(crate::table::derive_seed(seed, &[tag]))
}

/// Fisher-Yates over rows so fixtures do not arrive sorted by group.
fn shuffled(mut rows: Vec<Record>, r: &mut ChaCha8Rng) -> Vec<Record> {
    use rand::seq::SliceRandom;
    rows.shuffle(r);
    rows
}

/// Shape of the `piecewise` fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseParams {
    pub train_rows: usize,
    /// Rows in each of the validation and test parts.
    pub eval_rows: usize,
    /// Chance that a label is flipped.
    pub noise: f64,
    /// Band of `x` that training rows cover at `train_keep` of the usual
    /// density.
    pub band: (f64, f64),
    pub train_keep: f64,
    /// Share of validation and test rows drawn inside the band.
    pub eval_band_share: f64,
}

impl Default for PiecewiseParams {
    fn default() -> Self {
        Self { train_rows: 600, eval_rows: 300, noise: 0.02, band: (3.0, 5.0), train_keep: 0.1, eval_band_share: 0.5 }
    }
}

/// Clean label of `piecewise`: 1 on `[3, 5)` and on `[7.5, 10]`.
pub fn piecewise_label(x: f64) -> bool {
    (3.0..5.0).contains(&x) || x >= 7.5
}

/// Train, validation and test parts of `piecewise`. Row ids are unique
/// across the parts.
pub fn piecewise_parts(p: &PiecewiseParams, seed: u64) -> Result<(Table, Table, Table)> {
    let mut r = rng("piecewise", seed);
    let (lo, hi) = p.band;
    let row = |r: &mut ChaCha8Rng, x: f64| {
        let z: f64 = r.gen_range(0.0..10.0);
        let y = piecewise_label(x) ^ r.gen_bool(p.noise);
        vec![num(x), num(z), bit(y)]
    };
    let mut train = Vec::with_capacity(p.train_rows);
    while train.len() < p.train_rows {
        let x: f64 = r.gen_range(0.0..10.0);
        if (lo..hi).contains(&x) && !r.gen_bool(p.train_keep) {
            continue;
        }
        train.push(row(&mut r, x));
    }
    let eval = |r: &mut ChaCha8Rng| -> Vec<Record> {
        (0..p.eval_rows)
            .map(|_| {
                let x = if r.gen_bool(p.eval_band_share) {
                    r.gen_range(lo..hi)
                } else {
                    loop {
                        let x: f64 = r.gen_range(0.0..10.0);
                        if !(lo..hi).contains(&x) {
                            break x;
                        }
                    }
                };
                row(r, x)
            })
            .collect()
    };
    let val = eval(&mut r);
    let test = eval(&mut r);
    let schema = numeric_schema(&["x", "z"]);
    let mut next = 0u64;
    let mut part = |rows: Vec<Record>| {
        let ids = (next..next + rows.len() as u64).map(RowId).collect();
        next += rows.len() as u64;
        Table::with_ids(Arc::clone(&schema), rows, ids, Provenance::Original)
    };
    Ok((part(train)?, part(val)?, part(test)?))
}

/// All three parts of `piecewise`, stacked.
pub fn piecewise_with(p: &PiecewiseParams, seed: u64) -> Result<Table> {
    let (a, b, c) = piecewise_parts(p, seed)?;
    union(&union(&a, &b)?, &c)
}

/// Clean label of `mixture2`. The left cluster is positive only in the
/// corner `x2 > 0.5, x3 > 0.5`; the right one is negative only in the
/// corner `x2 < −0.5, x3 < −0.5`. Each cluster needs two splits, so a depth-2
/// tree fits either cluster alone but not both together.
pub fn mixture2_label(x1: f64, x2: f64, x3: f64) -> bool {
    if x1 < 0.0 {
        x2 > 0.5 && x3 > 0.5
    } else {
        !(x2 < -0.5 && x3 < -0.5)
    }
}

/// 1,000 noise-free rows, 500 per cluster, with `x2, x3` uniform on
/// `(−2, 2)`.
pub fn mixture2(seed: u64) -> Result<Table> {
    let mut r = rng("mixture2", seed);
    let left = Normal::new(-3.0, 0.7).expect("valid normal");
    let right = Normal::new(3.0, 0.7).expect("valid normal");
    let mut rows = Vec::with_capacity(1000);
    for cluster in [&left, &right] {
        for _ in 0..500 {
            let x1: f64 = cluster.sample(&mut r);
            let x2 = r.gen_range(-2.0..2.0);
            let x3 = r.gen_range(-2.0..2.0);
            rows.push(vec![num(x1), num(x2), num(x3), bit(mixture2_label(x1, x2, x3))]);
        }
    }
    Table::new(numeric_schema(&["x1", "x2", "x3"]), shuffled(rows, &mut r), Provenance::Original)
}

/// Clean label of `duplicate_markers`: `x > 5` inside either marked group,
/// `x < 3 or x > 8` elsewhere.
pub fn duplicate_markers_label(x: f64, m1: f64, m2: f64) -> bool {
    if m1 > 0.5 || m2 > 0.5 {
        x > 5.0
    } else {
        !(3.0..=8.0).contains(&x)
    }
}

/// Two marked groups (`m1 = 1` or `m2 = 1`, 300 rows each) drawn from the
/// same distribution and labelled by the same rule, and 300 unmarked rows
/// with another rule. `x` takes the integers `0..=9`.
pub fn duplicate_markers(seed: u64) -> Result<Table> {
    let mut r = rng("duplicate_markers", seed);
    let mut rows = Vec::with_capacity(900);
    for (m1, m2) in [(1.0, 0.0), (0.0, 1.0), (0.0, 0.0)] {
        for _ in 0..300 {
            let x = r.gen_range(0..10) as f64;
            rows.push(vec![num(x), num(m1), num(m2), bit(duplicate_markers_label(x, m1, m2))]);
        }
    }
    Table::new(numeric_schema(&["x", "m1", "m2"]), shuffled(rows, &mut r), Provenance::Original)
}

/// Clean label of the greedy-trap task: 1 on `[1, 1.5)`, `[2, 2.5)` and
/// `[6, 6.7)`.
pub fn greedy_trap_label(a: f64) -> bool {
    (1.0..1.5).contains(&a) || (2.0..2.5).contains(&a) || (6.0..6.7).contains(&a)
}

/// The greedy-trap selection problem.
///
/// Training rows cover `a ∈ [0, 10)` except the gaps `[0.5, 3)` and
/// `[5.5, 7.5)`, so every training label is 0. Three generated batches:
///
/// * arm 1 labels `[0.5, 1.75)` correctly and repairs the first positive band;
/// * arm 2 labels all of `[0.5, 3)` correctly but also carries two wrong
///   copies of every positive point arm 3 provides;
/// * arm 3 labels `[5.5, 7.5)` correctly, one row per point.
///
/// Alone, arm 2 helps most. After it, neither other arm helps: the first gap
/// is already repaired and arm 3's rows are outvoted. Arms 1 and 3 together
/// beat arm 2. Arms 1 and 3 share a rule that half overlaps the context rule;
/// arm 2's rule overlaps nothing.
#[derive(Clone, Debug)]
pub struct GreedyTrap {
    pub train: Table,
    /// Selection split.
    pub val: Table,
    /// Untouched split for scoring the final choices.
    pub holdout: Table,
    pub context: Vec<(Dgr, usize)>,
    pub arms: Vec<ArmCandidate>,
    pub hyper: TreeHyper,
    /// Threshold of the notional model the arms were generated for.
    pub rho: f64,
}

fn schema_a() -> Arc<Schema> {
    numeric_schema(&["a"])
}

fn labelled(points: impl IntoIterator<Item = f64>) -> Vec<Record> {
    points.into_iter().map(|a| vec![num(a), bit(greedy_trap_label(a))]).collect()
}

/// One jittered point per cell of width `1/per_unit` over `[lo, hi)`.
fn jittered(lo: f64, hi: f64, per_unit: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let cells = ((hi - lo) * per_unit as f64).round() as usize;
    (0..cells).map(|i| lo + (i as f64 + r.gen_range(0.0..1.0)) / per_unit as f64).collect()
}

pub fn greedy_trap_instance(seed: u64) -> Result<GreedyTrap> {
    let mut r = rng("greedy_trap", seed);
    let s = schema_a();
    let mut next_id = 0u64;
    let mut table = |rows: Vec<Record>, prov: Provenance, base: u64| -> Result<Table> {
        let ids = (0..rows.len() as u64).map(|i| RowId(base + next_id + i)).collect();
        next_id += rows.len() as u64;
        Table::with_ids(Arc::clone(&s), rows, ids, prov)
    };

    let train_pts: Vec<f64> = jittered(0.0, 10.0, 10, &mut r)
        .into_iter()
        .filter(|a| !(0.5..3.0).contains(a) && !(5.5..7.5).contains(a))
        .collect();
    let train = table(labelled(train_pts), Provenance::Original, 0)?;
    let val = table(labelled(jittered(0.0, 10.0, 100, &mut r)), Provenance::Original, 0)?;
    let holdout = table(labelled(jittered(0.0, 10.0, 100, &mut r)), Provenance::Original, 0)?;

    let b_points = jittered(5.5, 7.5, 50, &mut r);
    let arm1 = labelled(jittered(0.5, 1.75, 50, &mut r));
    let mut arm2 = labelled(jittered(0.5, 3.0, 50, &mut r));
    for &a in b_points.iter().filter(|a| greedy_trap_label(**a)) {
        arm2.push(vec![num(a), bit(false)]);
        arm2.push(vec![num(a), bit(false)]);
    }
    let arm3 = labelled(b_points);

    let shared = parse_dgr("(a > 0.5 AND a <= 7.5)")?;
    let wide = parse_dgr("(a > 0.4 AND a <= 7.6)")?;
    let hyper = TreeHyper::default();
    let rho = 0.05;
    let mut arms = Vec::new();
    for (i, (rows, rule)) in [(arm1, shared.clone()), (arm2, wide), (arm3, shared.clone())].into_iter().enumerate() {
        let data = table(rows, Provenance::Generated, RowId::GENERATED_BASE)?;
        let delta = delta_score(&hyper, &train, &val, &data)?;
        arms.push(ArmCandidate {
            id: i + 1,
            model_id: ModelId(0),
            rho_k: rho - delta,
            rule,
            path_key: format!("ARM{}", i + 1),
            data,
            delta,
            delta_in_sample: delta,
            iteration: 1,
        });
    }
    let context = vec![(parse_dgr("(a > 0.5)")?, 100)];
    Ok(GreedyTrap { train, val, holdout, context, arms, hyper, rho })
}

/// Builds a named fixture. `greedy_trap` returns its train, validation and
/// holdout rows stacked in that order.
pub fn make_fixture(name: &str, seed: u64) -> Result<Table> {
    match name {
        "piecewise" => piecewise_with(&PiecewiseParams::default(), seed),
        "mixture2" => mixture2(seed),
        "duplicate_markers" => duplicate_markers(seed),
        "greedy_trap" => {
            let g = greedy_trap_instance(seed)?;
            union(&union(&g.train, &g.val)?, &g.holdout)
        }
        other => Err(Error::Argument(format!("unknown fixture `{other}` (known: {})", FIXTURES.join(", ")))),
    }
}

/// Train, validation and test parts for fixtures whose split is part of
/// their design; `None` for fixtures meant to be split at random.
pub fn fixture_parts(name: &str, seed: u64) -> Result<Option<(Table, Table, Table)>> {
    match name {
        "piecewise" => piecewise_parts(&PiecewiseParams::default(), seed).map(Some),
        "greedy_trap" => {
            let g = greedy_trap_instance(seed)?;
            Ok(Some((g.train, g.val, g.holdout)))
        }
        "mixture2" | "duplicate_markers" => Ok(None),
        other => Err(Error::Argument(format!("unknown fixture `{other}` (known: {})", FIXTURES.join(", ")))),
    }
}

/// Noise-free labelling function for a fixture, for the synthetic backend.
pub fn oracle(name: &str) -> Option<Oracle> {
    fn f(s: &Schema, r: &[Value], col: &str) -> f64 {
        s.index_of(col).and_then(|i| r[i].as_f64()).unwrap_or(f64::NAN)
    }
    let o: Oracle = match name {
        "piecewise" => Arc::new(|s, r| bit(piecewise_label(f(s, r, "x")))),
        "mixture2" => Arc::new(|s, r| bit(mixture2_label(f(s, r, "x1"), f(s, r, "x2"), f(s, r, "x3")))),
        "duplicate_markers" => {
            Arc::new(|s, r| bit(duplicate_markers_label(f(s, r, "x"), f(s, r, "m1"), f(s, r, "m2"))))
        }
        "greedy_trap" => Arc::new(|s, r| bit(greedy_trap_label(f(s, r, "a")))),
        _ => return None,
    };
    Some(o)
}
