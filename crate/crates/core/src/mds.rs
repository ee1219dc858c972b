//! Bandit selection over generated groups, plus greedy baselines.
//!
//! Each arm is one [`ArmCandidate`]. Its utility mixes a quality term, from
//! the arm's threshold re-estimated by pulls, with the weighted overlap of its
//! rule against the model's context rules and the arms accepted so far. Phases
//! follow the successive accept/reject schedule; one arm is resolved per phase.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::ArmCandidate;
use crate::rules::{diversity_of, Dgr, OverlapMode};
use crate::table::{derive_seed, union, Table, Task};
use crate::tree::{train, ModelId, TreeHyper, TreeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdsConfig {
    /// Total pull budget `n`.
    pub budget: usize,
    /// Weight of quality against diversity.
    pub alpha: f64,
    pub ucb_c: f64,
    /// Phases without a new acceptance before stopping.
    pub patience: usize,
    /// Use the soft interval overlap instead of exact predicate Jaccard.
    pub interval_overlap: bool,
    pub seed: u64,
}

impl Default for MdsConfig {
    fn default() -> Self {
        Self { budget: 200, alpha: 0.8, ucb_c: std::f64::consts::SQRT_2, patience: 3, interval_overlap: false, seed: 0 }
    }
}

impl MdsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.ucb_c >= 0.0 && self.ucb_c.is_finite()) {
            return Err(Error::Config(format!("ucb_c must be a finite non-negative number, got {}", self.ucb_c)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// `½ + Σ_{i=2}^{K} 1/i`.
pub fn logbar(k: usize) -> f64 {
    0.5 + (2..=k).map(|i| 1.0 / i as f64).sum::<f64>()
}

/// Cumulative pulls per arm after each phase:
/// `n_k = ⌈(n − K) / (logbar(K)·(K + 1 − k))⌉` for `k = 1..K−1`.
pub fn sar_schedule(k: usize, n: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("the schedule needs at least 2 arms, got {k}")));
    }
    if n <= k {
        return Err(Error::Config(format!("budget {n} must exceed the arm count {k}")));
    }
    let lb = logbar(k);
    Ok((1..k)
        .map(|phase| {
            let x = (n - k) as f64 / (lb * (k + 1 - phase) as f64);
            // keep exact integers from rounding up through float noise
            (x - 1e-9).ceil() as usize
        })
        .collect())
}

/// `min(1, 2K²·exp(−(n − K) / (2·logbar(K)·S)))` with `S = max_i i·μ_(i)^−2`
/// over gaps sorted by magnitude, smallest first. A zero gap makes the bound
/// uninformative: the result is 1 with the flag set.
pub fn error_bound(k: usize, n: usize, mu: &[f64]) -> Result<(f64, bool)> {
    if k < 2 || mu.len() != k {
        return Err(Error::Argument(format!("need K ≥ 2 and one gap per arm, got K={k} with {} gaps", mu.len())));
    }
    let mut gaps: Vec<f64> = mu.iter().map(|m| m.abs()).collect();
    if gaps.iter().any(|g| *g == 0.0 || !g.is_finite()) {
        return Ok((1.0, true));
    }
    gaps.sort_by(f64::total_cmp);
    let s = gaps.iter().enumerate().map(|(i, g)| (i + 1) as f64 / (g * g)).fold(0.0, f64::max);
    let kf = k as f64;
    let b = 2.0 * kf * kf * (-(n as f64 - kf) / (2.0 * logbar(k) * s)).exp();
    Ok((b.min(1.0), false))
}

/// `α·(1 − ρ̂) + (1 − α)·div`, with `ρ̂` already normalized by [`normalize_rho`].
pub fn utility(rho_hat: f64, div: f64, alpha: f64) -> f64 {
    alpha * (1.0 - rho_hat) + (1.0 - alpha) * div
}

/// Puts an arm threshold on the utility's scale: an error rate is used as
/// is, a regression threshold is divided by the global one and clipped to
/// `[0, 1]`.
pub fn normalize_rho(rho: f64, task: Task, rho_global: f64) -> f64 {
    match task {
        Task::Classification => rho,
        Task::Regression => (rho / rho_global).clamp(0.0, 1.0),
    }
}

/// Successive rejects over `k` arms with a budget of `n` pulls: reject the
/// arm with the lowest mean each phase and return the survivor. Ties reject
/// the higher index.
pub fn sar_best_arm(k: usize, n: usize, mut pull: impl FnMut(usize) -> f64) -> Result<usize> {
    let schedule = sar_schedule(k, n)?;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    let mut active: Vec<usize> = (0..k).collect();
    let mut prev = 0;
    for nk in schedule {
        for &a in &active {
            for _ in prev..nk {
                sums[a] += pull(a);
                counts[a] += 1;
            }
        }
        prev = nk;
        let mean = |a: usize| if counts[a] == 0 { 0.0 } else { sums[a] / counts[a] as f64 };
        let (pos, _) = active
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| mean(a).total_cmp(&mean(b)).then(b.cmp(&a)))
            .expect("active set is nonempty");
        active.remove(pos);
    }
    Ok(active[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmInfo {
    pub id: usize,
    pub model_id: ModelId,
    pub rule: String,
    pub rows: usize,
    pub rho_k: f64,
    pub delta: f64,
    pub base_div: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullRecord {
    pub phase: usize,
    pub arm: usize,
    /// Improvement measured on the bootstrap resample.
    pub score: f64,
    pub resample_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub arm: usize,
    /// Empirical utility at selection.
    pub u: f64,
    /// Utility plus exploration bonus used to pick the arm.
    pub ucb: f64,
    pub best_before: f64,
    pub accepted: bool,
}

/// Everything needed to replay a run's decisions offline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MdsTrace {
    pub arms: Vec<ArmInfo>,
    pub schedule: Vec<usize>,
    pub pulls: Vec<PullRecord>,
    pub phases: Vec<PhaseRecord>,
    /// Accepted arm ids, in acceptance order.
    pub accepted: Vec<usize>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MdsResult {
    /// Accepted arm ids, in acceptance order.
    pub accepted: Vec<usize>,
    /// Best score after each phase.
    pub best_trace: Vec<f64>,
    pub total_pulls: usize,
    pub trace: MdsTrace,
}

/// Per-row validation errors of a tree: 0/1 loss, or squared residual for
/// regression so that means match [`TreeModel::eval_error`].
fn row_errors(m: &TreeModel, val: &Table) -> Result<Vec<f64>> {
    let sq = m.task() == Task::Regression;
    val.rows()
        .iter()
        .map(|r| m.row_error(r).map(|e| if sq { e * e } else { e }))
        .collect()
}

struct ArmState {
    samples: Vec<f64>,
    pulls: usize,
    div: f64,
}

/// Shared inputs of one bandit run.
pub struct MdsInput<'a> {
    pub arms: &'a [ArmCandidate],
    /// The model's context rules with their data sizes.
    pub context: &'a [(Dgr, usize)],
    pub train: &'a Table,
    pub val: &'a Table,
    pub hyper: TreeHyper,
    /// Discovery threshold used to normalize regression qualities.
    pub rho_global: f64,
}

struct Bandit<'a> {
    input: &'a MdsInput<'a>,
    cfg: &'a MdsConfig,
    mode: OverlapMode,
    state: Vec<ArmState>,
    accepted: Vec<usize>,
    base: Table,
    base_err: Option<Vec<f64>>,
    arm_err: HashMap<usize, Vec<f64>>,
    total_pulls: usize,
    trace: MdsTrace,
}

impl Bandit<'_> {
    fn diversity(&self, i: usize) -> Result<f64> {
        let mut ctx: Vec<(&Dgr, usize)> = self.input.context.iter().map(|(r, n)| (r, *n)).collect();
        for &a in &self.accepted {
            let arm = &self.input.arms[a];
            ctx.push((&arm.rule, arm.data.len()));
        }
        diversity_of(&self.input.arms[i].rule, &ctx, &self.mode)
    }

    fn rho_hat(&self, i: usize) -> f64 {
        let arm = &self.input.arms[i];
        let s = &self.state[i].samples;
        let rho = if s.is_empty() {
            arm.rho_k
        } else {
            let rho_m = arm.rho_k + arm.delta;
            rho_m - s.iter().sum::<f64>() / s.len() as f64
        };
        normalize_rho(rho, self.input.train.schema().task(), self.input.rho_global)
    }

    fn u(&self, i: usize) -> f64 {
        utility(self.rho_hat(i), self.state[i].div, self.cfg.alpha)
    }

    fn pull(&mut self, i: usize, phase: usize) -> Result<()> {
        let hyper = self.input.hyper;
        if self.base_err.is_none() {
            let m = train(&self.base, &hyper, ModelId(0))?;
            self.base_err = Some(row_errors(&m, self.input.val)?);
        }
        if !self.arm_err.contains_key(&i) {
            let m = train(&union(&self.base, &self.input.arms[i].data)?, &hyper, ModelId(0))?;
            self.arm_err.insert(i, row_errors(&m, self.input.val)?);
        }
        let (e0, e1) = (self.base_err.as_ref().unwrap(), &self.arm_err[&i]);
        let seed = derive_seed(self.cfg.seed, &[i as u64, self.total_pulls as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = e0.len();
        let score = (0..n)
            .map(|_| {
                let j = rng.gen_range(0..n);
                e0[j] - e1[j]
            })
            .sum::<f64>()
            / n as f64;
        self.state[i].samples.push(score);
        self.state[i].pulls += 1;
        self.total_pulls += 1;
        self.trace.pulls.push(PullRecord { phase, arm: self.input.arms[i].id, score, resample_seed: seed });
        Ok(())
    }

    fn accept(&mut self, i: usize, active: &[usize]) -> Result<()> {
        self.accepted.push(i);
        self.base = union(&self.base, &self.input.arms[i].data)?;
        self.base_err = None;
        self.arm_err.clear();
        for &a in active {
            // earlier pulls measured gains over a different base
            self.state[a].samples.clear();
            self.state[a].div = self.diversity(a)?;
        }
        Ok(())
    }
}

/// Runs the bandit over one model's arms. With a single arm the arm is
/// accepted iff its recorded improvement is positive.
pub fn run_mds(input: &MdsInput<'_>, cfg: &MdsConfig) -> Result<MdsResult> {
    cfg.validate()?;
    if input.context.is_empty() {
        return Err(Error::Argument("bandit selection needs context rules".into()));
    }
    let k = input.arms.len();
    let mode = if cfg.interval_overlap {
        let s = input.train.schema();
        let ranges = input.train.numeric_ranges().into_iter().map(|(i, r)| (s.attributes()[i].name.clone(), r));
        OverlapMode::Interval(ranges.collect())
    } else {
        OverlapMode::Jaccard
    };
    let mut b = Bandit {
        input,
        cfg,
        mode,
        state: Vec::with_capacity(k),
        accepted: Vec::new(),
        base: input.train.clone(),
        base_err: None,
        arm_err: HashMap::new(),
        total_pulls: 0,
        trace: MdsTrace::default(),
    };
    for i in 0..k {
        b.state.push(ArmState { samples: Vec::new(), pulls: 0, div: 0.0 });
        b.state[i].div = b.diversity(i)?;
        let a = &input.arms[i];
        b.trace.arms.push(ArmInfo {
            id: a.id,
            model_id: a.model_id,
            rule: a.rule.to_string(),
            rows: a.data.len(),
            rho_k: a.rho_k,
            delta: a.delta,
            base_div: b.state[i].div,
        });
    }
    let mut result = MdsResult::default();
    if k < 2 {
        if let Some(a) = input.arms.first() {
            let keep = a.delta > 0.0;
            log::info!("single arm {}: {}", a.id, if keep { "accepted (improves)" } else { "rejected" });
            b.trace.note = Some("single arm: accepted iff its improvement is positive".into());
            if keep {
                b.accepted.push(0);
            }
        }
        result.accepted = b.accepted.iter().map(|&i| input.arms[i].id).collect();
        b.trace.accepted = result.accepted.clone();
        result.trace = b.trace;
        return Ok(result);
    }

    let schedule = sar_schedule(k, cfg.budget)?;
    b.trace.schedule = schedule.clone();
    let mut active: Vec<usize> = (0..k).collect();
    let mut best = 0.0;
    let mut stale = 0;
    let mut prev = 0;
    for (p, &nk) in schedule.iter().enumerate() {
        let phase = p + 1;
        'pulls: for &i in &active {
            for _ in prev..nk {
                if b.total_pulls >= cfg.budget {
                    break 'pulls;
                }
                b.pull(i, phase)?;
            }
        }
        prev = nk;

        let total = b.total_pulls.max(1) as f64;
        let score = |b: &Bandit<'_>, i: usize| {
            let pulls = b.state[i].pulls;
            let bonus = if phase > 1 && pulls > 0 { cfg.ucb_c * (total.ln() / pulls as f64).sqrt() } else { 0.0 };
            b.u(i) + bonus
        };
        let (pos, &pick) = active
            .iter()
            .enumerate()
            .max_by(|(_, &x), (_, &y)| {
                score(&b, x)
                    .total_cmp(&score(&b, y))
                    .then(input.arms[x].delta.total_cmp(&input.arms[y].delta))
                    .then(input.arms[y].id.cmp(&input.arms[x].id))
            })
            .expect("active set is nonempty");
        let (u, ucb) = (b.u(pick), score(&b, pick));
        active.remove(pos);
        let take = u >= best;
        b.trace.phases.push(PhaseRecord { phase, arm: input.arms[pick].id, u, ucb, best_before: best, accepted: take });
        if take {
            best = u;
            stale = 0;
            b.accept(pick, &active)?;
        } else {
            stale += 1;
        }
        result.best_trace.push(best);
        if stale >= cfg.patience || active.len() <= 1 {
            break;
        }
    }
    result.accepted = b.accepted.iter().map(|&i| input.arms[i].id).collect();
    result.total_pulls = b.total_pulls;
    b.trace.accepted = result.accepted.clone();
    result.trace = b.trace;
    Ok(result)
}

/// Validation error of a fresh tree trained on `train` plus chosen arms.
pub struct Evaluator<'a> {
    pub train: &'a Table,
    pub val: &'a Table,
    pub hyper: TreeHyper,
}

impl Evaluator<'_> {
    pub fn error_with(&self, arms: &[&ArmCandidate]) -> Result<f64> {
        let mut t = self.train.clone();
        for a in arms {
            t = union(&t, &a.data)?;
        }
        train(&t, &self.hyper, ModelId(0))?.eval_error(self.val)
    }

    fn error_of(&self, arms: &[ArmCandidate], chosen: &[usize]) -> Result<f64> {
        let refs: Vec<&ArmCandidate> = chosen.iter().map(|&i| &arms[i]).collect();
        self.error_with(&refs)
    }

    /// Lowest-error subset by exhaustive enumeration (the empty set included);
    /// ties keep the earliest subset in bitmask order.
    pub fn brute_force(&self, arms: &[ArmCandidate]) -> Result<(Vec<usize>, f64)> {
        if arms.len() > 16 {
            return Err(Error::Argument(format!("{} arms are too many to enumerate", arms.len())));
        }
        let mut best = (Vec::new(), self.error_with(&[])?);
        for mask in 1u32..(1 << arms.len()) {
            let chosen: Vec<usize> = (0..arms.len()).filter(|i| mask & (1 << i) != 0).collect();
            let e = self.error_of(arms, &chosen)?;
            if e < best.1 {
                best = (chosen, e);
            }
        }
        Ok((best.0.iter().map(|&i| arms[i].id).collect(), best.1))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    #[default]
    Mds,
    Fgs,
    Bgs,
    TopM,
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mds" => Ok(Self::Mds),
            "fgs" => Ok(Self::Fgs),
            "bgs" => Ok(Self::Bgs),
            "topm" => Ok(Self::TopM),
            other => Err(Error::Config(format!("unknown selector `{other}` (expected mds, fgs, bgs or topm)"))),
        }
    }
}

/// Forward greedy: add the arm that lowers validation error most, until none
/// lowers it. Returns arm ids in selection order.
pub fn forward_greedy(arms: &[ArmCandidate], eval: &Evaluator<'_>) -> Result<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut cur = eval.error_with(&[])?;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..arms.len()).filter(|i| !chosen.contains(i)) {
            let mut trial = chosen.clone();
            trial.push(i);
            let e = eval.error_of(arms, &trial)?;
            if e < cur && best.is_none_or(|(_, b)| e < b) {
                best = Some((i, e));
            }
        }
        match best {
            Some((i, e)) => {
                chosen.push(i);
                cur = e;
            }
            None => break,
        }
    }
    Ok(chosen.into_iter().map(|i| arms[i].id).collect())
}

/// Backward greedy: start from every arm and drop the arm whose removal
/// lowers validation error most, until no removal lowers it.
pub fn backward_greedy(arms: &[ArmCandidate], eval: &Evaluator<'_>) -> Result<Vec<usize>> {
    let mut kept: Vec<usize> = (0..arms.len()).collect();
    let mut cur = eval.error_of(arms, &kept)?;
    while !kept.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..kept.len() {
            let mut trial = kept.clone();
            trial.remove(pos);
            let e = eval.error_of(arms, &trial)?;
            if e < cur && best.is_none_or(|(_, b)| e < b) {
                best = Some((pos, e));
            }
        }
        match best {
            Some((pos, e)) => {
                kept.remove(pos);
                cur = e;
            }
            None => break,
        }
    }
    Ok(kept.into_iter().map(|i| arms[i].id).collect())
}

/// The `m` arms with the lowest individual validation error (ties by
/// creation order); `m = 0` keeps every arm.
pub fn top_m(arms: &[ArmCandidate], eval: &Evaluator<'_>, m: usize) -> Result<Vec<usize>> {
    let mut scored: Vec<(f64, usize)> =
        arms.iter().map(|a| Ok((eval.error_with(&[a])?, a.id))).collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = if m == 0 { scored.len() } else { m };
    Ok(scored.into_iter().take(m).map(|(_, id)| id).collect())
}

#[cfg(test)]
mod tests;
