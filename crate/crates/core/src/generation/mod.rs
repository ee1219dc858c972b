//! Per-model iterative generation with tree feedback.
//!
//! For every discovery model the loop prompts a backend with the model's
//! examples, routes the returned rows through the tree, keeps path groups the
//! tree certifies, scores each group by how much it helps a fresh tree on a
//! held-out slice of the model's rows, and asks the backend for better rules.

pub mod llm;
pub mod parse;
pub mod prompt;
pub mod replay;
pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discovery::{build_prompt_examples, DiscoveryResult, PromptExample};
use crate::error::{Error, Result};
use crate::rules::{Dgr, Example};
use crate::table::{derive_seed, stratified_sample, union, Provenance, Record, RowId, Schema, Table};
use crate::tree::{train, ModelId, TreeHyper, TreeModel};

pub use parse::{parse_generated, parse_rules, ParsedRows};
pub use prompt::{render_prompt, render_refine_prompt, PromptConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Llm,
    #[default]
    Synthetic,
    /// Recorded responses from an earlier run.
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "llm" => Ok(Self::Llm),
            "synthetic" => Ok(Self::Synthetic),
            "replay" => Ok(Self::Replay),
            other => Err(Error::Config(format!("unknown backend `{other}` (expected llm, synthetic or replay)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Rounds per model.
    pub iterations: usize,
    /// Rows requested per generate call.
    pub per_call: usize,
    /// Sample rows shown per rule.
    pub per_rule: usize,
    /// Refined rules honoured per round.
    pub max_refined: usize,
    /// Share of each model's rows held out for scoring.
    pub holdout_frac: f64,
    pub token_budget: usize,
    pub generate_template: Option<PathBuf>,
    pub refine_template: Option<PathBuf>,
    pub backend: BackendKind,
    /// Chat model name for the LLM backend.
    pub llm_model: String,
    /// Named labelling function for the synthetic backend; nearest example
    /// row when unset.
    pub oracle: Option<String>,
    /// Group generated rows by decision path; otherwise one group per call.
    pub dt_reasoning: bool,
    /// Ask the backend for refined rules after each round.
    pub dgr_opt: bool,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            per_call: 100,
            per_rule: 5,
            max_refined: 3,
            holdout_frac: 0.2,
            token_budget: PromptConfig::default().token_budget,
            generate_template: None,
            refine_template: None,
            backend: BackendKind::Synthetic,
            llm_model: llm::DEFAULT_MODEL.to_string(),
            oracle: None,
            dt_reasoning: true,
            dgr_opt: true,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.per_call == 0 || self.per_rule == 0 {
            return Err(Error::Config("per_call and per_rule must be at least 1".into()));
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err(Error::Config(format!("holdout_frac must lie in (0, 1), got {}", self.holdout_frac)));
        }
        Ok(())
    }

    /// Loads template files over the defaults.
    pub fn prompt_config(&self) -> Result<PromptConfig> {
        let mut cfg = PromptConfig { token_budget: self.token_budget, ..Default::default() };
        if let Some(p) = &self.generate_template {
            cfg.generate_template = std::fs::read_to_string(p)?;
        }
        if let Some(p) = &self.refine_template {
            cfg.refine_template = std::fs::read_to_string(p)?;
        }
        Ok(cfg)
    }
}

/// Inputs for one generate call. Backends that talk to a model only need the
/// prompt; offline backends can use the structured fields instead.
pub struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub schema: &'a Schema,
    pub examples: &'a [PromptExample],
    pub count: usize,
    pub seed: u64,
}

/// Inputs for one rule-refinement call.
pub struct RefineRequest<'a> {
    pub prompt: &'a str,
    pub schema: &'a Schema,
    pub context: &'a [Dgr],
    /// New candidate rules with their improvement.
    pub candidates: &'a [(Dgr, f64)],
    pub max_rules: usize,
    pub seed: u64,
}

/// A record generator. Both calls return raw text; the loop parses it, so
/// recorded responses can be replayed byte for byte. Calls take `&mut self`
/// and are issued one at a time.
pub trait GeneratorBackend {
    fn name(&self) -> &str;
    /// Text containing CSV records for the schema, target included.
    fn generate(&mut self, req: &GenerateRequest<'_>) -> Result<String>;
    /// Text with one rule per line.
    fn refine_rules(&mut self, req: &RefineRequest<'_>) -> Result<String>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Generate,
    Refine,
}

/// One backend exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub kind: CallKind,
    pub backend: String,
    pub model_id: ModelId,
    pub iteration: usize,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Generated rows that followed one decision path, with their score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmCandidate {
    /// Creation order across the whole run.
    pub id: usize,
    pub model_id: ModelId,
    /// `ρ_m − Δ`.
    pub rho_k: f64,
    pub rule: Dgr,
    pub path_key: String,
    pub data: Table,
    /// Improvement on the held-out slice of the model's rows.
    pub delta: f64,
    /// Same comparison scored on all of the model's rows.
    pub delta_in_sample: f64,
    pub iteration: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generate_calls: usize,
    pub refine_calls: usize,
    pub backend_errors: usize,
    pub rows_parsed: usize,
    pub lines_rejected: usize,
    pub duplicates_dropped: usize,
    /// Rows outside the rule of the path or call they were grouped under.
    pub off_rule_dropped: usize,
    pub groups_filtered: usize,
    pub refined_accepted: usize,
    pub refined_rejected: usize,
    /// Models whose loop stopped before the last round.
    pub early_stops: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GenerationOutput {
    pub candidates: Vec<ArmCandidate>,
    pub transcripts: Vec<Transcript>,
    pub stats: GenerationStats,
}

/// Routes rows through the tree and groups them by leaf. Each group's rule is
/// its path folded into one conjunction. Keys sort as path strings.
pub fn group_by_path(m: &TreeModel, rows: &Table) -> Result<BTreeMap<String, (Dgr, Table)>> {
    let mut idx: BTreeMap<String, (Dgr, Vec<usize>)> = BTreeMap::new();
    for (i, r) in rows.rows().iter().enumerate() {
        let p = m.path(r)?;
        idx.entry(p.path_key.clone()).or_insert_with(|| (p.rule(), Vec::new())).1.push(i);
    }
    Ok(idx.into_iter().map(|(k, (rule, ix))| (k, (rule, rows.select(&ix)))).collect())
}

/// True iff the model predicts every row within `rho`: exact label agreement
/// for classification, absolute residual at most `rho` for regression.
pub fn quality_filter(m: &TreeModel, h: &Table, rho: f64) -> Result<bool> {
    for r in h.rows() {
        if m.row_error(r)? > rho {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Validation error of a fresh tree on `t_train` minus that of a fresh tree
/// with the same hyperparameters on `t_train ∪ h`. Positive means `h` helped.
pub fn delta_score(hyper: &TreeHyper, t_train: &Table, t_val: &Table, h: &Table) -> Result<f64> {
    let e0 = train(t_train, hyper, ModelId(0))?.eval_error(t_val)?;
    let e1 = train(&union(t_train, h)?, hyper, ModelId(0))?.eval_error(t_val)?;
    Ok(e0 - e1)
}

/// Seeded fit/holdout split of a model's rows. Falls back to scoring
/// in-sample when there are too few rows to hold any out.
fn holdout(t: &Table, frac: f64, min_fit: usize, seed: u64) -> (Table, Table) {
    let n = t.len();
    let hold = ((n as f64) * frac).round() as usize;
    if hold == 0 || n - hold < min_fit.max(1) {
        log::debug!("{n} rows are too few to hold out {frac}; scoring in-sample");
        return (t.clone(), t.clone());
    }
    let mut ix: Vec<usize> = (0..n).collect();
    ix.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (h, f) = ix.split_at(hold);
    let (mut f, mut h) = (f.to_vec(), h.to_vec());
    f.sort_unstable();
    h.sort_unstable();
    (t.select(&f), t.select(&h))
}

/// Rows of every example, deduplicated by row id, in first-seen order.
fn union_rows(examples: &[&Example]) -> Result<Table> {
    let first = examples.first().ok_or_else(|| Error::Argument("model has no examples".into()))?;
    let mut seen = HashSet::new();
    let mut out = Table::empty(Arc::clone(first.data.schema_arc()), Provenance::Original);
    for e in examples {
        let keep: Vec<usize> = (0..e.data.len()).filter(|&i| seen.insert(e.data.ids()[i])).collect();
        out = union(&out, &e.data.select(&keep))?;
    }
    Ok(out)
}

/// A context entry: the rule plus the rows shown for it.
struct Context {
    rule: Dgr,
    rows: Table,
    representative: bool,
}

struct ModelRun<'a> {
    model: &'a TreeModel,
    rho: f64,
    t_m: Table,
    t_fit: Table,
    t_hold: Table,
    context: Vec<Context>,
}

struct Runner<'a> {
    cfg: &'a GenerationConfig,
    prompt_cfg: PromptConfig,
    schema: Arc<Schema>,
    originals: HashSet<Record>,
    next_row: u64,
    out: GenerationOutput,
}

impl Runner<'_> {
    fn call_generate(
        &mut self,
        backend: &mut dyn GeneratorBackend,
        model_id: ModelId,
        iteration: usize,
        examples: &[PromptExample],
        seed: u64,
    ) -> Option<String> {
        let prompt = match render_prompt(examples, self.cfg.per_call, &self.prompt_cfg) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{model_id} round {iteration}: {e}");
                return None;
            }
        };
        self.out.stats.generate_calls += 1;
        let req = GenerateRequest { prompt: &prompt, schema: &self.schema, examples, count: self.cfg.per_call, seed };
        let res = backend.generate(&req);
        self.record(backend.name(), CallKind::Generate, model_id, iteration, prompt, &res);
        res.ok()
    }

    fn record(
        &mut self,
        backend: &str,
        kind: CallKind,
        model_id: ModelId,
        iteration: usize,
        prompt: String,
        res: &Result<String>,
    ) {
        let (response, error) = match res {
            Ok(r) => (Some(r.clone()), None),
            Err(e) => {
                self.out.stats.backend_errors += 1;
                log::warn!("{model_id} round {iteration}: {kind:?} call failed, skipping: {e}");
                (None, Some(e.to_string()))
            }
        };
        self.out.transcripts.push(Transcript {
            kind,
            backend: backend.to_string(),
            model_id,
            iteration,
            prompt,
            response,
            error,
        });
    }

    /// Parses a response into scored candidates. `call_rule` is the union of
    /// the rules shown in the prompt, used when path grouping is off.
    fn process(&mut self, run: &ModelRun<'_>, raw: &str, call_rule: &Dgr, iteration: usize) -> Result<Vec<ArmCandidate>> {
        let parsed = parse_generated(raw, &self.schema);
        self.out.stats.rows_parsed += parsed.rows.len();
        self.out.stats.lines_rejected += parsed.rejected.len();
        let before = parsed.rows.len();
        let rows: Vec<Record> = parsed.rows.into_iter().filter(|r| !self.originals.contains(r)).collect();
        self.out.stats.duplicates_dropped += before - rows.len();
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let ids = (0..rows.len() as u64).map(|i| RowId(self.next_row + i)).collect();
        self.next_row += rows.len() as u64;
        let h = Table::with_ids(Arc::clone(&self.schema), rows, ids, Provenance::Generated)?;

        let groups: Vec<(String, Dgr, Table)> = if self.cfg.dt_reasoning {
            group_by_path(run.model, &h)?.into_iter().map(|(k, (r, t))| (k, r, t)).collect()
        } else {
            vec![(format!("CALL{iteration}"), call_rule.clone(), h)]
        };
        let mut out = Vec::new();
        for (key, rule, t) in groups {
            let on_rule = rule.filter(&t)?;
            self.out.stats.off_rule_dropped += t.len() - on_rule.len();
            if on_rule.is_empty() {
                continue;
            }
            if !quality_filter(run.model, &on_rule, run.rho)? {
                self.out.stats.groups_filtered += 1;
                log::debug!("{} {key}: group of {} rows fails the quality filter", run.model.id, on_rule.len());
                continue;
            }
            let hyper = run.model.hyper;
            let delta = delta_score(&hyper, &run.t_fit, &run.t_hold, &on_rule)?;
            let delta_in_sample = delta_score(&hyper, &run.t_m, &run.t_m, &on_rule)?;
            let id = self.out.candidates.len() + out.len();
            out.push(ArmCandidate {
                id,
                model_id: run.model.id,
                rho_k: run.rho - delta,
                rule,
                path_key: key,
                data: on_rule,
                delta,
                delta_in_sample,
                iteration,
            });
        }
        Ok(out)
    }

    fn context_examples(&self, run: &ModelRun<'_>, seed: u64) -> Result<Vec<PromptExample>> {
        run.context
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let n = self.cfg.per_rule.min(c.rows.len());
                Ok(PromptExample {
                    model_id: run.model.id,
                    rule: c.rule.clone(),
                    rows: stratified_sample(&c.rows, n, derive_seed(seed, &[i as u64]))?,
                    representative: c.representative,
                })
            })
            .collect()
    }

    /// Rows to show next to a refined rule: the model's rows it selects, or
    /// the representative's rows when it selects none.
    fn refined_example(&self, run: &ModelRun<'_>, rule: &Dgr, seed: u64) -> Result<PromptExample> {
        let mut rows = rule.filter(&run.t_m)?;
        if rows.is_empty() {
            rows = run.context[0].rows.clone();
        }
        let n = self.cfg.per_rule.min(rows.len());
        Ok(PromptExample {
            model_id: run.model.id,
            rule: rule.clone(),
            rows: stratified_sample(&rows, n, seed)?,
            representative: true,
        })
    }

    fn run_model(&mut self, backend: &mut dyn GeneratorBackend, mut run: ModelRun<'_>) -> Result<()> {
        let id = run.model.id;
        for it in 1..=self.cfg.iterations {
            let seed = derive_seed(self.cfg.seed, &[u64::from(id.0), it as u64]);
            let examples = self.context_examples(&run, seed)?;
            let call_rule = examples.iter().skip(1).fold(examples[0].rule.clone(), |acc, e| acc.or(&e.rule));
            let Some(raw) = self.call_generate(backend, id, it, &examples, derive_seed(seed, &[0])) else {
                continue;
            };
            let mut fresh = self.process(&run, &raw, &call_rule, it)?;

            if self.cfg.dgr_opt {
                let refined = self.refine(backend, &run, &fresh, it, derive_seed(seed, &[1]))?;
                for (j, rule) in refined.iter().enumerate() {
                    let ex = self.refined_example(&run, rule, derive_seed(seed, &[2, j as u64]))?;
                    let Some(raw) = self.call_generate(backend, id, it, &[ex], derive_seed(seed, &[3, j as u64])) else {
                        continue;
                    };
                    let base = self.out.candidates.len() + fresh.len();
                    let mut more = self.process(&run, &raw, rule, it)?;
                    for (k, c) in more.iter_mut().enumerate() {
                        c.id = base + k;
                    }
                    fresh.extend(more);
                }
            }

            let improved = fresh.iter().any(|c| c.delta > 0.0);
            for c in &fresh {
                run.context.push(Context { rule: c.rule.clone(), rows: c.data.clone(), representative: false });
            }
            self.out.candidates.extend(fresh);
            if !improved {
                if it < self.cfg.iterations {
                    self.out.stats.early_stops += 1;
                }
                log::info!("{id}: no improving candidate in round {it}, stopping");
                break;
            }
        }
        Ok(())
    }

    fn refine(
        &mut self,
        backend: &mut dyn GeneratorBackend,
        run: &ModelRun<'_>,
        fresh: &[ArmCandidate],
        it: usize,
        seed: u64,
    ) -> Result<Vec<Dgr>> {
        let context: Vec<Dgr> = run.context.iter().map(|c| c.rule.clone()).collect();
        let candidates: Vec<(Dgr, f64)> = fresh.iter().map(|c| (c.rule.clone(), c.delta)).collect();
        let ctx_text: Vec<String> = context.iter().map(ToString::to_string).collect();
        let cand_text: Vec<(String, f64)> = candidates.iter().map(|(r, d)| (r.to_string(), *d)).collect();
        let prompt = match render_refine_prompt(&self.schema, &ctx_text, &cand_text, self.cfg.max_refined, &self.prompt_cfg) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("{} round {it}: {e}", run.model.id);
                return Ok(Vec::new());
            }
        };
        self.out.stats.refine_calls += 1;
        let req = RefineRequest {
            prompt: &prompt,
            schema: &self.schema,
            context: &context,
            candidates: &candidates,
            max_rules: self.cfg.max_refined,
            seed,
        };
        let res = backend.refine_rules(&req);
        self.record(backend.name(), CallKind::Refine, run.model.id, it, prompt, &res);
        let Ok(raw) = res else { return Ok(Vec::new()) };

        let (rules, rejected) = parse_rules(&raw, &self.schema);
        self.out.stats.refined_rejected += rejected.len();
        let mut known: HashSet<Dgr> = context.into_iter().collect();
        let mut out = Vec::new();
        for r in rules {
            if out.len() == self.cfg.max_refined {
                break;
            }
            if !r.is_satisfiable() || r.mentions(self.schema.target_name()) || !known.insert(r.clone()) {
                log::debug!("refined rule `{r}` rejected");
                self.out.stats.refined_rejected += 1;
                continue;
            }
            out.push(r);
        }
        self.out.stats.refined_accepted += out.len();
        Ok(out)
    }
}

/// Runs the generation loop for every discovered model, in model order.
/// `train` supplies the original rows used for deduplication.
pub fn run_generation(
    discovery: &DiscoveryResult,
    train_table: &Table,
    cfg: &GenerationConfig,
    backend: &mut dyn GeneratorBackend,
) -> Result<GenerationOutput> {
    cfg.validate()?;
    if discovery.examples.is_empty() {
        return Err(Error::Argument("discovery produced no examples".into()));
    }
    let mut runner = Runner {
        cfg,
        prompt_cfg: cfg.prompt_config()?,
        schema: Arc::clone(train_table.schema_arc()),
        originals: train_table.rows().iter().cloned().collect(),
        next_row: RowId::GENERATED_BASE,
        out: GenerationOutput::default(),
    };
    for (id, examples) in discovery.groups() {
        let model = discovery
            .model(id)
            .ok_or_else(|| Error::Argument(format!("examples refer to unknown model {id}")))?;
        let rho = model.rho.unwrap_or_else(|| examples.iter().map(|e| e.rho).fold(0.0, f64::max));
        let t_m = union_rows(&examples)?;
        let split_seed = derive_seed(cfg.seed, &[u64::from(id.0), u64::MAX]);
        let (t_fit, t_hold) = holdout(&t_m, cfg.holdout_frac, 2 * model.hyper.min_leaf, split_seed);
        let owned: Vec<Example> = examples.iter().map(|e| (*e).clone()).collect();
        let context = build_prompt_examples(&owned, usize::MAX, 0)?
            .into_iter()
            .map(|p| Context { rule: p.rule, rows: p.rows, representative: p.representative })
            .collect();
        runner.run_model(backend, ModelRun { model, rho, t_m, t_fit, t_hold, context })?;
    }
    Ok(runner.out)
}

#[cfg(test)]
mod tests;
