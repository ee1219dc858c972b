//! End-to-end runs: load, split, discover, generate, select, assemble and
//! evaluate against a tree trained on the original rows alone.

// Stage failures carry the partial report by value.
#![allow(clippy::result_large_err)]

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discovery::{discover, DiscoveryConfig, DiscoveryResult};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::generation::llm::{LlmBackend, LlmConfig};
use crate::generation::replay::ReplayBackend;
use crate::generation::synthetic::SyntheticBackend;
use crate::generation::{run_generation, ArmCandidate, BackendKind, GenerationConfig, GenerationOutput, GenerationStats, GeneratorBackend};
use crate::mds::{backward_greedy, forward_greedy, run_mds, top_m, Evaluator, MdsConfig, MdsInput, MdsTrace, Selector};
use crate::rules::Dgr;
use crate::rundir::{self, RunDir};
use crate::table::{derive_seed, load_csv, split, union, Kind, Provenance, RowId, Schema, SplitSpec, Table, Task};
use crate::tree::{train, ModelId, TreeHyper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// CSV input; exclusive with `fixture`.
    pub data: Option<PathBuf>,
    /// Built-in dataset name, generated with the run seed.
    pub fixture: Option<String>,
    pub target: String,
    pub task: Task,
    /// Columns read as categorical even when every value is numeric.
    pub categorical: Vec<String>,
    pub split: SplitSpec,
    pub discovery: DiscoveryConfig,
    pub generation: GenerationConfig,
    pub mds: MdsConfig,
    pub selector: Selector,
    /// Arms kept by the `topm` selector; 0 keeps all.
    pub top_m: usize,
    /// Only offer first-round arms to selection.
    pub first_iteration_only: bool,
    /// Tree used for the baseline and augmented evaluations.
    pub downstream: TreeHyper,
    pub out: Option<PathBuf>,
    /// Run directory whose transcripts feed the replay backend.
    pub replay_from: Option<PathBuf>,
    /// Sub-config seeds left at 0 inherit this one.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            fixture: None,
            target: "y".into(),
            task: Task::Classification,
            categorical: Vec::new(),
            split: SplitSpec::default(),
            discovery: DiscoveryConfig::default(),
            generation: GenerationConfig::default(),
            mds: MdsConfig::default(),
            selector: Selector::Mds,
            top_m: 5,
            first_iteration_only: false,
            downstream: TreeHyper::default(),
            out: None,
            replay_from: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Copies the run seed into every sub-config seed still at 0.
    pub fn propagate_seed(&mut self) {
        let s = self.seed;
        for slot in [
            &mut self.split.seed,
            &mut self.discovery.hyper.seed,
            &mut self.generation.seed,
            &mut self.mds.seed,
            &mut self.downstream.seed,
        ] {
            if *slot == 0 {
                *slot = s;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.fixture) {
            (Some(_), Some(_)) => return Err(Error::Config("set either data or fixture, not both".into())),
            (None, None) => return Err(Error::Config("no input: set data or fixture".into())),
            (Some(p), None) if !p.is_file() => {
                return Err(Error::Config(format!("data file {} does not exist", p.display())))
            }
            (None, Some(f)) if !fixtures::FIXTURES.contains(&f.as_str()) => {
                return Err(Error::Config(format!("unknown fixture `{f}` (known: {})", fixtures::FIXTURES.join(", "))))
            }
            _ => {}
        }
        if self.generation.backend == BackendKind::Replay {
            match &self.replay_from {
                Some(p) if p.is_dir() => {}
                Some(p) => return Err(Error::Config(format!("replay directory {} does not exist", p.display()))),
                None => return Err(Error::Config("the replay backend needs replay_from".into())),
            }
        }
        if let Some(name) = &self.generation.oracle {
            if fixtures::oracle(name).is_none() {
                return Err(Error::Config(format!("unknown oracle `{name}`")));
            }
        }
        self.split.validate()?;
        self.discovery.validate()?;
        self.generation.validate()?;
        self.mds.validate()
    }

    fn dataset_name(&self) -> String {
        match (&self.data, &self.fixture) {
            (Some(p), _) => p.display().to_string(),
            (_, Some(f)) => format!("fixture:{f}"),
            _ => String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Split,
    Discover,
    Generate,
    Select,
    Evaluate,
    Persist,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Discover => "discover",
            Stage::Generate => "generate",
            Stage::Select => "select",
            Stage::Evaluate => "evaluate",
            Stage::Persist => "persist",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    #[default]
    Ok,
    Failed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub augmented: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub dataset: String,
    pub task: Option<Task>,
    pub selector: Selector,
    pub backend: BackendKind,
    pub seed: u64,
    /// Hyperparameters of the evaluation tree.
    pub downstream: TreeHyper,
    pub rows: RowCounts,
    pub models_trained: usize,
    pub shares: usize,
    pub examples: usize,
    pub candidates: usize,
    /// Accepted arm ids.
    pub accepted: Vec<usize>,
    /// Generated rows in the augmented table.
    pub syn: usize,
    /// Test error of a tree trained on the original training rows.
    pub baseline_error: Option<f64>,
    pub augmented_error: Option<f64>,
    /// `100·(augmented − baseline) / baseline`; unset when the baseline is 0.
    pub error_change_pct: Option<f64>,
    pub generation: Option<GenerationStats>,
    /// Wall time per stage. Not reproducible; ignored when comparing runs.
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    fn stub(cfg: &RunConfig) -> Self {
        Self {
            dataset: cfg.dataset_name(),
            selector: cfg.selector,
            backend: cfg.generation.backend,
            seed: cfg.seed,
            downstream: cfg.downstream,
            ..Default::default()
        }
    }

    /// The report with timings cleared, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        Self { timings_ms: BTreeMap::new(), ..self.clone() }
    }
}

/// A stage error with the report as far as the run got.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: Error,
    pub report: RunReport,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// The three splits of the input.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Table,
    pub val: Table,
    pub test: Table,
}

pub fn load_input(cfg: &RunConfig) -> Result<Table> {
    if let Some(name) = &cfg.fixture {
        return fixtures::make_fixture(name, cfg.seed);
    }
    let path = cfg.data.as_ref().ok_or_else(|| Error::Config("no input: set data or fixture".into()))?;
    let t = load_csv(path, &cfg.target, cfg.task, None)?;
    if cfg.categorical.is_empty() {
        return Ok(t);
    }
    let mut attrs = t.schema().attributes().to_vec();
    for name in &cfg.categorical {
        let a = attrs
            .iter_mut()
            .find(|a| &a.name == name)
            .ok_or_else(|| Error::Schema(format!("categorical override names unknown column `{name}`")))?;
        a.kind = Kind::Categorical;
    }
    let hint = Schema::new(attrs, &cfg.target, cfg.task)?;
    load_csv(path, &cfg.target, cfg.task, Some(&hint))
}

pub fn split_input(cfg: &RunConfig, t: &Table) -> Result<Prepared> {
    let (train, val, test) = split(t, &cfg.split)?;
    Ok(Prepared { train, val, test })
}

/// Loads and splits the input. Fixtures with a designed split keep it and
/// ignore `cfg.split`.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    if let Some(p) = fixture_split(cfg)? {
        return Ok(p);
    }
    split_input(cfg, &load_input(cfg)?)
}

fn fixture_split(cfg: &RunConfig) -> Result<Option<Prepared>> {
    let Some(name) = &cfg.fixture else { return Ok(None) };
    Ok(fixtures::fixture_parts(name, cfg.seed)?.map(|(train, val, test)| Prepared { train, val, test }))
}

pub fn stage_discover(cfg: &RunConfig, p: &Prepared) -> Result<DiscoveryResult> {
    let mut d = discover(&p.train, &cfg.discovery)?;
    if d.examples.is_empty() {
        return Err(Error::Discovery("no examples were certified".into()));
    }
    d.examples.sort_by_key(|e| e.model_id);
    Ok(d)
}

pub fn make_backend(cfg: &RunConfig, train: &Table) -> Result<Box<dyn GeneratorBackend>> {
    Ok(match cfg.generation.backend {
        BackendKind::Synthetic => {
            let oracle = cfg.generation.oracle.as_deref().and_then(fixtures::oracle);
            Box::new(SyntheticBackend::new(train, oracle))
        }
        BackendKind::Llm => Box::new(LlmBackend::new(LlmConfig::from_env(&cfg.generation.llm_model)?)),
        BackendKind::Replay => {
            let dir = cfg.replay_from.as_ref().ok_or_else(|| Error::Config("the replay backend needs replay_from".into()))?;
            Box::new(ReplayBackend::new(RunDir::open(dir)?.read_transcripts()?))
        }
    })
}

pub fn stage_generate(cfg: &RunConfig, p: &Prepared, d: &DiscoveryResult) -> Result<GenerationOutput> {
    let mut backend = make_backend(cfg, &p.train)?;
    run_generation(d, &p.train, &cfg.generation, backend.as_mut())
}

/// Fails if a test row reached discovery or the generated arms.
pub fn check_hygiene(test: &Table, d: &DiscoveryResult, arms: &[ArmCandidate]) -> Result<()> {
    let held: HashSet<RowId> = test.ids().iter().copied().collect();
    let leaked = d
        .examples
        .iter()
        .flat_map(|e| e.data.ids())
        .chain(arms.iter().flat_map(|a| a.data.ids()))
        .find(|id| held.contains(id));
    match leaked {
        Some(id) => Err(Error::Argument(format!("test row {} leaked into training stages", id.0))),
        None => Ok(()),
    }
}

/// One bandit run per discovery model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTrace {
    pub model_id: ModelId,
    pub trace: MdsTrace,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Selection {
    /// Accepted arm ids.
    pub accepted: Vec<usize>,
    pub traces: Vec<ModelTrace>,
}

/// Picks arms with the configured selector. The bandit runs separately for
/// each model against that model's examples; the greedy selectors and top-m
/// rank all arms jointly.
pub fn stage_select(cfg: &RunConfig, p: &Prepared, d: &DiscoveryResult, arms: &[ArmCandidate]) -> Result<Selection> {
    let pool: Vec<ArmCandidate> =
        arms.iter().filter(|a| !cfg.first_iteration_only || a.iteration == 1).cloned().collect();
    let mut sel = Selection::default();
    if pool.is_empty() {
        return Ok(sel);
    }
    let eval = Evaluator { train: &p.train, val: &p.val, hyper: cfg.downstream };
    match cfg.selector {
        Selector::Mds => {
            let mut by_model: BTreeMap<ModelId, Vec<ArmCandidate>> = BTreeMap::new();
            for a in pool {
                by_model.entry(a.model_id).or_default().push(a);
            }
            let groups = d.groups();
            for (model_id, model_arms) in by_model {
                let context: Vec<(Dgr, usize)> = groups
                    .get(&model_id)
                    .map(|es| es.iter().map(|e| (e.rule.clone(), e.data.len())).collect())
                    .unwrap_or_default();
                let input = MdsInput {
                    arms: &model_arms,
                    context: &context,
                    train: &p.train,
                    val: &p.val,
                    hyper: cfg.downstream,
                    rho_global: cfg.discovery.rho,
                };
                let mcfg = MdsConfig { seed: derive_seed(cfg.mds.seed, &[u64::from(model_id.0)]), ..cfg.mds.clone() };
                let res = run_mds(&input, &mcfg)?;
                sel.accepted.extend(&res.accepted);
                sel.traces.push(ModelTrace { model_id, trace: res.trace });
            }
        }
        Selector::Fgs => sel.accepted = forward_greedy(&pool, &eval)?,
        Selector::Bgs => sel.accepted = backward_greedy(&pool, &eval)?,
        Selector::TopM => sel.accepted = top_m(&pool, &eval, cfg.top_m)?,
    }
    Ok(sel)
}

/// `train` plus the rows of every accepted arm, in acceptance order.
pub fn assemble(train_t: &Table, arms: &[ArmCandidate], accepted: &[usize]) -> Result<Table> {
    let mut t = train_t.clone();
    for id in accepted {
        let arm = arms
            .iter()
            .find(|a| a.id == *id)
            .ok_or_else(|| Error::Argument(format!("accepted arm {id} does not exist")))?;
        t = union(&t, &arm.data)?;
    }
    if accepted.is_empty() {
        return Ok(t);
    }
    Ok(t.with_provenance(Provenance::Mixed))
}

/// Test error of a fresh tree trained on `train_t`: misclassification rate or
/// mean squared error.
pub fn evaluate_downstream(train_t: &Table, test: &Table, hyper: &TreeHyper) -> Result<f64> {
    if train_t.schema() != test.schema() {
        return Err(Error::Schema("train and test schemas differ".into()));
    }
    train(train_t, hyper, ModelId(0))?.eval_error(test)
}

pub fn error_change_pct(baseline: f64, augmented: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (augmented - baseline) / baseline)
}

/// Collects the report while stages run, tagging the first failure.
pub struct Tracker {
    pub report: RunReport,
    clock: Instant,
}

impl Tracker {
    pub fn new(cfg: &RunConfig) -> Self {
        Self { report: RunReport::stub(cfg), clock: Instant::now() }
    }

    pub fn stage<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, StageFailure> {
        self.clock = Instant::now();
        let out = f();
        let ms = self.clock.elapsed().as_secs_f64() * 1e3;
        *self.report.timings_ms.entry(stage.to_string()).or_default() += ms;
        out.map_err(|error| {
            let mut report = self.report.clone();
            report.status = RunStatus::Failed;
            report.failed_stage = Some(stage);
            report.error = Some(error.to_string());
            StageFailure { stage, error, report }
        })
    }

    pub fn record_split(&mut self, p: &Prepared) {
        self.report.task = Some(p.train.schema().task());
        self.report.rows = RowCounts { train: p.train.len(), val: p.val.len(), test: p.test.len(), augmented: 0 };
    }

    pub fn record_discovery(&mut self, d: &DiscoveryResult) {
        self.report.models_trained = d.stats.models_trained;
        self.report.shares = d.stats.shares;
        self.report.examples = d.examples.len();
    }

    pub fn record_generation(&mut self, arms: &[ArmCandidate], stats: &GenerationStats) {
        self.report.candidates = arms.len();
        self.report.generation = Some(stats.clone());
    }
}

/// Assembles the augmented table and fills the error fields.
pub fn stage_evaluate(
    cfg: &RunConfig,
    p: &Prepared,
    arms: &[ArmCandidate],
    sel: &Selection,
    report: &mut RunReport,
) -> Result<Table> {
    let aug = assemble(&p.train, arms, &sel.accepted)?;
    let base = evaluate_downstream(&p.train, &p.test, &cfg.downstream)?;
    let augmented = if sel.accepted.is_empty() { base } else { evaluate_downstream(&aug, &p.test, &cfg.downstream)? };
    report.accepted = sel.accepted.clone();
    report.syn = aug.len() - p.train.len();
    report.rows.augmented = aug.len();
    report.baseline_error = Some(base);
    report.augmented_error = Some(augmented);
    report.error_change_pct = error_change_pct(base, augmented);
    log::info!(
        "baseline error {base:.4}, augmented error {augmented:.4}, {} synthetic rows from {} arms",
        report.syn,
        sel.accepted.len()
    );
    Ok(aug)
}

/// Everything a full run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub prepared: Prepared,
    pub discovery: DiscoveryResult,
    pub generation: GenerationOutput,
    pub selection: Selection,
    pub augmented: Table,
}

/// Runs every stage in order and, when `cfg.out` is set, writes the run
/// directory. The config is used as given; call
/// [`RunConfig::propagate_seed`] first to share the run seed.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<RunOutput, StageFailure> {
    let mut tr = Tracker::new(cfg);
    let dir = match &cfg.out {
        Some(out) => Some(tr.stage(Stage::Persist, || {
            let dir = RunDir::create(out)?;
            dir.write_config(cfg)?;
            Ok(dir)
        })?),
        None => None,
    };
    let result = run_stages(cfg, &mut tr, dir.as_ref());
    if let (Some(dir), Err(fail)) = (&dir, &result) {
        // a stub report still marks the failed run
        if let Err(e) = dir.write_report(&fail.report) {
            log::warn!("could not write the failure report: {e}");
        }
    }
    result
}

fn run_stages(cfg: &RunConfig, tr: &mut Tracker, dir: Option<&RunDir>) -> std::result::Result<RunOutput, StageFailure> {
    tr.stage(Stage::Load, || cfg.validate())?;
    let prepared = match tr.stage(Stage::Load, || fixture_split(cfg))? {
        Some(p) => p,
        None => {
            let input = tr.stage(Stage::Load, || load_input(cfg))?;
            tr.stage(Stage::Split, || split_input(cfg, &input))?
        }
    };
    tr.record_split(&prepared);

    let discovery = tr.stage(Stage::Discover, || stage_discover(cfg, &prepared))?;
    tr.record_discovery(&discovery);
    if let Some(dir) = dir {
        tr.stage(Stage::Persist, || dir.write_discovery(&discovery))?;
    }

    let generation = tr.stage(Stage::Generate, || stage_generate(cfg, &prepared, &discovery))?;
    tr.record_generation(&generation.candidates, &generation.stats);
    if let Some(dir) = dir {
        tr.stage(Stage::Persist, || {
            dir.write_transcripts(&generation.transcripts)?;
            dir.write_arms(&generation.candidates, &generation.stats)
        })?;
    }
    tr.stage(Stage::Select, || check_hygiene(&prepared.test, &discovery, &generation.candidates))?;

    let selection = tr.stage(Stage::Select, || stage_select(cfg, &prepared, &discovery, &generation.candidates))?;
    let mut report = tr.report.clone();
    let augmented =
        tr.stage(Stage::Evaluate, || stage_evaluate(cfg, &prepared, &generation.candidates, &selection, &mut report))?;
    report.timings_ms = tr.report.timings_ms.clone();
    tr.report = report;
    if let Some(dir) = dir {
        tr.stage(Stage::Persist, || {
            dir.write_traces(&selection.traces)?;
            dir.write_augmented(&augmented)
        })?;
        let report = tr.report.clone();
        tr.stage(Stage::Persist, || dir.write_report(&report))?;
    }
    Ok(RunOutput { report: tr.report.clone(), prepared, discovery, generation, selection, augmented })
}

/// Re-runs the single stage `stage` against an existing run directory, using
/// its `config.json` and the outputs of earlier stages.
pub fn run_stage(dir: &RunDir, stage: Stage) -> std::result::Result<RunReport, StageFailure> {
    let cfg = dir.read_config().map_err(|error| StageFailure {
        stage: Stage::Load,
        error,
        report: RunReport { status: RunStatus::Failed, failed_stage: Some(Stage::Load), ..Default::default() },
    })?;
    let mut tr = Tracker::new(&cfg);
    let prepared = tr.stage(Stage::Split, || prepare(&cfg))?;
    tr.record_split(&prepared);
    let result = stage_from_dir(&cfg, dir, stage, &prepared, &mut tr);
    if let Err(fail) = &result {
        let _ = dir.write_report(&fail.report);
    }
    result
}

fn stage_from_dir(
    cfg: &RunConfig,
    dir: &RunDir,
    stage: Stage,
    prepared: &Prepared,
    tr: &mut Tracker,
) -> std::result::Result<RunReport, StageFailure> {
    if stage == Stage::Discover {
        let d = tr.stage(Stage::Discover, || stage_discover(cfg, prepared))?;
        tr.record_discovery(&d);
        tr.stage(Stage::Persist, || dir.write_discovery(&d))?;
        return Ok(tr.report.clone());
    }
    let d = tr.stage(Stage::Load, || dir.read_discovery(&prepared.train))?;
    tr.record_discovery(&d);
    if stage == Stage::Generate {
        let g = tr.stage(Stage::Generate, || stage_generate(cfg, prepared, &d))?;
        tr.record_generation(&g.candidates, &g.stats);
        tr.stage(Stage::Persist, || {
            dir.write_transcripts(&g.transcripts)?;
            dir.write_arms(&g.candidates, &g.stats)
        })?;
        return Ok(tr.report.clone());
    }
    if stage != Stage::Select {
        return Err(StageFailure {
            stage,
            error: Error::Argument(format!("stage {stage} cannot run on its own")),
            report: tr.report.clone(),
        });
    }
    let (arms, stats) = tr.stage(Stage::Load, || dir.read_arms())?;
    tr.record_generation(&arms, &stats);
    tr.stage(Stage::Select, || check_hygiene(&prepared.test, &d, &arms))?;
    let sel = tr.stage(Stage::Select, || stage_select(cfg, prepared, &d, &arms))?;
    let mut report = tr.report.clone();
    let aug = tr.stage(Stage::Evaluate, || stage_evaluate(cfg, prepared, &arms, &sel, &mut report))?;
    report.timings_ms = tr.report.timings_ms.clone();
    tr.report = report;
    tr.stage(Stage::Persist, || {
        dir.write_traces(&sel.traces)?;
        dir.write_augmented(&aug)
    })?;
    let report = tr.report.clone();
    tr.stage(Stage::Persist, || dir.write_report(&report))?;
    Ok(tr.report.clone())
}

/// Loads `config.json` from a run directory.
pub fn load_config(path: impl AsRef<std::path::Path>) -> Result<RunConfig> {
    rundir::read_json(path.as_ref())
}

#[cfg(test)]
mod tests;
