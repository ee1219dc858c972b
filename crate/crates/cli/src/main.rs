//! `date`: rule discovery, tree-guided generation and bandit selection for
//! tabular data.
//!
//! Exit codes: 0 on success, 1 when a pipeline stage fails, 2 on usage or
//! configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use date_core::discovery::default_rho;
use date_core::fixtures::{make_fixture, FIXTURES};
use date_core::mds::error_bound;
use date_core::pipeline::{load_config, run_stage};
use date_core::table::{write_csv, write_csv_to};
use date_core::{run_pipeline, BackendKind, RunConfig, RunDir, RunReport, Selector, Stage, StageFailure, Task};

#[derive(Parser, Debug)]
#[command(name = "date", version, about = "Rule-guided tabular data augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full pipeline: discovery, generation, selection and evaluation.
    Run(RunArgs),
    /// Rule discovery only; creates the run directory given by --out.
    Discover(RunArgs),
    /// Generation against the discovery results in --out.
    Generate(RunArgs),
    /// Selection and evaluation against the generated arms in --out.
    Select(RunArgs),
    /// Writes a built-in dataset as CSV.
    Fixtures(FixtureArgs),
    /// Misidentification bound of the successive-rejects schedule.
    Bound(BoundArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV input.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Built-in dataset instead of --data.
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// classification or regression.
    #[arg(long)]
    task: Option<Task>,
    /// Discovery threshold (default 0.05 for classification, 10 for regression).
    #[arg(long)]
    rho: Option<f64>,
    /// Generation rounds per model.
    #[arg(long)]
    iters: Option<usize>,
    /// Quality weight of the selection utility.
    #[arg(long)]
    alpha: Option<f64>,
    /// Pull budget of the bandit.
    #[arg(long)]
    budget: Option<usize>,
    /// llm, synthetic or replay.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// mds, fgs, bgs or topm.
    #[arg(long)]
    selector: Option<Selector>,
    /// Labelling function of a built-in dataset, used by the synthetic backend.
    #[arg(long)]
    oracle: Option<String>,
    /// Run directory whose transcripts the replay backend reads.
    #[arg(long)]
    replay_from: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundArgs {
    /// Number of arms.
    #[arg(long)]
    k: usize,
    /// Total pull budget.
    #[arg(long)]
    n: usize,
    /// Comma-separated gaps, one per arm.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Vec<f64>,
}

/// Usage and configuration problems, reported with exit code 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.into())
    }
}

enum Failure {
    Usage(anyhow::Error),
    Stage(Box<StageFailure>),
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

impl From<StageFailure> for Failure {
    fn from(f: StageFailure) -> Self {
        Failure::Stage(Box::new(f))
    }
}

/// Builds the run configuration: defaults, then the config file, then flags.
fn resolve(args: &RunArgs, base: Option<RunConfig>) -> Result<RunConfig, Usage> {
    let mut rho_set = base.is_some();
    let mut cfg = match (&args.config, base) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let raw: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            rho_set = raw.pointer("/discovery/rho").is_some();
            load_config(path).with_context(|| format!("loading {}", path.display()))?
        }
        (None, Some(base)) => base,
        (None, None) => RunConfig::default(),
    };
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
        cfg.fixture = None;
    }
    if let Some(f) = &args.fixture {
        cfg.fixture = Some(f.clone());
        cfg.data = None;
    }
    if let Some(t) = &args.target {
        cfg.target = t.clone();
    }
    if let Some(t) = args.task {
        cfg.task = t;
    }
    match args.rho {
        Some(r) => cfg.discovery.rho = r,
        None if !rho_set => cfg.discovery.rho = default_rho(cfg.task),
        None => {}
    }
    if let Some(i) = args.iters {
        cfg.generation.iterations = i;
    }
    if let Some(a) = args.alpha {
        cfg.mds.alpha = a;
    }
    if let Some(b) = args.budget {
        cfg.mds.budget = b;
    }
    if let Some(b) = args.backend {
        cfg.generation.backend = b;
    }
    if let Some(s) = args.selector {
        cfg.selector = s;
    }
    if let Some(o) = &args.oracle {
        cfg.generation.oracle = Some(o.clone());
    }
    if let Some(r) = &args.replay_from {
        cfg.replay_from = Some(r.clone());
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    cfg.propagate_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn summary(r: &RunReport) -> String {
    let err = |e: Option<f64>| e.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let mut s = format!(
        "examples {}  models {}  shares {}  arms {}  accepted {}  syn {}",
        r.examples,
        r.models_trained,
        r.shares,
        r.candidates,
        r.accepted.len(),
        r.syn
    );
    if r.baseline_error.is_some() {
        s.push_str(&format!("  error {} -> {}", err(r.baseline_error), err(r.augmented_error)));
        if let Some(p) = r.error_change_pct {
            s.push_str(&format!(" ({p:+.2}%)"));
        }
    }
    s
}

fn run_dir_of(args: &RunArgs) -> Result<&Path, Usage> {
    match &args.out {
        Some(p) => Ok(p),
        None => Err(Usage(anyhow::anyhow!("--out must name the run directory"))),
    }
}

/// Single stage against an existing run directory. Flags override the
/// directory's saved config, and the result is saved back.
fn single_stage(args: &RunArgs, stage: Stage) -> Result<(), Failure> {
    let out = run_dir_of(args)?;
    let dir = if stage == Stage::Discover {
        let cfg = resolve(args, None)?;
        let dir = RunDir::create(out).map_err(Usage::from)?;
        dir.write_config(&cfg).map_err(Usage::from)?;
        dir
    } else {
        let dir = RunDir::open(out).map_err(Usage::from)?;
        let saved = dir.read_config().map_err(Usage::from)?;
        let cfg = resolve(args, Some(saved))?;
        dir.write_config(&cfg).map_err(Usage::from)?;
        dir
    };
    let report = run_stage(&dir, stage)?;
    println!("{stage}: {}", summary(&report));
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = resolve(args, None)?;
    let out = run_pipeline(&cfg)?;
    match &cfg.out {
        Some(dir) => println!("{}  ({})", summary(&out.report), dir.display()),
        None => println!("{}", serde_json::to_string_pretty(&out.report).map_err(Usage::from)?),
    }
    Ok(())
}

fn fixtures(args: &FixtureArgs) -> Result<(), Failure> {
    if !FIXTURES.contains(&args.name.as_str()) {
        return Err(Usage(anyhow::anyhow!("unknown fixture `{}` (known: {})", args.name, FIXTURES.join(", "))).into());
    }
    let t = make_fixture(&args.name, args.seed).map_err(Usage::from)?;
    match &args.out {
        Some(p) => write_csv(&t, p).map_err(Usage::from)?,
        None => write_csv_to(&t, std::io::stdout().lock()).map_err(Usage::from)?,
    }
    Ok(())
}

fn bound(args: &BoundArgs) -> Result<(), Failure> {
    let check = || -> anyhow::Result<(f64, bool)> {
        if args.mu.len() != args.k {
            bail!("--mu needs {} gaps, got {}", args.k, args.mu.len());
        }
        Ok(error_bound(args.k, args.n, &args.mu)?)
    };
    let (b, degenerate) = check().map_err(Usage)?;
    if degenerate {
        log::warn!("a zero gap makes the bound uninformative");
    }
    println!("{b:.6}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Discover(a) => single_stage(a, Stage::Discover),
        Command::Generate(a) => single_stage(a, Stage::Generate),
        Command::Select(a) => single_stage(a, Stage::Select),
        Command::Fixtures(a) => fixtures(a),
        Command::Bound(a) => bound(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(f)) => {
            log::error!("{f}");
            ExitCode::from(1)
        }
    }
}
