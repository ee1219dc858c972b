use super::*;
use crate::rules::Example;
use crate::table::{Attribute, Value};
use std::sync::Arc;

fn table(task: Task, rows: &[(f64, f64)]) -> Table {
    let schema = Schema::new(vec![Attribute::new("a", Kind::Numeric), Attribute::new("y", Kind::Numeric)], "y", task).unwrap();
    let rows = rows.iter().map(|&(a, y)| vec![Value::Num(a), Value::Num(y)]).collect();
    Table::new(Arc::new(schema), rows, Provenance::Original).unwrap()
}

fn hyper() -> TreeHyper {
    TreeHyper { max_depth: 8, min_leaf: 1, seed: 0 }
}

#[test]
fn downstream_error_cases() {
    let sep = table(Task::Classification, &[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0), (3.0, 1.0)]);
    assert_eq!(evaluate_downstream(&sep, &sep, &hyper()).unwrap(), 0.0);

    let zeros = table(Task::Classification, &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
    let balanced = table(Task::Classification, &[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]);
    assert_eq!(evaluate_downstream(&zeros, &balanced, &hyper()).unwrap(), 0.5);

    let flat = table(Task::Regression, &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
    let test = table(Task::Regression, &[(0.5, 1.0), (1.5, 3.0)]);
    assert_eq!(evaluate_downstream(&flat, &test, &hyper()).unwrap(), 5.0);

    assert!(matches!(evaluate_downstream(&flat, &sep, &hyper()), Err(Error::Schema(_))));
}

#[test]
fn percentage_change() {
    assert!((error_change_pct(0.2, 0.15).unwrap() + 25.0).abs() < 1e-9);
    assert_eq!(error_change_pct(0.0, 0.1), None);
}

#[test]
fn seed_fills_unset_sub_seeds_only() {
    let mut cfg = RunConfig { seed: 7, ..Default::default() };
    cfg.mds.seed = 3;
    cfg.propagate_seed();
    assert_eq!(
        (cfg.split.seed, cfg.discovery.hyper.seed, cfg.generation.seed, cfg.mds.seed, cfg.downstream.seed),
        (7, 7, 7, 3, 7)
    );
}

#[test]
fn config_validation() {
    assert!(RunConfig::default().validate().is_err());
    let both = RunConfig { data: Some("x.csv".into()), fixture: Some("piecewise".into()), ..Default::default() };
    assert!(both.validate().is_err());
    let missing = RunConfig { data: Some("/nonexistent/x.csv".into()), ..Default::default() };
    assert!(missing.validate().is_err());
    let mut replay = RunConfig { fixture: Some("mixture2".into()), ..Default::default() };
    replay.generation.backend = BackendKind::Replay;
    assert!(replay.validate().is_err());
    assert!(RunConfig { fixture: Some("mixture2".into()), ..Default::default() }.validate().is_ok());
}

fn mixture_cfg(seed: u64) -> RunConfig {
    let mut cfg = RunConfig { fixture: Some("mixture2".into()), seed, ..Default::default() };
    cfg.generation.iterations = 2;
    cfg.generation.oracle = Some("mixture2".into());
    cfg.propagate_seed();
    cfg
}

#[test]
fn assembly_contains_train_and_counts_generated_rows() {
    let out = run_pipeline(&mixture_cfg(1)).unwrap();
    let aug = &out.augmented;
    let train_ids: HashSet<RowId> = out.prepared.train.ids().iter().copied().collect();
    let aug_ids: HashSet<RowId> = aug.ids().iter().copied().collect();
    assert!(train_ids.is_subset(&aug_ids));
    assert_eq!(aug.schema(), out.prepared.train.schema());
    let syn: usize = out
        .generation
        .candidates
        .iter()
        .filter(|a| out.report.accepted.contains(&a.id))
        .map(|a| a.data.len())
        .sum();
    assert_eq!(out.report.syn, syn);
    assert_eq!(out.report.rows.augmented, out.prepared.train.len() + syn);
    let (b, a) = (out.report.baseline_error.unwrap(), out.report.augmented_error.unwrap());
    assert_eq!(out.report.error_change_pct, error_change_pct(b, a));
}

#[test]
fn no_accepted_arms_keeps_the_baseline() {
    let cfg = mixture_cfg(2);
    let p = prepare(&cfg).unwrap();
    let mut report = RunReport::default();
    let aug = stage_evaluate(&cfg, &p, &[], &Selection::default(), &mut report).unwrap();
    assert_eq!(aug, p.train);
    assert_eq!(report.baseline_error, report.augmented_error);
    assert_eq!(report.syn, 0);
}

#[test]
fn test_rows_never_reach_training_stages() {
    let out = run_pipeline(&mixture_cfg(3)).unwrap();
    check_hygiene(&out.prepared.test, &out.discovery, &out.generation.candidates).unwrap();
    let leaked = Example::new(ModelId(0), 0.05, Dgr::default(), out.prepared.test.select(&[0])).unwrap();
    let mut d = out.discovery;
    d.examples.push(leaked);
    assert!(check_hygiene(&out.prepared.test, &d, &[]).is_err());
}

#[test]
fn failures_are_tagged_with_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { data: Some(dir.path().join("absent.csv")), out: Some(dir.path().join("run")), ..Default::default() };
    let fail = run_pipeline(&cfg).unwrap_err();
    assert_eq!(fail.stage, Stage::Load);
    assert_eq!(fail.report.status, RunStatus::Failed);
    let written = RunDir::open(dir.path().join("run")).unwrap().read_report().unwrap();
    assert_eq!(written.failed_stage, Some(Stage::Load));

    let mut strict = mixture_cfg(0);
    strict.discovery.rho = 1e-6;
    strict.discovery.max_models = 1;
    strict.discovery.hyper.max_depth = 1;
    let fail = run_pipeline(&strict).unwrap_err();
    assert_eq!(fail.stage, Stage::Discover);
    assert!(fail.report.rows.train > 0);
}

#[test]
fn greedy_selectors_and_first_round_only() {
    for selector in [Selector::Fgs, Selector::Bgs, Selector::TopM] {
        let mut cfg = mixture_cfg(4);
        cfg.selector = selector;
        cfg.first_iteration_only = selector == Selector::TopM;
        cfg.top_m = 0;
        let out = run_pipeline(&cfg).unwrap();
        let ids: HashSet<usize> = out.generation.candidates.iter().map(|a| a.id).collect();
        assert!(out.report.accepted.iter().all(|id| ids.contains(id)), "{selector:?}");
        if selector == Selector::TopM {
            let first = out.generation.candidates.iter().filter(|a| a.iteration == 1).count();
            assert_eq!(out.report.accepted.len(), first);
        }
    }
}

#[test]
fn run_directory_round_trip_and_single_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mixture_cfg(5);
    cfg.out = Some(dir.path().join("full"));
    let full = run_pipeline(&cfg).unwrap().report;
    let rd = RunDir::open(dir.path().join("full")).unwrap();
    for f in ["config.json", "examples.json", "stats.json", "arms.json", "mds_trace.json", "report.json", "augmented.csv"] {
        assert!(rd.path().join(f).is_file(), "{f}");
    }
    let models = std::fs::read_dir(rd.path().join("models")).unwrap().count();
    assert!(models >= 1);
    assert_eq!(rd.read_report().unwrap().without_timings(), full.without_timings());
    assert_eq!(rd.read_config().unwrap(), cfg);

    let staged = RunDir::create(dir.path().join("staged")).unwrap();
    let mut scfg = cfg.clone();
    scfg.out = Some(staged.path().to_path_buf());
    staged.write_config(&scfg).unwrap();
    run_stage(&staged, Stage::Discover).unwrap();
    run_stage(&staged, Stage::Generate).unwrap();
    let r = run_stage(&staged, Stage::Select).unwrap();
    assert_eq!(r.without_timings(), full.without_timings());

    let p = prepare(&cfg).unwrap();
    let d = rd.read_discovery(&p.train).unwrap();
    assert_eq!(d.examples, stage_discover(&cfg, &p).unwrap().examples);
}

#[test]
fn replay_reproduces_a_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mixture_cfg(6);
    cfg.out = Some(dir.path().join("a"));
    let a = run_pipeline(&cfg).unwrap().report;

    let mut again = cfg.clone();
    again.out = Some(dir.path().join("b"));
    let b = run_pipeline(&again).unwrap().report;
    assert_eq!(a.without_timings(), b.without_timings());

    let mut replay = cfg.clone();
    replay.generation.backend = BackendKind::Replay;
    replay.replay_from = Some(dir.path().join("a"));
    replay.out = Some(dir.path().join("c"));
    let c = run_pipeline(&replay).unwrap().report;
    let strip = |r: &RunReport| RunReport { backend: BackendKind::Synthetic, ..r.without_timings() };
    assert_eq!(strip(&c), strip(&a));
}
