use super::synthetic::{Oracle, SyntheticBackend};
use super::*;
use crate::discovery::{discover, DiscoveryConfig};
use crate::table::{Attribute, Kind, Task, Value};

fn schema(task: Task) -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![Attribute::new("a", Kind::Numeric), Attribute::new("y", Kind::Numeric)], "y", task).unwrap(),
    )
}

fn table(task: Task, rows: &[(f64, f64)]) -> Table {
    let rows = rows.iter().map(|&(a, y)| vec![Value::Num(a), Value::Num(y)]).collect();
    Table::new(schema(task), rows, Provenance::Original).unwrap()
}

/// y = 1 iff a ≥ 5 on a = 0..20 step 0.5.
fn step() -> Table {
    let rows: Vec<(f64, f64)> = (0..40).map(|i| (i as f64 * 0.5, f64::from(i >= 10))).collect();
    table(Task::Classification, &rows)
}

fn stump() -> TreeModel {
    train(&step(), &TreeHyper::default(), ModelId(0)).unwrap()
}

#[test]
fn depth_zero_tree_has_one_root_group() {
    let t = table(Task::Classification, &[(1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0)]);
    let m = train(&t, &TreeHyper::default(), ModelId(0)).unwrap();
    let g = group_by_path(&m, &t).unwrap();
    assert_eq!(g.keys().collect::<Vec<_>>(), ["ROOT"]);
    assert!(g["ROOT"].0.is_identity());
}

#[test]
fn straddling_rows_split_into_two_groups_that_follow_their_rules() {
    let m = stump();
    let h = table(Task::Classification, &[(1.0, 0.0), (2.2, 0.0), (7.0, 1.0), (9.9, 1.0)]);
    let g = group_by_path(&m, &h).unwrap();
    assert_eq!(g.len(), 2);
    for (rule, rows) in g.values() {
        assert_eq!(rule.clauses().len(), 1);
        assert_eq!(rule.filter(rows).unwrap(), *rows);
    }
}

#[test]
fn quality_filter_cases() {
    let m = stump();
    let agree = table(Task::Classification, &[(1.0, 0.0), (8.0, 1.0)]);
    assert!(quality_filter(&m, &agree, 0.05).unwrap());
    let one_off = table(Task::Classification, &[(1.0, 0.0), (8.0, 0.0)]);
    assert!(!quality_filter(&m, &one_off, 0.05).unwrap());

    let rt = table(Task::Regression, &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
    let rm = train(&rt, &TreeHyper::default(), ModelId(0)).unwrap();
    let h = table(Task::Regression, &[(0.0, 4.0), (1.0, 9.0)]);
    assert!(quality_filter(&rm, &h, 10.0).unwrap());
}

#[test]
fn delta_of_duplicates_flips_and_gap_filling() {
    let hyper = TreeHyper { max_depth: 8, min_leaf: 1, seed: 0 };
    // training rows leave a hole around the step at a = 5
    let train_rows: Vec<(f64, f64)> =
        (0..40).map(|i| i as f64 * 0.25).filter(|a| !(3.0..9.0).contains(a)).map(|a| (a, f64::from(a >= 5.0))).collect();
    let t_train = table(Task::Classification, &train_rows);
    let val_rows: Vec<(f64, f64)> = (0..20).map(|i| 2.0 + i as f64 * 0.3).map(|a| (a, f64::from(a >= 5.0))).collect();
    let t_val = table(Task::Classification, &val_rows);

    let d = delta_score(&hyper, &t_train, &t_val, &t_train).unwrap();
    assert!(d.abs() <= 1e-12, "{d}");

    let fill: Vec<(f64, f64)> = (0..24).map(|i| 2.0 + i as f64 * 0.25).map(|a| (a, f64::from(a >= 5.0))).collect();
    let d = delta_score(&hyper, &t_train, &t_val, &table(Task::Classification, &fill)).unwrap();
    assert!(d > 0.0, "{d}");

    let flipped: Vec<(f64, f64)> = val_rows.iter().map(|&(a, y)| (a, 1.0 - y)).collect();
    let d = delta_score(&hyper, &t_train, &t_val, &table(Task::Classification, &flipped)).unwrap();
    assert!(d < 0.0, "{d}");
}

fn step_oracle() -> Oracle {
    Arc::new(|_, r| Value::Num(f64::from(r[0].as_f64().unwrap() >= 5.0)))
}

fn run(cfg: &GenerationConfig) -> (DiscoveryResult, GenerationOutput) {
    let t = step();
    let d = discover(&t, &DiscoveryConfig::for_task(Task::Classification)).unwrap();
    let mut b = SyntheticBackend::new(&t, Some(step_oracle()));
    let out = run_generation(&d, &t, cfg, &mut b).unwrap();
    (d, out)
}

#[test]
fn one_round_yields_certified_candidates() {
    let cfg = GenerationConfig { iterations: 1, ..Default::default() };
    let (d, out) = run(&cfg);
    assert!(!out.candidates.is_empty());
    let models = d.groups().len();
    assert_eq!(out.stats.refine_calls, models);
    assert_eq!(out.stats.generate_calls, models + out.stats.refined_accepted);
    for c in &out.candidates {
        let m = d.model(c.model_id).unwrap();
        let rho = m.rho.unwrap();
        assert_eq!(c.rule.filter(&c.data).unwrap().len(), c.data.len());
        assert!(quality_filter(m, &c.data, rho).unwrap());
        assert_eq!(c.rho_k, rho - c.delta);
        assert!(c.data.ids().iter().all(|id| id.is_generated()));
        assert_eq!(c.data.schema(), step().schema());
    }
    let ids: Vec<usize> = out.candidates.iter().map(|c| c.id).collect();
    assert_eq!(ids, (0..ids.len()).collect::<Vec<_>>());
}

#[test]
fn zero_iterations_rejected() {
    let t = step();
    let d = discover(&t, &DiscoveryConfig::for_task(Task::Classification)).unwrap();
    let mut b = SyntheticBackend::new(&t, None);
    let cfg = GenerationConfig { iterations: 0, ..Default::default() };
    assert!(matches!(run_generation(&d, &t, &cfg, &mut b), Err(Error::Config(_))));
}

#[test]
fn synthetic_runs_are_deterministic_and_replayable() {
    let cfg = GenerationConfig::default();
    let (d, a) = run(&cfg);
    let (_, b) = run(&cfg);
    assert_eq!(a.candidates, b.candidates);

    let mut replay = replay::ReplayBackend::new(a.transcripts.clone());
    let c = run_generation(&d, &step(), &cfg, &mut replay).unwrap();
    assert_eq!(a.candidates, c.candidates);
    assert_eq!(replay.remaining(), 0);
}

struct Failing;

impl GeneratorBackend for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn generate(&mut self, _: &GenerateRequest<'_>) -> Result<String> {
        Err(Error::Backend("offline".into()))
    }
    fn refine_rules(&mut self, _: &RefineRequest<'_>) -> Result<String> {
        Err(Error::Backend("offline".into()))
    }
}

#[test]
fn backend_failures_skip_rounds_without_aborting() {
    let t = step();
    let d = discover(&t, &DiscoveryConfig::for_task(Task::Classification)).unwrap();
    let out = run_generation(&d, &t, &GenerationConfig::default(), &mut Failing).unwrap();
    assert!(out.candidates.is_empty());
    assert_eq!(out.stats.backend_errors, 3 * d.groups().len());
    assert!(out.transcripts.iter().all(|t| t.error.is_some()));
}

#[test]
fn refined_rules_are_validated() {
    struct Proposer;
    impl GeneratorBackend for Proposer {
        fn name(&self) -> &str {
            "proposer"
        }
        fn generate(&mut self, _: &GenerateRequest<'_>) -> Result<String> {
            Ok(String::new())
        }
        fn refine_rules(&mut self, _: &RefineRequest<'_>) -> Result<String> {
            Ok("(y > 0)\n(a > 5 AND a < 2)\n(a > 1)\n(a > 1)\n(a > 2)\n(a > 3)\n(a > 4)".into())
        }
    }
    let t = step();
    let d = discover(&t, &DiscoveryConfig::for_task(Task::Classification)).unwrap();
    let cfg = GenerationConfig { iterations: 1, ..Default::default() };
    let out = run_generation(&d, &t, &cfg, &mut Proposer).unwrap();
    let models = d.groups().len();
    assert_eq!(out.stats.refined_accepted, 3 * models);
    assert_eq!(out.stats.generate_calls, 4 * models);
}

#[test]
fn path_grouping_off_uses_the_call_rule() {
    let cfg = GenerationConfig { iterations: 1, dt_reasoning: false, dgr_opt: false, ..Default::default() };
    let (_, out) = run(&cfg);
    assert!(out.candidates.iter().all(|c| c.path_key.starts_with("CALL")));
}
