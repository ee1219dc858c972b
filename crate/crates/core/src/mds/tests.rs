use super::*;
use crate::rules::{Conjunction, Op, Predicate};
use crate::table::{Attribute, Kind, Provenance, RowId, Schema, Value};
use proptest::prelude::*;
use rand::Rng;
use std::sync::Arc;

fn schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(
            vec![Attribute::new("a", Kind::Numeric), Attribute::new("y", Kind::Numeric)],
            "y",
            Task::Classification,
        )
        .unwrap(),
    )
}

fn rows_table(rows: &[(f64, f64)], first_id: u64, prov: Provenance) -> Table {
    let recs = rows.iter().map(|&(a, y)| vec![Value::Num(a), Value::Num(y)]).collect();
    let ids = (0..rows.len() as u64).map(|i| RowId(first_id + i)).collect();
    Table::with_ids(schema(), recs, ids, prov).unwrap()
}

fn label(a: f64) -> f64 {
    f64::from(a >= 5.0)
}

/// Train covers [0, 3) and [8, 10); validation spans the gap.
fn train_val() -> (Table, Table) {
    let tr: Vec<(f64, f64)> =
        (0..40).map(|i| i as f64 * 0.25).filter(|a| !(3.0..8.0).contains(a)).map(|a| (a, label(a))).collect();
    let va: Vec<(f64, f64)> = (0..30).map(|i| 0.1 + i as f64 / 3.0).map(|a| (a, label(a))).collect();
    (rows_table(&tr, 0, Provenance::Original), rows_table(&va, 1000, Provenance::Original))
}

fn rule(lo: f64, hi: f64) -> Dgr {
    Dgr::from(Conjunction::new([Predicate::num("a", Op::Gt, lo), Predicate::num("a", Op::Le, hi)]))
}

fn arm(id: usize, rows: &[(f64, f64)], r: Dgr, rho_k: f64, delta: f64) -> ArmCandidate {
    ArmCandidate {
        id,
        model_id: ModelId(0),
        rho_k,
        rule: r,
        path_key: "ROOT".into(),
        data: rows_table(rows, RowId::GENERATED_BASE + 100 * id as u64, Provenance::Generated),
        delta,
        delta_in_sample: delta,
        iteration: 1,
    }
}

fn fill(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).map(|a| (a, label(a))).collect()
}

fn input<'a>(arms: &'a [ArmCandidate], ctx: &'a [(Dgr, usize)], tr: &'a Table, va: &'a Table) -> MdsInput<'a> {
    MdsInput { arms, context: ctx, train: tr, val: va, hyper: TreeHyper { max_depth: 8, min_leaf: 1, seed: 0 }, rho_global: 0.05 }
}

#[test]
fn utility_arithmetic() {
    assert!((utility(0.1, 0.5, 0.8) - 0.82).abs() < 1e-12);
    assert_eq!(utility(0.3, 0.0, 1.0), utility(0.3, 1.0, 1.0));
    assert_eq!(normalize_rho(20.0, Task::Regression, 10.0), 1.0);
    assert_eq!(normalize_rho(5.0, Task::Regression, 10.0), 0.5);
    assert_eq!(normalize_rho(-0.02, Task::Classification, 0.05), -0.02);
}

#[test]
fn schedule_values() {
    assert_eq!(logbar(2), 1.0);
    assert!((logbar(3) - 4.0 / 3.0).abs() < 1e-15);
    assert_eq!(sar_schedule(2, 10).unwrap(), vec![4]);
    assert_eq!(sar_schedule(4, 20).unwrap(), vec![3, 4, 6]);
    assert!(matches!(sar_schedule(3, 3), Err(Error::Config(_))));
    assert!(matches!(sar_schedule(1, 10), Err(Error::Config(_))));
}

#[test]
fn bound_values() {
    let (b, flag) = error_bound(2, 22, &[1.0, 1.0]).unwrap();
    assert!(!flag);
    assert!((b - 8.0 * (-5.0f64).exp()).abs() < 1e-12);
    assert_eq!(error_bound(2, 22, &[1.0, 0.0]).unwrap(), (1.0, true));
    assert!(error_bound(2, 100_000, &[0.5, 0.5]).unwrap().0 < 1e-100);
    assert!(error_bound(3, 10, &[1.0]).is_err());
}

proptest! {
    #[test]
    fn schedule_is_non_decreasing(k in 2usize..40, extra in 1usize..2000) {
        let s = sar_schedule(k, k + extra).unwrap();
        prop_assert_eq!(s.len(), k - 1);
        prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bound_is_non_increasing_in_n(k in 2usize..6, n in 7usize..500, g in 0.05f64..1.0) {
        let mu = vec![g; k];
        let a = error_bound(k, n, &mu).unwrap().0;
        let b = error_bound(k, n + 1, &mu).unwrap().0;
        prop_assert!(b <= a);
    }
}

#[test]
fn dominant_arm_alone_is_accepted() {
    let (tr, va) = train_val();
    // duplicates of training rows leave the tree unchanged, so pulls are noiseless
    let dup: Vec<(f64, f64)> = tr.rows().iter().take(4).map(|r| (r[0].as_f64().unwrap(), r[1].as_f64().unwrap())).collect();
    let r = rule(0.0, 10.0);
    let arms = vec![arm(0, &dup, r.clone(), 0.125, 0.0), arm(1, &dup, r.clone(), 1.0, 0.0)];
    let ctx = vec![(r, 10)];
    let res = run_mds(&input(&arms, &ctx, &tr, &va), &MdsConfig::default()).unwrap();
    assert_eq!(res.accepted, vec![0]);
    assert!((res.trace.phases[0].u - 0.9).abs() < 1e-12);
    assert!(res.trace.pulls.iter().all(|p| p.score == 0.0));
}

#[test]
fn accepting_an_identical_rule_raises_diversity() {
    let (tr, va) = train_val();
    let (r0, r1) = (rule(0.0, 3.0), rule(3.0, 8.0));
    let arms = vec![arm(0, &fill(3.0, 5.5, 6), r1.clone(), 0.05, 0.0), arm(1, &fill(5.5, 8.0, 6), r1, 0.05, 0.0)];
    let ctx = vec![(r0, 20)];
    let inp = input(&arms, &ctx, &tr, &va);
    let cfg = MdsConfig::default();
    let mut b = Bandit {
        input: &inp,
        cfg: &cfg,
        mode: OverlapMode::Jaccard,
        state: (0..2).map(|_| ArmState { samples: vec![], pulls: 0, div: 0.0 }).collect(),
        accepted: vec![],
        base: tr.clone(),
        base_err: None,
        arm_err: HashMap::new(),
        total_pulls: 0,
        trace: MdsTrace::default(),
    };
    let before = b.diversity(1).unwrap();
    let u_before = { b.state[1].div = before; b.u(1) };
    b.accept(0, &[1]).unwrap();
    assert!(b.state[1].div > before, "{} vs {before}", b.state[1].div);
    assert!(b.u(1) > u_before);
}

#[test]
fn pulls_follow_the_schedule_and_budget() {
    let (tr, va) = train_val();
    let r = rule(3.0, 8.0);
    let arms: Vec<ArmCandidate> = (0..4).map(|i| arm(i, &fill(3.0 + i as f64, 4.0 + i as f64, 5), r.clone(), 0.05, 0.01)).collect();
    let ctx = vec![(rule(0.0, 3.0), 10)];
    let cfg = MdsConfig { budget: 20, patience: 10, ..Default::default() };
    let res = run_mds(&input(&arms, &ctx, &tr, &va), &cfg).unwrap();
    assert!(res.total_pulls <= 20);
    let sched = sar_schedule(4, 20).unwrap();
    let mut prev = 0;
    for (p, &nk) in sched.iter().enumerate().take(res.trace.phases.len()) {
        let in_phase = res.trace.pulls.iter().filter(|x| x.phase == p + 1).count();
        assert_eq!(in_phase, (nk - prev) * (4 - p), "phase {}", p + 1);
        prev = nk;
    }
}

#[test]
fn single_arm_accepted_iff_it_improves() {
    let (tr, va) = train_val();
    let ctx = vec![(rule(0.0, 3.0), 10)];
    let good = vec![arm(0, &fill(3.0, 8.0, 10), rule(3.0, 8.0), 0.0, 0.05)];
    assert_eq!(run_mds(&input(&good, &ctx, &tr, &va), &MdsConfig::default()).unwrap().accepted, vec![0]);
    let bad = vec![arm(0, &fill(3.0, 8.0, 10), rule(3.0, 8.0), 0.1, -0.05)];
    assert!(run_mds(&input(&bad, &ctx, &tr, &va), &MdsConfig::default()).unwrap().accepted.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn best_trace_is_monotone(seed in 0u64..1000, k in 2usize..6) {
        let (tr, va) = train_val();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arms: Vec<ArmCandidate> = (0..k)
            .map(|i| {
                let lo = rng.gen_range(0.0..9.0);
                let rows: Vec<(f64, f64)> = (0..6)
                    .map(|_| {
                        let a: f64 = rng.gen_range(lo..lo + 1.0);
                        let y = if rng.gen_bool(0.2) { 1.0 - label(a) } else { label(a) };
                        (a, y)
                    })
                    .collect();
                arm(i, &rows, rule(lo, lo + 1.0), rng.gen_range(0.0..0.1), rng.gen_range(-0.05..0.05))
            })
            .collect();
        let ctx = vec![(rule(0.0, 3.0), 10), (rule(8.0, 10.0), 10)];
        let cfg = MdsConfig { seed, budget: 10 * k, ..Default::default() };
        let res = run_mds(&input(&arms, &ctx, &tr, &va), &cfg).unwrap();
        prop_assert!(res.best_trace.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(res.total_pulls <= cfg.budget);
        for ph in &res.trace.phases {
            prop_assert_eq!(ph.accepted, ph.u >= ph.best_before);
        }
        prop_assert!(res.accepted.iter().all(|id| arms.iter().any(|a| a.id == *id)));
    }
}

#[test]
fn greedy_variants_pick_a_single_dominant_arm() {
    let (tr, va) = train_val();
    let arms = vec![arm(0, &fill(3.0, 8.0, 20), rule(3.0, 8.0), 0.0, 0.1)];
    let eval = Evaluator { train: &tr, val: &va, hyper: TreeHyper { max_depth: 8, min_leaf: 1, seed: 0 } };
    assert_eq!(forward_greedy(&arms, &eval).unwrap(), vec![0]);
    assert_eq!(backward_greedy(&arms, &eval).unwrap(), vec![0]);
    assert_eq!(top_m(&arms, &eval, 5).unwrap(), vec![0]);
}

#[test]
fn backward_greedy_returns_a_subset() {
    let (tr, va) = train_val();
    let flipped: Vec<(f64, f64)> = fill(3.0, 8.0, 20).into_iter().map(|(a, y)| (a, 1.0 - y)).collect();
    let arms = vec![
        arm(0, &fill(3.0, 8.0, 20), rule(3.0, 8.0), 0.0, 0.1),
        arm(1, &flipped, rule(3.0, 8.0), 0.2, -0.1),
        arm(2, &fill(0.0, 2.0, 4), rule(0.0, 2.0), 0.05, 0.0),
    ];
    let eval = Evaluator { train: &tr, val: &va, hyper: TreeHyper { max_depth: 8, min_leaf: 1, seed: 0 } };
    let kept = backward_greedy(&arms, &eval).unwrap();
    assert!(kept.iter().all(|id| *id < 3));
    assert!(!kept.contains(&1));
    let (best, err) = eval.brute_force(&arms).unwrap();
    assert!(best.contains(&0) && !best.contains(&1));
    assert!(err <= eval.error_with(&[]).unwrap());
}

#[test]
fn selector_names() {
    assert_eq!("MDS".parse::<Selector>().unwrap(), Selector::Mds);
    assert_eq!("topm".parse::<Selector>().unwrap(), Selector::TopM);
    assert!("best".parse::<Selector>().is_err());
}
