use std::sync::OnceLock;

use rankstab::baselines::{BaselineConfig, BaselineVariant};
use rankstab::finest::FinestConfig;
use rankstab::harness::{
    run_ablation, run_arms, run_sweep, run_twin_experiment, Arm, Defense, ExperimentConfig,
    ExperimentReport, SweepKnob,
};

fn small() -> ExperimentConfig {
    ExperimentConfig::desk_scale()
        .with_overrides([
            ("data.n_users", "70"),
            ("data.n_items", "40"),
            ("model.embed_dim", "16"),
            ("model.max_epochs", "6"),
            ("finest.epochs", "3"),
            ("finest.top_k", "5"),
            ("baseline.epochs", "3"),
            ("attack.budget", "0.005"),
            ("seeds", "[0, 1]"),
        ])
        .unwrap()
}

fn metrics(r: &ExperimentReport, arm: &str) -> Vec<rankstab::harness::MetricSet> {
    r.arm(arm)
        .unwrap()
        .seeds
        .iter()
        .map(|s| s.metrics.clone())
        .collect()
}

fn strip_runtimes(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("runtime_secs");
            m.values_mut().for_each(strip_runtimes);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_runtimes),
        _ => {}
    }
}

#[test]
fn reports_replay_exactly() {
    let cfg = small();
    let mut a = serde_json::to_value(run_twin_experiment(&cfg).unwrap()).unwrap();
    let mut b = serde_json::to_value(run_twin_experiment(&cfg).unwrap()).unwrap();
    strip_runtimes(&mut a);
    strip_runtimes(&mut b);
    assert_eq!(a, b);
}

#[test]
fn arms_share_data_and_attack() {
    let r = run_ablation(&small()).unwrap();
    assert!(!r.failed());
    assert_eq!(r.arms.len(), 6);
    let first = &r.arms[0].seeds;
    for arm in &r.arms {
        for (s, f) in arm.seeds.iter().zip(first) {
            assert_eq!(
                (s.seed, s.n_edits, s.n_test_instances),
                (f.seed, f.n_edits, f.n_test_instances)
            );
            assert!(s.n_edits > 0);
            for v in [
                s.metrics.rls_rbo,
                s.metrics.rls_jaccard,
                s.metrics.mrr,
                s.metrics.recall_at_10,
            ] {
                let v = v.unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
        for p in [arm.p_value_rls_rbo, arm.p_value_mrr].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&p));
        }
    }
}

#[test]
fn zero_lambda_matches_random_baseline_and_sweep() {
    let cfg = small();
    let f = &cfg.finest;
    let random = BaselineConfig {
        variant: BaselineVariant::Random,
        ratio: f.sampling_ratio,
        epochs: f.epochs,
        learning_rate: f.learning_rate,
        batch_size: f.batch_size,
        ..BaselineConfig::default()
    };
    let r = run_arms(
        &cfg,
        &[
            Arm::new("none", Defense::None),
            Arm::new(
                "lambda0",
                Defense::Finest(FinestConfig {
                    lambda: 0.0,
                    ..f.clone()
                }),
            ),
            Arm::new("random", Defense::Baseline(random)),
        ],
    )
    .unwrap();
    assert_eq!(metrics(&r, "lambda0"), metrics(&r, "random"));

    let sweep = run_sweep(&cfg, SweepKnob::Lambda, &[0.0]).unwrap();
    assert_eq!(sweep.len(), 1);
    let abl = run_ablation(&cfg).unwrap();
    assert_eq!(
        metrics(&sweep[0], "finest"),
        metrics(&abl, "no_regularization")
    );
}

#[test]
fn single_value_sweep_is_the_twin_experiment() {
    let cfg = small();
    let sweep = run_sweep(&cfg, SweepKnob::Epochs, &[cfg.finest.epochs as f64]).unwrap();
    let twin = run_twin_experiment(&cfg).unwrap();
    assert_eq!(metrics(&sweep[0], "none"), metrics(&twin, "none"));
    assert_eq!(metrics(&sweep[0], "finest"), metrics(&twin, "finest"));
    assert_eq!(sweep[0].sweep.as_ref().unwrap().knob, "epochs");
}

#[test]
fn zero_budget_twins_match_under_every_mode() {
    for mode in ["retrain", "shared_base"] {
        let cfg = small()
            .with_overrides([
                ("attack.budget", "0"),
                ("twin_mode", mode),
                ("seeds", "[3]"),
            ])
            .unwrap();
        let r = run_twin_experiment(&cfg).unwrap();
        for arm in &r.arms {
            let s = &arm.seeds[0];
            assert_eq!(s.n_edits, 0);
            assert_eq!(s.metrics.rls_jaccard, Some(1.0), "{mode} {}", arm.arm);
            assert_eq!(
                s.metrics.rls_rbo,
                Some(r.rbo_identity),
                "{mode} {}",
                arm.arm
            );
        }
    }
    // the frozen twin is the undefended model, so a defended arm drifts even
    // without an attack
    let cfg = small()
        .with_overrides([
            ("attack.budget", "0"),
            ("twin_mode", "frozen_checkpoint"),
            ("seeds", "[3]"),
        ])
        .unwrap();
    let r = run_twin_experiment(&cfg).unwrap();
    assert_eq!(
        r.arm("none").unwrap().seeds[0].metrics.rls_jaccard,
        Some(1.0)
    );
    assert!(r.arm("finest").unwrap().seeds[0].metrics.rls_rbo.unwrap() < r.rbo_identity);
}

#[test]
fn divergent_seed_is_recorded() {
    let cfg = small()
        .with_overrides([("finest.learning_rate", "1e200")])
        .unwrap();
    let r = run_twin_experiment(&cfg).unwrap();
    assert!(r.failed());
    assert_eq!(r.missing_seeds, vec![0, 1]);
    let fin = r.arm("finest").unwrap();
    assert!(fin
        .seeds
        .iter()
        .all(|s| s.error.is_some() && s.metrics.rls_rbo.is_none()));
    assert!(r
        .arm("none")
        .unwrap()
        .seeds
        .iter()
        .all(|s| s.error.is_none()));
}

fn epochs_sweep() -> &'static [ExperimentReport] {
    static REPORTS: OnceLock<Vec<ExperimentReport>> = OnceLock::new();
    REPORTS.get_or_init(|| {
        let cfg = ExperimentConfig::desk_scale()
            .with_overrides([
                ("data.n_users", "120"),
                ("data.n_items", "60"),
                ("model.max_epochs", "30"),
                ("seeds", "[0, 1, 2]"),
            ])
            .unwrap();
        run_sweep(&cfg, SweepKnob::Epochs, &[0.0, 10.0, 50.0]).unwrap()
    })
}

#[test]
fn stability_is_non_decreasing_in_finetuning_epochs() {
    let rbo: Vec<Vec<f64>> = epochs_sweep()
        .iter()
        .map(|r| r.arm("finest").unwrap().values(|m| m.rls_rbo))
        .collect();
    let monotone = (0..3)
        .filter(|&s| rbo[0][s] <= rbo[1][s] && rbo[1][s] <= rbo[2][s])
        .count();
    assert!(monotone >= 2, "{rbo:?}");
}

#[test]
fn finetuning_narrows_the_group_gap() {
    let r = &epochs_sweep()[2];
    let gaps = |arm: &str| -> Vec<f64> {
        r.arm(arm)
            .unwrap()
            .groups
            .as_ref()
            .unwrap()
            .per_seed
            .iter()
            .map(|t| t.relative_gap.unwrap())
            .collect()
    };
    let (none, fin) = (gaps("none"), gaps("finest"));
    let narrower = fin.iter().zip(&none).filter(|(f, n)| f < n).count();
    assert!(narrower >= 2, "finest {fin:?} none {none:?}");
}
