use fedsim_core::engine::{
    convergence_score, run_experiment, Experiment, ExperimentConfig, RoundLog,
};
use fedsim_core::hyper::HyperDecision;
use fedsim_core::rng::{derive_seed, stable_hash, tag};
use fedsim_core::synthtask::{local_train, JobTag};
use fedsim_core::FedError;

fn quick(rounds: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk_profile();
    c.rounds = rounds;
    c
}

fn run(c: &ExperimentConfig, workers: usize) -> Vec<RoundLog> {
    run_experiment(c, workers).map_err(|p| p.error).unwrap()
}

#[test]
fn rounds_one_gives_one_log() {
    let logs = run(&quick(1), 2);
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].round, 0);
    let score = convergence_score(&logs).unwrap();
    assert_eq!(score, logs[0].metrics.mean_dice);
}

#[test]
fn logs_identical_across_runs_and_workers() {
    let c = quick(4);
    let a = run(&c, 1);
    let b = run(&c, 1);
    let d = run(&c, 4);
    assert_eq!(a, b);
    assert_eq!(a, d);
}

#[test]
fn cumulative_time_strictly_increases() {
    let logs = run(&quick(5), 2);
    for w in logs.windows(2) {
        assert!(w[1].cum_time > w[0].cum_time);
    }
    for l in &logs {
        for c in &l.collaborators {
            assert!(l.round_time >= c.round_time);
        }
    }
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    let mut exp = Experiment::new(&quick(3), 2).unwrap();
    let first = exp.run_round().unwrap();
    let before = exp.global().clone();
    let still = exp
        .run_round_with(HyperDecision { lr: 0.0, epochs: 1 })
        .unwrap();
    assert_eq!(exp.global(), &before);
    assert_eq!(still.metrics, first.metrics);
    assert_eq!(still.agg_loss, first.agg_loss);
    assert!(still.cum_time > first.cum_time);
}

#[test]
fn single_collaborator_fedavg_adopts_local_model() {
    let mut c = quick(1);
    c.partition.proportions = Some(vec![1.0]);
    let mut exp = Experiment::new(&c, 1).unwrap();
    let start = exp.global().clone();
    let collab = exp.collaborators()[0].clone();
    exp.run_round().unwrap();

    let mut cfg = c.resolve().unwrap().train_template;
    cfg.epochs = 1;
    let seed = derive_seed(c.seed, &[tag::TRAIN, stable_hash(collab.id().as_bytes()), 0]);
    let (_, local) = local_train(
        &start,
        &collab.shard.train,
        &cfg,
        seed,
        JobTag { collaborator: collab.id(), round: 0 },
    )
    .unwrap();
    // x - 1 * (x - local) may differ from `local` in the last bit.
    let got = exp.global().params().values();
    for (a, b) in got.iter().zip(local.params().values()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn momentum_matches_fedavg_in_first_round_only() {
    let plain = run(&quick(3), 2);
    let mut m = quick(3);
    m.aggregator.name = "fedavgm".into();
    let momentum = run(&m, 2);
    assert_eq!(plain[0], momentum[0]);
    assert_ne!(plain[2].agg_loss, momentum[2].agg_loss);
}

#[test]
fn huge_learning_rate_reports_divergence_with_partial_logs() {
    let mut c = quick(5);
    c.hyper.lr0 = Some(10.0);
    let err = run_experiment(&c, 2).unwrap_err();
    assert!(err.error.is_divergence(), "{:?}", err.error);
    assert!(err.logs.len() < 5);
    if let FedError::Divergence { collaborator, .. } = &err.error {
        assert!(collaborator.starts_with("inst-"));
    }
}

#[test]
fn config_errors_surface_before_round_zero() {
    let mut c = quick(2);
    c.aggregator.name = "fedsgd".into();
    let err = run_experiment(&c, 1).unwrap_err();
    assert!(err.logs.is_empty());
    assert!(err.error.to_string().contains("fedsgd"));

    let mut c = quick(2);
    c.rounds = 0;
    assert!(matches!(Experiment::new(&c, 1), Err(FedError::Config(_))));

    let mut c = quick(2);
    c.time_model.speeds.insert("inst-99".into(), 2.0);
    assert!(matches!(Experiment::new(&c, 1), Err(FedError::Config(_))));
}

#[test]
fn faster_than_random_uses_speeds() {
    let mut c = quick(4);
    c.selector.name = "faster_than_random".into();
    for i in 1..=7 {
        c.time_model.speeds.insert(format!("inst-{i:02}"), 4.0);
    }
    let logs = run(&c, 2);
    assert_eq!(logs[0].selected.len(), 14);
    for l in &logs[1..] {
        assert!(!l.selected.is_empty() && l.selected.len() <= 14);
    }
}

#[test]
fn every_policy_and_aggregator_runs() {
    for agg in ["fedavg", "fednova", "fednova_reduced", "fedavgm", "median", "fedavg+improved_nodes", "fedavgm+improved_nodes"] {
        let mut c = quick(2);
        c.aggregator.name = agg.into();
        let logs = run(&c, 2);
        assert_eq!(logs.len(), 2, "{agg}");
    }
    for hyper in ["constant", "lr_plateau", "adaptive_epoch", "adaptive_epoch+lr_plateau"] {
        let mut c = quick(2);
        c.hyper.name = hyper.into();
        let logs = run(&c, 2);
        assert!(logs.iter().all(|l| l.hyper.epochs >= 1), "{hyper}");
    }
    let mut c = quick(2);
    c.dataset.n_scans = 160;
    c.partition.artificial = true;
    c.selector.name = "random_subset".into();
    assert_eq!(run(&c, 2)[0].selected.len(), 12);
}
