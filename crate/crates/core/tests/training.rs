use narl_core::adjuster::{AdjusterConfig, AdjusterParams};
use narl_core::data::gen_gaussian_mixture;
use narl_core::experiment::{build_task, TaskSpec};
use narl_core::kmeans::kmeans_fit;
use narl_core::losses::{batch_loss, HyperParams, LossKind};
use narl_core::meta_test::run_meta_test;
use narl_core::meta_train::{
    adjuster_gradient, adjuster_step, classifier_step, evaluate_clean, lookahead_update, run_baseline, run_meta_train,
    write_metrics, Batch, HpSource, Split,
};
use narl_core::nn::{forward, ClassifierParams};
use narl_core::{Error, HypergradMethod, Tape, Tensor, TrainConfig};

fn small_task(seed: u64) -> narl_core::experiment::Task {
    let spec = TaskSpec { train_size: 400, meta_size: 40, test_size: 200, ..TaskSpec::default() };
    build_task(&spec, seed).unwrap()
}

fn small_config(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, batch_size: 20, meta_batch_size: 10, hidden: vec![8], ..TrainConfig::default() }
}

fn gce_adjuster() -> AdjusterConfig {
    AdjusterConfig::new(LossKind::Gce).unwrap()
}

fn csv(rows: &[narl_core::meta_train::MetricRow]) -> Vec<u8> {
    let mut out = Vec::new();
    write_metrics(rows, &mut out).unwrap();
    out
}

#[test]
fn step_counters_follow_the_meta_period() {
    let task = small_task(1);
    let cfg = TrainConfig { meta_period: 1, ..small_config(3) };
    let out = run_meta_train(&task.train, &task.meta, None, &cfg, &gce_adjuster()).unwrap();
    assert_eq!((out.classifier_steps, out.adjuster_steps), (3, 3));

    let cfg = TrainConfig { meta_period: 2, ..small_config(5) };
    let out = run_meta_train(&task.train, &task.meta, None, &cfg, &gce_adjuster()).unwrap();
    assert_eq!((out.classifier_steps, out.adjuster_steps), (5, 3));
}

#[test]
fn zero_iterations_return_the_initial_state() {
    let task = small_task(2);
    let cfg = small_config(0);
    let out = run_meta_train(&task.train, &task.meta, Some(&task.test), &cfg, &gce_adjuster()).unwrap();
    let init = AdjusterParams::init(&gce_adjuster(), &task.train.class_counts(), cfg.seed).unwrap();
    assert_eq!(out.adjuster, init);
    assert_eq!(out.snapshots.len(), 3);
    assert!(out.snapshots.iter().all(|s| s.iteration == 0 && s.adjuster == init));
    assert!(out.metrics.iter().all(|r| r.iter == 0));
    assert_eq!(out.classifier_steps, 0);
}

#[test]
fn runs_are_deterministic() {
    let task = small_task(3);
    let cfg = TrainConfig { seed: 9, momentum: 0.9, ..small_config(30) };
    let a = run_meta_train(&task.train, &task.meta, Some(&task.test), &cfg, &gce_adjuster()).unwrap();
    let b = run_meta_train(&task.train, &task.meta, Some(&task.test), &cfg, &gce_adjuster()).unwrap();
    assert_eq!(csv(&a.metrics), csv(&b.metrics));
    assert_eq!(a.adjuster, b.adjuster);
    let c = run_meta_train(&task.train, &task.meta, Some(&task.test), &TrainConfig { seed: 10, ..cfg }, &gce_adjuster())
        .unwrap();
    assert_ne!(csv(&a.metrics), csv(&c.metrics));
}

#[test]
fn meta_train_rejects_bad_inputs() {
    let task = small_task(4);
    let cfg = small_config(2);
    let sl = AdjusterConfig::new(LossKind::Sl).unwrap();
    assert!(matches!(run_meta_train(&task.train, &task.meta, None, &cfg, &sl), Err(Error::Config(_))));
    let empty = task.meta.subset(&[]);
    assert!(matches!(run_meta_train(&task.train, &empty, None, &cfg, &gce_adjuster()), Err(Error::Config(_))));
    assert!(matches!(run_meta_train(&task.train, &task.train, None, &cfg, &gce_adjuster()), Err(Error::Config(_))));
}

/// A linear model whose bias makes class 0 certain, so every softmax
/// Jacobian on its outputs is exactly zero.
fn saturated(classes: usize) -> ClassifierParams {
    let net = ClassifierParams::zeros(&[2, classes]).unwrap();
    let mut t = net.tensors();
    let mut bias = vec![0.0; classes];
    bias[0] = 1000.0;
    t[1] = Tensor::row(&bias).unwrap();
    net.with_tensors(t).unwrap()
}

#[test]
fn saturated_batch_leaves_weights_and_adjuster_alone() {
    let data = gen_gaussian_mixture(4, 10, 2, 2.0, 5).unwrap();
    let zeros = data.with_labels(vec![0; data.len()]).unwrap();
    let counts = data.class_counts();
    let train = Batch::new(&zeros, &(0..zeros.len()).collect::<Vec<_>>(), &counts).unwrap();
    let meta = Batch::new(&data, &(0..data.len()).collect::<Vec<_>>(), &counts).unwrap();
    let w = saturated(4);
    let adj = AdjusterParams::init(&gce_adjuster(), &counts, 1).unwrap();

    assert_eq!(lookahead_update(&w, &adj, &train, 0.5).unwrap(), w);
    let g = adjuster_gradient(&adj, &w, &train, &meta, 0.5, HypergradMethod::Exact).unwrap();
    assert!(g.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    assert_eq!(adjuster_step(&adj, &w, &train, &meta, 0.5, 1.0, HypergradMethod::Exact).unwrap(), adj);
}

#[test]
fn zero_meta_rate_keeps_the_adjuster() {
    let task = small_task(6);
    let counts = task.train.class_counts();
    let train = Batch::new(&task.train, &(0..20).collect::<Vec<_>>(), &counts).unwrap();
    let meta = Batch::new(&task.meta, &(0..10).collect::<Vec<_>>(), &task.meta.class_counts()).unwrap();
    let w = ClassifierParams::init(&[2, 8, 4], 3).unwrap();
    let adj = AdjusterParams::init(&gce_adjuster(), &counts, 1).unwrap();
    let g = adjuster_gradient(&adj, &w, &train, &meta, 0.5, HypergradMethod::Exact).unwrap();
    assert!(g.iter().any(|t| t.data().iter().any(|&v| v != 0.0)));
    assert_eq!(adjuster_step(&adj, &w, &train, &meta, 0.5, 0.0, HypergradMethod::Exact).unwrap(), adj);
}

#[test]
fn finite_difference_hypergradient_tracks_the_exact_one() {
    let task = small_task(7);
    let counts = task.train.class_counts();
    let train = Batch::new(&task.train, &(0..32).collect::<Vec<_>>(), &counts).unwrap();
    let meta = Batch::new(&task.meta, &(0..20).collect::<Vec<_>>(), &task.meta.class_counts()).unwrap();
    // linear, so no ReLU kink sits between w - rv and w + rv
    let w = ClassifierParams::init(&[2, 4], 3).unwrap();
    let adj = AdjusterParams::init(&gce_adjuster(), &counts, 1).unwrap();
    let exact = adjuster_gradient(&adj, &w, &train, &meta, 0.05, HypergradMethod::Exact).unwrap();
    let approx = adjuster_gradient(&adj, &w, &train, &meta, 0.05, HypergradMethod::FiniteDifference).unwrap();
    let (mut dot, mut ne, mut na) = (0.0, 0.0, 0.0);
    for (e, a) in exact.iter().zip(&approx) {
        dot += e.dot(a).unwrap();
        ne += e.dot(e).unwrap();
        na += a.dot(a).unwrap();
    }
    let cosine = dot / (ne.sqrt() * na.sqrt());
    assert!(cosine > 0.99, "cosine {cosine}");
}

#[test]
fn ce_step_reduces_batch_loss() {
    let data = gen_gaussian_mixture(3, 30, 2, 4.0, 8).unwrap();
    let counts = data.class_counts();
    let batch = Batch::new(&data, &(0..data.len()).collect::<Vec<_>>(), &counts).unwrap();
    let loss = |w: &ClassifierParams| {
        let mut tape = Tape::new();
        let params = w.register(&mut tape, false);
        let x = tape.constant(batch.x.clone());
        let logits = forward(&mut tape, &params, x).unwrap();
        let probs = tape.softmax_rows(logits).unwrap();
        let l = batch_loss(&mut tape, probs, &batch.labels, &vec![HyperParams::Ce; batch.len()]).unwrap();
        tape.value(l).item().unwrap()
    };
    let w = ClassifierParams::init(&[2, 8, 3], 1).unwrap();
    let next = classifier_step(&w, HpSource::Fixed(HyperParams::Ce), &batch, 0.05).unwrap();
    assert!(loss(&next) < loss(&w));
}

#[test]
fn linear_model_separates_distant_clusters() {
    let train = gen_gaussian_mixture(4, 250, 2, 10.0, 1).unwrap();
    let test = gen_gaussian_mixture(4, 500, 2, 10.0, 2).unwrap();
    let cfg = TrainConfig { hidden: vec![], iterations: 500, batch_size: 50, ..TrainConfig::default() };
    let out = run_baseline(&train, Some(&test), &cfg, HyperParams::Ce).unwrap();
    assert_eq!(out.classifier.sizes(), vec![2, 4]);
    let (_, acc) = evaluate_clean(&out.classifier, &test).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
    let last = narl_core::meta_train::final_accuracy(&out.metrics, Split::Test).unwrap();
    assert_eq!(last, acc);
}

#[test]
fn overflow_aborts_with_the_last_good_state() {
    let data = gen_gaussian_mixture(2, 20, 2, 2.0, 3).unwrap();
    let cfg = TrainConfig { iterations: 5, batch_size: 10, alpha: 1e300, hidden: vec![4], ..TrainConfig::default() };
    match run_baseline(&data, None, &cfg, HyperParams::Ce) {
        Err(Error::Aborted { iteration, last_good, source }) => {
            assert!(iteration > 0, "{source}");
            assert_eq!(iteration, last_good.iteration);
            assert!(last_good.classifier.tensors().iter().all(|t| t.is_finite()));
        }
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn meta_test_freezes_weights_and_refits_centers() {
    let source = small_task(11);
    let cfg = TrainConfig { iterations: 30, ..small_config(30) };
    let adj_cfg = AdjusterConfig { clusters: 2, ..gce_adjuster() };
    let trained = run_meta_train(&source.train, &source.meta, None, &cfg, &adj_cfg).unwrap();
    let snaps: Vec<AdjusterParams> = trained.snapshots.iter().map(|s| s.adjuster.clone()).collect();

    let spec = TaskSpec { train_size: 300, meta_size: 0, test_size: 100, noise_rate: 0.3, ..TaskSpec::default() };
    let target = build_task(&spec, 12).unwrap();
    let target_train = target.train.subset(&(0..300).filter(|i| i % 4 != 3 || *i < 30).collect::<Vec<_>>());
    let out = run_meta_test(&target_train, Some(&target.test), &snaps, &cfg).unwrap();
    let counts: Vec<f64> = target_train.class_counts().iter().map(|&c| c as f64).collect();
    for (d, s) in out.deployed.iter().zip(&snaps) {
        assert_eq!(d.theta(), s.theta());
        assert_eq!(d.centers(), kmeans_fit(&counts, 2, narl_core::rng::sub_seed(cfg.seed, narl_core::rng::tag::KMEANS)).unwrap().as_slice());
    }
    assert_eq!(out.schedule.phases(), 3);
    assert_eq!(out.classifier_steps, 30);

    let one = run_meta_test(&target_train, None, &snaps[2..], &cfg).unwrap();
    assert_eq!(one.schedule.range(0), 0..30);
    assert!(matches!(run_meta_test(&target_train, None, &[], &cfg), Err(Error::Config(_))));
    let wrong = TrainConfig { loss: LossKind::Js, ..cfg };
    assert!(matches!(run_meta_test(&target_train, None, &snaps, &wrong), Err(Error::Config(_))));
}
