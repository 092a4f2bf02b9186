//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! binary exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use narl_core::adjuster::{AdjusterConfig, AdjusterParams};
use narl_core::autodiff::{hypergradient, HypergradMethod, Tape, Var};
use narl_core::bounds::{class_sum, gap_curve_rows, fixed_constants, CurveParams, Variant};
use narl_core::data::LabeledDataset;
use narl_core::experiment::{build_mixed_task, build_task, TaskSpec};
use narl_core::losses::{self, per_sample_loss, HyperColumns, HyperParams, LossKind, SimplexVector, RCE_A};
use narl_core::meta_test::run_meta_test;
use narl_core::meta_train::{
    adjuster_gradient, final_accuracy, lookahead_update, robust_gradient, run_baseline, run_meta_train,
    write_metrics, Batch, HpSource, MetaTrainOutput, MetricRow, Split, TrainConfig,
};
use narl_core::nn::{margin, ClassifierParams};
use narl_core::noise::{inject_instance_dependent, inject_symmetric};
use narl_core::rng;
use narl_core::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_simplex(r: &mut rng::Rng, c: usize) -> SimplexVector {
    let e: Vec<f64> = (0..c).map(|_| Exp1.sample(r)).collect();
    let s: f64 = e.iter().sum();
    SimplexVector::from_logits(&e.iter().map(|v| (v / s).ln()).collect::<Vec<_>>())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn random_hyper(r: &mut rng::Rng, kind: LossKind) -> HyperParams {
    match kind {
        LossKind::Ce => HyperParams::Ce,
        LossKind::Mae => HyperParams::Mae,
        LossKind::Rce => HyperParams::Rce { a: RCE_A },
        LossKind::Gce => HyperParams::Gce { q: r.random_range(0.05..0.99) },
        LossKind::Sl => HyperParams::Sl { gamma1: r.random_range(0.1..2.0), gamma2: r.random_range(0.1..2.0) },
        LossKind::PolySoft => {
            HyperParams::PolySoft { lambda: r.random_range(0.5..10.0), d: r.random_range(1.1..10.0) }
        }
        LossKind::Js => HyperParams::Js { pi1: r.random_range(0.05..0.95) },
    }
}

fn with_tunables(hp: HyperParams, v: &[f64]) -> HyperParams {
    match hp {
        HyperParams::Gce { .. } => HyperParams::Gce { q: v[0] },
        HyperParams::Sl { .. } => HyperParams::Sl { gamma1: v[0], gamma2: v[1] },
        HyperParams::PolySoft { .. } => HyperParams::PolySoft { lambda: v[0], d: v[1] },
        HyperParams::Js { .. } => HyperParams::Js { pi1: v[0] },
        other => other,
    }
}

/// Autodiff gradient of the loss with respect to the logits and the tunables.
fn tape_gradient(logits: &[f64], y: usize, hp: HyperParams) -> (Vec<f64>, Vec<f64>) {
    let c = logits.len();
    let mut tape = Tape::new();
    let z = tape.param(Tensor::row(logits).unwrap());
    let probs = tape.softmax_rows(z).unwrap();
    let targets = tape.constant(Tensor::one_hot(&[y], c).unwrap());
    let tun: Vec<Var> = hp.tunables().iter().map(|&v| tape.param(Tensor::matrix(1, 1, vec![v]).unwrap())).collect();
    let cols = match hp {
        HyperParams::Ce => HyperColumns::Ce,
        HyperParams::Mae => HyperColumns::Mae,
        HyperParams::Rce { a } => HyperColumns::Rce { a },
        HyperParams::Gce { .. } => HyperColumns::Gce { q: tun[0] },
        HyperParams::Sl { .. } => HyperColumns::Sl { gamma1: tun[0], gamma2: tun[1] },
        HyperParams::PolySoft { .. } => HyperColumns::PolySoft { lambda: tun[0], d: tun[1] },
        HyperParams::Js { .. } => HyperColumns::Js { pi1: tun[0] },
    };
    let per = per_sample_loss(&mut tape, probs, targets, &cols).unwrap();
    let loss = tape.sum(per).unwrap();
    let mut wrt = vec![z];
    wrt.extend(&tun);
    let g = tape.gradients(loss, &wrt).unwrap();
    let gz = g.get(z).unwrap().data().to_vec();
    let gt = tun.iter().map(|&v| g.get(v).unwrap().item().unwrap()).collect();
    (gz, gt)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut r = rng::seeded(101);
    let mut worst = Vec::new();
    for kind in LossKind::ALL {
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let c = r.random_range(2..=10);
            let logits: Vec<f64> = (0..c).map(|_| 1.5 * r.sample::<f64, _>(StandardNormal)).collect();
            let y = r.random_range(0..c);
            let hp = random_hyper(&mut r, kind);
            let (gz, gt) = tape_gradient(&logits, y, hp);
            let eval = |z: &[f64], hp: HyperParams| hp.eval(&SimplexVector::from_logits(z), y).unwrap();
            let fz: Vec<f64> = (0..c)
                .map(|j| {
                    let (mut p, mut m) = (logits.clone(), logits.clone());
                    p[j] += h;
                    m[j] -= h;
                    (eval(&p, hp) - eval(&m, hp)) / (2.0 * h)
                })
                .collect();
            let t = hp.tunables();
            let ft: Vec<f64> = (0..t.len())
                .map(|k| {
                    let (mut p, mut m) = (t.clone(), t.clone());
                    p[k] += h;
                    m[k] -= h;
                    (eval(&logits, with_tunables(hp, &p)) - eval(&logits, with_tunables(hp, &m))) / (2.0 * h)
                })
                .collect();
            max_err = max_err.max(rel_err(&gz, &fz));
            if !t.is_empty() {
                max_err = max_err.max(rel_err(&gt, &ft));
            }
        }
        worst.push((kind, max_err));
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&(_, e)| e <= 1e-5) && elapsed < Duration::from_secs(10);
    let detail: Vec<String> = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    outcome(pass, format!("max rel err [{}], {:.2?}", detail.join(", "), elapsed))
}

fn criterion_2() -> Outcome {
    let mut r = rng::seeded(202);
    let mut worst: f64 = 0.0;
    for c in [2, 10, 100] {
        let target = -RCE_A * (c - 1) as f64;
        for _ in 0..10_000 {
            let f = random_simplex(&mut r, c);
            let s = class_sum(&HyperParams::Rce { a: RCE_A }, &f).unwrap();
            worst = worst.max((s - target).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max |sum - (-A)(c-1)| = {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut r = rng::seeded(303);
    let mut violations = 0;
    let mut checked = 0;
    for c in [2usize, 10, 100] {
        let hps = [
            HyperParams::Gce { q: 0.7 },
            HyperParams::Js { pi1: 0.5 },
            HyperParams::PolySoft { lambda: 8.0, d: 2.0 },
        ];
        for hp in hps {
            let b = fixed_constants(&hp, c).unwrap();
            for _ in 0..10_000 {
                let f = random_simplex(&mut r, c);
                let s = class_sum(&hp, &f).unwrap();
                checked += 1;
                if !b.contains(s, 1e-12 * (1.0 + s.abs())) {
                    violations += 1;
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in {checked} class sums"))
}

fn criterion_4() -> Outcome {
    let rows = gap_curve_rows(2..=100, &CurveParams::default(), Some(LossKind::Gce)).unwrap();
    let mut worst: f64 = 0.0;
    let mut smaller = true;
    for c in 2..=100usize {
        let cf = c as f64;
        let get = |v: Variant| rows.iter().find(|r| r.classes == c && r.variant == v).unwrap().bound.gap;
        let aware = get(Variant::NoiseAware);
        let fixed = get(Variant::Fixed);
        worst = worst.max((aware - (cf.ln() + 1.0 / cf - 1.0)).abs());
        worst = worst.max((fixed - (cf.powf(0.3) - 1.0) / 0.7).abs());
        if c >= 10 {
            smaller &= aware < fixed;
        }
    }
    let at = |c: usize, v: Variant| rows.iter().find(|r| r.classes == c && r.variant == v).unwrap().bound.gap;
    let (a10, g10, a100, g100) =
        (at(10, Variant::NoiseAware), at(10, Variant::Fixed), at(100, Variant::NoiseAware), at(100, Variant::Fixed));
    // the quoted reference values are rounded; the A-GCE ones agree to 5e-6, the fixed ones to 2e-5
    let quoted = (a10 - 1.40259).abs() < 5e-6
        && (a100 - 3.61517).abs() < 5e-6
        && (g10 - 1.42182).abs() < 5e-5
        && (g100 - 4.25873).abs() < 1e-4;
    let pass = worst <= 1e-9 && smaller && quoted;
    outcome(
        pass,
        format!("formula err {worst:.1e}; c=10: {a10:.6} vs {g10:.6}; c=100: {a100:.6} vs {g100:.6}"),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng::seeded(505);
    let (mut gce_ok, mut exact_ok) = (true, true);
    let (mut js_mae, mut js_ce): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let f = random_simplex(&mut r, 10);
        let y = r.random_range(0..10);
        let ce = losses::ce(&f, y);
        let mae = losses::mae(&f, y);
        gce_ok &= (losses::gce(&f, y, 1e-3).unwrap() - ce).abs() <= 5e-3 * (1.0 + ce);
        exact_ok &= losses::gce(&f, y, 1.0).unwrap() == mae / 2.0;
        js_mae = js_mae.max((losses::js(&f, y, 0.99).unwrap() - mae / 2.0).abs() / (mae / 2.0));
        js_ce = js_ce.max((losses::js(&f, y, 0.01).unwrap() - ce).abs() / ce);
    }
    let pass = gce_ok && exact_ok && js_mae <= 0.02 && js_ce <= 0.05;
    outcome(
        pass,
        format!(
            "gce(q=1e-3)~ce {gce_ok}; gce(q=1)==mae/2 {exact_ok}; js(0.99) vs mae/2 max rel {js_mae:.4}; js(0.01) vs ce max rel {js_ce:.4}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let (n, c, eta) = (100_000usize, 10usize, 0.4);
    let features: Vec<f64> = (0..n).flat_map(|i| [(i % 97) as f64 / 97.0, (i % 89) as f64 / 89.0]).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let data = LabeledDataset::clean(features, 2, labels, c).unwrap();
    let noisy = inject_symmetric(&data, eta, 606).unwrap();
    let rate = noisy.noise_rate();
    let mut confusion = vec![vec![0usize; c]; c];
    for i in 0..n {
        confusion[noisy.clean_labels()[i]][noisy.labels()[i]] += 1;
    }
    let mut worst: f64 = 0.0;
    for (y, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (j, &k) in row.iter().enumerate() {
            if j != y {
                worst = worst.max((k as f64 / total as f64 - eta / (c - 1) as f64).abs());
            }
        }
    }
    let inst = inject_instance_dependent(&data.subset(&(0..20_000).collect::<Vec<_>>()), 0.3, 607).unwrap();
    let mut sums_ok = true;
    let mut diag_ok = true;
    for (i, p) in inst.transitions.iter().enumerate() {
        sums_ok &= (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        diag_ok &= p[inst.data.clean_labels()[i]] == 1.0 - inst.flip_rates[i];
    }
    let pass = (0.39..=0.41).contains(&rate) && worst <= 0.01 && sums_ok && diag_ok;
    outcome(
        pass,
        format!("flip rate {rate:.4}; worst off-diagonal deviation {worst:.4}; p sums {sums_ok}; p_y = 1 - q {diag_ok}"),
    )
}

fn desk_batch(data: &LabeledDataset, range: std::ops::Range<usize>) -> Batch {
    let idx: Vec<usize> = range.collect();
    Batch::new(data, &idx, &data.class_counts()).unwrap()
}

fn meta_objective(
    w: &ClassifierParams,
    adj: &AdjusterParams,
    theta: Vec<Tensor>,
    train: &Batch,
    meta: &Batch,
    alpha: f64,
) -> f64 {
    let a = adj.with_theta(theta).unwrap();
    let ahead = lookahead_update(w, &a, train, alpha).unwrap();
    robust_gradient(&ahead, HpSource::Fixed(HyperParams::Ce), meta).unwrap().0
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    // closed-form toy: inner theta * w^2, meta w~^2
    let (w0, th0, a) = (1.3, 0.4, 0.05);
    let expected = -4.0 * a * w0 * w0 * (1.0 - 2.0 * a * th0);
    let toy = hypergradient(
        &[Tensor::scalar(w0)],
        &[Tensor::scalar(th0)],
        a,
        |t: &mut Tape, w: &[Var], th: &[Var]| {
            let s = t.mul(w[0], w[0])?;
            let l = t.mul(s, th[0])?;
            t.sum(l)
        },
        |t: &mut Tape, w: &[Var]| {
            let s = t.mul(w[0], w[0])?;
            t.sum(s)
        },
        HypergradMethod::Exact,
    )
    .unwrap()[0]
        .item()
        .unwrap();
    let toy_ok = ((toy - expected) / expected).abs() <= 1e-6;

    let spec = TaskSpec { train_size: 400, meta_size: 100, test_size: 100, ..TaskSpec::default() };
    let task = build_task(&spec, 77).unwrap();
    let w = ClassifierParams::init(&[2, 32, 32, 4], 78).unwrap();
    let adj = AdjusterParams::init(&AdjusterConfig::new(LossKind::Gce).unwrap(), &task.train.class_counts(), 79).unwrap();
    let train = desk_batch(&task.train, 0..64);
    let meta = desk_batch(&task.meta, 0..64);
    let alpha = 0.5;
    let exact: Vec<f64> = adjuster_gradient(&adj, &w, &train, &meta, alpha, HypergradMethod::Exact)
        .unwrap()
        .into_iter()
        .flat_map(Tensor::into_data)
        .collect();

    let theta = adj.theta();
    let h = 1e-6;
    let mut oracle = Vec::with_capacity(exact.len());
    for (ti, t) in theta.iter().enumerate() {
        for k in 0..t.numel() {
            let shifted = |delta: f64| {
                let mut th = theta.clone();
                let mut data = th[ti].data().to_vec();
                data[k] += delta;
                th[ti] = Tensor::new(t.shape().to_vec(), data).unwrap();
                meta_objective(&w, &adj, th, &train, &meta, alpha)
            };
            oracle.push((shifted(h) - shifted(-h)) / (2.0 * h));
        }
    }
    let dot: f64 = exact.iter().zip(&oracle).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (norm(&exact) * norm(&oracle));
    let rel_norm = (norm(&exact) - norm(&oracle)).abs() / norm(&oracle);
    let elapsed = start.elapsed();
    let pass = toy_ok && cosine >= 0.99 && rel_norm <= 0.05 && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "toy rel err {:.1e}; MLP cosine {cosine:.6}, norm rel err {rel_norm:.2e} over {} adjuster weights; {elapsed:.2?}",
            ((toy - expected) / expected).abs(),
            exact.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut r = rng::seeded(808);
    let (mut tested, mut exceptions) = (0, 0);
    while tested < 10_000 {
        let c = r.random_range(2..=20);
        let logits: Vec<f64> = (0..c).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if logits.iter().filter(|&&v| v == max).count() != 1 {
            continue;
        }
        tested += 1;
        let positive = (0..c).filter(|&y| margin(&logits, y) > 0.0).count();
        if positive != 1 {
            exceptions += 1;
        }
    }
    outcome(exceptions == 0, format!("{exceptions} exceptions in {tested} logit vectors"))
}

// ---- desk-scale experiments -------------------------------------------------

/// Shared protocol of the end-to-end runs.
fn desk_spec() -> TaskSpec {
    TaskSpec { separation: DESK_SEPARATION, ..TaskSpec::default() }
}

const DESK_SEPARATION: f64 = 2.0;

fn desk_config(seed: u64, loss: LossKind) -> TrainConfig {
    TrainConfig {
        alpha: 0.3,
        beta: 0.3,
        batch_size: 100,
        meta_batch_size: 100,
        iterations: 3000,
        meta_period: 5,
        momentum: 0.9,
        seed,
        loss,
        ..TrainConfig::default()
    }
}

struct DeskRun {
    ce: Vec<MetricRow>,
    gce: Vec<MetricRow>,
    agce: MetaTrainOutput,
    noisy_mask: Vec<bool>,
}

fn desk_run(seed: u64) -> DeskRun {
    let task = build_task(&desk_spec(), seed).unwrap();
    let ce = run_baseline(&task.train, Some(&task.test), &desk_config(seed, LossKind::Ce), HyperParams::Ce).unwrap();
    let gce =
        run_baseline(&task.train, Some(&task.test), &desk_config(seed, LossKind::Gce), HyperParams::Gce { q: 0.7 })
            .unwrap();
    let agce = run_meta_train(
        &task.train,
        &task.meta,
        Some(&task.test),
        &desk_config(seed, LossKind::Gce),
        &AdjusterConfig::new(LossKind::Gce).unwrap(),
    )
    .unwrap();
    let noisy_mask = (0..task.train.len()).map(|i| task.train.is_noisy(i)).collect();
    DeskRun { ce: ce.metrics, gce: gce.metrics, agce, noisy_mask }
}

fn metrics_bytes(rows: &[MetricRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics(rows, &mut buf).unwrap();
    buf
}

const DESK_SEEDS: u64 = 5;

fn criteria_9_10(runs: &[DeskRun], elapsed: Duration) -> (Outcome, Outcome) {
    let mean = |f: &dyn Fn(&DeskRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let ce = mean(&|r| final_accuracy(&r.ce, Split::Test).unwrap());
    let gce = mean(&|r| final_accuracy(&r.gce, Split::Test).unwrap());
    let agce = mean(&|r| final_accuracy(&r.agce.metrics, Split::Test).unwrap());
    let pass9 = agce >= gce && gce >= ce && agce - ce >= 0.02 && elapsed < Duration::from_secs(300);
    let c9 = outcome(
        pass9,
        format!(
            "mean test accuracy over {} seeds: A-GCE {:.4}, GCE(0.7) {:.4}, CE {:.4}; A-GCE - CE = {:.2} points; {elapsed:.1?}",
            runs.len(),
            agce,
            gce,
            ce,
            100.0 * (agce - ce)
        ),
    );
    let last_train = |r: &DeskRun| r.agce.metrics.iter().rev().find(|m| m.split == Split::Train).cloned().unwrap();
    let noisy = mean(&|r| last_train(r).mean_hp_noisy.unwrap());
    let clean = mean(&|r| last_train(r).mean_hp_clean.unwrap());
    let frac_noisy = mean(&|r| r.noisy_mask.iter().filter(|&&b| b).count() as f64 / r.noisy_mask.len() as f64);
    let c10 = outcome(
        noisy - clean >= 0.1,
        format!("mean q noisy {noisy:.4}, clean {clean:.4}, difference {:.4} ({:.1}% noisy)", noisy - clean, 100.0 * frac_noisy),
    );
    (c9, c10)
}

const TRANSFER_SEEDS: u64 = 3;

struct TransferRun {
    transfer: Vec<MetricRow>,
    baseline: Vec<MetricRow>,
    meta_train: Vec<MetricRow>,
}

fn transfer_run(seed: u64) -> TransferRun {
    let spec_a = desk_spec();
    let task_a = build_mixed_task(&spec_a, &[0.2, 0.4, 0.6], seed).unwrap();
    let cfg_a = desk_config(seed, LossKind::Gce);
    let meta = run_meta_train(&task_a.train, &task_a.meta, None, &cfg_a, &AdjusterConfig::new(LossKind::Gce).unwrap())
        .unwrap();
    let snapshots: Vec<AdjusterParams> = meta.snapshots.iter().map(|s| s.adjuster.clone()).collect();

    let spec_b = TaskSpec { noise_rate: 0.3, meta_size: 0, ..desk_spec() };
    let task_b = build_task(&spec_b, seed + 1000).unwrap();
    let cfg_b = desk_config(seed + 1000, LossKind::Gce);
    let before: Vec<Vec<Tensor>> = snapshots.iter().map(AdjusterParams::theta).collect();
    let transfer = run_meta_test(&task_b.train, Some(&task_b.test), &snapshots, &cfg_b).unwrap();
    let after: Vec<Vec<Tensor>> = snapshots.iter().map(AdjusterParams::theta).collect();
    assert_eq!(before, after, "snapshots must stay frozen");
    assert!(transfer.deployed.iter().zip(&snapshots).all(|(d, s)| d.theta() == s.theta()));
    let baseline =
        run_baseline(&task_b.train, Some(&task_b.test), &cfg_b, HyperParams::Gce { q: 0.7 }).unwrap();
    TransferRun { transfer: transfer.metrics, baseline: baseline.metrics, meta_train: meta.metrics }
}

fn criterion_11(runs: &[TransferRun]) -> Outcome {
    let mean = |f: &dyn Fn(&TransferRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let t = mean(&|r| final_accuracy(&r.transfer, Split::Test).unwrap());
    let b = mean(&|r| final_accuracy(&r.baseline, Split::Test).unwrap());
    let per: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "{:.4}/{:.4}",
                final_accuracy(&r.transfer, Split::Test).unwrap(),
                final_accuracy(&r.baseline, Split::Test).unwrap()
            )
        })
        .collect();
    outcome(
        t >= b - 0.01,
        format!("mean test accuracy transfer {t:.4} vs GCE(0.7) {b:.4} over {} seeds (per seed {})", runs.len(), per.join(", ")),
    )
}

fn criterion_12(desk: &[DeskRun], transfer: &[TransferRun]) -> Outcome {
    let d = desk_run(0);
    let t = transfer_run(0);
    let same_desk = metrics_bytes(&d.ce) == metrics_bytes(&desk[0].ce)
        && metrics_bytes(&d.gce) == metrics_bytes(&desk[0].gce)
        && metrics_bytes(&d.agce.metrics) == metrics_bytes(&desk[0].agce.metrics)
        && d.agce.adjuster.to_text() == desk[0].agce.adjuster.to_text()
        && d.agce.classifier.to_text() == desk[0].agce.classifier.to_text();
    let same_transfer = metrics_bytes(&t.transfer) == metrics_bytes(&transfer[0].transfer)
        && metrics_bytes(&t.baseline) == metrics_bytes(&transfer[0].baseline)
        && metrics_bytes(&t.meta_train) == metrics_bytes(&transfer[0].meta_train);
    outcome(same_desk && same_transfer, format!("desk rerun identical {same_desk}; transfer rerun identical {same_transfer}"))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} [{name}]: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "loss gradients", criterion_1());
    report(2, "symmetry", criterion_2());
    report(3, "boundedness", criterion_3());
    report(4, "gap curves", criterion_4());
    report(5, "limit bridges", criterion_5());
    report(6, "noise injectors", criterion_6());
    report(7, "hypergradient", criterion_7());
    report(8, "single positive margin", criterion_8());

    let start = Instant::now();
    let desk: Vec<DeskRun> = (0..DESK_SEEDS).map(desk_run).collect();
    let (c9, c10) = criteria_9_10(&desk, start.elapsed());
    report(9, "desk accuracy ordering", c9);
    report(10, "noise-aware hyperparameters", c10);

    let transfer: Vec<TransferRun> = (0..TRANSFER_SEEDS).map(transfer_run).collect();
    report(11, "transfer", criterion_11(&transfer));
    report(12, "determinism", criterion_12(&desk, &transfer));

    let failed: Vec<String> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| n.to_string()).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
