//! Bilevel training: the classifier follows the robust loss with per-sample
//! hyperparameters, and the adjuster follows the clean meta loss through a
//! one-step lookahead of the classifier.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::adjuster::{AdjusterConfig, AdjusterParams};
use crate::autodiff::{hypergradient, HypergradMethod, Tape, Var};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{batch_loss_columns, per_sample_loss, HyperColumns, HyperParams, LossKind};
use crate::nn::{self, ClassifierParams};
use crate::rng;
use crate::tensor::Tensor;

/// A point in training given as `num/den` of the iteration budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fraction {
    pub num: u32,
    pub den: u32,
}

impl Fraction {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::Config(format!("fraction {num}/{den} must lie in [0, 1]")));
        }
        Ok(Fraction { num, den })
    }

    /// `round(iterations * num / den)`.
    pub fn of(self, iterations: usize) -> usize {
        let (n, d) = (self.num as usize, self.den as usize);
        (iterations * n + d / 2) / d
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad fraction `{s}`"));
        let (a, b) = s.split_once('/').ok_or_else(bad)?;
        Fraction::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Classifier step size.
    pub alpha: f64,
    /// Adjuster step size.
    pub beta: f64,
    pub batch_size: usize,
    pub meta_batch_size: usize,
    pub iterations: usize,
    /// The adjuster moves at iterations divisible by this period.
    pub meta_period: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub snapshots: Vec<Fraction>,
    pub momentum: f64,
    /// Step sizes are multiplied by `decay_factor` at each listed iteration.
    pub decay_at: Vec<usize>,
    pub decay_factor: f64,
    /// Hidden widths of the classifier.
    pub hidden: Vec<usize>,
    pub hypergrad: HypergradMethod,
    /// Iterations between metric rows; 0 means once per pass over the data.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            beta: 0.01,
            batch_size: 100,
            meta_batch_size: 100,
            iterations: 3000,
            meta_period: 5,
            seed: 0,
            loss: LossKind::Gce,
            snapshots: vec![Fraction { num: 1, den: 3 }, Fraction { num: 2, den: 3 }, Fraction { num: 1, den: 1 }],
            momentum: 0.0,
            decay_at: Vec::new(),
            decay_factor: 0.1,
            hidden: nn::DEFAULT_HIDDEN.to_vec(),
            hypergrad: HypergradMethod::Exact,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.alpha) || !positive(self.beta) {
            return Err(Error::Config(format!("step sizes must be positive (alpha {}, beta {})", self.alpha, self.beta)));
        }
        if self.meta_period == 0 || self.batch_size == 0 || self.meta_batch_size == 0 {
            return Err(Error::Config("meta period and batch sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !positive(self.decay_factor) {
            return Err(Error::Config(format!("decay factor {} must be positive", self.decay_factor)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// `base` after the decays scheduled at or before iteration `t`.
    pub fn rate_at(&self, base: f64, t: usize) -> f64 {
        let k = self.decay_at.iter().filter(|&&d| d <= t).count();
        base * self.decay_factor.powi(k as i32)
    }
}

/// A minibatch with the class count of each sample's observed label.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub counts: Vec<f64>,
}

impl Batch {
    pub fn new(data: &LabeledDataset, indices: &[usize], class_counts: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let labels: Vec<usize> = indices.iter().map(|&i| data.labels()[i]).collect();
        Ok(Batch {
            x: data.feature_matrix(indices)?,
            counts: labels.iter().map(|&y| class_counts[y] as f64).collect(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Where the robust loss gets its hyperparameters.
#[derive(Clone, Copy, Debug)]
pub enum HpSource<'a> {
    Fixed(HyperParams),
    Adjuster(&'a AdjusterParams),
}

impl HpSource<'_> {
    fn columns(&self, tape: &mut Tape, margins: &[f64], counts: &[f64]) -> Result<HyperColumns> {
        match self {
            HpSource::Fixed(hp) => HyperColumns::constants(tape, &vec![*hp; margins.len()]),
            HpSource::Adjuster(adj) => {
                let theta: Vec<Var> = adj.theta().into_iter().map(|t| tape.constant(t)).collect();
                adj.forward(tape, &theta, margins, counts)
            }
        }
    }
}

/// Robust loss of `w` on a batch, recorded on `tape`. Margins are read from
/// the forward pass and enter the hyperparameter source as constants.
fn robust_loss<H>(tape: &mut Tape, w: &[Var], batch: &Batch, hyper: H) -> Result<Var>
where
    H: FnOnce(&mut Tape, &[f64]) -> Result<HyperColumns>,
{
    let x = tape.constant(batch.x.clone());
    let logits = nn::forward(tape, w, x)?;
    let margins = nn::margins(tape.value(logits), &batch.labels)?;
    let probs = tape.softmax_rows(logits)?;
    let classes = tape.value(logits).shape()[1];
    let targets = tape.constant(Tensor::one_hot(&batch.labels, classes)?);
    let hp = hyper(tape, &margins)?;
    batch_loss_columns(tape, probs, targets, &hp)
}

fn meta_loss(tape: &mut Tape, w: &[Var], batch: &Batch) -> Result<Var> {
    robust_loss(tape, w, batch, |_, _| Ok(HyperColumns::Ce))
}

fn sgd(params: &[Tensor], grads: &[Tensor], rate: f64) -> Result<Vec<Tensor>> {
    params.iter().zip(grads).map(|(p, g)| p.sub(&g.scale(rate))).collect()
}

fn ensure_finite(ts: &[Tensor], stage: &str) -> Result<()> {
    if ts.iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        Err(Error::numerical(stage))
    }
}

/// Mean robust loss and its gradient with respect to the classifier.
pub fn robust_gradient(w: &ClassifierParams, hp: HpSource<'_>, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let wv = w.register(&mut tape, true);
    let loss = robust_loss(&mut tape, &wv, batch, |t, m| hp.columns(t, m, &batch.counts))?;
    let value = tape.value(loss).item()?;
    let grads = tape.gradients(loss, &wv)?.collect(&wv);
    ensure_finite(&grads, "classifier gradient")?;
    Ok((value, grads))
}

/// `w - alpha * grad_w L_robust(w)` with the hyperparameters held fixed.
pub fn classifier_step(w: &ClassifierParams, hp: HpSource<'_>, batch: &Batch, alpha: f64) -> Result<ClassifierParams> {
    let (_, grads) = robust_gradient(w, hp, batch)?;
    w.with_tensors(sgd(&w.tensors(), &grads, alpha)?)
}

/// Value of the lookahead classifier `w~(theta)`.
pub fn lookahead_update(w: &ClassifierParams, adjuster: &AdjusterParams, batch: &Batch, alpha: f64) -> Result<ClassifierParams> {
    classifier_step(w, HpSource::Adjuster(adjuster), batch, alpha)
}

/// Gradient of the meta loss at `w~(theta)` with respect to `theta`.
pub fn adjuster_gradient(
    adjuster: &AdjusterParams,
    w: &ClassifierParams,
    train: &Batch,
    meta: &Batch,
    alpha: f64,
    method: HypergradMethod,
) -> Result<Vec<Tensor>> {
    // Margins are taken at `w` once; the finite-difference variant would
    // otherwise see them move between `w + rv` and `w - rv`.
    let at_w = nn::margins(&w.logits(&train.x)?, &train.labels)?;
    let inner = |tape: &mut Tape, wv: &[Var], tv: &[Var]| {
        robust_loss(tape, wv, train, |t, _| adjuster.forward(t, tv, &at_w, &train.counts))
    };
    let outer = |tape: &mut Tape, wv: &[Var]| meta_loss(tape, wv, meta);
    hypergradient(&w.tensors(), &adjuster.theta(), alpha, inner, outer, method)
}

/// `theta - beta * grad_theta L_meta(w~(theta))`.
pub fn adjuster_step(
    adjuster: &AdjusterParams,
    w: &ClassifierParams,
    train: &Batch,
    meta: &Batch,
    alpha: f64,
    beta: f64,
    method: HypergradMethod,
) -> Result<AdjusterParams> {
    let g = adjuster_gradient(adjuster, w, train, meta, alpha, method)?;
    adjuster.with_theta(sgd(&adjuster.theta(), &g, beta)?)
}

/// Parameters at the last iteration that finished cleanly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    pub classifier: ClassifierParams,
    pub adjuster: Option<AdjusterParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One line of the metrics file. Hyperparameter means refer to the first
/// tunable and are only present on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub mean_hp_clean: Option<f64>,
    pub mean_hp_noisy: Option<f64>,
}

pub const METRICS_HEADER: &str = "iter,epoch,split,loss,accuracy,mean_hp_clean,mean_hp_noisy";

pub fn write_metrics(rows: &[MetricRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:?},{:?},{},{}",
            r.iter,
            r.epoch,
            r.split.name(),
            r.loss,
            r.accuracy,
            opt(r.mean_hp_clean),
            opt(r.mean_hp_noisy)
        )?;
    }
    Ok(())
}

pub fn save_metrics(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Accuracy of the last row of `split`.
pub fn final_accuracy(rows: &[MetricRow], split: Split) -> Option<f64> {
    rows.iter().rev().find(|r| r.split == split).map(|r| r.accuracy)
}

/// Margin, predicted hyperparameters and corruption flag of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDiagnostic {
    pub margin: f64,
    pub hyperparams: Vec<f64>,
    pub noisy: bool,
}

pub fn diagnose(classifier: &ClassifierParams, adjuster: &AdjusterParams, data: &LabeledDataset) -> Result<Vec<SampleDiagnostic>> {
    let counts = data.class_counts();
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(data, &idx, &counts)?;
    let logits = classifier.logits(&batch.x)?;
    let margins = nn::margins(&logits, &batch.labels)?;
    let hps = adjuster.batch_predict(&margins, &batch.counts)?;
    Ok((0..data.len())
        .map(|i| SampleDiagnostic { margin: margins[i], hyperparams: hps[i].tunables(), noisy: data.is_noisy(i) })
        .collect())
}

pub fn write_diagnostics(rows: &[SampleDiagnostic], out: &mut impl Write) -> Result<()> {
    let p = rows.first().map_or(0, |r| r.hyperparams.len());
    let hp_cols: Vec<String> = (0..p).map(|j| format!("hp_{j}")).collect();
    writeln!(out, "index,margin,{},is_noisy", hp_cols.join(","))?;
    for (i, r) in rows.iter().enumerate() {
        let hps: Vec<String> = r.hyperparams.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{i},{:?},{},{}", r.margin, hps.join(","), u8::from(r.noisy))?;
    }
    Ok(())
}

/// Classifier side of every training loop: batching, momentum SGD, metrics.
pub(crate) struct Trainer<'a> {
    train: &'a LabeledDataset,
    test: Option<&'a LabeledDataset>,
    pub config: &'a TrainConfig,
    pub class_counts: Vec<usize>,
    pub classifier: ClassifierParams,
    velocity: Option<Vec<Tensor>>,
    order: Vec<usize>,
    cursor: usize,
    batch_rng: rng::Rng,
    pub metrics: Vec<MetricRow>,
    pub classifier_steps: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a LabeledDataset, test: Option<&'a LabeledDataset>, config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if let Some(t) = test {
            if t.is_empty() || t.dim() != train.dim() || t.classes() != train.classes() {
                return Err(Error::Config("test set is empty or does not match the training set".into()));
            }
        }
        let sizes: Vec<usize> = std::iter::once(train.dim())
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(train.classes()))
            .collect();
        let classifier = ClassifierParams::init(&sizes, rng::sub_seed(config.seed, rng::tag::CLASSIFIER_INIT))?;
        Ok(Trainer {
            train,
            test,
            config,
            class_counts: train.class_counts(),
            classifier,
            velocity: None,
            order: Vec::new(),
            cursor: 0,
            batch_rng: rng::seeded(rng::sub_seed(config.seed, rng::tag::BATCHES)),
            metrics: Vec::new(),
            classifier_steps: 0,
        })
    }

    pub fn iters_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.batch_size.min(self.train.len()))
    }

    /// Next minibatch from a reshuffled pass over the training set.
    pub fn next_batch(&mut self) -> Result<Batch> {
        let n = self.config.batch_size.min(self.train.len());
        if self.cursor >= self.order.len() {
            self.order = (0..self.train.len()).collect();
            self.order.shuffle(&mut self.batch_rng);
            self.cursor = 0;
        }
        let end = (self.cursor + n).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Batch::new(self.train, &idx, &self.class_counts)
    }

    pub fn step(&mut self, hp: HpSource<'_>, batch: &Batch, t: usize) -> Result<()> {
        let (_, grads) = robust_gradient(&self.classifier, hp, batch)?;
        let direction = match (&self.velocity, self.config.momentum) {
            (Some(v), mu) if mu > 0.0 => v
                .iter()
                .zip(&grads)
                .map(|(v, g)| v.scale(mu).add(g))
                .collect::<Result<Vec<_>>>()?,
            _ => grads,
        };
        let next = sgd(&self.classifier.tensors(), &direction, self.config.rate_at(self.config.alpha, t))?;
        ensure_finite(&next, "classifier update")?;
        self.classifier = self.classifier.with_tensors(next)?;
        if self.config.momentum > 0.0 {
            self.velocity = Some(direction);
        }
        self.classifier_steps += 1;
        Ok(())
    }

    pub fn should_evaluate(&self, done: usize) -> bool {
        let every = if self.config.eval_every == 0 { self.iters_per_epoch() } else { self.config.eval_every };
        done.is_multiple_of(every) || done == self.config.iterations
    }

    /// Appends train (and test) rows after `done` iterations.
    pub fn evaluate(&mut self, done: usize, hp: HpSource<'_>) -> Result<()> {
        let epoch = done.div_ceil(self.iters_per_epoch());
        let idx: Vec<usize> = (0..self.train.len()).collect();
        let batch = Batch::new(self.train, &idx, &self.class_counts)?;
        let mut tape = Tape::new();
        let wv = self.classifier.register(&mut tape, false);
        let x = tape.constant(batch.x.clone());
        let logits = nn::forward(&mut tape, &wv, x)?;
        let margins = nn::margins(tape.value(logits), &batch.labels)?;
        let probs = tape.softmax_rows(logits)?;
        let targets = tape.constant(Tensor::one_hot(&batch.labels, self.train.classes())?);
        let cols = hp.columns(&mut tape, &margins, &batch.counts)?;
        let losses = per_sample_loss(&mut tape, probs, targets, &cols)?;
        let loss = tape.value(losses).mean();
        let first_hp: Option<Vec<f64>> = cols.columns().first().map(|&v| tape.value(v).data().to_vec());
        let accuracy = accuracy(tape.value(logits), &batch.labels);

        let mean_where = |noisy: bool| -> Option<f64> {
            let hp = first_hp.as_ref()?;
            let vals: Vec<f64> = (0..self.train.len()).filter(|&i| self.train.is_noisy(i) == noisy).map(|i| hp[i]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let row = MetricRow {
            iter: done,
            epoch,
            split: Split::Train,
            loss,
            accuracy,
            mean_hp_clean: mean_where(false),
            mean_hp_noisy: mean_where(true),
        };
        self.metrics.push(row);

        if let Some(test) = self.test {
            let (loss, accuracy) = evaluate_clean(&self.classifier, test)?;
            self.metrics.push(MetricRow {
                iter: done,
                epoch,
                split: Split::Test,
                loss,
                accuracy,
                mean_hp_clean: None,
                mean_hp_noisy: None,
            });
        }
        Ok(())
    }
}

/// Fraction of rows whose largest logit is the label (ties count as the
/// lowest index).
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| crate::scalar::argmax(logits.row_slice(i)) == Some(y))
        .count();
    hits as f64 / labels.len() as f64
}

/// Cross-entropy and accuracy against the ground-truth labels.
pub fn evaluate_clean(classifier: &ClassifierParams, data: &LabeledDataset) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let logits = classifier.logits(&data.feature_matrix(&idx)?)?;
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let probs = tape.softmax_rows(l)?;
    let targets = tape.constant(Tensor::one_hot(data.clean_labels(), data.classes())?);
    let loss = batch_loss_columns(&mut tape, probs, targets, &HyperColumns::Ce)?;
    Ok((tape.value(loss).item()?, accuracy(&logits, data.clean_labels())))
}

fn abort(iteration: usize, source: Error, classifier: &ClassifierParams, adjuster: Option<&AdjusterParams>) -> Error {
    Error::Aborted {
        iteration,
        source: Box::new(source),
        last_good: Box::new(TrainState { iteration, classifier: classifier.clone(), adjuster: adjuster.cloned() }),
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub classifier: ClassifierParams,
    pub metrics: Vec<MetricRow>,
    pub classifier_steps: usize,
}

/// Plain training with one fixed set of hyperparameters.
pub fn run_baseline(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
    hp: HyperParams,
) -> Result<TrainOutput> {
    hp.validate()?;
    let mut tr = Trainer::new(train, test, config)?;
    let source = HpSource::Fixed(hp);
    tr.evaluate(0, source)?;
    for t in 0..config.iterations {
        let run = |tr: &mut Trainer<'_>| -> Result<()> {
            let batch = tr.next_batch()?;
            tr.step(source, &batch, t)?;
            if tr.should_evaluate(t + 1) {
                tr.evaluate(t + 1, source)?;
            }
            Ok(())
        };
        let before = tr.classifier.clone();
        run(&mut tr).map_err(|e| abort(t, e, &before, None))?;
    }
    Ok(TrainOutput { classifier: tr.classifier, metrics: tr.metrics, classifier_steps: tr.classifier_steps })
}

/// Adjuster weights saved at one configured fraction of training.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub fraction: Fraction,
    pub iteration: usize,
    pub adjuster: AdjusterParams,
}

#[derive(Clone, Debug)]
pub struct MetaTrainOutput {
    pub classifier: ClassifierParams,
    pub adjuster: AdjusterParams,
    pub snapshots: Vec<Snapshot>,
    pub metrics: Vec<MetricRow>,
    pub classifier_steps: usize,
    pub adjuster_steps: usize,
}

/// Alternates adjuster and classifier updates. The centers are fitted once on
/// the training class counts and stay fixed. At iterations divisible by the
/// meta period the adjuster takes a hypergradient step on a meta batch drawn
/// with replacement; every iteration the classifier then steps from its
/// pre-lookahead weights using the updated adjuster.
pub fn run_meta_train(
    train: &LabeledDataset,
    meta: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
    adjuster_config: &AdjusterConfig,
) -> Result<MetaTrainOutput> {
    if adjuster_config.kind != config.loss {
        return Err(Error::Config(format!(
            "adjuster predicts {} hyperparameters but the loss is {}",
            adjuster_config.kind, config.loss
        )));
    }
    if meta.is_empty() {
        return Err(Error::Config("meta set is empty".into()));
    }
    if (0..meta.len()).any(|i| meta.is_noisy(i)) {
        return Err(Error::Config("meta labels must be clean".into()));
    }
    if meta.dim() != train.dim() || meta.classes() != train.classes() {
        return Err(Error::Config("meta set does not match the training set".into()));
    }
    let mut tr = Trainer::new(train, test, config)?;
    let mut adjuster = AdjusterParams::init(adjuster_config, &tr.class_counts, config.seed)?;
    let meta_counts = meta.class_counts();
    let mut meta_rng = rng::seeded(rng::sub_seed(config.seed, rng::tag::META_BATCHES));
    let mut meta_velocity: Option<Vec<Tensor>> = None;
    let mut adjuster_steps = 0;

    let mut snapshots = Vec::new();
    let take_snapshots = |done: usize, adj: &AdjusterParams, out: &mut Vec<Snapshot>| {
        for &fraction in &config.snapshots {
            if fraction.of(config.iterations) == done {
                out.push(Snapshot { fraction, iteration: done, adjuster: adj.clone() });
            }
        }
    };
    take_snapshots(0, &adjuster, &mut snapshots);
    tr.evaluate(0, HpSource::Adjuster(&adjuster))?;

    for t in 0..config.iterations {
        let before = (tr.classifier.clone(), adjuster.clone());
        let mut iteration = || -> Result<()> {
            let batch = tr.next_batch()?;
            if t % config.meta_period == 0 {
                let m = config.meta_batch_size;
                let idx: Vec<usize> = (0..m).map(|_| meta_rng.random_range(0..meta.len())).collect();
                let meta_batch = Batch::new(meta, &idx, &meta_counts)?;
                let alpha = config.rate_at(config.alpha, t);
                let g = adjuster_gradient(&adjuster, &tr.classifier, &batch, &meta_batch, alpha, config.hypergrad)?;
                let direction = match (&meta_velocity, config.momentum) {
                    (Some(v), mu) if mu > 0.0 => {
                        v.iter().zip(&g).map(|(v, g)| v.scale(mu).add(g)).collect::<Result<Vec<_>>>()?
                    }
                    _ => g,
                };
                let next = sgd(&adjuster.theta(), &direction, config.rate_at(config.beta, t))?;
                ensure_finite(&next, "adjuster update")?;
                adjuster = adjuster.with_theta(next)?;
                if config.momentum > 0.0 {
                    meta_velocity = Some(direction);
                }
                adjuster_steps += 1;
            }
            tr.step(HpSource::Adjuster(&adjuster), &batch, t)?;
            take_snapshots(t + 1, &adjuster, &mut snapshots);
            if tr.should_evaluate(t + 1) {
                tr.evaluate(t + 1, HpSource::Adjuster(&adjuster))?;
            }
            Ok(())
        };
        if let Err(e) = iteration() {
            return Err(abort(t, e, &before.0, Some(&before.1)));
        }
    }

    Ok(MetaTrainOutput {
        classifier: tr.classifier,
        adjuster,
        snapshots,
        metrics: tr.metrics,
        classifier_steps: tr.classifier_steps,
        adjuster_steps,
    })
}
