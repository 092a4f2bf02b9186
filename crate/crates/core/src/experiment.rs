//! Synthetic noisy-label tasks: Gaussian-mixture data with a clean meta set,
//! corrupted training labels and a clean test set.

use crate::data::{gen_gaussian_mixture, split_meta, LabeledDataset};
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub train_size: usize,
    pub meta_size: usize,
    pub test_size: usize,
    pub noise: NoiseKind,
    pub noise_rate: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            classes: 4,
            dim: 2,
            separation: 3.0,
            train_size: 5000,
            meta_size: 200,
            test_size: 2000,
            noise: NoiseKind::Symmetric,
            noise_rate: 0.4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Task {
    /// Training samples with corrupted labels.
    pub train: LabeledDataset,
    /// Clean samples held out before corruption.
    pub meta: LabeledDataset,
    pub test: LabeledDataset,
}

fn per_class(total: usize, classes: usize) -> Result<usize> {
    if !total.is_multiple_of(classes) {
        return Err(Error::Config(format!("{total} samples do not divide into {classes} classes")));
    }
    Ok(total / classes)
}

/// Builds the train, meta and test sets of one task. All randomness derives
/// from `seed`.
pub fn build_task(spec: &TaskSpec, seed: u64) -> Result<Task> {
    let pool = per_class(spec.train_size + spec.meta_size, spec.classes)?;
    let data = gen_gaussian_mixture(spec.classes, pool, spec.dim, spec.separation, rng::sub_seed(seed, tag::DATA))?;
    let (train, meta) = if spec.meta_size == 0 {
        (data, LabeledDataset::new(Vec::new(), spec.dim, Vec::new(), Vec::new(), spec.classes)?)
    } else {
        split_meta(&data, spec.meta_size, rng::sub_seed(seed, tag::META_SPLIT))?
    };
    let noise = NoiseSpec { kind: spec.noise.clone(), eta: spec.noise_rate, seed: rng::sub_seed(seed, tag::NOISE) };
    let train = noise.apply(&train)?;
    let test = gen_gaussian_mixture(
        spec.classes,
        per_class(spec.test_size, spec.classes)?,
        spec.dim,
        spec.separation,
        rng::sub_seed(seed, tag::TEST_DATA),
    )?;
    Ok(Task { train, meta, test })
}

/// Like [`build_task`], but the training set is cut into consecutive parts
/// of (nearly) equal size, part `k` corrupted at `rates[k]` with the task's
/// noise kind.
pub fn build_mixed_task(spec: &TaskSpec, rates: &[f64], seed: u64) -> Result<Task> {
    if rates.is_empty() {
        return Err(Error::Config("no noise rates given".into()));
    }
    let clean = build_task(&TaskSpec { noise_rate: 0.0, ..spec.clone() }, seed)?;
    let n = clean.train.len();
    let mut train: Option<LabeledDataset> = None;
    for (k, &rate) in rates.iter().enumerate() {
        let idx: Vec<usize> = (k * n / rates.len()..(k + 1) * n / rates.len()).collect();
        let noise = NoiseSpec {
            kind: spec.noise.clone(),
            eta: rate,
            seed: rng::sub_seed(rng::sub_seed(seed, tag::NOISE), k as u64 + 1),
        };
        let part = noise.apply(&clean.train.subset(&idx))?;
        train = Some(match train {
            Some(t) => t.concat(&part)?,
            None => part,
        });
    }
    Ok(Task { train: train.unwrap(), ..clean })
}
