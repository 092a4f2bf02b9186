//! Label corruption. Every injector keeps features and ground truth and only
//! rewrites the observed labels. Sample `i` draws from its own ChaCha stream,
//! so the output does not depend on iteration order.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::softmax;

/// Which corruption process to apply.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseKind {
    Symmetric,
    /// `(from, to)` pairs; classes absent from the list keep their labels.
    PairMap(Vec<(usize, usize)>),
    /// A partition of the classes; flips stay inside a group.
    GroupUniform(Vec<Vec<usize>>),
    InstanceDependent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub eta: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn apply(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        match &self.kind {
            NoiseKind::Symmetric => inject_symmetric(data, self.eta, self.seed),
            NoiseKind::PairMap(map) => inject_pair_map(data, self.eta, map, self.seed),
            NoiseKind::GroupUniform(groups) => inject_group_uniform(data, self.eta, groups, self.seed),
            NoiseKind::InstanceDependent => Ok(inject_instance_dependent(data, self.eta, self.seed)?.data),
        }
    }

    /// Symmetric noise above `1 - 1/c` leaves the tolerance guarantees.
    pub fn within_tolerance_regime(&self, classes: usize) -> bool {
        !matches!(self.kind, NoiseKind::Symmetric) || self.eta <= 1.0 - 1.0 / classes as f64
    }
}

fn check_rate(eta: f64, allow_one: bool) -> Result<()> {
    let ok = eta >= 0.0 && (eta < 1.0 || (allow_one && eta == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!("noise rate must lie in [0, 1), got {eta}")))
    }
}

fn relabel(data: &LabeledDataset, seed: u64, mut draw: impl FnMut(&mut rng::Rng, usize) -> usize) -> Result<LabeledDataset> {
    let labels = data
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| draw(&mut rng::stream(seed, i as u64), y))
        .collect();
    data.with_labels(labels)
}

/// Flip with probability `eta` to one of the other `c - 1` classes uniformly.
pub fn inject_symmetric(data: &LabeledDataset, eta: f64, seed: u64) -> Result<LabeledDataset> {
    check_rate(eta, false)?;
    let c = data.classes();
    relabel(data, seed, |r, y| {
        if r.random::<f64>() < eta {
            let k = r.random_range(0..c - 1);
            if k >= y { k + 1 } else { k }
        } else {
            y
        }
    })
}

/// Flip `from` to `to` with probability `eta`. A rate of exactly 1 is allowed
/// here since the result stays well defined.
pub fn inject_pair_map(data: &LabeledDataset, eta: f64, map: &[(usize, usize)], seed: u64) -> Result<LabeledDataset> {
    check_rate(eta, true)?;
    let c = data.classes();
    let mut target = vec![None; c];
    for &(from, to) in map {
        if from >= c || to >= c {
            return Err(Error::Config(format!("pair {from}->{to} outside {c} classes")));
        }
        if target[from].replace(to).is_some() {
            return Err(Error::Config(format!("class {from} mapped twice")));
        }
    }
    relabel(data, seed, |r, y| match target[y] {
        Some(to) if r.random::<f64>() < eta => to,
        _ => y,
    })
}

/// Symmetric noise restricted to the sample's group.
pub fn inject_group_uniform(data: &LabeledDataset, eta: f64, groups: &[Vec<usize>], seed: u64) -> Result<LabeledDataset> {
    check_rate(eta, false)?;
    let c = data.classes();
    let mut group_of = vec![None; c];
    for (g, members) in groups.iter().enumerate() {
        for &k in members {
            if k >= c || group_of[k].replace(g).is_some() {
                return Err(Error::Config(format!("groups do not partition {c} classes (class {k})")));
            }
        }
    }
    if let Some(k) = group_of.iter().position(Option::is_none) {
        return Err(Error::Config(format!("class {k} belongs to no group")));
    }
    relabel(data, seed, |r, y| {
        let members = &groups[group_of[y].unwrap()];
        if members.len() < 2 || r.random::<f64>() >= eta {
            return y;
        }
        let k = r.random_range(0..members.len() - 1);
        let others: Vec<usize> = members.iter().copied().filter(|&m| m != y).collect();
        others[k]
    })
}

/// Draw from N(mean, 0.1^2) conditioned on [0, 1].
pub fn truncated_normal(r: &mut rng::Rng, mean: f64) -> f64 {
    loop {
        let v = mean + 0.1 * r.sample::<f64, _>(StandardNormal);
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
}

/// Feature-dependent noise together with the per-sample quantities it used.
#[derive(Clone, Debug)]
pub struct InstanceNoise {
    pub data: LabeledDataset,
    /// Flip rate drawn for each sample.
    pub flip_rates: Vec<f64>,
    /// Label distribution each noisy label was drawn from.
    pub transitions: Vec<Vec<f64>>,
}

/// Per sample: `q ~ N(eta, 0.1^2)` truncated to [0, 1], a fresh `s x c`
/// standard-normal projection `W`, and
/// `p = q * softmax(x W)` over the other classes with `p_y = 1 - q`.
pub fn inject_instance_dependent(data: &LabeledDataset, eta: f64, seed: u64) -> Result<InstanceNoise> {
    check_rate(eta, false)?;
    let (c, s) = (data.classes(), data.dim());
    let mut flip_rates = Vec::with_capacity(data.len());
    let mut transitions = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (i, &y) in data.labels().iter().enumerate() {
        let mut r = rng::stream(seed, i as u64);
        let q = truncated_normal(&mut r, eta);
        let w: Vec<f64> = (0..s * c).map(|_| r.sample(StandardNormal)).collect();
        let x = data.features(i);
        let mut scores: Vec<f64> = (0..c).map(|j| (0..s).map(|k| x[k] * w[k * c + j]).sum()).collect();
        scores[y] = f64::NEG_INFINITY;
        let mut p: Vec<f64> = softmax(&scores).into_iter().map(|v| q * v).collect();
        p[y] = 1.0 - q;

        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut label = y;
        for (j, &pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                label = j;
                break;
            }
        }
        labels.push(label);
        flip_rates.push(q);
        transitions.push(p);
    }
    Ok(InstanceNoise { data: data.with_labels(labels)?, flip_rates, transitions })
}
