//! One-dimensional k-means over per-class sample counts.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Index of the center nearest to `value`; ties go to the lower index.
pub fn nearest<F: Real>(value: F, centers: &[F]) -> usize {
    let mut best = 0;
    for (k, &c) in centers.iter().enumerate().skip(1) {
        if (value - c).abs() < (value - centers[best]).abs() {
            best = k;
        }
    }
    best
}

/// Lloyd iterations from a seeded k-means++ start until the assignment stops
/// changing. Centers come back in ascending order.
pub fn kmeans_fit<F: Real>(values: &[F], k: usize, seed: u64) -> Result<Vec<F>> {
    if values.is_empty() || k == 0 {
        return Err(Error::Config("k-means needs values and at least one cluster".into()));
    }
    let mut distinct: Vec<F> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite counts"));
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::Config(format!("{k} clusters but only {} distinct values", distinct.len())));
    }

    let mut r = rng::seeded(seed);
    let mut centers = vec![distinct[r.random_range(0..distinct.len())]];
    while centers.len() < k {
        let weights: Vec<f64> = distinct
            .iter()
            .map(|&v| {
                let d = v - centers[nearest(v, &centers)];
                (d * d).to_f64().unwrap()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = r.random::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).unwrap();
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 && u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        centers.push(distinct[pick]);
    }
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut assign: Vec<usize> = values.iter().map(|&v| nearest(v, &centers)).collect();
    loop {
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<F> = values.iter().zip(&assign).filter(|&(_, &a)| a == j).map(|(&v, _)| v).collect();
            if !members.is_empty() {
                *c = members.iter().copied().sum::<F>() / F::from_count(members.len());
            }
        }
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let next: Vec<usize> = values.iter().map(|&v| nearest(v, &centers)).collect();
        if next == assign {
            return Ok(centers);
        }
        assign = next;
    }
}

/// One-hot task-family indicator of length `K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskFamilyOneHot {
    pub index: usize,
    pub len: usize,
}

impl TaskFamilyOneHot {
    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len).map(|k| if k == self.index { 1.0 } else { 0.0 }).collect()
    }
}

pub fn family_onehot<F: Real>(count: F, centers: &[F]) -> TaskFamilyOneHot {
    TaskFamilyOneHot { index: nearest(count, centers), len: centers.len() }
}
