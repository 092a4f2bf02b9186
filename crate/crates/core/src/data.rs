//! Labelled datasets: synthetic generation, meta-set extraction and the CSV
//! file format `feat_0,...,feat_{d-1},label,clean_label`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Feature rows with observed labels and the ground truth they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    clean_labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        clean_labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::Config(format!("dimension {dim} / {classes} classes")));
        }
        if features.len() != labels.len() * dim || labels.len() != clean_labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values, {} labels, {} clean labels, dimension {dim}",
                features.len(),
                labels.len(),
                clean_labels.len()
            )));
        }
        if let Some(bad) = labels.iter().chain(&clean_labels).find(|&&y| y >= classes) {
            return Err(Error::Config(format!("label {bad} outside {classes} classes")));
        }
        Ok(LabeledDataset { features, dim, labels, clean_labels, classes })
    }

    /// A dataset whose observed labels are the clean ones.
    pub fn clean(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let clean = labels.clone();
        Self::new(features, dim, labels, clean, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    /// Whether sample `i` carries a corrupted label.
    pub fn is_noisy(&self, i: usize) -> bool {
        self.labels[i] != self.clean_labels[i]
    }

    pub fn noise_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).filter(|&i| self.is_noisy(i)).count() as f64 / self.len() as f64
    }

    /// Samples per class under the observed labels.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Same features and ground truth, new observed labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.features.clone(), self.dim, labels, self.clean_labels.clone(), self.classes)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        LabeledDataset {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: indices.iter().map(|&i| self.clean_labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Rows stacked in order; both datasets must agree on dimension and classes.
    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        if self.dim != other.dim || self.classes != other.classes {
            return Err(Error::Shape("datasets differ in dimension or classes".into()));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out.clean_labels.extend_from_slice(&other.clean_labels);
        Ok(out)
    }

    /// Feature matrix of the selected rows.
    pub fn feature_matrix(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.features(i));
        }
        Tensor::matrix(indices.len(), self.dim, data)
    }

    pub fn all_features(&self) -> Result<Tensor> {
        Tensor::matrix(self.len(), self.dim, self.features.clone())
    }
}

/// Isotropic unit-variance Gaussian clusters, one per class. Class means sit
/// on a circle in the first two coordinates with neighbouring means
/// `separation` apart. Rows are shuffled.
pub fn gen_gaussian_mixture(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || dim < 2 || per_class == 0 || !(separation > 0.0) {
        return Err(Error::Config(format!(
            "gaussian mixture needs c >= 2, d >= 2, n > 0, separation > 0 (got {classes}, {dim}, {per_class}, {separation})"
        )));
    }
    let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
    let mut r = rng::seeded(seed);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(classes * per_class);
    for k in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
        let mut mean = vec![0.0; dim];
        mean[0] = radius * angle.cos();
        mean[1] = radius * angle.sin();
        for _ in 0..per_class {
            let x: Vec<f64> = mean.iter().map(|m| m + r.sample::<f64, _>(StandardNormal)).collect();
            rows.push((x, k));
        }
    }
    rows.shuffle(&mut r);
    let labels: Vec<usize> = rows.iter().map(|(_, y)| *y).collect();
    let features: Vec<f64> = rows.into_iter().flat_map(|(x, _)| x).collect();
    LabeledDataset::clean(features, dim, labels, classes)
}

/// Stratified split into `(train, meta)` with `meta_size` meta samples spread
/// as evenly as possible over classes; lower class indices absorb the remainder.
pub fn split_meta(data: &LabeledDataset, meta_size: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if meta_size >= data.len() {
        return Err(Error::Config(format!("meta size {meta_size} must be below {} samples", data.len())));
    }
    let c = data.classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut r = rng::seeded(seed);
    let mut meta_idx = Vec::with_capacity(meta_size);
    for (k, members) in by_class.iter_mut().enumerate() {
        let quota = meta_size / c + usize::from(k < meta_size % c);
        if quota > members.len() {
            return Err(Error::Config(format!(
                "class {k} has {} samples, meta quota is {quota}",
                members.len()
            )));
        }
        members.shuffle(&mut r);
        meta_idx.extend_from_slice(&members[..quota]);
    }
    meta_idx.sort_unstable();
    let mut in_meta = vec![false; data.len()];
    for &i in &meta_idx {
        in_meta[i] = true;
    }
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_meta[i]).collect();
    Ok((data.subset(&train_idx), data.subset(&meta_idx)))
}

pub fn write_dataset(data: &LabeledDataset, out: &mut impl Write) -> Result<()> {
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("feat_{j}")).collect();
    header.push("label".into());
    header.push("clean_label".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.len() {
        let mut line = String::new();
        for v in data.features(i) {
            line.push_str(&format!("{v:.16e},"));
        }
        line.push_str(&format!("{},{}", data.labels[i], data.clean_labels[i]));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_dataset(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(data, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Parses the CSV text. The class count is one past the largest label seen.
pub fn parse_dataset(text: &str) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    let dim = cols.len().saturating_sub(2);
    let expected: Vec<String> = (0..dim)
        .map(|j| format!("feat_{j}"))
        .chain(["label".to_string(), "clean_label".to_string()])
        .collect();
    if dim == 0 || cols != expected {
        return Err(Error::Parse { line: 1, message: format!("unexpected header `{header}`") });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut clean = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", dim + 2, fields.len()),
            });
        }
        for f in &fields[..dim] {
            let v: f64 = f.parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad number `{f}`") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: line_no, message: format!("non-finite value `{f}`") });
            }
            features.push(v);
        }
        let label = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse { line: line_no, message: format!("bad label `{s}`") })
        };
        labels.push(label(fields[dim])?);
        clean.push(label(fields[dim + 1])?);
    }
    if labels.is_empty() {
        return Err(Error::Parse { line: 2, message: "no samples".into() });
    }
    let classes = labels.iter().chain(&clean).max().map_or(0, |m| m + 1).max(2);
    LabeledDataset::new(features, dim, labels, clean, classes)
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    parse_dataset(&fs::read_to_string(path)?)
}
