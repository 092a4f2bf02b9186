//! Per-sample hyperparameter prediction from the margin and the class count.
//!
//! A shared hidden layer `1 -> H` (ReLU) reads the margin; each of the `K`
//! task families owns a sigmoid head `H -> P`. A sample's family is the
//! k-means center nearest to the count of its observed class. Sigmoid outputs
//! are scaled by `s` and mapped into the loss's valid range.

use std::fs;
use std::path::Path;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{Reader, Writer};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_fit, nearest};
use crate::losses::{HyperColumns, HyperParams, LossKind};
use crate::nn::glorot;
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 100;

/// Lower clamp of `q` for GCE and margin of `pi1` away from 0 and 1 for JS.
pub const RANGE_FLOOR: f64 = 1e-3;

const MAGIC: &str = "narl-adjuster 1";

/// Default scale vector `s` for a loss family.
pub fn default_scale(kind: LossKind) -> Result<Vec<f64>> {
    match kind {
        LossKind::Gce | LossKind::Js => Ok(vec![1.0]),
        LossKind::Sl => Ok(vec![1.0, 1.0]),
        // lambda_max = 8, d_max - 1 = 9
        LossKind::PolySoft => Ok(vec![8.0, 9.0]),
        other => Err(Error::Config(format!("{other} has no tunable hyperparameters"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjusterConfig {
    pub kind: LossKind,
    /// Number of task families `K`.
    pub clusters: usize,
    pub hidden: usize,
    pub scale: Vec<f64>,
    /// Margins enter as `(m - shift) * factor`; identity by default.
    pub margin_shift: f64,
    pub margin_factor: f64,
}

impl AdjusterConfig {
    pub fn new(kind: LossKind) -> Result<Self> {
        Ok(AdjusterConfig {
            kind,
            clusters: 1,
            hidden: DEFAULT_HIDDEN,
            scale: default_scale(kind)?,
            margin_shift: 0.0,
            margin_factor: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.kind.tunable_count();
        if p == 0 {
            return Err(Error::Config(format!("{} has no tunable hyperparameters", self.kind)));
        }
        if self.scale.len() != p || self.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("{} needs {p} positive scale entries, got {:?}", self.kind, self.scale)));
        }
        if self.clusters == 0 || self.hidden == 0 {
            return Err(Error::Config("clusters and hidden width must be positive".into()));
        }
        if !(self.margin_factor > 0.0 && self.margin_factor.is_finite() && self.margin_shift.is_finite()) {
            return Err(Error::Config("margin standardisation must be finite with a positive factor".into()));
        }
        Ok(())
    }
}

/// Weights `theta`, frozen centers `phi`, and the output scale.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjusterParams {
    kind: LossKind,
    hidden_weight: Tensor,
    hidden_bias: Tensor,
    heads: Vec<(Tensor, Tensor)>,
    centers: Vec<f64>,
    scale: Vec<f64>,
    margin_shift: f64,
    margin_factor: f64,
}

impl AdjusterParams {
    /// Fits the centers on `class_counts` and draws seeded weights.
    pub fn init(config: &AdjusterConfig, class_counts: &[usize], seed: u64) -> Result<Self> {
        config.validate()?;
        let centers = fit_centers(class_counts, config.clusters, seed)?;
        let mut r = rng::seeded(rng::sub_seed(seed, rng::tag::ADJUSTER_INIT));
        let (h, p) = (config.hidden, config.kind.tunable_count());
        let hidden_weight = glorot(&mut r, 1, h)?;
        let heads = (0..config.clusters)
            .map(|_| Ok((glorot(&mut r, h, p)?, Tensor::zeros(vec![1, p])?)))
            .collect::<Result<_>>()?;
        Ok(AdjusterParams {
            kind: config.kind,
            hidden_weight,
            hidden_bias: Tensor::zeros(vec![1, h])?,
            heads,
            centers,
            scale: config.scale.clone(),
            margin_shift: config.margin_shift,
            margin_factor: config.margin_factor,
        })
    }

    /// All weights zero, so every prediction is `0.5 * s` before range mapping.
    pub fn zeros(config: &AdjusterConfig, centers: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (h, p) = (config.hidden, config.kind.tunable_count());
        let heads = (0..config.clusters)
            .map(|_| Ok((Tensor::zeros(vec![h, p])?, Tensor::zeros(vec![1, p])?)))
            .collect::<Result<_>>()?;
        let params = AdjusterParams {
            kind: config.kind,
            hidden_weight: Tensor::zeros(vec![1, h])?,
            hidden_bias: Tensor::zeros(vec![1, h])?,
            heads,
            centers: Vec::new(),
            scale: config.scale.clone(),
            margin_shift: config.margin_shift,
            margin_factor: config.margin_factor,
        };
        params.with_centers(centers)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn clusters(&self) -> usize {
        self.heads.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden_weight.shape()[1]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Same weights with new centers (ascending, one per head).
    pub fn with_centers(&self, centers: Vec<f64>) -> Result<Self> {
        if centers.len() != self.heads.len() {
            return Err(Error::Config(format!("{} centers for {} heads", centers.len(), self.heads.len())));
        }
        if centers.windows(2).any(|w| !(w[0] <= w[1])) || centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!("centers must be finite and ascending: {centers:?}")));
        }
        Ok(AdjusterParams { centers, ..self.clone() })
    }

    /// Same weights with centers re-fitted on another task's class counts.
    pub fn refit(&self, class_counts: &[usize], seed: u64) -> Result<Self> {
        self.with_centers(fit_centers(class_counts, self.heads.len(), seed)?)
    }

    /// `theta` flattened as `[W1, b1, W2_1, b2_1, ..., W2_K, b2_K]`.
    pub fn theta(&self) -> Vec<Tensor> {
        let mut out = vec![self.hidden_weight.clone(), self.hidden_bias.clone()];
        for (w, b) in &self.heads {
            out.push(w.clone());
            out.push(b.clone());
        }
        out
    }

    pub fn with_theta(&self, theta: Vec<Tensor>) -> Result<Self> {
        let current = self.theta();
        if theta.len() != current.len() || theta.iter().zip(&current).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Shape("adjuster parameter shapes changed".into()));
        }
        let mut it = theta.into_iter();
        let hidden_weight = it.next().unwrap();
        let hidden_bias = it.next().unwrap();
        let heads = (0..self.heads.len()).map(|_| (it.next().unwrap(), it.next().unwrap())).collect();
        Ok(AdjusterParams { hidden_weight, hidden_bias, heads, ..self.clone() })
    }

    pub fn family(&self, count: f64) -> usize {
        nearest(count, &self.centers)
    }

    /// Per-sample hyperparameter columns recorded on `tape`. `theta` holds the
    /// tape handles of [`theta`](Self::theta); margins and counts enter as
    /// constants.
    pub fn forward(&self, tape: &mut Tape, theta: &[Var], margins: &[f64], counts: &[f64]) -> Result<HyperColumns> {
        let n = margins.len();
        if n == 0 || counts.len() != n {
            return Err(Error::Shape(format!("{n} margins, {} class counts", counts.len())));
        }
        if theta.len() != 2 + 2 * self.heads.len() {
            return Err(Error::Config("theta does not match the adjuster layout".into()));
        }
        let p = self.kind.tunable_count();
        if self.heads[0].0.shape()[1] != p || self.scale.len() != p {
            return Err(Error::Config(format!("head width does not match {}", self.kind)));
        }

        let inputs: Vec<f64> = margins.iter().map(|m| (m - self.margin_shift) * self.margin_factor).collect();
        let m = tape.constant(Tensor::column(&inputs)?);
        let h = tape.matmul(m, theta[0])?;
        let h = tape.add_row(h, theta[1])?;
        let h = tape.relu(h)?;

        let families: Vec<usize> = counts.iter().map(|&c| self.family(c)).collect();
        let mut sigma: Option<Var> = None;
        for k in 0..self.heads.len() {
            let rows: Vec<f64> = families.iter().map(|&f| if f == k { 1.0 } else { 0.0 }).collect();
            if self.heads.len() > 1 && rows.iter().all(|&v| v == 0.0) {
                continue;
            }
            let z = tape.matmul(h, theta[2 + 2 * k])?;
            let z = tape.add_row(z, theta[3 + 2 * k])?;
            let mut z = tape.sigmoid(z)?;
            if self.heads.len() > 1 {
                let mask = Tensor::column(&rows)?.matmul(&Tensor::ones(vec![1, p])?)?;
                let mask = tape.constant(mask);
                z = tape.mul(z, mask)?;
            }
            sigma = Some(match sigma {
                Some(acc) => tape.add(acc, z)?,
                None => z,
            });
        }
        let sigma = sigma.expect("every sample belongs to a family");

        let mut cols = Vec::with_capacity(p);
        for j in 0..p {
            let c = tape.column(sigma, j)?;
            cols.push(tape.mul_scalar(c, self.scale[j])?);
        }
        Ok(match self.kind {
            LossKind::Gce => HyperColumns::Gce { q: tape.clamp(cols[0], RANGE_FLOOR, 1.0)? },
            LossKind::Sl => HyperColumns::Sl { gamma1: cols[0], gamma2: cols[1] },
            LossKind::PolySoft => HyperColumns::PolySoft { lambda: cols[0], d: tape.add_scalar(cols[1], 1.0)? },
            LossKind::Js => HyperColumns::Js { pi1: tape.clamp(cols[0], RANGE_FLOOR, 1.0 - RANGE_FLOOR)? },
            other => return Err(Error::Config(format!("{other} has no tunable hyperparameters"))),
        })
    }

    /// Scaled sigmoid outputs `s * sigma` before range mapping, `n x P`.
    pub fn scaled_outputs(&self, margins: &[f64], counts: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let theta: Vec<Var> = self.theta().into_iter().map(|t| tape.constant(t)).collect();
        let with_unit_offset = self.forward(&mut tape, &theta, margins, counts)?;
        let mut cols: Vec<Vec<f64>> = with_unit_offset.columns().iter().map(|&v| tape.value(v).data().to_vec()).collect();
        if self.kind == LossKind::PolySoft {
            for v in &mut cols[1] {
                *v -= 1.0;
            }
        }
        Ok((0..margins.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
    }

    /// Hyperparameters for each `(margin, class count)` pair, in order.
    pub fn batch_predict(&self, margins: &[f64], counts: &[f64]) -> Result<Vec<HyperParams>> {
        if margins.len() != counts.len() {
            return Err(Error::Shape(format!("{} margins, {} class counts", margins.len(), counts.len())));
        }
        if margins.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let theta: Vec<Var> = self.theta().into_iter().map(|t| tape.constant(t)).collect();
        let cols = self.forward(&mut tape, &theta, margins, counts)?;
        let vals: Vec<Vec<f64>> = cols.columns().iter().map(|&v| tape.value(v).data().to_vec()).collect();
        Ok((0..margins.len())
            .map(|i| match self.kind {
                LossKind::Gce => HyperParams::Gce { q: vals[0][i] },
                LossKind::Sl => HyperParams::Sl { gamma1: vals[0][i], gamma2: vals[1][i] },
                LossKind::PolySoft => HyperParams::PolySoft { lambda: vals[0][i], d: vals[1][i] },
                _ => HyperParams::Js { pi1: vals[0][i] },
            })
            .collect())
    }

    pub fn predict_hyperparams(&self, margin: f64, count: f64) -> Result<HyperParams> {
        Ok(self.batch_predict(&[margin], &[count])?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.line(MAGIC);
        w.line(format!("kind {}", self.kind));
        w.line(format!("clusters {}", self.heads.len()));
        w.line(format!("margin {:?} {:?}", self.margin_shift, self.margin_factor));
        w.line("scale");
        w.reals(&self.scale);
        w.line("centers");
        w.reals(&self.centers);
        for t in self.theta() {
            w.matrix(&t);
        }
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        if r.next_line()? != MAGIC {
            return Err(r.error("not an adjuster checkpoint"));
        }
        let kind_field = r.keyed("kind")?;
        let kind: LossKind = match kind_field.as_slice() {
            [k] => k.parse().map_err(|_| r.error(format!("unknown loss `{k}`")))?,
            _ => return Err(r.error("`kind` takes one value")),
        };
        let clusters = r.keyed_usize("clusters")?;
        let margin = r.keyed("margin")?;
        let margin = r.parse_reals(&margin)?;
        let [margin_shift, margin_factor] = margin[..] else {
            return Err(r.error("`margin` takes two values"));
        };
        r.keyed("scale")?;
        let scale = r.reals(kind.tunable_count())?;
        r.keyed("centers")?;
        let centers = r.reals(clusters)?;
        let hidden_weight = r.matrix()?;
        let hidden_bias = r.matrix()?;
        let mut heads = Vec::with_capacity(clusters);
        for _ in 0..clusters {
            heads.push((r.matrix()?, r.matrix()?));
        }
        r.expect_end()?;

        let h = hidden_weight.shape()[1];
        let p = kind.tunable_count();
        let shapes_ok = hidden_weight.shape() == [1, h]
            && hidden_bias.shape() == [1, h]
            && heads.iter().all(|(w, b)| w.shape() == [h, p] && b.shape() == [1, p]);
        if !shapes_ok {
            return Err(Error::Shape("adjuster checkpoint has inconsistent shapes".into()));
        }
        let config = AdjusterConfig { kind, clusters, hidden: h, scale: scale.clone(), margin_shift, margin_factor };
        config.validate()?;
        let params = AdjusterParams {
            kind,
            hidden_weight,
            hidden_bias,
            heads,
            centers: Vec::new(),
            scale,
            margin_shift,
            margin_factor,
        };
        params.with_centers(centers)
    }
}

fn fit_centers(class_counts: &[usize], k: usize, seed: u64) -> Result<Vec<f64>> {
    let values: Vec<f64> = class_counts.iter().map(|&c| c as f64).collect();
    kmeans_fit(&values, k, rng::sub_seed(seed, rng::tag::KMEANS))
}

/// Snapshot file name for the fraction `num/den` of training.
pub fn snapshot_file_name(num: u32, den: u32) -> String {
    format!("adjuster_k{num}_{den}.ckpt")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gce_config(k: usize) -> AdjusterConfig {
        AdjusterConfig { clusters: k, ..AdjusterConfig::new(LossKind::Gce).unwrap() }
    }

    #[test]
    fn zero_theta_predicts_half_scale() {
        for kind in [LossKind::Gce, LossKind::Sl, LossKind::PolySoft, LossKind::Js] {
            let cfg = AdjusterConfig::new(kind).unwrap();
            let adj = AdjusterParams::zeros(&cfg, vec![100.0]).unwrap();
            for m in [-3.0, 0.0, 2.5] {
                let out = adj.scaled_outputs(&[m], &[100.0]).unwrap();
                for (v, s) in out[0].iter().zip(&cfg.scale) {
                    assert_eq!(*v, 0.5 * s);
                }
            }
        }
        let adj = AdjusterParams::zeros(&AdjusterConfig::new(LossKind::PolySoft).unwrap(), vec![1.0]).unwrap();
        assert_eq!(adj.predict_hyperparams(0.3, 1.0).unwrap(), HyperParams::PolySoft { lambda: 4.0, d: 5.5 });
    }

    #[test]
    fn gce_prediction_in_unit_interval() {
        let adj = AdjusterParams::init(&gce_config(1), &[50, 50, 50], 3).unwrap();
        for i in 0..200 {
            let m = -20.0 + 0.2 * i as f64;
            match adj.predict_hyperparams(m, 50.0).unwrap() {
                HyperParams::Gce { q } => assert!(q > 0.0 && q <= 1.0),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn families_select_different_heads() {
        let adj = AdjusterParams::init(&gce_config(2), &[100, 100, 900, 900], 1).unwrap();
        assert_eq!(adj.centers(), &[100.0, 900.0]);
        let a = adj.predict_hyperparams(0.7, 120.0).unwrap();
        let b = adj.predict_hyperparams(0.7, 880.0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn batch_matches_single_calls() {
        let adj = AdjusterParams::init(&gce_config(2), &[100, 100, 900, 900], 4).unwrap();
        let (m, c) = ([0.5, -1.0, 2.0], [100.0, 900.0, 100.0]);
        let batch = adj.batch_predict(&m, &c).unwrap();
        for i in 0..3 {
            assert_eq!(batch[i], adj.predict_hyperparams(m[i], c[i]).unwrap());
        }
        assert!(matches!(adj.batch_predict(&m, &c[..2]), Err(Error::Shape(_))));
    }

    #[test]
    fn untunable_kinds_are_rejected() {
        assert!(AdjusterConfig::new(LossKind::Ce).is_err());
        let mut cfg = AdjusterConfig::new(LossKind::Sl).unwrap();
        cfg.scale = vec![1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = AdjusterConfig { clusters: 2, ..AdjusterConfig::new(LossKind::PolySoft).unwrap() };
        let adj = AdjusterParams::init(&cfg, &[10, 20, 300, 310], 8).unwrap();
        let text = adj.to_text();
        let back = AdjusterParams::from_text(&text).unwrap();
        assert_eq!(back, adj);
        assert_eq!(back.to_text(), text);
        assert_eq!(snapshot_file_name(2, 3), "adjuster_k2_3.ckpt");
    }
}
