//! Experiment configuration files (TOML). Every section rejects unknown keys,
//! so a typo fails the parse with the offending key named.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use narl_core::adjuster::{default_scale, AdjusterConfig};
use narl_core::meta_train::Fraction;
use narl_core::{HyperParams, HypergradMethod, LossKind, NoiseKind, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub adjuster: AdjusterSection,
    #[serde(default)]
    pub meta_test: MetaTestSection,
}

/// Either a synthetic Gaussian-mixture task or CSV files. When `train` is
/// set the generator keys are ignored and `meta`/`test` are read if given.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub train_size: usize,
    pub meta_size: usize,
    pub test_size: usize,
    pub train: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        let t = narl_core::experiment::TaskSpec::default();
        DataSection {
            classes: t.classes,
            dim: t.dim,
            separation: t.separation,
            train_size: t.train_size,
            meta_size: t.meta_size,
            test_size: t.test_size,
            train: None,
            meta: None,
            test: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// symmetric, pair, group or instance
    pub kind: String,
    pub rate: f64,
    /// Noise rates of consecutive training parts; overrides `rate`.
    pub rates: Option<Vec<f64>>,
    pub pairs: Vec<(usize, usize)>,
    pub groups: Vec<Vec<usize>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { kind: "symmetric".into(), rate: 0.4, rates: None, pairs: Vec::new(), groups: Vec::new() }
    }
}

impl NoiseSection {
    pub fn kind(&self) -> Result<NoiseKind> {
        noise_kind(&self.kind, &self.pairs, &self.groups)
    }
}

pub fn noise_kind(name: &str, pairs: &[(usize, usize)], groups: &[Vec<usize>]) -> Result<NoiseKind> {
    Ok(match name {
        "symmetric" => NoiseKind::Symmetric,
        "pair" => NoiseKind::PairMap(pairs.to_vec()),
        "group" => NoiseKind::GroupUniform(groups.to_vec()),
        "instance" => NoiseKind::InstanceDependent,
        other => bail!("unknown noise kind `{other}` (expected symmetric, pair, group or instance)"),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub meta_batch_size: usize,
    pub iterations: usize,
    pub meta_period: usize,
    pub momentum: f64,
    pub decay_at: Vec<usize>,
    pub decay_factor: f64,
    pub hidden: Vec<usize>,
    /// exact or finite-difference
    pub hypergrad: String,
    pub eval_every: usize,
    /// Fractions of training such as "1/3".
    pub snapshots: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            alpha: t.alpha,
            beta: t.beta,
            batch_size: t.batch_size,
            meta_batch_size: t.meta_batch_size,
            iterations: t.iterations,
            meta_period: t.meta_period,
            momentum: t.momentum,
            decay_at: t.decay_at,
            decay_factor: t.decay_factor,
            hidden: t.hidden,
            hypergrad: "exact".into(),
            eval_every: t.eval_every,
            snapshots: t.snapshots.iter().map(Fraction::to_string).collect(),
        }
    }
}

/// Loss kind plus the fixed hyperparameters used by `train`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub kind: String,
    pub q: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda: f64,
    pub d: f64,
    pub pi1: f64,
    pub a: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            kind: "gce".into(),
            q: 0.7,
            gamma1: 0.1,
            gamma2: 1.0,
            lambda: 8.0,
            d: 2.0,
            pi1: 0.5,
            a: narl_core::losses::RCE_A,
        }
    }
}

impl LossSection {
    pub fn kind(&self) -> Result<LossKind> {
        self.kind.parse().map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn hyperparams(&self) -> Result<HyperParams> {
        let hp = match self.kind()? {
            LossKind::Ce => HyperParams::Ce,
            LossKind::Mae => HyperParams::Mae,
            LossKind::Gce => HyperParams::Gce { q: self.q },
            LossKind::Rce => HyperParams::Rce { a: self.a },
            LossKind::Sl => HyperParams::Sl { gamma1: self.gamma1, gamma2: self.gamma2 },
            LossKind::PolySoft => HyperParams::PolySoft { lambda: self.lambda, d: self.d },
            LossKind::Js => HyperParams::Js { pi1: self.pi1 },
        };
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjusterSection {
    pub clusters: usize,
    pub hidden: usize,
    pub scale: Option<Vec<f64>>,
    pub margin_shift: f64,
    pub margin_factor: f64,
}

impl Default for AdjusterSection {
    fn default() -> Self {
        AdjusterSection {
            clusters: 1,
            hidden: narl_core::adjuster::DEFAULT_HIDDEN,
            scale: None,
            margin_shift: 0.0,
            margin_factor: 1.0,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaTestSection {
    /// Snapshot files in deployment order, relative to the snapshot directory.
    pub snapshots: Vec<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.train_config()?;
        cfg.noise.kind()?;
        cfg.loss.kind()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let hypergrad = match t.hypergrad.as_str() {
            "exact" => HypergradMethod::Exact,
            "finite-difference" => HypergradMethod::FiniteDifference,
            other => bail!("unknown hypergrad method `{other}` (expected exact or finite-difference)"),
        };
        let snapshots = t
            .snapshots
            .iter()
            .map(|s| s.parse::<Fraction>().map_err(|e| anyhow::anyhow!("snapshot `{s}`: {e}")))
            .collect::<Result<_>>()?;
        let cfg = TrainConfig {
            alpha: t.alpha,
            beta: t.beta,
            batch_size: t.batch_size,
            meta_batch_size: t.meta_batch_size,
            iterations: t.iterations,
            meta_period: t.meta_period,
            seed: self.seed,
            loss: self.loss.kind()?,
            snapshots,
            momentum: t.momentum,
            decay_at: t.decay_at.clone(),
            decay_factor: t.decay_factor,
            hidden: t.hidden.clone(),
            hypergrad,
            eval_every: t.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adjuster_config(&self) -> Result<AdjusterConfig> {
        let kind = self.loss.kind()?;
        let cfg = AdjusterConfig {
            clusters: self.adjuster.clusters,
            hidden: self.adjuster.hidden,
            scale: match &self.adjuster.scale {
                Some(s) => s.clone(),
                None => default_scale(kind)?,
            },
            margin_shift: self.adjuster.margin_shift,
            margin_factor: self.adjuster.margin_factor,
            ..AdjusterConfig::new(kind)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
