use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use narl_core::adjuster::{snapshot_file_name, AdjusterParams};
use narl_core::bounds::{emit_gap_curves, CurveParams};
use narl_core::data::{gen_gaussian_mixture, read_dataset, save_dataset, LabeledDataset};
use narl_core::experiment::{build_mixed_task, build_task, Task, TaskSpec};
use narl_core::meta_test::run_meta_test;
use narl_core::meta_train::{diagnose, run_baseline, run_meta_train, save_metrics, write_diagnostics};
use narl_core::{ClassifierParams, NoiseSpec};

use crate::config::{noise_kind, ExperimentConfig};
use crate::{Cli, Command, Failure};

const SEED_VAR: &str = "NARL_SEED";

fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::Usage(anyhow!("{SEED_VAR}={v} is not a seed"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData(a) => {
            let seed = seed_override()?.unwrap_or(a.seed);
            let data = gen_gaussian_mixture(a.classes, a.per_class, a.dim, a.separation, seed)?;
            write(out, &a.output, |p| save_dataset(&data, p))
        }
        Command::InjectNoise(a) => {
            let pairs = parse_pairs(&a.pairs).map_err(Failure::Usage)?;
            let groups = parse_groups(&a.groups).map_err(Failure::Usage)?;
            let kind = noise_kind(&a.kind, &pairs, &groups).map_err(Failure::Usage)?;
            let seed = seed_override()?.unwrap_or(a.seed);
            let data = read_dataset(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let noisy = NoiseSpec { kind, eta: a.rate, seed }.apply(&data)?;
            write(out, &a.output, |p| save_dataset(&noisy, p))
        }
        Command::Train(a) => {
            let mut cfg = load_config(a.config.config.as_deref())?;
            if let Some(loss) = a.loss {
                cfg.loss.kind = loss;
            }
            let hp = cfg.loss.hyperparams().map_err(Failure::Usage)?;
            let train_cfg = cfg.train_config().map_err(Failure::Usage)?;
            let task = load_task(&cfg)?;
            let result = run_baseline(&task.train, task.test.as_ref(), &train_cfg, hp)?;
            write(out, "metrics.csv", |p| save_metrics(&result.metrics, p))?;
            write(out, "classifier.ckpt", |p| result.classifier.save(p))
        }
        Command::MetaTrain(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let train_cfg = cfg.train_config().map_err(Failure::Usage)?;
            let adj_cfg = cfg.adjuster_config().map_err(Failure::Usage)?;
            let task = load_task(&cfg)?;
            let meta = task.meta.ok_or_else(|| Failure::Usage(anyhow!("meta-train needs a meta set")))?;
            let result = run_meta_train(&task.train, &meta, task.test.as_ref(), &train_cfg, &adj_cfg)?;
            write(out, "metrics.csv", |p| save_metrics(&result.metrics, p))?;
            write(out, "classifier.ckpt", |p| result.classifier.save(p))?;
            write(out, "adjuster.ckpt", |p| result.adjuster.save(p))?;
            for s in &result.snapshots {
                write(out, &snapshot_file_name(s.fraction.num, s.fraction.den), |p| s.adjuster.save(p))?;
            }
            Ok(())
        }
        Command::MetaTest(a) => {
            let cfg = load_config(a.config.config.as_deref())?;
            let train_cfg = cfg.train_config().map_err(Failure::Usage)?;
            let dir = a.snapshots.unwrap_or_else(|| out.to_path_buf());
            let names: Vec<PathBuf> = if cfg.meta_test.snapshots.is_empty() {
                train_cfg.snapshots.iter().map(|f| snapshot_file_name(f.num, f.den).into()).collect()
            } else {
                cfg.meta_test.snapshots.clone()
            };
            let snapshots = names
                .iter()
                .map(|n| {
                    let p = dir.join(n);
                    AdjusterParams::load(&p).with_context(|| format!("loading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let task = load_task(&cfg)?;
            let result = run_meta_test(&task.train, task.test.as_ref(), &snapshots, &train_cfg)?;
            write(out, "metrics.csv", |p| save_metrics(&result.metrics, p))?;
            write(out, "classifier.ckpt", |p| result.classifier.save(p))
        }
        Command::Bounds(a) => {
            let only = match &a.loss {
                Some(l) => Some(l.parse().map_err(|e| Failure::Usage(anyhow!("{e}")))?),
                None => None,
            };
            let classes = parse_range(&a.c).map_err(Failure::Usage)?;
            let params = CurveParams { q: a.q, lambda: a.lambda, d: a.d, pi1: a.pi1 };
            emit_gap_curves(classes, &params, only, &out.join(&a.output))?;
            Ok(())
        }
        Command::Diagnose(a) => {
            let classifier = ClassifierParams::load(&a.classifier)
                .with_context(|| format!("loading {}", a.classifier.display()))?;
            let adjuster =
                AdjusterParams::load(&a.adjuster).with_context(|| format!("loading {}", a.adjuster.display()))?;
            let data = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
            let rows = diagnose(&classifier, &adjuster, &data)?;
            write(out, &a.output, |p| {
                let mut buf = Vec::new();
                write_diagnostics(&rows, &mut buf)?;
                std::fs::write(p, buf)?;
                Ok(())
            })
        }
    }
}

fn write(dir: &Path, name: &str, f: impl FnOnce(&Path) -> narl_core::Result<()>) -> Result<(), Failure> {
    let path = dir.join(name);
    f(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Datasets for one run. `meta` and `test` are absent only when read from
/// files that were not given.
struct LoadedTask {
    train: LabeledDataset,
    meta: Option<LabeledDataset>,
    test: Option<LabeledDataset>,
}

fn load_task(cfg: &ExperimentConfig) -> Result<LoadedTask, Failure> {
    let d = &cfg.data;
    if let Some(train) = &d.train {
        let read = |p: &PathBuf| read_dataset(p).with_context(|| format!("reading {}", p.display()));
        return Ok(LoadedTask {
            train: read(train)?,
            meta: d.meta.as_ref().map(read).transpose()?,
            test: d.test.as_ref().map(read).transpose()?,
        });
    }
    let spec = TaskSpec {
        classes: d.classes,
        dim: d.dim,
        separation: d.separation,
        train_size: d.train_size,
        meta_size: d.meta_size,
        test_size: d.test_size,
        noise: cfg.noise.kind().map_err(Failure::Usage)?,
        noise_rate: cfg.noise.rate,
    };
    let Task { train, meta, test } = match &cfg.noise.rates {
        Some(rates) => build_mixed_task(&spec, rates, cfg.seed)?,
        None => build_task(&spec, cfg.seed)?,
    };
    Ok(LoadedTask { train, meta: (!meta.is_empty()).then_some(meta), test: Some(test) })
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let (lo, hi) = s.split_once("..").ok_or_else(|| anyhow!("class range `{s}` is not of the form A..B"))?;
    let lo: usize = lo.trim().parse().with_context(|| format!("class range `{s}`"))?;
    let hi: usize = hi.trim().trim_start_matches('=').parse().with_context(|| format!("class range `{s}`"))?;
    if lo < 2 || hi < lo {
        bail!("class range `{s}` must satisfy 2 <= A <= B");
    }
    Ok(lo..=hi)
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p.split_once(':').ok_or_else(|| anyhow!("pair `{p}` is not of the form FROM:TO"))?;
            Ok((a.trim().parse()?, b.trim().parse()?))
        })
        .collect()
}

fn parse_groups(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .filter(|g| !g.trim().is_empty())
        .map(|g| g.split(',').map(|c| c.trim().parse().with_context(|| format!("group `{g}`"))).collect())
        .collect()
}
