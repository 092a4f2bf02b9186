//! Class-sum bounds `C_L <= sum_j L(f, j) <= C_U` for bounded losses, the
//! noise-aware counterparts, and the risk gaps they imply under symmetric
//! label noise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{self, HyperParams, LossKind, SimplexVector, RCE_A};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundPair<F = f64> {
    pub c_l: F,
    pub c_u: F,
    pub gap: F,
}

impl<F: Real> BoundPair<F> {
    pub fn new(c_l: F, c_u: F) -> Result<Self> {
        if !(c_l <= c_u) {
            return Err(Error::Domain(format!("empty interval [{c_l}, {c_u}]")));
        }
        Ok(BoundPair { c_l, c_u, gap: c_u - c_l })
    }

    pub fn contains(&self, x: F, tol: F) -> bool {
        x >= self.c_l - tol && x <= self.c_u + tol
    }
}

/// Excess-risk bounds for a given gap under symmetric noise rate `eta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskGapBound<F = f64> {
    pub eta: F,
    pub classes: usize,
    /// Upper bound on `R^eta(f*) - R^eta(f^)` (noisy risk of the clean minimiser).
    pub upper_noisy: F,
    /// Lower bound on `R(f*) - R(f^)` (clean risk of the noisy minimiser, negated).
    pub lower_clean: F,
}

fn check_classes(c: usize) -> Result<()> {
    if c < 2 {
        return Err(Error::Domain(format!("need at least two classes, got {c}")));
    }
    Ok(())
}

/// Constants for the losses with fixed hyperparameters.
pub fn fixed_constants<F: Real>(hp: &HyperParams<F>, c: usize) -> Result<BoundPair<F>> {
    check_classes(c)?;
    hp.validate()?;
    let cf = F::from_count(c);
    let one = F::one();
    match *hp {
        HyperParams::Gce { q } => BoundPair::new((cf - cf.powf(one - q)) / q, (cf - one) / q),
        HyperParams::Rce { a } => {
            let s = -a * (cf - one);
            BoundPair::new(s, s)
        }
        HyperParams::PolySoft { lambda, d } => {
            let k = cf * (d - one) / d;
            BoundPair::new(k * cf.ln(), k * lambda)
        }
        HyperParams::Js { pi1 } => {
            let u = SimplexVector::uniform(c);
            let e1 = SimplexVector::one_hot(c, 0);
            let mut lo = F::zero();
            let mut hi = F::zero();
            for i in 0..c {
                lo = lo + losses::js(&u, i, pi1)?;
                hi = hi + losses::js(&e1, i, pi1)?;
            }
            BoundPair::new(lo, hi)
        }
        HyperParams::Ce | HyperParams::Mae | HyperParams::Sl { .. } => Err(Error::Unsupported(
            format!("no class-sum bound for {}", hp.kind()),
        )),
    }
}

/// Constants for the losses whose hyperparameters follow the sample margin.
/// `plateau` carries `(lambda, d)` of the positive-margin samples and is only
/// read for PolySoft.
pub fn noise_aware_constants<F: Real>(kind: LossKind, c: usize, plateau: Option<(F, F)>) -> Result<BoundPair<F>> {
    check_classes(c)?;
    let cf = F::from_count(c);
    let one = F::one();
    match kind {
        LossKind::Gce | LossKind::Js => {
            BoundPair::new(cf - one, cf - F::lit(2.0) + one / cf + cf.ln())
        }
        LossKind::PolySoft => {
            let (lambda, d) = plateau.ok_or_else(|| {
                Error::HyperParam("noise-aware PolySoft needs (lambda, d)".into())
            })?;
            HyperParams::PolySoft { lambda, d }.validate()?;
            BoundPair::new(F::zero(), (d - one) * lambda / d)
        }
        other => Err(Error::Unsupported(format!("no noise-aware bound for {other}"))),
    }
}

pub fn risk_gap<F: Real>(bound: &BoundPair<F>, eta: F, c: usize) -> Result<RiskGapBound<F>> {
    check_classes(c)?;
    let cf = F::from_count(c);
    let one = F::one();
    if !(eta >= F::zero() && eta < (cf - one) / cf) {
        return Err(Error::Domain(format!("noise rate {eta} outside [0, {})", (cf - one) / cf)));
    }
    Ok(RiskGapBound {
        eta,
        classes: c,
        upper_noisy: eta * bound.gap / (cf - one),
        lower_clean: -eta * bound.gap / (cf - one - eta * cf),
    })
}

/// `sum_j L(f, j)` with shared hyperparameters.
pub fn class_sum<F: Real>(hp: &HyperParams<F>, f: &SimplexVector<F>) -> Result<F> {
    (0..f.classes()).try_fold(F::zero(), |acc, j| Ok(acc + hp.eval(f, j)?))
}

/// `sum_j L(f, j; hp_j)` with one hyperparameter set per target class.
pub fn class_sum_per_class<F: Real>(hps: &[HyperParams<F>], f: &SimplexVector<F>) -> Result<F> {
    if hps.len() != f.classes() {
        return Err(Error::Shape(format!("{} hyperparameter sets for {} classes", hps.len(), f.classes())));
    }
    hps.iter()
        .enumerate()
        .try_fold(F::zero(), |acc, (j, hp)| Ok(acc + hp.eval(f, j)?))
}

/// Interval for `sum_i (1 - f_i^{q_i}) / q_i` when class `j` is the one with
/// positive margin. Returned as `(min, max)`.
pub fn noise_aware_gce_class_sum_bounds<F: Real>(f: &SimplexVector<F>, j: usize, qs: &[F]) -> Result<(F, F)> {
    let c = f.classes();
    check_classes(c)?;
    if qs.len() != c || j >= c {
        return Err(Error::Shape(format!("{} exponents, {c} classes, index {j}", qs.len())));
    }
    for &q in qs {
        HyperParams::Gce { q }.validate()?;
    }
    let others = qs.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &q)| q);
    let q_min = others.clone().fold(F::infinity(), F::min);
    let q_max = others.fold(F::neg_infinity(), F::max);
    let one = F::one();
    let cm1 = F::from_count(c - 1);
    let fj = f.get(j);
    let own = (one - fj.powf(qs[j])) / qs[j];
    let a = (cm1 - cm1.powf(one - q_min) * (one - fj).powf(q_min)) / q_max + own;
    let b = (cm1 - one + fj) / q_min + own;
    Ok((a.min(b), a.max(b)))
}

/// Whether a gap-curve row uses fixed or margin-dependent hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Fixed,
    NoiseAware,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fixed => "fixed",
            Variant::NoiseAware => "noise_aware",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveParams {
    pub q: f64,
    pub lambda: f64,
    pub d: f64,
    pub pi1: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams { q: 0.7, lambda: 8.0, d: 2.0, pi1: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub classes: usize,
    pub loss: LossKind,
    pub variant: Variant,
    pub bound: BoundPair,
}

/// Gap curves over `classes` for GCE, JS and PolySoft (or just `only`).
///
/// Fixed PolySoft rows are omitted where `lambda < ln c`, since the interval is
/// empty there.
pub fn gap_curve_rows(classes: RangeInclusive<usize>, params: &CurveParams, only: Option<LossKind>) -> Result<Vec<CurveRow>> {
    if classes.is_empty() {
        return Err(Error::Domain("empty class range".into()));
    }
    let losses = [LossKind::Gce, LossKind::Js, LossKind::PolySoft];
    if let Some(k) = only {
        if !losses.contains(&k) {
            return Err(Error::Unsupported(format!("no curve for {k}")));
        }
    }
    let mut rows = Vec::new();
    for c in classes {
        for loss in losses.into_iter().filter(|k| only.is_none_or(|o| o == *k)) {
            let fixed = match loss {
                LossKind::Gce => Some(fixed_constants(&HyperParams::Gce { q: params.q }, c)?),
                LossKind::Js => Some(fixed_constants(&HyperParams::Js { pi1: params.pi1 }, c)?),
                _ => fixed_constants(&HyperParams::PolySoft { lambda: params.lambda, d: params.d }, c).ok(),
            };
            if let Some(bound) = fixed {
                rows.push(CurveRow { classes: c, loss, variant: Variant::Fixed, bound });
            }
            let aware = noise_aware_constants(loss, c, Some((params.lambda, params.d)))?;
            rows.push(CurveRow { classes: c, loss, variant: Variant::NoiseAware, bound: aware });
        }
    }
    Ok(rows)
}

/// Nine significant digits, fixed notation where reasonable.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let e = x.abs().log10().floor() as i32;
    if (-5..9).contains(&e) {
        format!("{:.*}", (8 - e).max(0) as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

pub const CURVE_HEADER: &str = "c,loss_name,variant,c_l,c_u,gap";

pub fn write_curves(rows: &[CurveRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.classes,
            r.loss.name(),
            r.variant.name(),
            sig9(r.bound.c_l),
            sig9(r.bound.c_u),
            sig9(r.bound.gap)
        )?;
    }
    Ok(())
}

pub fn emit_gap_curves(
    classes: RangeInclusive<usize>,
    params: &CurveParams,
    only: Option<LossKind>,
    path: &Path,
) -> Result<Vec<CurveRow>> {
    let rows = gap_curve_rows(classes, params, only)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_curves(&rows, &mut w)?;
    w.flush()?;
    Ok(rows)
}

/// Default RCE constant pair, for convenience.
pub fn rce_constants(c: usize) -> Result<BoundPair> {
    fixed_constants(&HyperParams::Rce { a: RCE_A }, c)
}
