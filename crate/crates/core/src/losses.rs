//! Robust classification losses with per-sample hyperparameters.
//!
//! Two evaluation paths are provided. The closed forms on [`SimplexVector`]
//! are generic over [`Real`] and serve the bound computations and the
//! finite-difference oracles. The tape forms ([`per_sample_loss`],
//! [`batch_loss`]) take a batch of softmax outputs and hyperparameter columns
//! and are differentiable with respect to both.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Constant of the reverse cross entropy term.
pub const RCE_A: f64 = -4.0;

/// Lower clamp applied to the labelled-class probability before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Ce,
    Mae,
    Gce,
    Rce,
    Sl,
    PolySoft,
    Js,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Ce,
        LossKind::Mae,
        LossKind::Gce,
        LossKind::Rce,
        LossKind::Sl,
        LossKind::PolySoft,
        LossKind::Js,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Mae => "mae",
            LossKind::Gce => "gce",
            LossKind::Rce => "rce",
            LossKind::Sl => "sl",
            LossKind::PolySoft => "polysoft",
            LossKind::Js => "js",
        }
    }

    /// Number of hyperparameters an adjuster predicts for this loss.
    pub fn tunable_count(self) -> usize {
        match self {
            LossKind::Gce | LossKind::Js => 1,
            LossKind::Sl | LossKind::PolySoft => 2,
            LossKind::Ce | LossKind::Mae | LossKind::Rce => 0,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}`")))
    }
}

/// Hyperparameters of one loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HyperParams<F = f64> {
    Ce,
    Mae,
    Gce { q: F },
    Rce { a: F },
    Sl { gamma1: F, gamma2: F },
    PolySoft { lambda: F, d: F },
    Js { pi1: F },
}

impl<F: Real> HyperParams<F> {
    pub fn kind(&self) -> LossKind {
        match self {
            HyperParams::Ce => LossKind::Ce,
            HyperParams::Mae => LossKind::Mae,
            HyperParams::Gce { .. } => LossKind::Gce,
            HyperParams::Rce { .. } => LossKind::Rce,
            HyperParams::Sl { .. } => LossKind::Sl,
            HyperParams::PolySoft { .. } => LossKind::PolySoft,
            HyperParams::Js { .. } => LossKind::Js,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = F::zero();
        let one = F::one();
        let ok = match *self {
            HyperParams::Ce | HyperParams::Mae => true,
            HyperParams::Gce { q } => q > zero && q <= one,
            HyperParams::Rce { a } => a < zero,
            HyperParams::Sl { gamma1, gamma2 } => gamma1 > zero && gamma2 > zero,
            HyperParams::PolySoft { lambda, d } => lambda > zero && d > one,
            HyperParams::Js { pi1 } => pi1 > zero && pi1 < one,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::HyperParam(format!("{self:?}")))
        }
    }

    /// The tunable values in adjuster output order.
    pub fn tunables(&self) -> Vec<F> {
        match *self {
            HyperParams::Gce { q } => vec![q],
            HyperParams::Sl { gamma1, gamma2 } => vec![gamma1, gamma2],
            HyperParams::PolySoft { lambda, d } => vec![lambda, d],
            HyperParams::Js { pi1 } => vec![pi1],
            HyperParams::Ce | HyperParams::Mae | HyperParams::Rce { .. } => Vec::new(),
        }
    }

    pub fn eval(&self, f: &SimplexVector<F>, y: usize) -> Result<F> {
        match *self {
            HyperParams::Ce => Ok(ce(f, y)),
            HyperParams::Mae => Ok(mae(f, y)),
            HyperParams::Gce { q } => gce(f, y, q),
            HyperParams::Rce { a } => rce(f, y, a),
            HyperParams::Sl { gamma1, gamma2 } => sl(f, y, gamma1, gamma2),
            HyperParams::PolySoft { lambda, d } => polysoft(f, y, lambda, d),
            HyperParams::Js { pi1 } => js(f, y, pi1),
        }
    }
}

/// A probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVector<F = f64> {
    entries: Vec<F>,
}

impl<F: Real> SimplexVector<F> {
    pub fn new(entries: Vec<F>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Shape("empty probability vector".into()));
        }
        let tol = F::lit(1e-9).max(F::epsilon() * F::from_count(8 * entries.len()));
        let total: F = entries.iter().copied().sum();
        if entries.iter().any(|&p| !(p >= F::zero())) || (total - F::one()).abs() > tol {
            return Err(Error::Domain(format!("not a probability vector (sum {total})")));
        }
        Ok(SimplexVector { entries })
    }

    pub fn one_hot(classes: usize, j: usize) -> Self {
        let mut entries = vec![F::zero(); classes];
        entries[j] = F::one();
        SimplexVector { entries }
    }

    pub fn uniform(classes: usize) -> Self {
        SimplexVector { entries: vec![F::one() / F::from_count(classes); classes] }
    }

    pub fn from_logits(logits: &[F]) -> Self {
        SimplexVector { entries: crate::scalar::softmax(logits) }
    }

    pub fn probs(&self) -> &[F] {
        &self.entries
    }

    pub fn classes(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, j: usize) -> F {
        self.entries[j]
    }
}

fn floor_prob<F: Real>(p: F) -> F {
    p.max(F::lit(PROB_FLOOR)).min(F::one())
}

pub fn ce<F: Real>(f: &SimplexVector<F>, y: usize) -> F {
    -floor_prob(f.get(y)).ln()
}

/// `|e_y - f|_1`.
pub fn mae<F: Real>(f: &SimplexVector<F>, y: usize) -> F {
    F::lit(2.0) * (F::one() - f.get(y))
}

pub fn gce<F: Real>(f: &SimplexVector<F>, y: usize, q: F) -> Result<F> {
    HyperParams::Gce { q }.validate()?;
    Ok((F::one() - f.get(y).powf(q)) / q)
}

pub fn rce<F: Real>(f: &SimplexVector<F>, y: usize, a: F) -> Result<F> {
    HyperParams::Rce { a }.validate()?;
    let off: F = f.probs().iter().enumerate().filter(|&(j, _)| j != y).map(|(_, &p)| p).sum();
    Ok(-a * off)
}

/// Cross entropy plus reverse cross entropy with constant [`RCE_A`].
pub fn sl<F: Real>(f: &SimplexVector<F>, y: usize, gamma1: F, gamma2: F) -> Result<F> {
    HyperParams::Sl { gamma1, gamma2 }.validate()?;
    Ok(gamma1 * ce(f, y) + gamma2 * rce(f, y, F::lit(RCE_A))?)
}

pub fn polysoft<F: Real>(f: &SimplexVector<F>, y: usize, lambda: F, d: F) -> Result<F> {
    HyperParams::PolySoft { lambda, d }.validate()?;
    let l = ce(f, y);
    let plateau = (d - F::one()) * lambda / d;
    if l < lambda {
        Ok(plateau * (F::one() - (F::one() - l / lambda).powf(d / (d - F::one()))))
    } else {
        Ok(plateau)
    }
}

/// Weighted Jensen-Shannon divergence between `e_y` and `f`, normalised by
/// `-(1 - pi1) ln(1 - pi1)`; the second weight is `1 - pi1`.
pub fn js<F: Real>(f: &SimplexVector<F>, y: usize, pi1: F) -> Result<F> {
    HyperParams::Js { pi1 }.validate()?;
    let pi2 = F::one() - pi1;
    let mix = |j: usize| {
        let target = if j == y { pi1 } else { F::zero() };
        target + pi2 * f.get(j)
    };
    let kl_target = -mix(y).ln();
    let mut kl_pred = F::zero();
    for (j, &p) in f.probs().iter().enumerate() {
        if p > F::zero() {
            let num = if j == y { floor_prob(p) } else { p };
            kl_pred = kl_pred + p * (num / mix(j)).ln();
        }
    }
    let z = -pi2 * pi2.ln();
    Ok((pi1 * kl_target + pi2 * kl_pred) / z)
}

/// Per-sample hyperparameters as `n × 1` tape columns.
#[derive(Clone, Copy, Debug)]
pub enum HyperColumns {
    Ce,
    Mae,
    Rce { a: f64 },
    Gce { q: Var },
    Sl { gamma1: Var, gamma2: Var },
    PolySoft { lambda: Var, d: Var },
    Js { pi1: Var },
}

impl HyperColumns {
    pub fn kind(&self) -> LossKind {
        match self {
            HyperColumns::Ce => LossKind::Ce,
            HyperColumns::Mae => LossKind::Mae,
            HyperColumns::Rce { .. } => LossKind::Rce,
            HyperColumns::Gce { .. } => LossKind::Gce,
            HyperColumns::Sl { .. } => LossKind::Sl,
            HyperColumns::PolySoft { .. } => LossKind::PolySoft,
            HyperColumns::Js { .. } => LossKind::Js,
        }
    }

    /// The tunable columns in adjuster output order.
    pub fn columns(&self) -> Vec<Var> {
        match *self {
            HyperColumns::Gce { q } => vec![q],
            HyperColumns::Sl { gamma1, gamma2 } => vec![gamma1, gamma2],
            HyperColumns::PolySoft { lambda, d } => vec![lambda, d],
            HyperColumns::Js { pi1 } => vec![pi1],
            _ => Vec::new(),
        }
    }

    /// Constant columns from a list of per-sample hyperparameters of one kind.
    pub fn constants(tape: &mut Tape, params: &[HyperParams]) -> Result<Self> {
        let first = params.first().ok_or_else(|| Error::Shape("empty hyperparameter list".into()))?;
        let kind = first.kind();
        for p in params {
            p.validate()?;
            if p.kind() != kind {
                return Err(Error::Config(format!("mixed loss kinds {kind} and {}", p.kind())));
            }
        }
        let mut column = |k: usize| -> Result<Var> {
            let vals: Vec<f64> = params.iter().map(|p| p.tunables()[k]).collect();
            Ok(tape.constant(Tensor::column(&vals)?))
        };
        Ok(match *first {
            HyperParams::Ce => HyperColumns::Ce,
            HyperParams::Mae => HyperColumns::Mae,
            HyperParams::Rce { a } => {
                if params.iter().any(|p| *p != *first) {
                    return Err(Error::Config("the RCE constant must be shared".into()));
                }
                HyperColumns::Rce { a }
            }
            HyperParams::Gce { .. } => HyperColumns::Gce { q: column(0)? },
            HyperParams::Sl { .. } => HyperColumns::Sl { gamma1: column(0)?, gamma2: column(1)? },
            HyperParams::PolySoft { .. } => {
                HyperColumns::PolySoft { lambda: column(0)?, d: column(1)? }
            }
            HyperParams::Js { .. } => HyperColumns::Js { pi1: column(0)? },
        })
    }
}

fn tape_ce(tape: &mut Tape, fy: Var) -> Result<Var> {
    let c = tape.clamp(fy, PROB_FLOOR, 1.0)?;
    let l = tape.log(c)?;
    tape.neg(l)
}

fn tape_rce(tape: &mut Tape, probs: Var, targets: Var, a: f64) -> Result<Var> {
    let off_mask = {
        let t = tape.value(targets).map(|v| 1.0 - v);
        tape.constant(t)
    };
    let off = tape.mul(probs, off_mask)?;
    let off = tape.sum_rows(off)?;
    tape.mul_scalar(off, -a)
}

/// Loss of every row of `probs` (`n × c`) against one-hot `targets`, as an
/// `n × 1` column.
pub fn per_sample_loss(tape: &mut Tape, probs: Var, targets: Var, hp: &HyperColumns) -> Result<Var> {
    if tape.value(probs).shape() != tape.value(targets).shape() {
        return Err(Error::Shape("predictions and targets differ in shape".into()));
    }
    let (n, _) = tape.value(probs).dims2()?;
    for col in hp.columns() {
        if tape.value(col).shape() != [n, 1] {
            return Err(Error::Shape(format!(
                "hyperparameter column has shape {:?}, expected [{n}, 1]",
                tape.value(col).shape()
            )));
        }
    }
    let picked = tape.mul(probs, targets)?;
    let fy = tape.sum_rows(picked)?;
    match *hp {
        HyperColumns::Ce => tape_ce(tape, fy),
        HyperColumns::Mae => {
            let t = tape.mul_scalar(fy, -2.0)?;
            tape.add_scalar(t, 2.0)
        }
        HyperColumns::Rce { a } => {
            if a >= 0.0 {
                return Err(Error::HyperParam(format!("RCE constant {a} must be negative")));
            }
            tape_rce(tape, probs, targets, a)
        }
        HyperColumns::Gce { q } => {
            let c = tape.clamp(fy, f64::MIN_POSITIVE, 1.0)?;
            let l = tape.log(c)?;
            let ql = tape.mul(q, l)?;
            let pw = tape.exp(ql)?;
            let num = tape.rsub_scalar(1.0, pw)?;
            tape.div(num, q)
        }
        HyperColumns::Sl { gamma1, gamma2 } => {
            let c = tape_ce(tape, fy)?;
            let r = tape_rce(tape, probs, targets, RCE_A)?;
            let a = tape.mul(gamma1, c)?;
            let b = tape.mul(gamma2, r)?;
            tape.add(a, b)
        }
        HyperColumns::PolySoft { lambda, d } => {
            let l = tape_ce(tape, fy)?;
            let ratio = tape.div(l, lambda)?;
            let ratio = tape.clamp(ratio, 0.0, 1.0)?;
            let base = tape.rsub_scalar(1.0, ratio)?;
            // past the plateau the base is 0; keep the log finite there
            let base = tape.clamp(base, 1e-300, 1.0)?;
            let dm1 = tape.add_scalar(d, -1.0)?;
            let expo = tape.div(d, dm1)?;
            let lb = tape.log(base)?;
            let el = tape.mul(expo, lb)?;
            let pw = tape.exp(el)?;
            let shape = tape.rsub_scalar(1.0, pw)?;
            let coef = tape.mul(dm1, lambda)?;
            let coef = tape.div(coef, d)?;
            tape.mul(coef, shape)
        }
        HyperColumns::Js { pi1 } => {
            // every non-target coordinate contributes f_j ln(1/pi2), so the
            // divergence depends on f_y alone
            let pi2 = tape.rsub_scalar(1.0, pi1)?;
            let pf = tape.mul(pi2, fy)?;
            let my = tape.add(pi1, pf)?;
            let log_my = tape.log(my)?;
            let log_pi2 = tape.log(pi2)?;
            let fyc = tape.clamp(fy, PROB_FLOOR, 1.0)?;
            let log_fy = tape.log(fyc)?;

            let kl_target = tape.neg(log_my)?;
            let rest = tape.rsub_scalar(1.0, fy)?;
            let t1 = tape.mul(rest, log_pi2)?;
            let diff = tape.sub(log_fy, log_my)?;
            let t2 = tape.mul(fy, diff)?;
            let kl_pred = tape.sub(t2, t1)?;

            let a = tape.mul(pi1, kl_target)?;
            let b = tape.mul(pi2, kl_pred)?;
            let num = tape.add(a, b)?;
            let z = tape.mul(pi2, log_pi2)?;
            let z = tape.neg(z)?;
            tape.div(num, z)
        }
    }
}

/// Mean loss of a batch whose samples each carry their own hyperparameters.
pub fn batch_loss_columns(tape: &mut Tape, probs: Var, targets: Var, hp: &HyperColumns) -> Result<Var> {
    let per = per_sample_loss(tape, probs, targets, hp)?;
    tape.mean(per)
}

/// Mean loss of a batch with explicit per-sample hyperparameters.
pub fn batch_loss(tape: &mut Tape, probs: Var, labels: &[usize], params: &[HyperParams]) -> Result<Var> {
    let (n, c) = tape.value(probs).dims2()?;
    if labels.len() != n || params.len() != n {
        return Err(Error::Shape(format!(
            "{n} predictions, {} labels, {} hyperparameter sets",
            labels.len(),
            params.len()
        )));
    }
    let targets = tape.constant(Tensor::one_hot(labels, c)?);
    let hp = HyperColumns::constants(tape, params)?;
    batch_loss_columns(tape, probs, targets, &hp)
}
