//! Gradient of an outer (meta) loss with respect to the parameters of an inner
//! loss, taken through one SGD step on the inner loss:
//!
//! ```text
//! w~(theta) = w - alpha * grad_w L_inner(w; theta)
//! result    = grad_theta L_meta(w~(theta))
//!           = -alpha * (d^2 L_inner / d theta d w) . grad_w~ L_meta
//! ```

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the mixed second derivative is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HypergradMethod {
    /// Differentiate through the recorded update step.
    #[default]
    Exact,
    /// Two-sided difference of `grad_theta L_inner` at `w +- r v`, with
    /// `v = grad L_meta(w~)` and `r = 0.01 / |v|`.
    FiniteDifference,
}

fn relabel(err: Error, stage: &str) -> Error {
    match err {
        Error::Numerical { stage: inner } => Error::numerical(format!("{stage} ({inner})")),
        other => other,
    }
}

fn check(values: &[Tensor], stage: &str) -> Result<()> {
    if values.iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        Err(Error::numerical(stage))
    }
}

/// `inner(tape, w, theta)` must return the scalar inner loss (already averaged
/// over its batch); `meta(tape, w)` the scalar meta loss.
pub fn hypergradient<I, M>(
    w: &[Tensor],
    theta: &[Tensor],
    alpha: f64,
    inner: I,
    meta: M,
    method: HypergradMethod,
) -> Result<Vec<Tensor>>
where
    I: Fn(&mut Tape, &[Var], &[Var]) -> Result<Var>,
    M: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("step size must be positive, got {alpha}")));
    }
    match method {
        HypergradMethod::Exact => exact(w, theta, alpha, &inner, &meta),
        HypergradMethod::FiniteDifference => finite_difference(w, theta, alpha, &inner, &meta),
    }
}

fn exact<I, M>(w: &[Tensor], theta: &[Tensor], alpha: f64, inner: &I, meta: &M) -> Result<Vec<Tensor>>
where
    I: Fn(&mut Tape, &[Var], &[Var]) -> Result<Var>,
    M: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let wv: Vec<Var> = w.iter().map(|t| tape.param(t.clone())).collect();
    let tv: Vec<Var> = theta.iter().map(|t| tape.param(t.clone())).collect();

    let loss = inner(&mut tape, &wv, &tv).map_err(|e| relabel(e, "inner loss"))?;
    let gw = tape.grad_graph(loss, &wv).map_err(|e| relabel(e, "inner gradient"))?;
    check(&tape.values(&gw), "inner gradient")?;

    let mut lookahead = Vec::with_capacity(wv.len());
    for (&p, &g) in wv.iter().zip(&gw) {
        let step = tape.mul_scalar(g, alpha)?;
        lookahead.push(tape.sub(p, step).map_err(|e| relabel(e, "lookahead"))?);
    }
    let meta_loss = meta(&mut tape, &lookahead).map_err(|e| relabel(e, "meta loss"))?;
    let grads = tape.gradients(meta_loss, &tv).map_err(|e| relabel(e, "hypergradient"))?;
    Ok(grads.collect(&tv))
}

fn inner_theta_grad<I>(w: &[Tensor], theta: &[Tensor], inner: &I) -> Result<Vec<Tensor>>
where
    I: Fn(&mut Tape, &[Var], &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let wv: Vec<Var> = w.iter().map(|t| tape.constant(t.clone())).collect();
    let tv: Vec<Var> = theta.iter().map(|t| tape.param(t.clone())).collect();
    let loss = inner(&mut tape, &wv, &tv).map_err(|e| relabel(e, "inner loss"))?;
    let g = tape.gradients(loss, &tv).map_err(|e| relabel(e, "inner theta gradient"))?;
    Ok(g.collect(&tv))
}

fn finite_difference<I, M>(
    w: &[Tensor],
    theta: &[Tensor],
    alpha: f64,
    inner: &I,
    meta: &M,
) -> Result<Vec<Tensor>>
where
    I: Fn(&mut Tape, &[Var], &[Var]) -> Result<Var>,
    M: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let wv: Vec<Var> = w.iter().map(|t| tape.param(t.clone())).collect();
    let tv: Vec<Var> = theta.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = inner(&mut tape, &wv, &tv).map_err(|e| relabel(e, "inner loss"))?;
    let gw = tape.gradients(loss, &wv).map_err(|e| relabel(e, "inner gradient"))?.collect(&wv);

    let lookahead: Vec<Tensor> = w
        .iter()
        .zip(&gw)
        .map(|(p, g)| p.sub(&g.scale(alpha)))
        .collect::<Result<_>>()?;
    check(&lookahead, "lookahead")?;

    let mut tape = Tape::new();
    let lv: Vec<Var> = lookahead.iter().map(|t| tape.param(t.clone())).collect();
    let meta_loss = meta(&mut tape, &lv).map_err(|e| relabel(e, "meta loss"))?;
    let v = tape.gradients(meta_loss, &lv).map_err(|e| relabel(e, "meta gradient"))?.collect(&lv);

    let norm = v.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return theta.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
    }
    let r = 0.01 / norm;
    let shifted = |sign: f64| -> Result<Vec<Tensor>> {
        w.iter().zip(&v).map(|(p, d)| p.add(&d.scale(sign * r))).collect()
    };
    let plus = inner_theta_grad(&shifted(1.0)?, theta, inner)?;
    let minus = inner_theta_grad(&shifted(-1.0)?, theta, inner)?;
    let out: Vec<Tensor> = plus
        .iter()
        .zip(&minus)
        .map(|(a, b)| Ok(a.sub(b)?.scale(-alpha / (2.0 * r))))
        .collect::<Result<_>>()?;
    check(&out, "hypergradient")?;
    Ok(out)
}
