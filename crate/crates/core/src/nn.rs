//! Fully connected ReLU classifier.

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{Reader, Writer};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{softmax, Real};
use crate::tensor::Tensor;

/// Hidden widths of the default network.
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

const MAGIC: &str = "narl-classifier 1";

/// Affine map `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Weights of an MLP with ReLU between layers and raw logits at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    layers: Vec<Layer>,
}

/// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(r: &mut rng::Rng, fan_in: usize, fan_out: usize) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| r.random_range(-limit..=limit)).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

impl ClassifierParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            let (_, out) = l.weight.dims2()?;
            if l.bias.shape() != [1, out] {
                return Err(Error::Shape(format!("layer {i}: bias shape {:?}", l.bias.shape())));
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs, previous layer gives {}",
                    l.inputs(),
                    layers[i - 1].outputs()
                )));
            }
        }
        Ok(ClassifierParams { layers })
    }

    /// Seeded fan-based init with zero biases. `sizes` lists every width from
    /// input to classes.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let mut r = rng::seeded(seed);
        let layers = sizes
            .windows(2)
            .map(|w| Ok(Layer { weight: glorot(&mut r, w[0], w[1])?, bias: Tensor::zeros(vec![1, w[1]])? }))
            .collect::<Result<_>>()?;
        Self::from_layers(layers)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Ok(Layer { weight: Tensor::zeros(vec![w[0], w[1]])?, bias: Tensor::zeros(vec![1, w[1]])? }))
            .collect::<Result<_>>()?;
        Self::from_layers(layers)
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("bad layer sizes {sizes:?}")));
        }
        Ok(())
    }

    /// Input width, hidden widths and class count.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs()).chain(self.layers.iter().map(Layer::outputs)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Flattened `[W1, b1, W2, b2, ...]`.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    /// Inverse of [`tensors`](Self::tensors); shapes must match `self`.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != 2 * self.layers.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", 2 * self.layers.len(), tensors.len())));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (weight, bias) = (it.next().unwrap(), it.next().unwrap());
            if weight.shape() != l.weight.shape() || bias.shape() != l.bias.shape() {
                return Err(Error::Shape("parameter shapes changed".into()));
            }
            layers.push(Layer { weight, bias });
        }
        Ok(ClassifierParams { layers })
    }

    /// Logits for every row of `x` (`n x d`).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.dims2()?;
        if d != self.input_dim() {
            return Err(Error::Shape(format!("input has {d} features, network expects {}", self.input_dim())));
        }
        let ones = Tensor::ones(vec![n, 1])?;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.weight)?.add(&ones.matmul(&l.bias)?)?;
            if i + 1 < self.layers.len() {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let logits = self.logits(&Tensor::row(x)?)?.into_data();
        Ok(Prediction::from_logits(logits))
    }

    /// Places the parameters on `tape`, trainable when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { tape.param(t) } else { tape.constant(t) })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Text form: a magic line, the layer count, then each weight and bias as
    /// a `rows cols` line followed by row-major values.
    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.line(MAGIC);
        w.line(format!("layers {}", self.layers.len()));
        for l in &self.layers {
            w.matrix(&l.weight);
            w.matrix(&l.bias);
        }
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        if r.next_line()? != MAGIC {
            return Err(r.error("not a classifier checkpoint"));
        }
        let count = r.keyed_usize("layers")?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(Layer { weight: r.matrix()?, bias: r.matrix()? });
        }
        r.expect_end()?;
        Self::from_layers(layers)
    }
}

/// Logits of every row of `x`, recorded on the tape. `params` is the list
/// returned by [`ClassifierParams::register`].
pub fn forward(tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
    let layers = params.len() / 2;
    let mut h = x;
    for i in 0..layers {
        h = tape.matmul(h, params[2 * i])?;
        h = tape.add_row(h, params[2 * i + 1])?;
        if i + 1 < layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        Prediction { logits, probs }
    }

    pub fn margin(&self, y: usize) -> f64 {
        margin(&self.logits, y)
    }
}

/// `logits[y] - max_{j != y} logits[j]`.
pub fn margin<F: Real>(logits: &[F], y: usize) -> F {
    let best_other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &v)| v)
        .fold(F::neg_infinity(), F::max);
    logits[y] - best_other
}

/// Margins of every row of an `n x c` logit matrix against its label.
pub fn margins(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (n, _) = logits.dims2()?;
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} logit rows, {} labels", labels.len())));
    }
    Ok((0..n).map(|i| margin(logits.row_slice(i), labels[i])).collect())
}
