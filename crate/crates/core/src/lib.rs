//! Robust classification losses with instance-dependent hyperparameters
//! predicted by a meta-learned adjuster.
//!
//! The closed-form losses and bounds are generic over the scalar type
//! ([`Real`]); the tape-based training machinery runs in `f64`.

// `!(a <= b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjuster;
pub mod autodiff;
pub mod bounds;
mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kmeans;
pub mod losses;
pub mod meta_train;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adjuster::{AdjusterConfig, AdjusterParams};
pub use autodiff::{hypergradient, HypergradMethod, Tape, Var};
pub use data::LabeledDataset;
pub use error::{Error, Result};
pub use losses::{HyperParams, LossKind, SimplexVector};
pub use meta_train::{TrainConfig, TrainState};
pub use nn::{ClassifierParams, Prediction};
pub use noise::{NoiseKind, NoiseSpec};
pub use scalar::Real;
pub use tensor::Tensor;

pub type Simplex = SimplexVector<f64>;
pub type Simplex32 = SimplexVector<f32>;
pub type Hyper = HyperParams<f64>;
pub type Hyper32 = HyperParams<f32>;
pub type Bounds = bounds::BoundPair<f64>;
pub type Bounds32 = bounds::BoundPair<f32>;
