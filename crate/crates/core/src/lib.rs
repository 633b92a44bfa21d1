//! A desk-scale text-to-image pipeline over a synthetic attribute world.
//!
//! The crate builds everything needed to study latent-direction text-to-image
//! synthesis end to end on a CPU in minutes:
//!
//! * [`world`] — a synthetic attribute-image dataset with templated captions,
//!   exact spatial masks, and held-out composition splits.
//! * [`generator`] — a differentiable procedural renderer over a layered
//!   latent space with a known linear entanglement, plus oracle attribute
//!   directions and latent-norm statistics.
//! * [`encoder`] — a small trainable dual encoder mapping images and captions
//!   into one embedding space (separate training/evaluation instances).
//! * [`attrlex`] — attribute vocabulary and rule-based phrase extraction.
//! * [`textdir`] / [`attrdir`] — the sentence-direction and
//!   attribute-direction modules and their training loops.
//! * [`compose`] — inference: compositional attribute adjustment and final
//!   synthesis.
//! * [`metrics`] — R-Precision, a Fréchet-distance image-quality proxy,
//!   unseen-composition classification, and attribute accuracy.
//! * [`pipeline`] — experiment orchestration, checkpointing, and plots.
//!
//! All numeric code is generic over the scalar type through [`scalar::Scalar`]
//! (`f32` or `f64`); concrete aliases for the common types live at the crate
//! root.

pub mod attrdir;
pub mod attrlex;
pub mod compose;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod textdir;
pub mod viz;
pub mod world;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar the shipped pipeline and CLI run at.
pub type Default64 = f64;

pub type Latent32 = tensor::LatentCode<f32>;
pub type Latent64 = tensor::LatentCode<f64>;
pub type Direction32 = tensor::Direction<f32>;
pub type Direction64 = tensor::Direction<f64>;
pub type Image32 = tensor::ImageTensor<f32>;
pub type Image64 = tensor::ImageTensor<f64>;
pub type Embedding32 = tensor::Embedding<f32>;
pub type Embedding64 = tensor::Embedding<f64>;
pub type Generator64 = generator::Generator<f64>;
pub type DualEncoder64 = encoder::DualEncoder<f64>;
pub type TextToDirection64 = textdir::TextToDirection<f64>;
pub type AttributeToDirection64 = attrdir::AttributeToDirection<f64>;
