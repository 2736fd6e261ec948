//! A trainable 3D Siamese text-similarity head.
//!
//! Each sentence arrives as a stack of per-block encoder outputs
//! (`H×L×D`). The network gates and stacks the blocks ([`afe`]), lets the two
//! sentences attend to each other and reweights features ([`attention`]),
//! fuses with multi-branch dilated convolutions or plain pooling
//! ([`fusion`]) and classifies the pair. Everything is differentiated by the
//! small tape in [`graph`] and can be checked with [`gradcheck`].

pub mod afe;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod dd;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod model;
pub mod ops;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, RunConfig};
pub use error::{Error, Result};
pub use graph::{Graph, OpKind, Var};
pub use model::Model;
pub use params::ParamSet;
pub use tensor::{Real, Tensor};
pub mod training;
