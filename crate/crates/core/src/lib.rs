//! Adversarial multi-scale image synthesis on a small reverse-mode autodiff
//! engine: DCGAN, LAPGAN and DDGAN generators, histogram metrics, a
//! procedural lesion dataset, and a class-imbalance experiment.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod usecase;
pub mod zoo;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use rng::Rng;
pub use tensor::{Float, Tensor};
pub use zoo::{GanModel, ModelKind, PyramidSpec};
