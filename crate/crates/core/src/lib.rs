//! Evaluation toolkit for generated image sets.
//!
//! Encodes real and generated images with a from-scratch denoising
//! autoencoder and measures distribution distances (Fréchet, kernel MMD,
//! topology) between the resulting latent feature sets. Ships the
//! disturbance operators, experiment protocols (sensitivity, consistency,
//! ranking) and Grad-CAM attention maps built on top of those pieces.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod critics;
pub mod dae;
pub mod disturb;
pub mod error;
pub mod features;
pub mod featfile;
pub mod gradcam;
pub mod harness;
pub mod imageio;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
pub use features::FeatureSet;
pub use tensor::Tensor;
