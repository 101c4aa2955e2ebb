//! Factorized 3-D scene representations from a single image.
//!
//! The pipeline: a convolutional encoder with background-aware slot
//! attention turns one posed view into one background latent and K object
//! latents; each latent conditions a small radiance-field decoder; component
//! fields are density-blended and volume-rendered into images, segmentation
//! maps, and novel views. Training is purely self-supervised from multi-view
//! reconstruction, with optional perceptual and adversarial terms. Slot
//! latents double as handles for scene editing (move / remove / background
//! swap).
//!
//! Everything numeric runs on the crate's own reverse-mode autodiff tensors
//! ([`tensor`]), generic over `f32`/`f64`.

pub mod error;
pub mod real;
pub mod rng;
pub mod tensor;

pub use error::{Result, UorfError};
pub use real::Real;
pub use tensor::Tensor;
