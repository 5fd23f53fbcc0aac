//! Disentangling lens occlusions from scene translation in unpaired
//! image-to-image GAN training.
//!
//! A differentiable occlusion model (raindrops, dirt, alpha-blended overlays)
//! is composited on top of generator outputs before they reach the
//! discriminator, so the generator only has to learn the scene mapping. The
//! occluder's physical parameters are regressed adversarially through a
//! frozen discriminator, and injection is restricted to low domain-gap regions
//! located with layer-averaged GradCAM.

pub mod error;
pub mod estimation;
pub mod guidance;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod occlusion;
pub mod pipeline;

pub use error::{Error, Result};
