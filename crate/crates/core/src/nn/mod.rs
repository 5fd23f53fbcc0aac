//! Minimal convolutional networks: an encoder/decoder generator, a
//! multi-scale patch discriminator, a small classifier, LSGAN losses, Adam and
//! a checkpoint container. Everything runs in `f64` on the CPU.

mod checkpoint;
mod classifier;
mod discriminator;
mod generator;
pub mod layers;
mod loss;
mod optim;
mod tensor;

use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use classifier::Classifier;
pub use discriminator::{DiscGrads, DiscTrace, Discriminator, DiscriminatorConfig, LayerId};
pub use generator::{GenTrace, Generator, GeneratorConfig, MIN_GENERATOR_EXTENT};
pub use loss::{loss_disc, loss_gen, lsgan_term, PatchCritic};
pub use optim::Adam;
pub use tensor::Tensor;

/// SHA-256 over the little-endian bytes of every parameter, hex encoded.
pub fn param_digest(params: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update((p.len() as u64).to_le_bytes());
        for v in p.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Zeroed gradient buffers matching `params`.
pub fn zero_grads(params: &[&[f64]]) -> Vec<Vec<f64>> {
    params.iter().map(|p| vec![0.0; p.len()]).collect()
}

pub(crate) fn add_grads(acc: &mut [Vec<f64>], other: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

pub(crate) fn scale_grads(g: &mut [Vec<f64>], s: f64) {
    g.iter_mut().flatten().for_each(|v| *v *= s);
}
