use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, Layer, Sequential};
use super::{Adam, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;

/// Small convolutional classifier. Its globally pooled features double as a
/// feature extractor for the distribution metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    net: Sequential,
    classes: usize,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Classifier {
    pub const FEATURES: usize = 16;

    pub fn new(channels: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Self::FEATURES;
        let net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(channels, 8, 3, 2, 1, 0.2, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new(8, f, 3, 2, 1, 0.15, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new(f, f, 3, 1, 1, 0.1, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::GlobalAvgPool,
            Layer::Conv(Conv2d::new(f, classes, 1, 1, 0, 0.1, &mut rng)),
        ]);
        Classifier { net, classes }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Pooled penultimate features.
    pub fn features(&self, x: &Image) -> Vec<f64> {
        let tr = self.net.forward_trace(&Tensor::centered(x));
        tr.inputs[self.net.layers.len() - 1].data.clone()
    }

    pub fn probabilities(&self, x: &Image) -> Vec<f64> {
        softmax(&self.net.forward(&Tensor::centered(x)).data)
    }

    /// Mini-batch cross-entropy training with Adam; returns the final epoch's
    /// mean loss.
    pub fn train(&mut self, images: &[Image], labels: &[usize], epochs: usize, lr: f64, seed: u64) -> Result<f64> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(Error::Contract("classifier training needs one label per image".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Contract(format!("label {l} out of {} classes", self.classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(lr, 0.9, 0.999);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut last = 0.0;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(8) {
                let mut grads: Vec<Vec<f64>> = self.net.params().iter().map(|p| vec![0.0; p.len()]).collect();
                for &i in chunk {
                    let tr = self.net.forward_trace(&Tensor::centered(&images[i]));
                    let p = softmax(&tr.output.data);
                    total -= p[labels[i]].max(1e-300).ln();
                    let mut g = tr.output.clone();
                    for (k, gv) in g.data.iter_mut().enumerate() {
                        *gv = (p[k] - if k == labels[i] { 1.0 } else { 0.0 }) / chunk.len() as f64;
                    }
                    self.net.backward(&tr, g, Some(&mut grads), false, None);
                }
                opt.step(self.net.params_mut(), &grads);
            }
            last = total / images.len() as f64;
        }
        Ok(last)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.net.params_mut()
    }
}
