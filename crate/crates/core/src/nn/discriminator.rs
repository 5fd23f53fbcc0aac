use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, Layer, SeqTrace, Sequential};
use super::loss::PatchCritic;
use super::Tensor;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub nf: usize,
    /// Number of input scales (full, half, ...); at least 2.
    pub scales: usize,
    pub init_std: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            channels: 3,
            nf: 16,
            scales: 2,
            init_std: 0.1,
        }
    }
}

/// Named activation inside the discriminator (output of a nonlinearity).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerId {
    pub name: String,
    pub scale: usize,
    pub index: usize,
}

/// Multi-scale fully-convolutional patch discriminator.
///
/// Scale `s` sees the input average-pooled `s` times and emits its own
/// patch score map.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    scales: Vec<Sequential>,
    registry: Vec<LayerId>,
}

#[derive(Clone, Debug)]
pub struct DiscTrace {
    scales: Vec<SeqTrace>,
}

impl DiscTrace {
    pub fn scores(&self) -> Vec<Tensor> {
        self.scales.iter().map(|t| t.output.clone()).collect()
    }
}

/// Result of a discriminator backward pass.
#[derive(Clone, Debug, Default)]
pub struct DiscGrads {
    pub input: Option<Image>,
    /// Per scale, per layer gradient with respect to that layer's output.
    pub activations: Option<Vec<Vec<Option<Tensor>>>>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Self {
        assert!(cfg.scales >= 1, "at least one discriminator scale");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nf, std) = (cfg.nf, cfg.init_std);
        let mut scales = Vec::new();
        let mut registry = Vec::new();
        for s in 0..cfg.scales {
            let mut layers = vec![Layer::AvgPool2; s];
            layers.extend([
                Layer::Conv(Conv2d::new(cfg.channels, nf, 4, 2, 1, std, &mut rng)),
                Layer::LeakyRelu(0.2),
                Layer::Conv(Conv2d::new(nf, 2 * nf, 4, 2, 1, std, &mut rng)),
                Layer::LeakyRelu(0.2),
                Layer::Conv(Conv2d::new(2 * nf, 4 * nf, 3, 1, 1, std, &mut rng)),
                Layer::LeakyRelu(0.2),
                Layer::Conv(Conv2d::new(4 * nf, 1, 3, 1, 1, std, &mut rng)),
            ]);
            let mut j = 0;
            for (index, l) in layers.iter().enumerate() {
                if l.is_activation() {
                    registry.push(LayerId {
                        name: format!("s{s}.act{j}"),
                        scale: s,
                        index,
                    });
                    j += 1;
                }
            }
            scales.push(Sequential::new(layers));
        }
        Discriminator { cfg, scales, registry }
    }

    /// Builds a discriminator from explicit per-scale networks. Every
    /// nonlinearity output is registered for activation capture.
    pub fn from_scales(cfg: DiscriminatorConfig, scales: Vec<Sequential>) -> Self {
        let mut registry = Vec::new();
        for (s, seq) in scales.iter().enumerate() {
            let mut j = 0;
            for (index, l) in seq.layers.iter().enumerate() {
                if l.is_activation() {
                    registry.push(LayerId {
                        name: format!("s{s}.act{j}"),
                        scale: s,
                        index,
                    });
                    j += 1;
                }
            }
        }
        Discriminator { cfg, scales, registry }
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[LayerId] {
        &self.registry
    }

    pub fn layer(&self, name: &str) -> Result<&LayerId> {
        self.registry
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Registry(name.to_string()))
    }

    fn check(&self, x: &Image) -> Result<()> {
        if x.channels() != self.cfg.channels {
            return Err(Error::Contract(format!(
                "discriminator expects {} channels, got {}",
                self.cfg.channels,
                x.channels()
            )));
        }
        let f = 1usize << (self.scales.len() + 1);
        if !x.height().is_multiple_of(f) || !x.width().is_multiple_of(f) {
            return Err(Error::Contract(format!(
                "discriminator input {}x{} must be a multiple of {f}",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Image) -> Result<Vec<Tensor>> {
        self.check(x)?;
        let t = Tensor::centered(x);
        Ok(self.scales.iter().map(|s| s.forward(&t)).collect())
    }

    pub fn forward_trace(&self, x: &Image) -> Result<DiscTrace> {
        self.check(x)?;
        let t = Tensor::centered(x);
        Ok(DiscTrace {
            scales: self.scales.iter().map(|s| s.forward_trace(&t)).collect(),
        })
    }

    pub fn activation<'a>(&self, trace: &'a DiscTrace, name: &str) -> Result<&'a Tensor> {
        let id = self.layer(name)?;
        Ok(trace.scales[id.scale].activation(id.index))
    }

    /// Backpropagates per-scale score gradients.
    pub fn backward(
        &self,
        trace: &DiscTrace,
        grad_scores: Vec<Tensor>,
        mut grads: Option<&mut [Vec<f64>]>,
        need_input: bool,
        capture: bool,
    ) -> DiscGrads {
        let mut input: Option<Tensor> = None;
        let mut acts = capture.then(Vec::new);
        let mut offset = 0;
        for (s, (seq, gy)) in self.scales.iter().zip(grad_scores).enumerate() {
            let n = seq.param_count();
            let slot = grads.as_deref_mut().map(|g| &mut g[offset..offset + n]);
            offset += n;
            let mut cap = Vec::new();
            let gi = seq.backward(&trace.scales[s], gy, slot, need_input, capture.then_some(&mut cap));
            if let Some(a) = acts.as_mut() {
                a.push(cap);
            }
            if let Some(gi) = gi {
                match input.as_mut() {
                    Some(acc) => acc.data.iter_mut().zip(&gi.data).for_each(|(a, b)| *a += b),
                    None => input = Some(gi),
                }
            }
        }
        DiscGrads {
            // the input was mapped through 2x - 1
            input: input.map(|t| t.map(|g| 2.0 * g).to_image()),
            activations: acts,
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.scales.iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.scales.iter_mut().flat_map(|s| s.params_mut()).collect()
    }
}

impl PatchCritic for Discriminator {
    fn scores(&self, x: &Image) -> Result<Vec<Tensor>> {
        self.forward(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, n, 3, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn two_scales_with_stable_registry() {
        let d = Discriminator::new(DiscriminatorConfig::default(), 1);
        let s = d.forward(&random_image(1, 32)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].h, s[0].w), (8, 8));
        assert_eq!((s[1].h, s[1].w), (4, 4));
        assert!(s.iter().all(|t| t.is_finite()));
        let names: Vec<_> = d.layers().iter().map(|l| l.name.clone()).collect();
        assert_eq!(names.len(), 6);
        let again: Vec<_> = d.layers().iter().map(|l| l.name.clone()).collect();
        assert_eq!(names, again);
    }

    #[test]
    fn capture_does_not_perturb_scores() {
        let d = Discriminator::new(DiscriminatorConfig::default(), 2);
        let x = random_image(3, 32);
        let plain = d.forward(&x).unwrap();
        let tr = d.forward_trace(&x).unwrap();
        let grads = tr.scores().iter().map(|t| t.map(|_| 1.0)).collect();
        let out = d.backward(&tr, grads, None, true, true);
        assert!(out.activations.is_some());
        assert_eq!(plain, tr.scores());
        assert_eq!(plain, d.forward(&x).unwrap());
        for l in d.layers() {
            assert!(d.activation(&tr, &l.name).is_ok());
        }
        assert!(matches!(d.activation(&tr, "nope"), Err(Error::Registry(_))));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let cfg = DiscriminatorConfig {
            nf: 4,
            init_std: 0.3,
            ..DiscriminatorConfig::default()
        };
        let d = Discriminator::new(cfg, 4);
        let x = random_image(5, 16);
        let f = |x: &Image| d.forward(x).unwrap().iter().map(|t| t.data.iter().sum::<f64>()).sum::<f64>();
        let tr = d.forward_trace(&x).unwrap();
        let gs = tr.scores().iter().map(|t| t.map(|_| 1.0)).collect();
        let gi = d.backward(&tr, gs, None, true, false).input.unwrap();
        for idx in [0, 100, 400, 767] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += 1e-6;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - gi.data()[idx]).abs() < 1e-6, "{idx}: {fd} vs {}", gi.data()[idx]);
        }
    }
}
