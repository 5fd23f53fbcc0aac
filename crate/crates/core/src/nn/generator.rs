use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, Layer, SeqTrace, Sequential};
use super::Tensor;
use crate::error::{Error, Result};
use crate::image::Image;

/// Smallest side accepted by the generator.
pub const MIN_GENERATOR_EXTENT: usize = 32;

const LOGIT_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub channels: usize,
    /// Base feature width; the bottleneck has `4 * nf` channels.
    pub nf: usize,
    pub n_res: usize,
    /// Append normalized row/column coordinates to the input.
    pub coord_channels: bool,
    pub init_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            channels: 3,
            nf: 8,
            n_res: 2,
            coord_channels: true,
            init_std: 0.02,
        }
    }
}

/// Encoder / residual bottleneck / decoder with a logit-space skip:
/// `G(x) = sigmoid(logit(x) + decoder(...))`.
///
/// The encoder downsamples by 4. Freshly initialized weights are small, so an
/// untrained generator is close to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    cfg: GeneratorConfig,
    enc: Sequential,
    res: Vec<Sequential>,
    dec: Sequential,
}

#[derive(Clone, Debug)]
pub struct GenTrace {
    input: Image,
    enc: SeqTrace,
    res: Vec<SeqTrace>,
    dec: SeqTrace,
    pub output: Image,
}

fn logit(v: f64) -> f64 {
    let v = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (v / (1.0 - v)).ln()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nf, s) = (cfg.nf, cfg.init_std);
        let cin = cfg.channels + if cfg.coord_channels { 2 } else { 0 };
        let enc = Sequential::new(vec![
            Layer::Conv(Conv2d::new(cin, nf, 7, 1, 3, s, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new(nf, 2 * nf, 4, 2, 1, s, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new(2 * nf, 4 * nf, 4, 2, 1, s, &mut rng)),
            Layer::LeakyRelu(0.2),
        ]);
        let res = (0..cfg.n_res)
            .map(|_| {
                Sequential::new(vec![
                    Layer::Conv(Conv2d::new(4 * nf, 4 * nf, 3, 1, 1, s, &mut rng)),
                    Layer::LeakyRelu(0.2),
                    Layer::Conv(Conv2d::new(4 * nf, 4 * nf, 3, 1, 1, s, &mut rng)),
                ])
            })
            .collect();
        let dec = Sequential::new(vec![
            Layer::Upsample2,
            Layer::Conv(Conv2d::new(4 * nf, 2 * nf, 5, 1, 2, s, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Upsample2,
            Layer::Conv(Conv2d::new(2 * nf, nf, 5, 1, 2, s, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new(nf, cfg.channels, 7, 1, 3, s, &mut rng)),
        ]);
        Generator { cfg, enc, res, dec }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn check(&self, x: &Image) -> Result<()> {
        let (h, w) = x.extent();
        if h < MIN_GENERATOR_EXTENT || w < MIN_GENERATOR_EXTENT {
            return Err(Error::Contract(format!(
                "generator input {h}x{w} is below {MIN_GENERATOR_EXTENT}px"
            )));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Contract(format!("generator input {h}x{w} must be a multiple of 4")));
        }
        if x.channels() != self.cfg.channels {
            return Err(Error::Contract(format!(
                "generator expects {} channels, got {}",
                self.cfg.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    fn input_tensor(&self, x: &Image) -> Tensor {
        let mut t = Tensor::from_image(x);
        if self.cfg.coord_channels {
            let (h, w) = x.extent();
            for _ in 0..h {
                for xx in 0..w {
                    t.data.push(2.0 * xx as f64 / (w - 1) as f64 - 1.0);
                }
            }
            for y in 0..h {
                for _ in 0..w {
                    t.data.push(2.0 * y as f64 / (h - 1) as f64 - 1.0);
                }
            }
            t.c += 2;
        }
        t
    }

    fn squash(x: &Image, r: &Tensor) -> Image {
        let data = x.data().iter().zip(&r.data).map(|(&v, &d)| sigmoid(logit(v) + d)).collect();
        Image::from_vec(x.height(), x.width(), x.channels(), data).expect("generator output shape")
    }

    pub fn forward(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        let mut e = self.enc.forward(&self.input_tensor(x));
        for r in &self.res {
            let d = r.forward(&e);
            e.data.iter_mut().zip(&d.data).for_each(|(a, b)| *a += b);
        }
        Ok(Self::squash(x, &self.dec.forward(&e)))
    }

    pub fn forward_trace(&self, x: &Image) -> Result<GenTrace> {
        self.check(x)?;
        let enc = self.enc.forward_trace(&self.input_tensor(x));
        let mut e = enc.output.clone();
        let mut res = Vec::with_capacity(self.res.len());
        for r in &self.res {
            let tr = r.forward_trace(&e);
            e.data.iter_mut().zip(&tr.output.data).for_each(|(a, b)| *a += b);
            res.push(tr);
        }
        let dec = self.dec.forward_trace(&e);
        let output = Self::squash(x, &dec.output);
        Ok(GenTrace {
            input: x.clone(),
            enc,
            res,
            dec,
            output,
        })
    }

    /// Accumulates parameter gradients of `<grad_out, G(x)>` into `grads`.
    pub fn backward(&self, trace: &GenTrace, grad_out: &Image, grads: &mut [Vec<f64>]) -> Result<()> {
        trace.output.check_same_shape(grad_out, "generator gradient")?;
        debug_assert_eq!(trace.input.extent(), grad_out.extent());
        let gd = Tensor {
            c: grad_out.channels(),
            h: grad_out.height(),
            w: grad_out.width(),
            data: grad_out
                .data()
                .iter()
                .zip(trace.output.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        let ne = self.enc.param_count();
        let nr: Vec<usize> = self.res.iter().map(|r| r.param_count()).collect();
        let (g_enc, rest) = grads.split_at_mut(ne);
        let (g_res, g_dec) = rest.split_at_mut(nr.iter().sum());
        let mut g = self
            .dec
            .backward(&trace.dec, gd, Some(g_dec), true, None)
            .expect("decoder input gradient");
        let mut end = g_res.len();
        for (i, r) in self.res.iter().enumerate().rev() {
            let start = end - nr[i];
            let gb = r
                .backward(&trace.res[i], g.clone(), Some(&mut g_res[start..end]), true, None)
                .expect("residual input gradient");
            g.data.iter_mut().zip(&gb.data).for_each(|(a, b)| *a += b);
            end = start;
        }
        self.enc.backward(&trace.enc, g, Some(g_enc), false, None);
        Ok(())
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.enc.params();
        for r in &self.res {
            v.extend(r.params());
        }
        v.extend(self.dec.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = self.enc.params_mut();
        for r in &mut self.res {
            v.extend(r.params_mut());
        }
        v.extend(self.dec.params_mut());
        v
    }
}
