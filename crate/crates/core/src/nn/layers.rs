use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// 2-D convolution with zero padding, weights laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, init_std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, init_std).expect("finite std");
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: (0..out_c * in_c * k * k).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_c],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn im2col(&self, x: &Tensor) -> (Vec<f64>, usize, usize) {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let p = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let mut cols = vec![0.0; kk * p];
        for ci in 0..self.in_c {
            let plane = &x.data[ci * x.h * x.w..(ci + 1) * x.h * x.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        (cols, oh, ow)
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Tensor {
        let (oh, ow) = self.out_hw(h, w);
        let p = oh * ow;
        let mut x = Tensor::zeros(self.in_c, h, w);
        for ci in 0..self.in_c {
            let plane = &mut x.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, Vec<f64>) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (cols, oh, ow) = self.im2col(x);
        let p = oh * ow;
        let kk = self.in_c * self.k * self.k;
        let mut y = Tensor::zeros(self.out_c, oh, ow);
        for o in 0..self.out_c {
            y.data[o * p..(o + 1) * p].fill(self.bias[o]);
        }
        unsafe {
            matrixmultiply::dgemm(
                self.out_c,
                kk,
                p,
                1.0,
                self.weight.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                p as isize,
                1,
                1.0,
                y.data.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        (y, cols)
    }

    /// Accumulates weight/bias gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        in_hw: (usize, usize),
        cols: &[f64],
        gy: &Tensor,
        gw: Option<(&mut [f64], &mut [f64])>,
        need_input: bool,
    ) -> Option<Tensor> {
        let p = gy.h * gy.w;
        let kk = self.in_c * self.k * self.k;
        if let Some((gw, gb)) = gw {
            unsafe {
                matrixmultiply::dgemm(
                    self.out_c,
                    p,
                    kk,
                    1.0,
                    gy.data.as_ptr(),
                    p as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    p as isize,
                    1.0,
                    gw.as_mut_ptr(),
                    kk as isize,
                    1,
                );
            }
            for o in 0..self.out_c {
                gb[o] += gy.data[o * p..(o + 1) * p].iter().sum::<f64>();
            }
        }
        if !need_input {
            return None;
        }
        let mut gcols = vec![0.0; kk * p];
        unsafe {
            matrixmultiply::dgemm(
                kk,
                self.out_c,
                p,
                1.0,
                self.weight.as_ptr(),
                1,
                kk as isize,
                gy.data.as_ptr(),
                p as isize,
                1,
                0.0,
                gcols.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        Some(self.col2im(&gcols, in_hw.0, in_hw.1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    LeakyRelu(f64),
    Relu,
    /// Nearest-neighbour 2x upsampling.
    Upsample2,
    /// 2x2 average pooling.
    AvgPool2,
    /// Mean over the spatial extent, giving a `C x 1 x 1` tensor.
    GlobalAvgPool,
}

impl Layer {
    pub fn is_activation(&self) -> bool {
        matches!(self, Layer::LeakyRelu(_) | Layer::Relu)
    }
}

/// Layer inputs kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct SeqTrace {
    pub inputs: Vec<Tensor>,
    cols: Vec<Option<Vec<f64>>>,
    pub output: Tensor,
}

impl SeqTrace {
    /// Output of layer `i`.
    pub fn activation(&self, i: usize) -> &Tensor {
        if i + 1 < self.inputs.len() {
            &self.inputs[i + 1]
        } else {
            &self.output
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

fn apply(layer: &Layer, x: &Tensor) -> (Tensor, Option<Vec<f64>>) {
    match layer {
        Layer::Conv(c) => {
            let (y, cols) = c.forward(x);
            (y, Some(cols))
        }
        Layer::LeakyRelu(s) => (x.map(|v| if v > 0.0 { v } else { s * v }), None),
        Layer::Relu => (x.map(|v| v.max(0.0)), None),
        Layer::Upsample2 => {
            let mut y = Tensor::zeros(x.c, x.h * 2, x.w * 2);
            for c in 0..x.c {
                for yy in 0..y.h {
                    for xx in 0..y.w {
                        y.data[(c * y.h + yy) * y.w + xx] = x.data[(c * x.h + yy / 2) * x.w + xx / 2];
                    }
                }
            }
            (y, None)
        }
        Layer::AvgPool2 => {
            let mut y = Tensor::zeros(x.c, x.h / 2, x.w / 2);
            for c in 0..x.c {
                for yy in 0..y.h {
                    for xx in 0..y.w {
                        let at = |dy: usize, dx: usize| x.data[(c * x.h + 2 * yy + dy) * x.w + 2 * xx + dx];
                        y.data[(c * y.h + yy) * y.w + xx] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                    }
                }
            }
            (y, None)
        }
        Layer::GlobalAvgPool => {
            let n = (x.h * x.w) as f64;
            let data = (0..x.c).map(|c| x.plane(c).iter().sum::<f64>() / n).collect();
            (Tensor { c: x.c, h: 1, w: 1, data }, None)
        }
    }
}

fn apply_backward(
    layer: &Layer,
    x: &Tensor,
    cols: Option<&Vec<f64>>,
    gy: &Tensor,
    grads: Option<(&mut [f64], &mut [f64])>,
    need_input: bool,
) -> Option<Tensor> {
    match layer {
        Layer::Conv(c) => c.backward((x.h, x.w), cols.expect("conv trace"), gy, grads, need_input),
        _ if !need_input => None,
        Layer::LeakyRelu(s) => Some(Tensor {
            data: x.data.iter().zip(&gy.data).map(|(&v, &g)| if v > 0.0 { g } else { s * g }).collect(),
            ..x.shape_like()
        }),
        Layer::Relu => Some(Tensor {
            data: x.data.iter().zip(&gy.data).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
            ..x.shape_like()
        }),
        Layer::Upsample2 => {
            let mut g = Tensor::zeros(x.c, x.h, x.w);
            for c in 0..x.c {
                for yy in 0..gy.h {
                    for xx in 0..gy.w {
                        g.data[(c * x.h + yy / 2) * x.w + xx / 2] += gy.data[(c * gy.h + yy) * gy.w + xx];
                    }
                }
            }
            Some(g)
        }
        Layer::AvgPool2 => {
            let mut g = Tensor::zeros(x.c, x.h, x.w);
            for c in 0..x.c {
                for yy in 0..gy.h {
                    for xx in 0..gy.w {
                        let v = 0.25 * gy.data[(c * gy.h + yy) * gy.w + xx];
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            g.data[(c * x.h + 2 * yy + dy) * x.w + 2 * xx + dx] += v;
                        }
                    }
                }
            }
            Some(g)
        }
        Layer::GlobalAvgPool => {
            let n = (x.h * x.w) as f64;
            let mut g = Tensor::zeros(x.c, x.h, x.w);
            for c in 0..x.c {
                let v = gy.data[c] / n;
                g.data[c * x.h * x.w..(c + 1) * x.h * x.w].fill(v);
            }
            Some(g)
        }
    }
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = apply(l, &cur).0;
        }
        cur
    }

    pub fn forward_trace(&self, x: &Tensor) -> SeqTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, c) = apply(l, &cur);
            inputs.push(cur);
            cols.push(c);
            cur = y;
        }
        SeqTrace { inputs, cols, output: cur }
    }

    /// Backpropagates `gy` from the output.
    ///
    /// `grads` holds this network's parameter gradients in [`Sequential::params`]
    /// order. `capture` receives the gradient with respect to each layer's output.
    pub fn backward(
        &self,
        trace: &SeqTrace,
        gy: Tensor,
        mut grads: Option<&mut [Vec<f64>]>,
        need_input: bool,
        mut capture: Option<&mut Vec<Option<Tensor>>>,
    ) -> Option<Tensor> {
        if let Some(c) = capture.as_deref_mut() {
            c.clear();
            c.resize(self.layers.len(), None);
        }
        let mut slot = self.param_count();
        let mut g = gy;
        for (i, l) in self.layers.iter().enumerate().rev() {
            if let Some(c) = capture.as_deref_mut() {
                c[i] = Some(g.clone());
            }
            let pg = match (l, grads.as_deref_mut()) {
                (Layer::Conv(_), Some(gs)) => {
                    slot -= 2;
                    let (a, b) = gs[slot..slot + 2].split_at_mut(1);
                    Some((a[0].as_mut_slice(), b[0].as_mut_slice()))
                }
                (Layer::Conv(_), None) => {
                    slot -= 2;
                    None
                }
                _ => None,
            };
            let need = need_input || i > 0;
            {
                let next = apply_backward(l, &trace.inputs[i], trace.cols[i].as_ref(), &g, pg, need)?;
                g = next
            }
        }
        Some(g)
    }

    /// Number of parameter tensors (weight and bias per convolution).
    pub fn param_count(&self) -> usize {
        2 * self.layers.iter().filter(|l| matches!(l, Layer::Conv(_))).count()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for l in &self.layers {
            if let Layer::Conv(c) = l {
                v.push(c.weight.as_slice());
                v.push(c.bias.as_slice());
            }
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            if let Layer::Conv(c) = l {
                v.push(&mut c.weight);
                v.push(&mut c.bias);
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(c: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = c.out_hw(x.h, x.w);
        let mut y = Tensor::zeros(c.out_c, oh, ow);
        for o in 0..c.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = c.bias[o];
                    for ci in 0..c.in_c {
                        for ky in 0..c.k {
                            for kx in 0..c.k {
                                let iy = (oy * c.stride + ky) as isize - c.pad as isize;
                                let ix = (ox * c.stride + kx) as isize - c.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += c.weight[((o * c.in_c + ci) * c.k + ky) * c.k + kx]
                                        * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    y.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s, p) in [(3, 1, 1), (4, 2, 1), (7, 1, 3), (1, 1, 0)] {
            let mut c = Conv2d::new(3, 5, k, s, p, 0.3, &mut rng);
            c.bias = vec![0.1, -0.2, 0.3, 0.0, 0.05];
            let x = Tensor::from_fn(3, 10, 12, |c, y, x| ((c * 13 + y * 7 + x * 3) % 11) as f64 / 11.0 - 0.4);
            let (y, _) = c.forward(&x);
            let oracle = naive_conv(&c, &x);
            assert_eq!((y.c, y.h, y.w), (oracle.c, oracle.h, oracle.w));
            for (a, b) in y.data.iter().zip(&oracle.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequential_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(2, 3, 3, 1, 1, 0.5, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::AvgPool2,
            Layer::Conv(Conv2d::new(3, 4, 4, 2, 1, 0.5, &mut rng)),
            Layer::Relu,
            Layer::Upsample2,
            Layer::Conv(Conv2d::new(4, 2, 3, 1, 1, 0.5, &mut rng)),
            Layer::GlobalAvgPool,
        ]);
        let x = Tensor::from_fn(2, 8, 8, |c, y, x| ((c * 5 + y * 3 + x) % 7) as f64 / 7.0 - 0.3);
        let weights = [0.7, -1.3];
        let loss = |n: &Sequential, x: &Tensor| {
            let y = n.forward(x);
            y.data.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let tr = net.forward_trace(&x);
        let gy = Tensor {
            c: 2,
            h: 1,
            w: 1,
            data: weights.to_vec(),
        };
        let mut grads: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let gx = net.backward(&tr, gy, Some(&mut grads), true, None).unwrap();
        let eps = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for idx in [0, g.len() / 2, g.len() - 1] {
                let mut np = net.clone();
                np.params_mut()[pi][idx] += eps;
                let mut nm = net.clone();
                nm.params_mut()[pi][idx] -= eps;
                let fd = (loss(&np, &x) - loss(&nm, &x)) / (2.0 * eps);
                assert!((fd - g[idx]).abs() < 1e-7 + 1e-4 * fd.abs(), "param {pi}[{idx}]: {fd} vs {}", g[idx]);
            }
        }
        for idx in [0, 37, 127] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * eps);
            assert!((fd - gx.data[idx]).abs() < 1e-7, "input {idx}");
        }
    }
}
