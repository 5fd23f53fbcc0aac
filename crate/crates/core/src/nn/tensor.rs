use crate::image::Image;

/// A single `C x H x W` activation map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn filled(c: usize, h: usize, w: usize, v: f64) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![v; c * h * w],
        }
    }

    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor::zeros(c, h, w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    t.data[(ci * h + y) * w + x] = f(ci, y, x);
                }
            }
        }
        t
    }

    /// Network input: pixel values mapped from [0, 1] to [-1, 1].
    pub fn centered(img: &Image) -> Self {
        let mut t = Tensor::from_image(img);
        t.data.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
        t
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor {
            c: img.channels(),
            h: img.height(),
            w: img.width(),
            data: img.data().to_vec(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(self.h, self.w, self.c, self.data.clone()).expect("tensor shape")
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.shape_like()
        }
    }

    /// Same shape, empty buffer; for struct-update construction.
    pub(crate) fn shape_like(&self) -> Tensor {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: Vec::new(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
