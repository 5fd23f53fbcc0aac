//! Planar image grids, differentiable sampling and defocus blur, PNG I/O.
//!
//! Images are stored channel-planar (`C×H×W`, row-major inside each plane)
//! with `f64` samples nominally in `[0, 1]`. Coordinates follow the
//! `(u, v) = (column, row)` convention with the origin at the top-left pixel.

mod blur;
mod io;
mod sample;

pub use blur::{gaussian_psf_blur, gaussian_psf_blur_adjoint, gaussian_psf_blur_tangent, GaussianKernel, Rect};
pub use io::{read_png, write_png, MIN_IO_EXTENT};
pub use sample::{bilinear_sample, bilinear_sample_adjoint, bilinear_sample_coord_grad};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "buffer of {} samples does not fit {channels}x{height}x{width}",
                data.len()
            )));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Contract("image extent must be non-empty".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(channel, row, col)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width)`
    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn same_extent(&self, other: &Image) -> bool {
        self.extent() == other.extent()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.extent() == other.extent() && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Repeats a single-channel image into `channels` planes.
    pub fn broadcast(&self, channels: usize) -> Image {
        assert_eq!(self.channels, 1, "broadcast expects a single-channel image");
        let mut data = Vec::with_capacity(self.data.len() * channels);
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Image {
            height: self.height,
            width: self.width,
            channels,
            data,
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "{what}: shape {}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }
}

/// Per-pixel sampling positions in pixel units, `u` along columns and `v` along rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Coords {
    height: usize,
    width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Coords {
    pub fn identity(height: usize, width: usize) -> Self {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                u.push(x as f64);
                v.push(y as f64);
            }
        }
        Self { height, width, u, v }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut c = Self::identity(height, width);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                c.u[y * width + x] = u;
                c.v[y * width + x] = v;
            }
        }
        c
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Per-pixel transparency; 1 means the scene is fully visible.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap(Image);

impl AlphaMap {
    pub fn clear(height: usize, width: usize) -> Self {
        AlphaMap(Image::filled(height, width, 1, 1.0))
    }

    pub fn from_image(image: Image) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::Contract("alpha map must have one channel".into()));
        }
        Ok(AlphaMap(image))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn image_mut(&mut self) -> &mut Image {
        &mut self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn extent(&self) -> (usize, usize) {
        self.0.extent()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}
