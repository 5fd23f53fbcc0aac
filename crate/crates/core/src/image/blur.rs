//! Truncated, renormalized Gaussian point-spread blur.
//!
//! The window radius is `ceil(3 * sigma_max)` regardless of `sigma`, so the
//! output is a smooth function of `sigma` over the whole admissible range.
//! Borders are reflected (`c b a | a b c`).

use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
    /// d(weights)/d(sigma)
    dweights: Vec<f64>,
}

/// Inclusive pixel rectangle `[y0, y1] x [x0, x1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Rect {
    pub fn full(height: usize, width: usize) -> Self {
        Rect {
            y0: 0,
            y1: height - 1,
            x0: 0,
            x1: width - 1,
        }
    }

    pub fn dilate(&self, r: usize, height: usize, width: usize) -> Self {
        Rect {
            y0: self.y0.saturating_sub(r),
            y1: (self.y1 + r).min(height - 1),
            x0: self.x0.saturating_sub(r),
            x1: (self.x1 + r).min(width - 1),
        }
    }
}

#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let p = 2 * n as isize;
    let m = i.rem_euclid(p);
    if m < n as isize {
        m as usize
    } else {
        (p - 1 - m) as usize
    }
}

impl GaussianKernel {
    pub fn new(sigma: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_max.is_finite() && sigma_max > 0.0) {
            return Err(Error::range("sigma_max", sigma_max, "(0, inf)"));
        }
        if !(sigma.is_finite() && sigma > 0.0 && sigma <= sigma_max) {
            return Err(Error::range("sigma", sigma, format!("(0, {sigma_max}]")));
        }
        let radius = (3.0 * sigma_max).ceil() as usize;
        let s2 = sigma * sigma;
        let s3 = s2 * sigma;
        let mut g = Vec::with_capacity(2 * radius + 1);
        let mut dg = Vec::with_capacity(2 * radius + 1);
        for k in 0..=2 * radius {
            let d = k as f64 - radius as f64;
            let e = (-d * d / (2.0 * s2)).exp();
            g.push(e);
            dg.push(if e == 0.0 { 0.0 } else { e * d * d / s3 });
        }
        let sum: f64 = g.iter().sum();
        let dsum: f64 = dg.iter().sum();
        let weights = g.iter().map(|v| v / sum).collect();
        let dweights = g
            .iter()
            .zip(&dg)
            .map(|(v, dv)| (dv * sum - v * dsum) / (sum * sum))
            .collect();
        Ok(Self {
            sigma,
            radius,
            weights,
            dweights,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Blurs one `h x w` plane. Only pixels inside `support` may be non-zero
    /// in `src`; the output is computed on the support dilated by the radius.
    pub fn blur_plane(&self, src: &[f64], h: usize, w: usize, support: Option<Rect>) -> Vec<f64> {
        let rect = support.unwrap_or_else(|| Rect::full(h, w));
        let grown = rect.dilate(self.radius, h, w);
        let mut tmp = vec![0.0; h * w];
        vertical(src, &mut tmp, h, w, &self.weights, self.radius, grown.y0..=grown.y1, rect.x0..=rect.x1);
        let mut out = vec![0.0; h * w];
        horizontal(&tmp, &mut out, h, w, &self.weights, self.radius, grown.y0..=grown.y1, grown.x0..=grown.x1);
        out
    }

    /// Blur and its derivative with respect to sigma.
    pub fn blur_plane_tangent(&self, src: &[f64], h: usize, w: usize, support: Option<Rect>) -> (Vec<f64>, Vec<f64>) {
        let rect = support.unwrap_or_else(|| Rect::full(h, w));
        let g = rect.dilate(self.radius, h, w);
        let r = self.radius;
        let mut tmp = vec![0.0; h * w];
        let mut dtmp = vec![0.0; h * w];
        vertical(src, &mut tmp, h, w, &self.weights, r, g.y0..=g.y1, rect.x0..=rect.x1);
        vertical(src, &mut dtmp, h, w, &self.dweights, r, g.y0..=g.y1, rect.x0..=rect.x1);
        let mut out = vec![0.0; h * w];
        let mut dout = vec![0.0; h * w];
        horizontal(&tmp, &mut out, h, w, &self.weights, r, g.y0..=g.y1, g.x0..=g.x1);
        horizontal(&tmp, &mut dout, h, w, &self.dweights, r, g.y0..=g.y1, g.x0..=g.x1);
        let mut d2 = vec![0.0; h * w];
        horizontal(&dtmp, &mut d2, h, w, &self.weights, r, g.y0..=g.y1, g.x0..=g.x1);
        for (a, b) in dout.iter_mut().zip(&d2) {
            *a += b;
        }
        (out, dout)
    }

    /// Transpose of [`GaussianKernel::blur_plane`] over the full plane.
    pub fn blur_plane_adjoint(&self, grad: &[f64], h: usize, w: usize) -> Vec<f64> {
        let r = self.radius as isize;
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            let row = &grad[y * w..(y + 1) * w];
            let dst = &mut tmp[y * w..(y + 1) * w];
            for (x, &go) in row.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                for (k, wk) in self.weights.iter().enumerate() {
                    dst[reflect(x as isize + k as isize - r, w)] += wk * go;
                }
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for (k, wk) in self.weights.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - r, h);
                let (src, dst) = (&tmp[y * w..(y + 1) * w], sy * w);
                for x in 0..w {
                    out[dst + x] += wk * src[x];
                }
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn vertical(
    src: &[f64],
    dst: &mut [f64],
    h: usize,
    w: usize,
    weights: &[f64],
    radius: usize,
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
) {
    let r = radius as isize;
    for y in rows {
        let out = &mut dst[y * w..(y + 1) * w];
        for (k, wk) in weights.iter().enumerate() {
            if *wk == 0.0 {
                continue;
            }
            let sy = reflect(y as isize + k as isize - r, h);
            let s = &src[sy * w..(sy + 1) * w];
            for x in cols.clone() {
                out[x] += wk * s[x];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn horizontal(
    src: &[f64],
    dst: &mut [f64],
    _h: usize,
    w: usize,
    weights: &[f64],
    radius: usize,
    rows: std::ops::RangeInclusive<usize>,
    cols: std::ops::RangeInclusive<usize>,
) {
    let r = radius as isize;
    for y in rows {
        let s = &src[y * w..(y + 1) * w];
        let out = &mut dst[y * w..(y + 1) * w];
        for x in cols.clone() {
            let mut acc = 0.0;
            let base = x as isize - r;
            for (k, wk) in weights.iter().enumerate() {
                acc += wk * s[reflect(base + k as isize, w)];
            }
            out[x] = acc;
        }
    }
}

/// Separable Gaussian PSF blur with standard deviation `sigma` (pixels).
pub fn gaussian_psf_blur(image: &Image, sigma: f64, sigma_max: f64) -> Result<Image> {
    let k = GaussianKernel::new(sigma, sigma_max)?;
    let (h, w) = image.extent();
    let mut out = Image::zeros(h, w, image.channels());
    for c in 0..image.channels() {
        let p = k.blur_plane(image.plane(c), h, w, None);
        out.plane_mut(c).copy_from_slice(&p);
    }
    Ok(out)
}

/// Returns the blurred image and its derivative with respect to `sigma`.
pub fn gaussian_psf_blur_tangent(image: &Image, sigma: f64, sigma_max: f64) -> Result<(Image, Image)> {
    let k = GaussianKernel::new(sigma, sigma_max)?;
    let (h, w) = image.extent();
    let mut out = Image::zeros(h, w, image.channels());
    let mut dout = Image::zeros(h, w, image.channels());
    for c in 0..image.channels() {
        let (p, dp) = k.blur_plane_tangent(image.plane(c), h, w, None);
        out.plane_mut(c).copy_from_slice(&p);
        dout.plane_mut(c).copy_from_slice(&dp);
    }
    Ok((out, dout))
}

/// Gradient of `<grad_out, blur(image)>` with respect to `image`.
pub fn gaussian_psf_blur_adjoint(grad_out: &Image, sigma: f64, sigma_max: f64) -> Result<Image> {
    let k = GaussianKernel::new(sigma, sigma_max)?;
    let (h, w) = grad_out.extent();
    let mut out = Image::zeros(h, w, grad_out.channels());
    for c in 0..grad_out.channels() {
        let p = k.blur_plane_adjoint(grad_out.plane(c), h, w);
        out.plane_mut(c).copy_from_slice(&p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn reflect_indexes_are_symmetric() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(12, 5), 2);
        assert_eq!(reflect(-13, 3), 0);
    }

    #[test]
    fn tiny_sigma_is_identity() {
        let img = random_image(16, 16, 3, 1);
        let out = gaussian_psf_blur(&img, 1e-3, 4.0).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-4);
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Image::filled(12, 20, 3, 0.37);
        for sigma in [0.5, 2.0, 7.0] {
            let out = gaussian_psf_blur(&img, sigma, 8.0).unwrap();
            assert!(out.max_abs_diff(&img) < 1e-12);
        }
    }

    #[test]
    fn impulse_matches_dense_kernel() {
        // Dense 2-D oracle: renormalized Gaussian over the square window.
        let (n, sigma, sigma_max) = (41usize, 2.0, 4.0);
        let mut img = Image::zeros(n, n, 1);
        let c = n / 2;
        img.set(0, c, c, 1.0);
        let out = gaussian_psf_blur(&img, sigma, sigma_max).unwrap();
        let r = (3.0f64 * sigma_max).ceil() as isize;
        let mut dense = vec![0.0; (2 * r + 1) as usize * (2 * r + 1) as usize];
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                dense[((dy + r) * (2 * r + 1) + dx + r) as usize] = v;
                total += v;
            }
        }
        let mut err: f64 = 0.0;
        for y in 0..n as isize {
            for x in 0..n as isize {
                let (dy, dx) = (y - c as isize, x - c as isize);
                let expect = if dy.abs() <= r && dx.abs() <= r {
                    dense[((dy + r) * (2 * r + 1) + dx + r) as usize] / total
                } else {
                    0.0
                };
                err = err.max((out.get(0, y as usize, x as usize) - expect).abs());
            }
        }
        assert!(err < 1e-6, "max err {err}");
    }

    #[test]
    fn sigma_out_of_range_is_rejected() {
        let img = Image::filled(8, 8, 1, 0.5);
        assert!(matches!(gaussian_psf_blur(&img, 0.0, 4.0), Err(Error::ParamRange { .. })));
        assert!(matches!(gaussian_psf_blur(&img, -1.0, 4.0), Err(Error::ParamRange { .. })));
        assert!(matches!(gaussian_psf_blur(&img, 4.5, 4.0), Err(Error::ParamRange { .. })));
    }

    #[test]
    fn sigma_derivative_matches_central_differences() {
        for seed in 0..3 {
            let img = random_image(32, 32, 3, 10 + seed);
            let probe = random_image(32, 32, 3, 100 + seed);
            for sigma in [0.8, 1.7, 3.1] {
                let (_, d) = gaussian_psf_blur_tangent(&img, sigma, 6.0).unwrap();
                let analytic: f64 = d.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
                let h = 1e-3;
                let f = |s: f64| -> f64 {
                    let o = gaussian_psf_blur(&img, s, 6.0).unwrap();
                    o.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
                };
                let fd = (f(sigma + h) - f(sigma - h)) / (2.0 * h);
                let rel = (fd - analytic).abs() / analytic.abs().max(1e-12);
                assert!(rel < 1e-3, "sigma {sigma}: fd {fd} analytic {analytic} rel {rel}");
            }
        }
    }

    #[test]
    fn adjoint_is_transpose() {
        let img = random_image(13, 17, 2, 4);
        let g = random_image(13, 17, 2, 5);
        let fwd = gaussian_psf_blur(&img, 2.5, 9.0).unwrap();
        let adj = gaussian_psf_blur_adjoint(&g, 2.5, 9.0).unwrap();
        let lhs: f64 = fwd.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = adj.data().iter().zip(img.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn regional_blur_matches_full_blur() {
        let k = GaussianKernel::new(1.5, 3.0).unwrap();
        let (h, w) = (30, 25);
        let mut src = vec![0.0; h * w];
        let rect = Rect { y0: 1, y1: 6, x0: 18, x1: 23 };
        for y in rect.y0..=rect.y1 {
            for x in rect.x0..=rect.x1 {
                src[y * w + x] = ((x * y) % 3) as f64;
            }
        }
        let full = k.blur_plane(&src, h, w, None);
        let part = k.blur_plane(&src, h, w, Some(rect));
        for (a, b) in full.iter().zip(&part) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_is_pure() {
        let img = random_image(16, 16, 3, 9);
        let a = gaussian_psf_blur(&img, 2.2, 5.0).unwrap();
        let b = gaussian_psf_blur(&img, 2.2, 5.0).unwrap();
        assert_eq!(a, b);
    }
}
