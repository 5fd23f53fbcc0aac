use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filtering over fully contained windows only.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; oh * w];
    for y in 0..oh {
        for x in 0..w {
            tmp[y * w + x] = (0..n).map(|i| k[i] * p[(y + i) * w + x]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[y * w + x + i]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and valid window positions (Gaussian window of
/// 11 px, std 1.5, data range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssim pair")?;
    let (h, w) = a.extent();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images")));
    }
    let k = window();
    let mut total = 0.0;
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let prod = |f: &dyn Fn(f64, f64) -> f64| pa.iter().zip(pb).map(|(x, y)| f(*x, *y)).collect::<Vec<_>>();
        let mu_a = filter_valid(pa, h, w, &k);
        let mu_b = filter_valid(pb, h, w, &k);
        let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
        let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
        let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
        let m = mu_a.len();
        let mut s = 0.0;
        for i in 0..m {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            s += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += s / m as f64;
    }
    Ok(total / a.channels() as f64)
}

/// PSNR in dB for data range 1; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr pair")?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean SSIM and mean PSNR over aligned pairs.
pub fn ssim_psnr(pairs: &[(Image, Image)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Contract("no pairs to compare".into()));
    }
    let mut s = 0.0;
    let mut p = 0.0;
    for (a, b) in pairs {
        s += ssim(a, b)?;
        p += psnr(a, b)?;
    }
    let n = pairs.len() as f64;
    Ok((s / n, p / n))
}
