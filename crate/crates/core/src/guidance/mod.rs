//! Disentanglement guidance: where does the discriminator see a domain gap?
//!
//! For every image, every registered discriminator activation gets a GradCAM
//! heatmap. Heatmaps are upscaled to the image extent, min-max normalized,
//! averaged over layers and then over the dataset, and normalized once more.
//! Occlusions may only be injected where the resulting map is below `beta`.

mod binfile;

pub use binfile::{read_dg_bin, write_dg_bin, write_dg_preview, DG_MAGIC};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{bilinear_sample, Coords, Image};
use crate::nn::{hex, param_digest, Discriminator, Tensor};

/// Dataset-averaged guidance map in `[0, 1]`; low values mean a low gap.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Hash of the discriminator parameters and the image set.
    pub provenance: String,
}

impl GuidanceMap {
    pub fn to_image(&self) -> Image {
        Image::from_vec(self.height, self.width, 1, self.values.clone()).expect("guidance extent")
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Pixels where injection is allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionMask {
    pub height: usize,
    pub width: usize,
    pub beta: f64,
    pub allowed: Vec<bool>,
}

impl InjectionMask {
    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|a| **a).count()
    }

    /// True when every allowed pixel of `self` is also allowed in `other`.
    pub fn is_subset_of(&self, other: &InjectionMask) -> bool {
        self.allowed.iter().zip(&other.allowed).all(|(a, b)| !a || *b)
    }
}

/// Rescales to `[0, 1]`; constant inputs become all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !span.is_finite() || span <= 0.0 {
        values.fill(0.0);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - lo) / span);
}

/// Bilinear resize of a single plane with pixel-center alignment.
fn upscale(plane: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return plane.to_vec();
    }
    let src = Image::from_vec(h, w, 1, plane.to_vec()).expect("activation plane");
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let coords = Coords::from_fn(oh, ow, |y, x| ((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5));
    bilinear_sample(&src, &coords).expect("resize").into_vec()
}

fn cam(act: &Tensor, grad: &Tensor, out: (usize, usize)) -> Vec<f64> {
    let n = (act.h * act.w) as f64;
    let mut heat = vec![0.0; act.h * act.w];
    for c in 0..act.c {
        let wgt = grad.plane(c).iter().sum::<f64>() / n;
        heat.iter_mut().zip(act.plane(c)).for_each(|(h, a)| *h += wgt * a);
    }
    heat.iter_mut().for_each(|h| *h = h.max(0.0));
    upscale(&heat, (act.h, act.w), out)
}

/// GradCAM heatmaps of every registered layer, in registry order.
///
/// The target scalar is the fake score `-mean(D_s(x))` of each scale, summed
/// over scales.
pub fn gradcam_all(d: &Discriminator, x: &Image) -> Result<Vec<(String, Vec<f64>)>> {
    let tr = d.forward_trace(x)?;
    let scores = tr.scores();
    let grads: Vec<Tensor> = scores.iter().map(|s| s.map(|_| -1.0 / s.data.len() as f64)).collect();
    let caps = d.backward(&tr, grads, None, false, true).activations.expect("captured gradients");
    d.layers()
        .iter()
        .map(|l| {
            let act = d.activation(&tr, &l.name)?;
            let g = caps[l.scale][l.index].as_ref().expect("captured layer");
            Ok((l.name.clone(), cam(act, g, x.extent())))
        })
        .collect()
}

/// GradCAM heatmap of one named layer, upscaled to the image extent.
pub fn gradcam_layer(d: &Discriminator, x: &Image, layer: &str) -> Result<Image> {
    d.layer(layer)?;
    let (h, w) = x.extent();
    let heat = gradcam_all(d, x)?
        .into_iter()
        .find(|(n, _)| n == layer)
        .map(|(_, v)| v)
        .expect("registered layer");
    Image::from_vec(h, w, 1, heat)
}

/// Layer average of per-layer normalized heatmaps for one image.
pub fn image_guidance(d: &Discriminator, x: &Image) -> Result<Vec<f64>> {
    let maps = gradcam_all(d, x)?;
    let mut acc = vec![0.0; x.plane_len()];
    for (_, mut m) in maps.iter().cloned() {
        min_max_normalize(&mut m);
        acc.iter_mut().zip(&m).for_each(|(a, v)| *a += v);
    }
    let n = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Dataset mean of [`image_guidance`] before the final normalization.
///
/// Each pixel is summed in sorted order so the result does not depend on the
/// order of `dataset`.
pub fn compute_dg_raw(d: &Discriminator, dataset: &[Image]) -> Result<Vec<f64>> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Contract("guidance needs a non-empty dataset".into()))?;
    if dataset.iter().any(|x| x.extent() != first.extent()) {
        return Err(Error::Contract("guidance images must share one extent".into()));
    }
    let maps: Vec<Vec<f64>> = dataset.par_iter().map(|x| image_guidance(d, x)).collect::<Result<_>>()?;
    let n = maps.len();
    let mut column = vec![0.0; n];
    Ok((0..first.plane_len())
        .map(|i| {
            for (c, m) in column.iter_mut().zip(&maps) {
                *c = m[i];
            }
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n as f64
        })
        .collect())
}

fn provenance(d: &Discriminator, dataset: &[Image]) -> String {
    let mut image_hashes: Vec<Vec<u8>> = dataset
        .iter()
        .map(|x| {
            let mut h = Sha256::new();
            x.data().iter().for_each(|v| h.update(v.to_le_bytes()));
            h.finalize().to_vec()
        })
        .collect();
    image_hashes.sort();
    let mut h = Sha256::new();
    h.update(param_digest(&d.params()).as_bytes());
    image_hashes.iter().for_each(|x| h.update(x));
    hex(&h.finalize())
}

/// The disentanglement guidance map of `d` over `dataset`.
pub fn compute_dg(d: &Discriminator, dataset: &[Image]) -> Result<GuidanceMap> {
    let mut values = compute_dg_raw(d, dataset)?;
    min_max_normalize(&mut values);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("guidance map".into()));
    }
    let (height, width) = dataset[0].extent();
    Ok(GuidanceMap {
        height,
        width,
        values,
        provenance: provenance(d, dataset),
    })
}

/// `DG < beta`, pointwise.
pub fn injection_mask(dg: &GuidanceMap, beta: f64) -> Result<InjectionMask> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::range("beta", beta, "[0, 1]"));
    }
    Ok(InjectionMask {
        height: dg.height,
        width: dg.width,
        beta,
        allowed: dg.values.iter().map(|v| *v < beta).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Conv2d, Layer, Sequential};
    use crate::nn::DiscriminatorConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(n, n, 3, |_, _, _| rng.random::<f64>())
    }

    fn single_scale(seq: Sequential) -> Discriminator {
        Discriminator::from_scales(DiscriminatorConfig { scales: 1, ..Default::default() }, vec![seq])
    }

    #[test]
    fn constant_critic_gives_zero_heatmap() {
        let mut d = Discriminator::new(DiscriminatorConfig::default(), 1);
        for p in d.params_mut() {
            p.fill(0.0);
        }
        let x = random_image(2, 32);
        for l in d.layers().to_vec() {
            let h = gradcam_layer(&d, &x, &l.name).unwrap();
            assert!(h.data().iter().all(|v| *v == 0.0));
        }
        let dg = compute_dg(&d, &[x]).unwrap();
        assert!(dg.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn toy_heatmap_is_the_rectified_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new(3, 2, 3, 1, 1, 0.5, &mut rng);
        let mut head = Conv2d::new(2, 1, 1, 1, 0, 0.0, &mut rng);
        head.weight = vec![-1.0, 0.0];
        head.bias = vec![0.0];
        let d = single_scale(Sequential::new(vec![Layer::Conv(conv.clone()), Layer::Relu, Layer::Conv(head)]));
        let x = random_image(4, 16);
        let heat = gradcam_layer(&d, &x, "s0.act0").unwrap();
        let (pre, _) = conv.forward(&Tensor::centered(&x));
        let n = 256.0;
        for (h, a) in heat.data().iter().zip(pre.plane(0)) {
            assert!((h - a.max(0.0) / n).abs() < 1e-15);
        }
        assert!(pre.plane(0).iter().any(|a| *a > 0.0));
    }

    #[test]
    fn heatmaps_are_non_negative() {
        let d = Discriminator::new(DiscriminatorConfig { init_std: 0.2, ..Default::default() }, 5);
        let x = random_image(6, 32);
        for (_, m) in gradcam_all(&d, &x).unwrap() {
            assert_eq!(m.len(), 32 * 32);
            assert!(m.iter().all(|v| *v >= 0.0));
        }
        assert!(matches!(gradcam_layer(&d, &x, "missing"), Err(Error::Registry(_))));
    }

    #[test]
    fn dataset_average_properties() {
        let d = Discriminator::new(DiscriminatorConfig { init_std: 0.2, ..Default::default() }, 7);
        let imgs: Vec<Image> = (0..4).map(|i| random_image(10 + i, 32)).collect();
        let a = image_guidance(&d, &imgs[0]).unwrap();
        let b = image_guidance(&d, &imgs[1]).unwrap();
        let raw = compute_dg_raw(&d, &imgs[..2]).unwrap();
        for i in 0..raw.len() {
            assert!((raw[i] - 0.5 * (a[i] + b[i])).abs() < 1e-15);
        }
        let dg = compute_dg(&d, &imgs).unwrap();
        let lo = dg.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = dg.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        let mut rev = imgs.clone();
        rev.reverse();
        assert_eq!(compute_dg(&d, &rev).unwrap(), dg);
        assert!(compute_dg(&d, &[]).is_err());
    }

    #[test]
    fn mask_thresholds() {
        let dg = GuidanceMap { height: 2, width: 2, values: vec![0.0, 0.3, 1.0, 0.75], provenance: String::new() };
        assert_eq!(injection_mask(&dg, 0.0).unwrap().count(), 0);
        let full = injection_mask(&dg, 1.0).unwrap();
        assert_eq!(full.allowed, vec![true, true, false, true]);
        assert_eq!(injection_mask(&dg, 0.75).unwrap().allowed, vec![true, true, false, false]);
        assert!(injection_mask(&dg, 0.3).unwrap().is_subset_of(&full));
        assert!(matches!(injection_mask(&dg, 1.5), Err(Error::ParamRange { .. })));
        assert!(injection_mask(&dg, -0.1).is_err());
    }

    #[test]
    fn normalization_of_constant_maps_is_zero() {
        let mut v = vec![0.4; 9];
        min_max_normalize(&mut v);
        assert!(v.iter().all(|x| *x == 0.0));
    }
}
