use crate::image::Image;
use crate::nn::{param_digest, Classifier};

/// Fixed-dimension image descriptor used by the distribution metrics.
pub trait FeatureExtractor: Sync {
    fn features(&self, x: &Image) -> Vec<f64>;
    fn dim(&self) -> usize;
    /// Identifies the extractor (and its weights) in every report.
    fn provenance(&self) -> String;
}

/// Class posterior used by the inception scores.
pub trait ClassPosterior: Sync {
    fn probabilities(&self, x: &Image) -> Vec<f64>;
    fn provenance(&self) -> String;
}

/// Hand-crafted statistics: per-channel mean and spread, mean gradient
/// magnitude at two scales, Laplacian energy, and 2x2 quadrant means.
///
/// The gradient and Laplacian terms respond to defocus, the moments and
/// quadrant means to color and spatially varying style shifts.
#[derive(Clone, Copy, Debug, Default)]
pub struct StatsExtractor;

impl StatsExtractor {
    const PER_CHANNEL: usize = 9;
}

fn at(p: &[f64], w: usize, y: usize, x: usize) -> f64 {
    p[y * w + x]
}

impl FeatureExtractor for StatsExtractor {
    fn features(&self, x: &Image) -> Vec<f64> {
        let (h, w) = x.extent();
        let mut f = Vec::with_capacity(self.dim());
        for c in 0..3 {
            let p = x.plane(c.min(x.channels() - 1));
            let n = p.len() as f64;
            let mean = p.iter().sum::<f64>() / n;
            let std = (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let grad = |step: usize| {
                let mut s = 0.0;
                let mut k = 0.0;
                for y in 0..h - step {
                    for xx in 0..w - step {
                        let gx = at(p, w, y, xx + step) - at(p, w, y, xx);
                        let gy = at(p, w, y + step, xx) - at(p, w, y, xx);
                        s += (gx * gx + gy * gy).sqrt();
                        k += 1.0;
                    }
                }
                s / k
            };
            let mut lap = 0.0;
            for y in 1..h - 1 {
                for xx in 1..w - 1 {
                    let l = at(p, w, y - 1, xx) + at(p, w, y + 1, xx) + at(p, w, y, xx - 1) + at(p, w, y, xx + 1) - 4.0 * at(p, w, y, xx);
                    lap += l * l;
                }
            }
            f.extend([mean, std, grad(1), grad(3), (lap / ((h - 2) * (w - 2)) as f64).sqrt()]);
            for (ys, xs) in [(0..h / 2, 0..w / 2), (0..h / 2, w / 2..w), (h / 2..h, 0..w / 2), (h / 2..h, w / 2..w)] {
                let cnt = (ys.len() * xs.len()) as f64;
                let s: f64 = ys.flat_map(|y| xs.clone().map(move |xx| (y, xx))).map(|(y, xx)| at(p, w, y, xx)).sum();
                f.push(s / cnt);
            }
        }
        f
    }

    fn dim(&self) -> usize {
        3 * Self::PER_CHANNEL
    }

    fn provenance(&self) -> String {
        "stats-v1".into()
    }
}

/// Pooled features and posteriors of a trained [`Classifier`].
pub struct ClassifierExtractor {
    pub classifier: Classifier,
    digest: String,
}

impl ClassifierExtractor {
    pub fn new(classifier: Classifier) -> Self {
        let digest = param_digest(&classifier.params());
        ClassifierExtractor { classifier, digest }
    }
}

impl FeatureExtractor for ClassifierExtractor {
    fn features(&self, x: &Image) -> Vec<f64> {
        self.classifier.features(x)
    }

    fn dim(&self) -> usize {
        Classifier::FEATURES
    }

    fn provenance(&self) -> String {
        format!("classifier-{}", &self.digest[..16])
    }
}

impl ClassPosterior for ClassifierExtractor {
    fn probabilities(&self, x: &Image) -> Vec<f64> {
        self.classifier.probabilities(x)
    }

    fn provenance(&self) -> String {
        format!("classifier-{}", &self.digest[..16])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::gaussian_psf_blur;

    #[test]
    fn stats_have_fixed_dimension_and_see_blur() {
        let e = StatsExtractor;
        let x = Image::from_fn(32, 32, 3, |c, y, xx| if (y / 4 + xx / 4 + c) % 2 == 0 { 0.9 } else { 0.1 });
        let f = e.features(&x);
        assert_eq!(f.len(), e.dim());
        let g = e.features(&gaussian_psf_blur(&x, 2.0, 4.0).unwrap());
        assert!(g[2] < f[2] && g[4] < f[4]);
        assert_eq!(e.features(&Image::filled(16, 16, 1, 0.3)).len(), e.dim());
    }
}
