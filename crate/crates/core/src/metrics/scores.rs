use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{ClassPosterior, FeatureExtractor};
use crate::error::{Error, Result};
use crate::image::Image;

/// `exp(E_x[KL(p(c|x) || p(c))])` over a set of posteriors.
pub fn inception_score(probs: &[Vec<f64>]) -> f64 {
    let n = probs.len() as f64;
    let k = probs[0].len();
    let marginal: Vec<f64> = (0..k).map(|c| probs.iter().map(|p| p[c]).sum::<f64>() / n).collect();
    let kl: f64 = probs
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(pc, _)| **pc > 0.0)
                .map(|(pc, m)| pc * (pc / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    kl.exp()
}

/// IS over all translations and CIS, the mean IS within each source's group.
pub fn inception_scores(groups: &[Vec<Image>], posterior: &dyn ClassPosterior) -> Result<(f64, f64)> {
    if groups.is_empty() || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::Contract("CIS needs at least two translations per source".into()));
    }
    let probs: Vec<Vec<Vec<f64>>> = groups
        .par_iter()
        .map(|g| g.iter().map(|x| posterior.probabilities(x)).collect())
        .collect();
    let all: Vec<Vec<f64>> = probs.iter().flatten().cloned().collect();
    let cis = probs.iter().map(|g| inception_score(g)).sum::<f64>() / probs.len() as f64;
    Ok((inception_score(&all), cis))
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Euclidean distance between unit-normalized feature vectors, in `[0, 2]`.
pub fn feature_distance(extractor: &dyn FeatureExtractor, a: &Image, b: &Image) -> f64 {
    let (fa, fb) = (unit(&extractor.features(a)), unit(&extractor.features(b)));
    fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean distance over aligned pairs.
pub fn perceptual_distance(pairs: &[(Image, Image)], extractor: &dyn FeatureExtractor) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("no pairs to compare".into()));
    }
    let d: Vec<f64> = pairs.par_iter().map(|(a, b)| feature_distance(extractor, a, b)).collect();
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

fn content_key(x: &Image) -> Vec<u8> {
    let mut h = Sha256::new();
    x.data().iter().for_each(|v| h.update(v.to_le_bytes()));
    h.finalize().to_vec()
}

/// Mean distance over `n_pairs` random distinct pairs of `set`, drawn with
/// `seed` after sorting the set by content. Returns the value and the number
/// of pairs used, which is capped by the number of available pairs.
pub fn perceptual_diversity(set: &[Image], extractor: &dyn FeatureExtractor, n_pairs: usize, seed: u64) -> Result<(f64, usize)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::Contract("diversity needs at least two images".into()));
    }
    let mut order: Vec<(Vec<u8>, usize)> = set.iter().enumerate().map(|(i, x)| (content_key(x), i)).collect();
    order.sort();
    let total = n * (n - 1) / 2;
    let all_pairs = || (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)));
    let chosen: Vec<(usize, usize)> = if n_pairs >= total {
        all_pairs().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = sample(&mut rng, total, n_pairs).into_vec();
        picks.sort_unstable();
        all_pairs().enumerate().filter(|(k, _)| picks.binary_search(k).is_ok()).map(|(_, p)| p).collect()
    };
    let feats: Vec<Vec<f64>> = order.par_iter().map(|(_, i)| unit(&extractor.features(&set[*i]))).collect();
    let d: Vec<f64> = chosen
        .iter()
        .map(|&(i, j)| feats[i].iter().zip(&feats[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, d.len()))
}
