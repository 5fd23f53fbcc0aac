//! The desk-scale stand-in for a finetuned Inception network: a small
//! classifier over clear, styled and styled-plus-occluded scenes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PipelineConfig;
use super::synthetic::{apply_style, load_overlay, occlude, procedural_scene};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Checkpoint, Classifier};
use crate::occlusion::{composite, OcclusionKind};

/// Class labels: 0 clear source-domain scene, 1 styled, 2 styled and occluded.
pub const CLASSIFIER_CLASSES: usize = 3;

const CLASSIFIER_STAGE: u8 = 0;

/// Generates `metrics.classifier_samples` fresh scenes per class and trains
/// the classifier on them. Returns the model and its final training loss.
pub fn train_classifier(cfg: &PipelineConfig) -> Result<(Classifier, f64)> {
    let m = &cfg.metrics;
    let extent = (cfg.data.extent, cfg.data.extent);
    let overlay = match (cfg.occlusion.kind, &cfg.occlusion.overlay_path) {
        (OcclusionKind::Overlay, Some(p)) => Some(load_overlay(Path::new(p))?),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed ^ 0xC1A5);
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..m.classifier_samples {
        let x = procedural_scene(rng.random(), extent);
        images.push(x);
        labels.push(0);
        let s = apply_style(&procedural_scene(rng.random(), extent), &cfg.data.style);
        images.push(s);
        labels.push(1);
        let s = apply_style(&procedural_scene(rng.random(), extent), &cfg.data.style);
        let r = occlude(&s, rng.random(), cfg.data.true_sigma, &cfg.occlusion, overlay.as_ref())?;
        images.push(composite(&s, &r)?);
        labels.push(2);
    }
    let mut c = Classifier::new(3, CLASSIFIER_CLASSES, m.seed);
    let loss = c.train(&images, &labels, m.classifier_epochs, m.classifier_lr, m.seed)?;
    Ok((c, loss))
}

pub fn save_classifier(c: &Classifier, path: &Path, config_hash: &str) -> Result<()> {
    let mut ck = Checkpoint::new(CLASSIFIER_STAGE, config_hash);
    ck.meta = serde_json::json!({ "classes": c.classes() });
    ck.put_params("classifier", &c.params());
    ck.save(path)
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let ck = Checkpoint::load(path)?;
    if ck.stage != CLASSIFIER_STAGE {
        return Err(Error::format(path, format!("stage {} checkpoint is not a classifier", ck.stage)));
    }
    let classes = ck
        .meta
        .get("classes")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format(path, "classifier checkpoint lacks a class count"))?;
    let mut c = Classifier::new(3, classes as usize, 0);
    ck.take_params("classifier", c.params_mut())?;
    Ok(c)
}

/// Held-out accuracy of `c` on labeled images.
pub fn classifier_accuracy(c: &Classifier, images: &[Image], labels: &[usize]) -> f64 {
    let hits = images
        .iter()
        .zip(labels)
        .filter(|(x, &l)| {
            let p = c.probabilities(x);
            let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
            best == l
        })
        .count();
    hits as f64 / images.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trained_classifier_round_trips_and_separates_classes() {
        let mut cfg = PipelineConfig::default();
        cfg.metrics.classifier_samples = 24;
        cfg.metrics.classifier_epochs = 15;
        let (c, loss) = train_classifier(&cfg).unwrap();
        assert!(loss.is_finite());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("classifier.ckpt");
        save_classifier(&c, &p, &cfg.hash()).unwrap();
        let back = load_classifier(&p).unwrap();
        assert_eq!(back, c);

        // styled and styled-plus-occluded both count as the target domain
        let domain = |x: &Image| back.probabilities(x)[0] < 0.5;
        let mut hits = 0;
        for i in 0..10u64 {
            hits += usize::from(!domain(&procedural_scene(900 + i, (32, 32))));
            hits += usize::from(domain(&apply_style(&procedural_scene(950 + i, (32, 32)), &cfg.data.style)));
        }
        assert!(hits >= 16, "{hits}/20 (loss {loss})");
    }
}
