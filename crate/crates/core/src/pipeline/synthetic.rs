//! Procedural scenes, a known style shift and known occluders: a dataset
//! whose disentangled ground truth is available for every evaluation image.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DataConfig, StyleRegion, StyleSpec};
use crate::error::{Error, Result};
use crate::image::{read_png, write_png, AlphaMap, Image};
use crate::occlusion::{composite, render_overlay, render_sigma, sample_drop_field, OcclusionConfig, OcclusionKind, OcclusionRender, PhysicalParams};

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// Peak-to-peak amplitude of the per-pixel noise in procedural scenes.
pub const GRAIN: f64 = 0.2;

/// A clear street-like scene: sky gradient, ground, blocky buildings with
/// windows, a few discs, low-frequency texture and per-pixel grain.
pub fn procedural_scene(seed: u64, (h, w): (usize, usize)) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sky = (color(&mut rng, 0.55, 0.9), color(&mut rng, 0.35, 0.75));
    let ground = (color(&mut rng, 0.2, 0.45), color(&mut rng, 0.1, 0.35));
    let horizon = (h as f64 * rng.random_range(0.35..0.55)) as usize;
    let mut img = Image::from_fn(h, w, 3, |c, y, _| {
        if y < horizon {
            let t = y as f64 / horizon as f64;
            sky.0[c] * (1.0 - t) + sky.1[c] * t
        } else {
            let t = (y - horizon) as f64 / (h - horizon).max(1) as f64;
            ground.0[c] * (1.0 - t) + ground.1[c] * t
        }
    });
    let n_buildings = rng.random_range(2..6);
    for _ in 0..n_buildings {
        let bw = rng.random_range(w / 8..w / 3);
        let x0 = rng.random_range(0..w - bw);
        let top = rng.random_range(horizon / 4..horizon.max(horizon / 4 + 1));
        let bottom = (horizon + rng.random_range(0..h / 8 + 1)).min(h);
        let wall = color(&mut rng, 0.15, 0.7);
        let lit = color(&mut rng, 0.6, 0.95);
        let pitch = rng.random_range(3..6);
        for y in top..bottom {
            for x in x0..x0 + bw {
                let window = (y - top) % pitch == 1 && (x - x0) % pitch == 1;
                for c in 0..3 {
                    img.set(c, y, x, if window { lit[c] } else { wall[c] });
                }
            }
        }
    }
    for _ in 0..rng.random_range(1..4) {
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let r = rng.random_range(2.0..w as f64 / 6.0);
        let c0 = color(&mut rng, 0.1, 0.9);
        for y in 0..h {
            for x in 0..w {
                if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                    for c in 0..3 {
                        img.set(c, y, x, c0[c]);
                    }
                }
            }
        }
    }
    let (fx, fy, ph): (f64, f64, f64) = (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6), rng.random_range(0.0..6.3));
    let tex = Image::from_fn(h, w, 1, |_, y, x| 0.03 * (fx * x as f64 + ph).sin() * (fy * y as f64).cos());
    // per-pixel grain, so that defocus has texture to remove
    for c in 0..3 {
        for (v, t) in img.plane_mut(c).iter_mut().zip(tex.data()) {
            *v = (*v + t + GRAIN * (rng.random::<f64>() - 0.5)).clamp(0.02, 0.98);
        }
    }
    img
}

/// Applies the style shift to a clear scene.
pub fn apply_style(x: &Image, style: &StyleSpec) -> Image {
    let (h, _) = x.extent();
    let mut out = x.clone();
    let limit = match style.region {
        StyleRegion::Full => h,
        StyleRegion::TopHalf => h / 2,
    };
    for c in 0..x.channels() {
        let w = x.width();
        let p = out.plane_mut(c);
        for y in 0..limit {
            let ramp = style.gradient * (1.0 - 2.0 * y as f64 / (h - 1) as f64);
            for v in &mut p[y * w..(y + 1) * w] {
                *v = (style.gain[c.min(2)] * *v + style.bias[c.min(2)] + ramp).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Reads an overlay image together with its alpha map `<stem>_alpha.png`
/// (grayscale, 255 where the scene stays fully visible).
pub fn load_overlay(path: &Path) -> Result<(Image, AlphaMap)> {
    let img = read_png(path)?.broadcast(3);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("overlay");
    let alpha_path = path.with_file_name(format!("{stem}_alpha.png"));
    let alpha = read_png(&alpha_path)?;
    if alpha.channels() != 1 || alpha.extent() != img.extent() {
        return Err(Error::format(&alpha_path, "overlay alpha must be grayscale with the overlay's extent"));
    }
    Ok((img, AlphaMap::from_image(alpha)?))
}

/// Renders the configured occluder kind over `scene`.
pub fn occlude(scene: &Image, seed: u64, sigma: f64, occ: &OcclusionConfig, overlay: Option<&(Image, AlphaMap)>) -> Result<OcclusionRender> {
    match occ.kind {
        OcclusionKind::Overlay => {
            let (ov, alpha) = overlay.ok_or_else(|| Error::Config("overlay occlusions need occlusion.overlay_path".into()))?;
            let (h, w) = scene.extent();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let du = rng.random_range(-(w as i64) / 4..=(w as i64) / 4);
            let dv = rng.random_range(-(h as i64) / 4..=(h as i64) / 4);
            render_overlay(scene, ov, alpha, (du, dv))
        }
        kind => {
            let field = sample_drop_field(seed, scene.extent(), occ, None)?;
            let params = PhysicalParams { kind, sigma: Some(sigma) };
            render_sigma(scene, &field, &params, occ, false)
        }
    }
}

/// In-memory synthetic dataset; training sets are unpaired, evaluation sets
/// are index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train_source: Vec<Image>,
    pub train_target: Vec<Image>,
    pub eval_source: Vec<Image>,
    pub eval_gt_style: Vec<Image>,
    pub eval_target: Vec<Image>,
    /// Occluder coverage `1 - alpha`, one channel.
    pub eval_gt_masks: Vec<Image>,
}

pub const MANIFESTS: [&str; 6] = [
    "train_source.txt",
    "train_target.txt",
    "eval_source.txt",
    "eval_gt_style.txt",
    "eval_target.txt",
    "eval_gt_masks.txt",
];

impl Dataset {
    pub fn generate(spec: &DataConfig, occ: &OcclusionConfig) -> Result<Self> {
        let overlay = match (occ.kind, &occ.overlay_path) {
            (OcclusionKind::Overlay, Some(p)) => Some(load_overlay(Path::new(p))?),
            _ => None,
        };
        let extent = (spec.extent, spec.extent);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut seeds = |n: usize| (0..n).map(|_| (rng.random::<u64>(), rng.random::<u64>())).collect::<Vec<_>>();
        let train_src = seeds(spec.n_train);
        let train_tgt = seeds(spec.n_train);
        let eval = seeds(spec.n_eval);

        let train_source = train_src.iter().map(|s| procedural_scene(s.0, extent)).collect();
        let train_target = train_tgt
            .iter()
            .map(|s| {
                let styled = apply_style(&procedural_scene(s.0, extent), &spec.style);
                composite(&styled, &occlude(&styled, s.1, spec.true_sigma, occ, overlay.as_ref())?)
            })
            .collect::<Result<_>>()?;
        let mut d = Dataset {
            train_source,
            train_target,
            eval_source: Vec::new(),
            eval_gt_style: Vec::new(),
            eval_target: Vec::new(),
            eval_gt_masks: Vec::new(),
        };
        for s in &eval {
            let x = procedural_scene(s.0, extent);
            let gt = apply_style(&x, &spec.style);
            let r = occlude(&gt, s.1, spec.true_sigma, occ, overlay.as_ref())?;
            d.eval_target.push(composite(&gt, &r)?);
            d.eval_gt_masks.push(r.alpha.image().map(|a| 1.0 - a));
            d.eval_source.push(x);
            d.eval_gt_style.push(gt);
        }
        Ok(d)
    }

    fn sets(&self) -> [(&str, &str, &Vec<Image>); 6] {
        [
            ("source", "train", &self.train_source),
            ("target", "train", &self.train_target),
            ("source", "eval", &self.eval_source),
            ("gt_style", "eval", &self.eval_gt_style),
            ("target", "eval", &self.eval_target),
            ("gt_masks", "eval", &self.eval_gt_masks),
        ]
    }

    /// Writes `source/`, `target/`, `gt_style/`, `gt_masks/` and one manifest
    /// of relative paths per set.
    pub fn write(&self, root: &Path) -> Result<()> {
        for (manifest, (dir, split, images)) in MANIFESTS.iter().zip(self.sets()) {
            let d = root.join(dir);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            let mut lines = String::new();
            for (i, img) in images.iter().enumerate() {
                let rel = format!("{dir}/{split}_{i:04}.png");
                write_png(img, root.join(&rel))?;
                lines.push_str(&rel);
                lines.push('\n');
            }
            let m = root.join(manifest);
            fs::write(&m, lines).map_err(|e| Error::io(&m, e))?;
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let mut sets = MANIFESTS.iter().map(|m| read_manifest(root, m)).collect::<Result<Vec<_>>>()?;
        let mut take = || sets.remove(0);
        Ok(Dataset {
            train_source: take(),
            train_target: take(),
            eval_source: take(),
            eval_gt_style: take(),
            eval_target: take(),
            eval_gt_masks: take(),
        })
    }
}

/// Paths listed in a newline-separated manifest, relative to `root`.
pub fn manifest_paths(root: &Path, manifest: &str) -> Result<Vec<PathBuf>> {
    let m = root.join(manifest);
    let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| root.join(l)).collect())
}

/// Loads every image of a manifest.
pub fn read_manifest(root: &Path, manifest: &str) -> Result<Vec<Image>> {
    manifest_paths(root, manifest)?.iter().map(read_png).collect()
}
