//! Stochastic occluder layouts (the noise realization `z`).

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OcclusionConfig;
use crate::error::{Error, Result};
use crate::image::Rect;

/// One lens-adherent occluder: center `(u, v)` in pixels, nominal radius,
/// trigonometric outline and thickness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropSpec {
    pub center: (f64, f64),
    pub radius: f64,
    /// Amplitudes of the `sin(θ + φ₁)` and `sin(2θ + φ₂)` outline terms.
    pub amplitudes: [f64; 2],
    pub phases: [f64; 2],
    /// Periodic outline noise knots, as a fraction of the radius.
    pub noise: Vec<f64>,
    pub thickness_rho: f64,
}

impl DropSpec {
    /// A plain disc with unit thickness.
    pub fn disc(center: (f64, f64), radius: f64) -> Self {
        DropSpec {
            center,
            radius,
            amplitudes: [0.0; 2],
            phases: [0.0; 2],
            noise: Vec::new(),
            thickness_rho: 1.0,
        }
    }

    /// Outline radius at angle `theta`.
    pub fn outline(&self, theta: f64) -> f64 {
        let [a1, a2] = self.amplitudes;
        let [p1, p2] = self.phases;
        let mut r = self.radius * (1.0 + a1 * (theta + p1).sin() + a2 * (2.0 * theta + p2).sin());
        if !self.noise.is_empty() {
            let n = self.noise.len();
            let t = theta.rem_euclid(TAU) / TAU * n as f64;
            let i = (t.floor() as usize) % n;
            let f = t - t.floor();
            r += self.radius * (self.noise[i] * (1.0 - f) + self.noise[(i + 1) % n] * f);
        }
        r
    }

    /// Upper bound of the outline radius over all angles.
    pub fn max_extent(&self) -> f64 {
        let noise = self.noise.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.radius * (1.0 + self.amplitudes[0].abs() + self.amplitudes[1].abs() + noise)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let d2 = dx * dx + dy * dy;
        if d2 == 0.0 {
            return true;
        }
        let r = self.outline(dy.atan2(dx));
        d2 <= r * r
    }

    /// Binary support over an `h x w` plane plus its bounding rectangle,
    /// or `None` when the drop misses the image entirely.
    pub fn rasterize(&self, h: usize, w: usize) -> Option<(Rect, Vec<f64>)> {
        let e = self.max_extent().ceil();
        let (cu, cv) = self.center;
        let x0 = (cu - e).floor().max(0.0);
        let y0 = (cv - e).floor().max(0.0);
        let x1 = (cu + e).ceil().min(w as f64 - 1.0);
        let y1 = (cv + e).ceil().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        let (x0, x1, y0, y1) = (x0 as usize, x1 as usize, y0 as usize, y1 as usize);
        let mut plane = vec![0.0; h * w];
        let mut any = false;
        let (mut rx0, mut rx1, mut ry0, mut ry1) = (x1, x0, y1, y0);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x as f64, y as f64) {
                    plane[y * w + x] = 1.0;
                    any = true;
                    rx0 = rx0.min(x);
                    rx1 = rx1.max(x);
                    ry0 = ry0.min(y);
                    ry1 = ry1.max(y);
                }
            }
        }
        any.then_some((
            Rect {
                y0: ry0,
                y1: ry1,
                x0: rx0,
                x1: rx1,
            },
            plane,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropField {
    pub drops: Vec<DropSpec>,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl DropField {
    pub fn empty(seed: u64, extent: (usize, usize)) -> Self {
        DropField {
            drops: Vec::new(),
            seed,
            height: extent.0,
            width: extent.1,
        }
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.drops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drops.is_empty()
    }

    /// Same layout with plain outlines and a fixed thickness.
    pub fn without_shape_variability(&self, rho: f64) -> DropField {
        let mut f = self.clone();
        for d in &mut f.drops {
            d.amplitudes = [0.0; 2];
            d.phases = [0.0; 2];
            d.noise.clear();
            d.thickness_rho = rho;
        }
        f
    }
}

/// Scatters occluders over the image.
///
/// The image is tiled into square cells of side `2 * r_max`; each cell
/// spawns one occluder with probability `p_r` at a uniform position inside
/// it. Occluders whose (rounded) center falls outside `allowed` are dropped.
pub fn sample_drop_field(
    seed: u64,
    extent: (usize, usize),
    cfg: &OcclusionConfig,
    allowed: Option<&[bool]>,
) -> Result<DropField> {
    let (h, w) = extent;
    if !(0.0..=1.0).contains(&cfg.p_r) {
        return Err(Error::range("p_r", cfg.p_r, "[0, 1]"));
    }
    let half = h.min(w) as f64 / 2.0;
    if !(cfg.r_min > 0.0 && cfg.r_min <= cfg.r_max) {
        return Err(Error::range("r_min", cfg.r_min, format!("(0, {}]", cfg.r_max)));
    }
    if cfg.r_max >= half {
        return Err(Error::range("r_max", cfg.r_max, format!("[r_min, {half})")));
    }
    let (rho_lo, rho_hi) = (cfg.rho_range[0], cfg.rho_range[1]);
    if !(rho_lo > 0.0 && rho_lo <= rho_hi && rho_hi <= 1.0) {
        return Err(Error::range("rho_range", rho_lo, "0 < lo <= hi <= 1"));
    }
    if let Some(mask) = allowed {
        if mask.len() != h * w {
            return Err(Error::Contract("allowed mask extent differs from the field extent".into()));
        }
    }
    let mut field = DropField::empty(seed, extent);
    let side = 2.0 * cfg.r_max;
    let ny = (h as f64 / side).ceil() as usize;
    let nx = (w as f64 / side).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for cy in 0..ny {
        for cx in 0..nx {
            // every cell consumes the same draws so layouts are nested in p_r
            let spawn: f64 = rng.random();
            let fu: f64 = rng.random();
            let fv: f64 = rng.random();
            let fr: f64 = rng.random();
            let frho: f64 = rng.random();
            let amps = [rng.random::<f64>() * cfg.shape_amp_max, rng.random::<f64>() * cfg.shape_amp_max];
            let phases = [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU];
            let noise: Vec<f64> = (0..cfg.noise_knots)
                .map(|_| (2.0 * rng.random::<f64>() - 1.0) * cfg.shape_noise)
                .collect();
            if spawn >= cfg.p_r {
                continue;
            }
            let u0 = cx as f64 * side;
            let v0 = cy as f64 * side;
            let u = (u0 + fu * side).min(w as f64 - 1.0);
            let v = (v0 + fv * side).min(h as f64 - 1.0);
            if let Some(mask) = allowed {
                let px = (u.round() as usize).min(w - 1);
                let py = (v.round() as usize).min(h - 1);
                if !mask[py * w + px] {
                    continue;
                }
            }
            field.drops.push(DropSpec {
                center: (u, v),
                radius: cfg.r_min + fr * (cfg.r_max - cfg.r_min),
                amplitudes: amps,
                phases,
                noise,
                thickness_rho: rho_lo + frho * (rho_hi - rho_lo),
            });
        }
    }
    Ok(field)
}
