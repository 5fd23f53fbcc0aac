//! Scene-independent Gaussian-shaped occluders used as an ablation baseline.

use super::{DropField, OcclusionConfig, OcclusionRender, SceneLink};
use crate::error::{Error, Result};
use crate::image::{AlphaMap, Image};

/// White occluders with opacity `peak * exp(-|p - c|^2 / 2s^2)`, `s = gaussian_scale * radius`.
///
/// The profile is truncated at `3s`. Overlapping occluders multiply their
/// alphas, so on disjoint supports the result is the pointwise minimum.
pub fn render_gaussian_ablation(scene: &Image, field: &DropField, cfg: &OcclusionConfig) -> Result<OcclusionRender> {
    if scene.extent() != field.extent() {
        return Err(Error::Contract("gaussian field extent differs from the scene".into()));
    }
    if !(0.0..=1.0).contains(&cfg.gaussian_peak) {
        return Err(Error::range("gaussian_peak", cfg.gaussian_peak, "[0, 1]"));
    }
    let (h, w) = scene.extent();
    let mut alpha = Image::filled(h, w, 1, 1.0);
    for d in &field.drops {
        let s = cfg.gaussian_scale * d.radius;
        let reach = 3.0 * s;
        let (cu, cv) = d.center;
        let x0 = (cu - reach).floor().max(0.0) as usize;
        let y0 = (cv - reach).floor().max(0.0) as usize;
        let x1 = ((cu + reach).ceil().max(0.0) as usize).min(w - 1);
        let y1 = ((cv + reach).ceil().max(0.0) as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cu).powi(2) + (y as f64 - cv).powi(2);
                if d2 > reach * reach {
                    continue;
                }
                let opacity = cfg.gaussian_peak * (-d2 / (2.0 * s * s)).exp();
                let a = alpha.get(0, y, x) * (1.0 - opacity);
                alpha.set(0, y, x, a);
            }
        }
    }
    Ok(OcclusionRender {
        occ_image: Image::filled(h, w, scene.channels(), 1.0),
        alpha: AlphaMap::from_image(alpha)?,
        tangent: None,
        scene_link: SceneLink::None,
    })
}
