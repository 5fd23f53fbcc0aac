//! Differentiable occlusion models and the alpha compositor.
//!
//! Every renderer returns an [`OcclusionRender`]: an occluder appearance image
//! and an alpha map where `1` means the scene is fully visible. The composite
//! is `alpha * scene + (1 - alpha) * occ_image`.
//!
//! Renderers that depend on the defocus `sigma` can also return the
//! derivative of both outputs with respect to `sigma`; the raindrop renderer
//! additionally exposes its transpose with respect to the scene so gradients
//! can reach a generator placed upstream.

mod dirt;
mod drops;
mod field;
mod gaussian;
mod overlay;

pub use dirt::{render_dirt, render_dirt_with_tangent};
pub use drops::{drop_displacement, render_raindrops, render_raindrops_with_tangent, DisplacementMap};
pub use field::{sample_drop_field, DropField, DropSpec};
pub use gaussian::render_gaussian_ablation;
pub use overlay::render_overlay;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{bilinear_sample_adjoint, gaussian_psf_blur_adjoint, AlphaMap, Coords, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionKind {
    Drop,
    Dirt,
    Overlay,
}

impl std::fmt::Display for OcclusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OcclusionKind::Drop => "drop",
            OcclusionKind::Dirt => "dirt",
            OcclusionKind::Overlay => "overlay",
        })
    }
}

impl std::str::FromStr for OcclusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(OcclusionKind::Drop),
            "dirt" => Ok(OcclusionKind::Dirt),
            "overlay" => Ok(OcclusionKind::Overlay),
            other => Err(Error::Config(format!("unknown occlusion kind `{other}`"))),
        }
    }
}

/// The regressable physical parameters `w`. Overlays carry none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub kind: OcclusionKind,
    pub sigma: Option<f64>,
}

impl PhysicalParams {
    pub fn drop(sigma: f64) -> Self {
        PhysicalParams {
            kind: OcclusionKind::Drop,
            sigma: Some(sigma),
        }
    }

    pub fn dirt(sigma: f64) -> Self {
        PhysicalParams {
            kind: OcclusionKind::Dirt,
            sigma: Some(sigma),
        }
    }

    pub fn overlay() -> Self {
        PhysicalParams {
            kind: OcclusionKind::Overlay,
            sigma: None,
        }
    }

    pub(crate) fn checked_sigma(&self, expect: OcclusionKind, sigma_max: f64) -> Result<f64> {
        if self.kind != expect {
            return Err(Error::Contract(format!("expected {expect} parameters, got {}", self.kind)));
        }
        let s = self
            .sigma
            .ok_or_else(|| Error::Contract(format!("{expect} parameters need a sigma")))?;
        if !(s.is_finite() && s > 0.0 && s <= sigma_max) {
            return Err(Error::range("sigma", s, format!("(0, {sigma_max}]")));
        }
        Ok(s)
    }
}

/// Brownish color ranges for dirt blobs, HSV with hue in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorRange {
    pub hue: [f64; 2],
    pub saturation: [f64; 2],
    pub value: [f64; 2],
}

impl Default for ColorRange {
    fn default() -> Self {
        ColorRange {
            hue: [18.0, 38.0],
            saturation: [0.35, 0.75],
            value: [0.12, 0.45],
        }
    }
}

/// The `[occlusion]` configuration section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub kind: OcclusionKind,
    /// Per-cell spawn probability.
    pub p_r: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Refraction magnification of the inverted neighbourhood inside a drop.
    pub magnification: f64,
    pub rho_range: [f64; 2],
    pub sigma_max: f64,
    pub color_range: ColorRange,
    pub overlay_path: Option<String>,
    /// Maximum amplitude of each outline harmonic.
    pub shape_amp_max: f64,
    /// Outline noise half-width, as a fraction of the radius.
    pub shape_noise: f64,
    pub noise_knots: usize,
    /// Center opacity of the Gaussian-shaped ablation occluder.
    pub gaussian_peak: f64,
    /// Gaussian std of the ablation occluder relative to the drop radius.
    pub gaussian_scale: f64,
    /// Fixed thickness of the shape-free refraction ablation.
    pub refract_rho: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            kind: OcclusionKind::Drop,
            p_r: 0.9,
            r_min: 3.0,
            r_max: 5.0,
            magnification: 1.5,
            rho_range: [0.6, 1.0],
            sigma_max: 8.0,
            color_range: ColorRange::default(),
            overlay_path: None,
            shape_amp_max: 0.2,
            shape_noise: 0.05,
            noise_knots: 8,
            gaussian_peak: 0.8,
            gaussian_scale: 0.5,
            refract_rho: 0.8,
        }
    }
}

/// Renders a sigma-parameterized occluder (drops or dirt), optionally with
/// its sigma tangent.
pub fn render_sigma(scene: &Image, field: &DropField, params: &PhysicalParams, cfg: &OcclusionConfig, tangent: bool) -> Result<OcclusionRender> {
    match (params.kind, tangent) {
        (OcclusionKind::Drop, false) => render_raindrops(scene, field, params, cfg),
        (OcclusionKind::Drop, true) => render_raindrops_with_tangent(scene, field, params, cfg),
        (OcclusionKind::Dirt, false) => render_dirt(scene, field, params, cfg),
        (OcclusionKind::Dirt, true) => render_dirt_with_tangent(scene, field, params, cfg),
        (OcclusionKind::Overlay, _) => Err(Error::Contract("overlays have no sigma to render with".into())),
    }
}

impl OcclusionConfig {
    /// Chebyshev distance from an occluder center beyond which no render of
    /// this configuration can change alpha: the largest outline extent plus
    /// the blur window, or the truncation radius of the Gaussian ablation.
    pub fn influence_radius(&self) -> usize {
        let outline = self.r_max * (1.0 + 2.0 * self.shape_amp_max + self.shape_noise);
        let blur = (3.0 * self.sigma_max).ceil();
        let gaussian = 3.0 * self.gaussian_scale * self.r_max;
        (outline.ceil() + blur).max(gaussian.ceil()) as usize + 1
    }
}

/// Square (Chebyshev) dilation of a boolean mask by `r` pixels.
pub fn dilate_mask(mask: &[bool], height: usize, width: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(width - 1));
            rows[y * width + x] = mask[y * width + lo..=y * width + hi].iter().any(|m| *m);
        }
    }
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(height - 1));
        for x in 0..width {
            out[y * width + x] = (lo..=hi).any(|yy| rows[yy * width + x]);
        }
    }
    out
}

/// Derivatives of a render with respect to `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderTangent {
    pub d_occ: Image,
    pub d_alpha: Image,
}

/// How the occluder image depends on the scene it was rendered over.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneLink {
    /// Occluder appearance is scene independent.
    None,
    /// `occ = blur(sample(scene, coords), sigma)`.
    Refracted { coords: Coords, sigma: f64, sigma_max: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionRender {
    pub occ_image: Image,
    pub alpha: AlphaMap,
    pub tangent: Option<RenderTangent>,
    pub scene_link: SceneLink,
}

impl OcclusionRender {
    /// Transpose of the occluder image with respect to the scene.
    pub fn scene_vjp(&self, grad_occ: &Image) -> Result<Image> {
        let (h, w) = grad_occ.extent();
        match &self.scene_link {
            SceneLink::None => Ok(Image::zeros(h, w, grad_occ.channels())),
            SceneLink::Refracted { coords, sigma, sigma_max } => {
                let g = gaussian_psf_blur_adjoint(grad_occ, *sigma, *sigma_max)?;
                bilinear_sample_adjoint(&g, coords, h, w)
            }
        }
    }
}

fn check_composite(scene: &Image, render: &OcclusionRender) -> Result<()> {
    scene.check_same_shape(&render.occ_image, "composite scene/occluder")?;
    if render.alpha.extent() != scene.extent() {
        return Err(Error::Contract("composite: alpha extent differs from scene".into()));
    }
    Ok(())
}

/// `alpha * scene + (1 - alpha) * occ_image`, per pixel and channel.
pub fn composite(scene: &Image, render: &OcclusionRender) -> Result<Image> {
    check_composite(scene, render)?;
    let n = scene.plane_len();
    let a = render.alpha.values();
    let mut out = scene.clone();
    for c in 0..scene.channels() {
        let s = scene.plane(c);
        let o = render.occ_image.plane(c);
        for (i, y) in out.plane_mut(c).iter_mut().enumerate().take(n) {
            *y = a[i] * s[i] + (1.0 - a[i]) * o[i];
        }
    }
    Ok(out)
}

/// Derivative of the composite with respect to `sigma` (scene held fixed).
pub fn composite_tangent(scene: &Image, render: &OcclusionRender) -> Result<Image> {
    check_composite(scene, render)?;
    let t = render
        .tangent
        .as_ref()
        .ok_or_else(|| Error::Contract("render was produced without a sigma tangent".into()))?;
    let a = render.alpha.values();
    let da = t.d_alpha.data();
    let mut out = Image::zeros(scene.height(), scene.width(), scene.channels());
    for c in 0..scene.channels() {
        let s = scene.plane(c);
        let o = render.occ_image.plane(c);
        let d_o = t.d_occ.plane(c);
        for (i, y) in out.plane_mut(c).iter_mut().enumerate() {
            *y = da[i] * (s[i] - o[i]) + (1.0 - a[i]) * d_o[i];
        }
    }
    Ok(out)
}

/// Gradients of `<grad, composite(scene, render)>` with respect to each input.
#[derive(Clone, Debug)]
pub struct CompositeGrads {
    pub scene: Image,
    pub occ: Image,
    pub alpha: Image,
}

pub fn composite_backward(scene: &Image, render: &OcclusionRender, grad: &Image) -> Result<CompositeGrads> {
    check_composite(scene, render)?;
    scene.check_same_shape(grad, "composite gradient")?;
    let (h, w) = scene.extent();
    let a = render.alpha.values();
    let mut gs = Image::zeros(h, w, scene.channels());
    let mut go = Image::zeros(h, w, scene.channels());
    let mut ga = Image::zeros(h, w, 1);
    for c in 0..scene.channels() {
        let g = grad.plane(c);
        let s = scene.plane(c);
        let o = render.occ_image.plane(c);
        let gsp = gs.plane_mut(c);
        for i in 0..h * w {
            gsp[i] = a[i] * g[i];
        }
        let gop = go.plane_mut(c);
        for i in 0..h * w {
            gop[i] = (1.0 - a[i]) * g[i];
        }
        let gap = ga.plane_mut(0);
        for i in 0..h * w {
            gap[i] += g[i] * (s[i] - o[i]);
        }
    }
    Ok(CompositeGrads {
        scene: gs,
        occ: go,
        alpha: ga,
    })
}

/// Gradient of `<grad, composite(scene, render(scene))>` with respect to the
/// scene, following both the direct path and the occluder's scene dependence.
pub fn composite_scene_vjp(scene: &Image, render: &OcclusionRender, grad: &Image) -> Result<Image> {
    let g = composite_backward(scene, render, grad)?;
    let mut total = g.scene;
    let via = render.scene_vjp(&g.occ)?;
    for (t, v) in total.data_mut().iter_mut().zip(via.data()) {
        *t += v;
    }
    Ok(total)
}

/// Multiplies per-occluder alphas while carrying the product-rule tangent.
pub(crate) struct AlphaProduct {
    pub alpha: Vec<f64>,
    pub d_alpha: Vec<f64>,
}

impl AlphaProduct {
    pub fn new(n: usize) -> Self {
        AlphaProduct {
            alpha: vec![1.0; n],
            d_alpha: vec![0.0; n],
        }
    }

    /// Folds in `1 - coverage` where `d_coverage` is its sigma derivative.
    /// Blurred coverage can exceed 1 by a rounding error, so the factor is
    /// clamped to [0, 1].
    pub fn push(&mut self, coverage: &[f64], d_coverage: Option<&[f64]>) {
        match d_coverage {
            Some(dc) => {
                for i in 0..self.alpha.len() {
                    let a = (1.0 - coverage[i]).clamp(0.0, 1.0);
                    self.d_alpha[i] = self.d_alpha[i] * a - self.alpha[i] * dc[i];
                    self.alpha[i] *= a;
                }
            }
            None => {
                for (al, c) in self.alpha.iter_mut().zip(coverage) {
                    *al *= (1.0 - c).clamp(0.0, 1.0);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_render(h: usize, w: usize, occ: f64, alpha: f64) -> OcclusionRender {
        OcclusionRender {
            occ_image: Image::filled(h, w, 3, occ),
            alpha: AlphaMap::from_image(Image::filled(h, w, 1, alpha)).unwrap(),
            tangent: None,
            scene_link: SceneLink::None,
        }
    }

    #[test]
    fn alpha_one_returns_scene() {
        let scene = Image::from_fn(8, 8, 3, |c, y, x| ((c + y + x) % 4) as f64 / 4.0);
        let y = composite(&scene, &flat_render(8, 8, 0.9, 1.0)).unwrap();
        assert_eq!(y, scene);
    }

    #[test]
    fn alpha_zero_returns_occluder() {
        let scene = Image::filled(8, 8, 3, 0.3);
        let r = flat_render(8, 8, 0.9, 0.0);
        assert_eq!(composite(&scene, &r).unwrap(), r.occ_image);
    }

    #[test]
    fn half_alpha_blends() {
        let scene = Image::filled(8, 8, 3, 0.2);
        let y = composite(&scene, &flat_render(8, 8, 0.8, 0.5)).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn extent_mismatch_is_contract_violation() {
        let scene = Image::filled(8, 9, 3, 0.2);
        assert!(matches!(composite(&scene, &flat_render(8, 8, 0.8, 0.5)), Err(Error::Contract(_))));
    }

    #[test]
    fn kind_parses() {
        assert_eq!("dirt".parse::<OcclusionKind>().unwrap(), OcclusionKind::Dirt);
        assert!("fog".parse::<OcclusionKind>().is_err());
    }
}
