//! Ground-truth alpha-blended overlays (watermarks, fences) with random translation.

use super::{OcclusionRender, SceneLink};
use crate::error::{Error, Result};
use crate::image::{AlphaMap, Image};

/// Shifts an overlay and its alpha by `translation = (du, dv)` pixels.
///
/// Uncovered pixels get `alpha = 1` and a black occluder. Nothing is regressed.
pub fn render_overlay(scene: &Image, overlay: &Image, overlay_alpha: &AlphaMap, translation: (i64, i64)) -> Result<OcclusionRender> {
    let (h, w) = scene.extent();
    scene.check_same_shape(overlay, "overlay")?;
    if overlay_alpha.extent() != (h, w) {
        return Err(Error::Contract("overlay alpha extent differs from the scene".into()));
    }
    let (du, dv) = translation;
    if du.unsigned_abs() as usize > w || dv.unsigned_abs() as usize > h {
        return Err(Error::range("translation", du.abs().max(dv.abs()) as f64, format!("within +-({w}, {h})")));
    }
    let mut occ = Image::zeros(h, w, scene.channels());
    let mut alpha = Image::filled(h, w, 1, 1.0);
    for y in 0..h {
        let sy = y as i64 - dv;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w {
            let sx = x as i64 - du;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            let (sy, sx) = (sy as usize, sx as usize);
            alpha.set(0, y, x, overlay_alpha.image().get(0, sy, sx));
            for c in 0..scene.channels() {
                occ.set(c, y, x, overlay.get(c, sy, sx));
            }
        }
    }
    Ok(OcclusionRender {
        occ_image: occ,
        alpha: AlphaMap::from_image(alpha)?,
        tangent: None,
        scene_link: SceneLink::None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::composite;

    fn glyph(h: usize, w: usize) -> (Image, AlphaMap) {
        let color = Image::from_fn(h, w, 3, |c, _, _| [0.9, 0.1, 0.4][c]);
        let a = Image::from_fn(h, w, 1, |_, y, x| if (8..16).contains(&y) && (4..20).contains(&x) { 0.0 } else { 1.0 });
        (color, AlphaMap::from_image(a).unwrap())
    }

    #[test]
    fn transparent_overlay_returns_scene() {
        let scene = Image::from_fn(16, 16, 3, |c, y, x| ((c + y * x) % 7) as f64 / 7.0);
        let overlay = Image::filled(16, 16, 3, 0.3);
        let r = render_overlay(&scene, &overlay, &AlphaMap::clear(16, 16), (0, 0)).unwrap();
        assert_eq!(composite(&scene, &r).unwrap(), scene);
    }

    #[test]
    fn translation_shifts_alpha() {
        let (color, alpha) = glyph(32, 32);
        let scene = Image::filled(32, 32, 3, 0.5);
        let r0 = render_overlay(&scene, &color, &alpha, (0, 0)).unwrap();
        let r5 = render_overlay(&scene, &color, &alpha, (5, 0)).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let expect = if x >= 5 { r0.alpha.image().get(0, y, x - 5) } else { 1.0 };
                assert_eq!(r5.alpha.image().get(0, y, x), expect);
            }
        }
    }

    #[test]
    fn opaque_glyph_pixels_take_glyph_color() {
        let (color, alpha) = glyph(32, 32);
        let scene = Image::from_fn(32, 32, 3, |c, y, x| ((3 * c + y + x) % 9) as f64 / 9.0);
        let r = render_overlay(&scene, &color, &alpha, (3, -2)).unwrap();
        let y = composite(&scene, &r).unwrap();
        for yy in 6..14 {
            for xx in 7..23 {
                for c in 0..3 {
                    assert_eq!(y.get(c, yy, xx), color.get(c, 0, 0));
                }
            }
        }
    }

    #[test]
    fn oversized_translation_is_rejected() {
        let (color, alpha) = glyph(16, 24);
        let scene = Image::filled(16, 24, 3, 0.5);
        assert!(render_overlay(&scene, &color, &alpha, (25, 0)).is_err());
    }
}
