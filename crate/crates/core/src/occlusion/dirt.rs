//! Opaque brownish soiling blobs whose only transparency comes from defocus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AlphaProduct, ColorRange, DropField, OcclusionConfig, OcclusionKind, OcclusionRender, PhysicalParams, RenderTangent, SceneLink};
use crate::error::{Error, Result};
use crate::image::{AlphaMap, GaussianKernel, Image};

const COLOR_STREAM: u64 = 0xD1A7_5011;

fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Flat per-blob colors, a deterministic function of the field seed.
pub(crate) fn blob_colors(field: &DropField, range: &ColorRange) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(field.seed ^ COLOR_STREAM);
    let mut pick = |r: [f64; 2]| r[0] + rng.random::<f64>() * (r[1] - r[0]);
    field
        .drops
        .iter()
        .map(|_| {
            let h = pick(range.hue);
            let s = pick(range.saturation);
            let v = pick(range.value);
            hsv_to_rgb(h, s, v)
        })
        .collect()
}

fn render(scene: &Image, field: &DropField, params: &PhysicalParams, cfg: &OcclusionConfig, tangent: bool) -> Result<OcclusionRender> {
    let sigma = params.checked_sigma(OcclusionKind::Dirt, cfg.sigma_max)?;
    if scene.extent() != field.extent() {
        return Err(Error::Contract("dirt field extent differs from the scene".into()));
    }
    let (h, w) = scene.extent();
    let ch = scene.channels();
    let n = h * w;
    let kernel = GaussianKernel::new(sigma, cfg.sigma_max)?;
    let colors = blob_colors(field, &cfg.color_range);

    // later blobs paint over earlier ones
    let mut paint = vec![0.0; ch * n];
    let mut union = vec![0.0; n];
    let mut alpha = AlphaProduct::new(n);
    for (drop_idx, d) in field.drops.iter().enumerate() {
        let Some((rect, plane)) = d.rasterize(h, w) else {
            continue;
        };
        let col = colors[drop_idx];
        for y in rect.y0..=rect.y1 {
            for x in rect.x0..=rect.x1 {
                let i = y * w + x;
                if plane[i] > 0.0 {
                    union[i] = 1.0;
                    for c in 0..ch {
                        paint[c * n + i] = col[c.min(2)];
                    }
                }
            }
        }
        if tangent {
            let (b, db) = kernel.blur_plane_tangent(&plane, h, w, Some(rect));
            alpha.push(&b, Some(&db));
        } else {
            alpha.push(&kernel.blur_plane(&plane, h, w, Some(rect)), None);
        }
    }

    let blur = |p: &[f64]| {
        if tangent {
            kernel.blur_plane_tangent(p, h, w, None)
        } else {
            (kernel.blur_plane(p, h, w, None), Vec::new())
        }
    };
    let (cov, d_cov) = blur(&union);
    let mut occ = Image::zeros(h, w, ch);
    let mut d_occ = Image::zeros(h, w, ch);
    for c in 0..ch {
        let (p, dp) = blur(&paint[c * n..(c + 1) * n]);
        let o = occ.plane_mut(c);
        for i in 0..n {
            if cov[i] > 1e-12 {
                o[i] = p[i] / cov[i];
            }
        }
        if tangent {
            let o = occ.plane(c).to_vec();
            let dop = d_occ.plane_mut(c);
            for i in 0..n {
                if cov[i] > 1e-12 {
                    dop[i] = (dp[i] - o[i] * d_cov[i]) / cov[i];
                }
            }
        }
    }

    Ok(OcclusionRender {
        occ_image: occ,
        alpha: AlphaMap::from_image(Image::from_vec(h, w, 1, alpha.alpha)?)?,
        tangent: tangent.then(|| RenderTangent {
            d_occ,
            d_alpha: Image::from_vec(h, w, 1, alpha.d_alpha).expect("alpha extent"),
        }),
        scene_link: SceneLink::None,
    })
}

/// Renders soiling blobs. No scene content is sampled inside blobs.
pub fn render_dirt(scene: &Image, field: &DropField, params: &PhysicalParams, cfg: &OcclusionConfig) -> Result<OcclusionRender> {
    render(scene, field, params, cfg, false)
}

pub fn render_dirt_with_tangent(scene: &Image, field: &DropField, params: &PhysicalParams, cfg: &OcclusionConfig) -> Result<OcclusionRender> {
    render(scene, field, params, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::gaussian_psf_blur;
    use crate::occlusion::{composite, composite_tangent, sample_drop_field, DropSpec};

    fn dirt_cfg() -> OcclusionConfig {
        OcclusionConfig {
            kind: OcclusionKind::Dirt,
            r_min: 5.0,
            r_max: 9.0,
            p_r: 0.6,
            sigma_max: 12.0,
            ..OcclusionConfig::default()
        }
    }

    #[test]
    fn tiny_sigma_gives_binary_alpha() {
        let cfg = dirt_cfg();
        let scene = Image::filled(64, 64, 3, 0.5);
        let field = sample_drop_field(2, (64, 64), &cfg, None).unwrap();
        let r = render_dirt(&scene, &field, &PhysicalParams::dirt(1e-3), &cfg).unwrap();
        for a in r.alpha.values() {
            assert!(*a < 1e-3 || *a > 1.0 - 1e-3, "{a}");
        }
        assert!(r.alpha.values().iter().any(|a| *a < 1e-3));
    }

    #[test]
    fn deterministic_colors_and_supports() {
        let cfg = dirt_cfg();
        let scene = Image::filled(64, 64, 3, 0.5);
        let field = sample_drop_field(3, (64, 64), &cfg, None).unwrap();
        let a = render_dirt(&scene, &field, &PhysicalParams::dirt(2.0), &cfg).unwrap();
        let b = render_dirt(&scene, &field, &PhysicalParams::dirt(2.0), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn colors_are_brownish() {
        let cfg = dirt_cfg();
        let field = sample_drop_field(3, (64, 64), &cfg, None).unwrap();
        for [r, g, b] in blob_colors(&field, &cfg.color_range) {
            assert!(r >= g && g >= b, "{r} {g} {b}");
        }
    }

    #[test]
    fn heavy_defocus_makes_small_blob_translucent() {
        let cfg = dirt_cfg();
        let mut field = DropField::empty(0, (64, 64));
        field.drops.push(DropSpec::disc((32.0, 32.0), 3.0));
        let scene = Image::filled(64, 64, 3, 0.5);
        let r = render_dirt(&scene, &field, &PhysicalParams::dirt(8.0), &cfg).unwrap();
        // oracle: 1 - blurred indicator at the blob center
        let mut ind = Image::zeros(64, 64, 1);
        let (_, plane) = field.drops[0].rasterize(64, 64).unwrap();
        ind.data_mut().copy_from_slice(&plane);
        let b = gaussian_psf_blur(&ind, 8.0, cfg.sigma_max).unwrap();
        let expect = 1.0 - b.get(0, 32, 32);
        let min_inside = (29..=35)
            .flat_map(|y| (29..=35).map(move |x| (y, x)))
            .filter(|&(y, x)| plane[y * 64 + x] > 0.0)
            .map(|(y, x)| r.alpha.image().get(0, y, x))
            .fold(f64::INFINITY, f64::min);
        assert!(min_inside > 0.0);
        assert!((r.alpha.image().get(0, 32, 32) - expect).abs() < 1e-12);
    }

    #[test]
    fn blob_interior_shows_no_scene_at_tiny_sigma() {
        let cfg = dirt_cfg();
        let mut field = DropField::empty(1, (32, 32));
        field.drops.push(DropSpec::disc((16.0, 16.0), 5.0));
        let a = Image::filled(32, 32, 3, 0.1);
        let b = Image::filled(32, 32, 3, 0.9);
        let ra = render_dirt(&a, &field, &PhysicalParams::dirt(1e-3), &cfg).unwrap();
        let rb = render_dirt(&b, &field, &PhysicalParams::dirt(1e-3), &cfg).unwrap();
        let ya = composite(&a, &ra).unwrap();
        let yb = composite(&b, &rb).unwrap();
        for c in 0..3 {
            assert!((ya.get(c, 16, 16) - yb.get(c, 16, 16)).abs() < 1e-9);
        }
    }

    #[test]
    fn sigma_tangent_matches_finite_differences() {
        let cfg = dirt_cfg();
        let scene = Image::from_fn(40, 40, 3, |c, y, x| ((c * 5 + y * 3 + x * 7) % 17) as f64 / 17.0);
        let field = sample_drop_field(8, (40, 40), &OcclusionConfig { r_max: 6.0, ..cfg.clone() }, None).unwrap();
        let probe = Image::from_fn(40, 40, 3, |c, y, x| (((c + 1) * (y + 2) * (x + 3)) % 11) as f64 / 11.0 - 0.5);
        let dot = |a: &Image| a.data().iter().zip(probe.data()).map(|(x, y)| x * y).sum::<f64>();
        for sigma in [1.5, 4.0] {
            let r = render_dirt_with_tangent(&scene, &field, &PhysicalParams::dirt(sigma), &cfg).unwrap();
            let analytic = dot(&composite_tangent(&scene, &r).unwrap());
            let f = |s: f64| dot(&composite(&scene, &render_dirt(&scene, &field, &PhysicalParams::dirt(s), &cfg).unwrap()).unwrap());
            let fd = (f(sigma + 1e-3) - f(sigma - 1e-3)) / 2e-3;
            assert!((fd - analytic).abs() / analytic.abs() < 1e-3, "{fd} vs {analytic}");
        }
    }
}
