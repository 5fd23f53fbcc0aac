//! Refractive raindrops: displacement-map sampling plus Gaussian defocus.

use super::{AlphaProduct, DropField, OcclusionConfig, OcclusionKind, OcclusionRender, PhysicalParams, RenderTangent, SceneLink};
use crate::error::{Error, Result};
use crate::image::{bilinear_sample, AlphaMap, Coords, GaussianKernel, Image, Rect};

/// Per-pixel sampling offsets `(U, V)` and thickness `rho`.
///
/// A pixel at `(u, v)` inside a drop samples the scene at
/// `(u + U * rho, v + V * rho)`. All three maps are zero outside drops.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementMap {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub rho: Vec<f64>,
}

impl DisplacementMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        DisplacementMap {
            height,
            width,
            u: vec![0.0; n],
            v: vec![0.0; n],
            rho: vec![0.0; n],
        }
    }

    pub fn to_coords(&self) -> Coords {
        let w = self.width;
        Coords::from_fn(self.height, w, |y, x| {
            let i = y * w + x;
            (x as f64 + self.u[i] * self.rho[i], y as f64 + self.v[i] * self.rho[i])
        })
    }

    /// `(U, V, rho)` as a three-channel image, offsets scaled by `1 / scale` around 0.5.
    pub fn to_image(&self, scale: f64) -> Image {
        let w = self.width;
        Image::from_fn(self.height, w, 3, |c, y, x| {
            let i = y * w + x;
            match c {
                0 => 0.5 + 0.5 * self.u[i] / scale,
                1 => 0.5 + 0.5 * self.v[i] / scale,
                _ => self.rho[i],
            }
        })
        .clamp01()
    }
}

pub(crate) fn rasterize_field(field: &DropField) -> Vec<(Rect, Vec<f64>)> {
    let (h, w) = field.extent();
    field.drops.iter().filter_map(|d| d.rasterize(h, w)).collect()
}

/// Builds the refraction displacement map of a drop field.
///
/// Inside a drop a pixel at offset `d` from the center samples the scene at
/// `center - magnification * d` when `rho = 1`: the neighbourhood appears
/// flipped both ways and magnified. Later drops overwrite earlier ones.
pub fn drop_displacement(field: &DropField, magnification: f64) -> DisplacementMap {
    let (h, w) = field.extent();
    let mut map = DisplacementMap::zeros(h, w);
    for d in &field.drops {
        let Some((rect, plane)) = d.rasterize(h, w) else {
            continue;
        };
        for y in rect.y0..=rect.y1 {
            for x in rect.x0..=rect.x1 {
                let i = y * w + x;
                if plane[i] == 0.0 {
                    continue;
                }
                let du = x as f64 - d.center.0;
                let dv = y as f64 - d.center.1;
                map.u[i] = -(1.0 + magnification) * du;
                map.v[i] = -(1.0 + magnification) * dv;
                map.rho[i] = d.thickness_rho;
            }
        }
    }
    map
}

fn render(scene: &Image, field: &DropField, params: &PhysicalParams, cfg: &OcclusionConfig, tangent: bool) -> Result<OcclusionRender> {
    let sigma = params.checked_sigma(OcclusionKind::Drop, cfg.sigma_max)?;
    if scene.extent() != field.extent() {
        return Err(Error::Contract("raindrop field extent differs from the scene".into()));
    }
    let (h, w) = scene.extent();
    let kernel = GaussianKernel::new(sigma, cfg.sigma_max)?;
    let coords = drop_displacement(field, cfg.magnification).to_coords();
    let sampled = bilinear_sample(scene, &coords)?;

    let mut occ = Image::zeros(h, w, scene.channels());
    let mut d_occ = Image::zeros(h, w, scene.channels());
    for c in 0..scene.channels() {
        if tangent {
            let (p, dp) = kernel.blur_plane_tangent(sampled.plane(c), h, w, None);
            occ.plane_mut(c).copy_from_slice(&p);
            d_occ.plane_mut(c).copy_from_slice(&dp);
        } else {
            let p = kernel.blur_plane(sampled.plane(c), h, w, None);
            occ.plane_mut(c).copy_from_slice(&p);
        }
    }

    let mut alpha = AlphaProduct::new(h * w);
    for (rect, plane) in rasterize_field(field) {
        if tangent {
            let (b, db) = kernel.blur_plane_tangent(&plane, h, w, Some(rect));
            alpha.push(&b, Some(&db));
        } else {
            alpha.push(&kernel.blur_plane(&plane, h, w, Some(rect)), None);
        }
    }

    Ok(OcclusionRender {
        occ_image: occ,
        alpha: AlphaMap::from_image(Image::from_vec(h, w, 1, alpha.alpha)?)?,
        tangent: tangent.then(|| RenderTangent {
            d_occ,
            d_alpha: Image::from_vec(h, w, 1, alpha.d_alpha).expect("alpha extent"),
        }),
        scene_link: SceneLink::Refracted {
            coords,
            sigma,
            sigma_max: cfg.sigma_max,
        },
    })
}

/// Renders raindrops over `scene`.
///
/// `occ_image` is the refracted scene blurred by the defocus PSF and
/// `alpha = prod_i (1 - blur(support_i))`, so drop borders soften with defocus.
pub fn render_raindrops(scene: &Image, field: &DropField, params: &PhysicalParams, cfg: &OcclusionConfig) -> Result<OcclusionRender> {
    render(scene, field, params, cfg, false)
}

/// [`render_raindrops`] plus the derivative of both outputs with respect to sigma.
pub fn render_raindrops_with_tangent(
    scene: &Image,
    field: &DropField,
    params: &PhysicalParams,
    cfg: &OcclusionConfig,
) -> Result<OcclusionRender> {
    render(scene, field, params, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::{composite, composite_scene_vjp, composite_tangent, sample_drop_field, DropSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn empty_field_has_zero_displacement() {
        let f = DropField::empty(0, (16, 16));
        let m = drop_displacement(&f, 1.5);
        assert!(m.u.iter().chain(&m.v).chain(&m.rho).all(|v| *v == 0.0));
    }

    #[test]
    fn empty_field_leaves_scene_untouched() {
        let scene = random_scene(24, 24, 1);
        let cfg = OcclusionConfig::default();
        let r = render_raindrops(&scene, &DropField::empty(0, (24, 24)), &PhysicalParams::drop(2.0), &cfg).unwrap();
        assert!(r.alpha.values().iter().all(|a| *a == 1.0));
        assert_eq!(composite(&scene, &r).unwrap(), scene);
    }

    #[test]
    fn unit_magnification_flips_vertical_ramp() {
        let (h, w) = (41, 41);
        let scene = Image::from_fn(h, w, 1, |_, y, _| y as f64 / (h - 1) as f64);
        let mut field = DropField::empty(0, (h, w));
        field.drops.push(DropSpec::disc((20.0, 20.0), 8.0));
        let coords = drop_displacement(&field, 1.0).to_coords();
        let out = bilinear_sample(&scene, &coords).unwrap();
        for y in 12..=28usize {
            for x in 12..=28usize {
                let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
                if dx * dx + dy * dy <= 64.0 {
                    let flipped = (40 - y) as f64 / 40.0;
                    assert!((out.get(0, y, x) - flipped).abs() < 1e-12, "({y},{x})");
                }
            }
        }
    }

    #[test]
    fn mean_alpha_increases_with_defocus() {
        let cfg = OcclusionConfig {
            r_min: 3.0,
            r_max: 5.0,
            p_r: 0.7,
            ..OcclusionConfig::default()
        };
        let scene = random_scene(48, 48, 2);
        let field = sample_drop_field(4, (48, 48), &cfg, None).unwrap();
        assert!(!field.is_empty());
        let mut prev = 0.0;
        for sigma in [1.0, 2.0, 4.0, 6.0, 8.0] {
            let r = render_raindrops(&scene, &field, &PhysicalParams::drop(sigma), &cfg).unwrap();
            let m = r.alpha.mean();
            assert!(m > prev, "sigma {sigma}: {m} <= {prev}");
            prev = m;
        }
    }

    #[test]
    fn sigma_tangent_matches_finite_differences() {
        let cfg = OcclusionConfig {
            sigma_max: 6.0,
            ..OcclusionConfig::default()
        };
        let scene = random_scene(32, 32, 7);
        let field = sample_drop_field(9, (32, 32), &cfg, None).unwrap();
        let probe = random_scene(32, 32, 8);
        let dot = |a: &Image| a.data().iter().zip(probe.data()).map(|(x, y)| x * y).sum::<f64>();
        for sigma in [1.0, 2.5] {
            let r = render_raindrops_with_tangent(&scene, &field, &PhysicalParams::drop(sigma), &cfg).unwrap();
            let analytic = dot(&composite_tangent(&scene, &r).unwrap());
            let f = |s: f64| {
                let r = render_raindrops(&scene, &field, &PhysicalParams::drop(s), &cfg).unwrap();
                dot(&composite(&scene, &r).unwrap())
            };
            let fd = (f(sigma + 1e-3) - f(sigma - 1e-3)) / 2e-3;
            assert!((fd - analytic).abs() / analytic.abs() < 1e-3, "{fd} vs {analytic}");
        }
    }

    #[test]
    fn scene_vjp_matches_finite_differences() {
        let cfg = OcclusionConfig::default();
        let (h, w) = (20, 20);
        let scene = random_scene(h, w, 3);
        let field = sample_drop_field(3, (h, w), &OcclusionConfig { r_min: 2.0, r_max: 4.0, p_r: 0.9, ..cfg.clone() }, None).unwrap();
        let params = PhysicalParams::drop(1.5);
        let probe = random_scene(h, w, 4);
        let r = render_raindrops(&scene, &field, &params, &cfg).unwrap();
        let g = composite_scene_vjp(&scene, &r, &probe).unwrap();
        let f = |s: &Image| {
            let r = render_raindrops(s, &field, &params, &cfg).unwrap();
            composite(s, &r).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        for idx in [0usize, 17, 211, 399, 777, 1100] {
            let mut sp = scene.clone();
            sp.data_mut()[idx] += 1e-5;
            let mut sm = scene.clone();
            sm.data_mut()[idx] -= 1e-5;
            let fd = (f(&sp) - f(&sm)) / 2e-5;
            assert!((fd - g.data()[idx]).abs() < 1e-6, "{idx}: {fd} vs {}", g.data()[idx]);
        }
    }

    #[test]
    fn wrong_kind_or_sigma_is_rejected() {
        let cfg = OcclusionConfig::default();
        let scene = random_scene(16, 16, 0);
        let f = DropField::empty(0, (16, 16));
        assert!(render_raindrops(&scene, &f, &PhysicalParams::dirt(1.0), &cfg).is_err());
        assert!(matches!(
            render_raindrops(&scene, &f, &PhysicalParams::drop(cfg.sigma_max * 2.0), &cfg),
            Err(Error::ParamRange { .. })
        ));
    }
}
