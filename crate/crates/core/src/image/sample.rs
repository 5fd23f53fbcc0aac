use super::{Coords, Image};
use crate::error::{Error, Result};

/// Clamped bilinear lookup footprint of one sampling position.
#[derive(Clone, Copy, Debug)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    // zero where the coordinate was clamped to the border
    du_live: bool,
    dv_live: bool,
}

#[inline]
fn axis(p: f64, n: usize) -> (usize, usize, f64, bool) {
    let hi = (n - 1) as f64;
    let live = p > 0.0 && p < hi;
    let pc = p.clamp(0.0, hi);
    let i0 = (pc.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, pc - i0 as f64, live)
}

#[inline]
fn tap(u: f64, v: f64, h: usize, w: usize) -> Tap {
    let (x0, x1, fx, du_live) = axis(u, w);
    let (y0, y1, fy, dv_live) = axis(v, h);
    Tap {
        x0,
        x1,
        y0,
        y1,
        fx,
        fy,
        du_live,
        dv_live,
    }
}

fn check(image: &Image, coords: &Coords) -> Result<(usize, usize)> {
    if image.data().is_empty() {
        return Err(Error::Contract("bilinear_sample on an empty image".into()));
    }
    if coords.u.len() != coords.v.len() || coords.u.len() != coords.extent().0 * coords.extent().1 {
        return Err(Error::Contract("malformed coordinate grid".into()));
    }
    Ok(coords.extent())
}

/// Samples `image` at every coordinate, clamping out-of-range positions to the border.
///
/// The output takes its spatial extent from `coords`.
pub fn bilinear_sample(image: &Image, coords: &Coords) -> Result<Image> {
    let (oh, ow) = check(image, coords)?;
    let (h, w) = image.extent();
    let mut out = Image::zeros(oh, ow, image.channels());
    let n = oh * ow;
    for i in 0..n {
        let t = tap(coords.u[i], coords.v[i], h, w);
        for c in 0..image.channels() {
            let p = image.plane(c);
            let top = p[t.y0 * w + t.x0] * (1.0 - t.fx) + p[t.y0 * w + t.x1] * t.fx;
            let bot = p[t.y1 * w + t.x0] * (1.0 - t.fx) + p[t.y1 * w + t.x1] * t.fx;
            out.plane_mut(c)[i] = top * (1.0 - t.fy) + bot * t.fy;
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_sample`] with respect to the sampled image.
///
/// Scatters `grad_out` back onto an image of extent `(height, width)`.
pub fn bilinear_sample_adjoint(grad_out: &Image, coords: &Coords, height: usize, width: usize) -> Result<Image> {
    if grad_out.extent() != coords.extent() {
        return Err(Error::Contract("bilinear_sample_adjoint: gradient/coords extent mismatch".into()));
    }
    let mut g = Image::zeros(height, width, grad_out.channels());
    let n = grad_out.plane_len();
    for i in 0..n {
        let t = tap(coords.u[i], coords.v[i], height, width);
        let w00 = (1.0 - t.fx) * (1.0 - t.fy);
        let w01 = t.fx * (1.0 - t.fy);
        let w10 = (1.0 - t.fx) * t.fy;
        let w11 = t.fx * t.fy;
        for c in 0..grad_out.channels() {
            let go = grad_out.plane(c)[i];
            if go == 0.0 {
                continue;
            }
            let p = g.plane_mut(c);
            p[t.y0 * width + t.x0] += w00 * go;
            p[t.y0 * width + t.x1] += w01 * go;
            p[t.y1 * width + t.x0] += w10 * go;
            p[t.y1 * width + t.x1] += w11 * go;
        }
    }
    Ok(g)
}

/// Gradient of `<grad_out, bilinear_sample(image, coords)>` with respect to the coordinates.
///
/// Returns `(d/du, d/dv)` per output pixel; clamped coordinates get zero.
pub fn bilinear_sample_coord_grad(image: &Image, coords: &Coords, grad_out: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
    let (oh, ow) = check(image, coords)?;
    if grad_out.extent() != (oh, ow) || grad_out.channels() != image.channels() {
        return Err(Error::Contract("bilinear_sample_coord_grad: gradient shape mismatch".into()));
    }
    let (h, w) = image.extent();
    let n = oh * ow;
    let mut gu = vec![0.0; n];
    let mut gv = vec![0.0; n];
    for i in 0..n {
        let t = tap(coords.u[i], coords.v[i], h, w);
        for c in 0..image.channels() {
            let p = image.plane(c);
            let go = grad_out.plane(c)[i];
            let (a, b) = (p[t.y0 * w + t.x0], p[t.y0 * w + t.x1]);
            let (cc, d) = (p[t.y1 * w + t.x0], p[t.y1 * w + t.x1]);
            if t.du_live {
                gu[i] += go * ((b - a) * (1.0 - t.fy) + (d - cc) * t.fy);
            }
            if t.dv_live {
                let top = a * (1.0 - t.fx) + b * t.fx;
                let bot = cc * (1.0 - t.fx) + d * t.fx;
                gv[i] += go * (bot - top);
            }
        }
    }
    Ok((gu, gv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |_, _, x| x as f64 / (w - 1) as f64)
    }

    #[test]
    fn identity_coords_reproduce_input() {
        let img = Image::from_fn(9, 11, 3, |c, y, x| ((c * 7 + y * 3 + x) % 13) as f64 / 13.0);
        let out = bilinear_sample(&img, &Coords::identity(9, 11)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn unit_shift_moves_ramp_one_column_with_clamped_border() {
        let img = ramp(8, 10);
        let coords = Coords::from_fn(8, 10, |y, x| (x as f64 + 1.0, y as f64));
        let out = bilinear_sample(&img, &coords).unwrap();
        for y in 0..8 {
            for x in 0..10 {
                let src = (x + 1).min(9);
                assert_eq!(out.get(0, y, x), img.get(0, y, src));
            }
        }
    }

    #[test]
    fn center_of_two_by_two() {
        let img = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let coords = Coords::from_fn(1, 1, |_, _| (0.5, 0.5));
        let out = bilinear_sample(&img, &coords).unwrap();
        assert_eq!(out.get(0, 0, 0), 0.5);
    }

    #[test]
    fn exact_on_affine_images() {
        let img = Image::from_fn(12, 12, 1, |_, y, x| 0.1 + 0.03 * x as f64 + 0.02 * y as f64);
        let coords = Coords::from_fn(5, 5, |y, x| (2.3 + 1.37 * x as f64, 1.9 + 1.61 * y as f64));
        let out = bilinear_sample(&img, &coords).unwrap();
        for i in 0..25 {
            let expect = 0.1 + 0.03 * coords.u[i] + 0.02 * coords.v[i];
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_forward_inner_product() {
        let img = Image::from_fn(7, 9, 2, |c, y, x| ((c + 3 * y + 5 * x) % 11) as f64 * 0.1);
        let coords = Coords::from_fn(6, 8, |y, x| (x as f64 * 1.3 - 0.7, y as f64 * 0.9 + 0.4));
        let g = Image::from_fn(6, 8, 2, |c, y, x| ((7 * c + y + 2 * x) % 5) as f64 - 2.0);
        let fwd = bilinear_sample(&img, &coords).unwrap();
        let lhs: f64 = fwd.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let adj = bilinear_sample_adjoint(&g, &coords, 7, 9).unwrap();
        let rhs: f64 = adj.data().iter().zip(img.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn coordinate_gradient_matches_finite_differences() {
        let img = Image::from_fn(10, 10, 1, |_, y, x| ((x as f64 * 0.7).sin() + (y as f64 * 0.4).cos()) * 0.25 + 0.5);
        let coords = Coords::from_fn(4, 4, |y, x| (2.21 + 1.13 * x as f64, 3.37 + 0.91 * y as f64));
        let g = Image::filled(4, 4, 1, 1.0);
        let (gu, gv) = bilinear_sample_coord_grad(&img, &coords, &g).unwrap();
        let eps = 1e-6;
        for i in 0..16 {
            let mut cp = coords.clone();
            cp.u[i] += eps;
            let mut cm = coords.clone();
            cm.u[i] -= eps;
            let fd = (bilinear_sample(&img, &cp).unwrap().data()[i] - bilinear_sample(&img, &cm).unwrap().data()[i]) / (2.0 * eps);
            assert!((fd - gu[i]).abs() < 1e-6, "du {i}: {fd} vs {}", gu[i]);
            let mut cp = coords.clone();
            cp.v[i] += eps;
            let mut cm = coords.clone();
            cm.v[i] -= eps;
            let fd = (bilinear_sample(&img, &cp).unwrap().data()[i] - bilinear_sample(&img, &cm).unwrap().data()[i]) / (2.0 * eps);
            assert!((fd - gv[i]).abs() < 1e-6, "dv {i}: {fd} vs {}", gv[i]);
        }
    }

    #[test]
    fn mismatched_gradient_extent_is_rejected() {
        let coords = Coords::identity(4, 4);
        let g = Image::zeros(5, 4, 1);
        assert!(matches!(bilinear_sample_adjoint(&g, &coords, 4, 4), Err(Error::Contract(_))));
    }
}
