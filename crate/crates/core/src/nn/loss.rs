//! Least-squares adversarial objectives over multi-scale patch scores.

use super::Tensor;
use crate::error::Result;
use crate::image::Image;

/// Anything that maps an image to one patch score map per scale.
pub trait PatchCritic {
    fn scores(&self, x: &Image) -> Result<Vec<Tensor>>;
}

/// `mean_scales(mean_pixels((s - target)^2))` and its gradient with respect
/// to every score.
pub fn lsgan_term(scores: &[Tensor], target: f64) -> (f64, Vec<Tensor>) {
    let ns = scores.len() as f64;
    let mut loss = 0.0;
    let grads = scores
        .iter()
        .map(|s| {
            let n = s.data.len() as f64;
            loss += s.data.iter().map(|v| (v - target).powi(2)).sum::<f64>() / n / ns;
            s.map(|v| 2.0 * (v - target) / n / ns)
        })
        .collect();
    (loss, grads)
}

fn batch_term(d: &dyn PatchCritic, batch: &[Image], target: f64) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for x in batch {
        total += lsgan_term(&d.scores(x)?, target).0;
    }
    Ok(total / batch.len() as f64)
}

/// Generator objective `E[(D(y_d) - 1)^2]`.
pub fn loss_gen(d: &dyn PatchCritic, fakes: &[Image]) -> Result<f64> {
    batch_term(d, fakes, 1.0)
}

/// Discriminator objective `E[D(y_d)^2] + E[(D(y) - 1)^2]`.
pub fn loss_disc(d: &dyn PatchCritic, fakes: &[Image], reals: &[Image]) -> Result<f64> {
    Ok(batch_term(d, fakes, 0.0)? + batch_term(d, reals, 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Conv2d, Layer, Sequential};
    use crate::nn::{Discriminator, DiscriminatorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Constant(f64);

    impl PatchCritic for Constant {
        fn scores(&self, _: &Image) -> Result<Vec<Tensor>> {
            Ok(vec![Tensor::filled(1, 4, 4, self.0), Tensor::filled(1, 2, 2, self.0)])
        }
    }

    /// Scores 0 on images with mean below 0.5, 1 otherwise.
    struct Threshold;

    impl PatchCritic for Threshold {
        fn scores(&self, x: &Image) -> Result<Vec<Tensor>> {
            let v = if x.mean() < 0.5 { 0.0 } else { 1.0 };
            Ok(vec![Tensor::filled(1, 4, 4, v), Tensor::filled(1, 2, 2, v)])
        }
    }

    fn img(v: f64) -> Image {
        Image::filled(8, 8, 3, v)
    }

    #[test]
    fn zero_cases_are_exact() {
        assert_eq!(loss_gen(&Constant(1.0), &[img(0.3), img(0.7)]).unwrap(), 0.0);
        assert_eq!(loss_disc(&Threshold, &[img(0.1)], &[img(0.9)]).unwrap(), 0.0);
    }

    #[test]
    fn half_critic_values() {
        let d = Constant(0.5);
        assert_eq!(loss_gen(&d, &[img(0.2)]).unwrap(), 0.25);
        assert_eq!(loss_disc(&d, &[img(0.2)], &[img(0.4)]).unwrap(), 0.5);
    }

    fn toy(seed: u64) -> Discriminator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = Sequential::new(vec![
            Layer::Conv(Conv2d::new(3, 4, 3, 2, 1, 0.3, &mut rng)),
            Layer::LeakyRelu(0.2),
            Layer::Conv(Conv2d::new(4, 1, 3, 1, 1, 0.3, &mut rng)),
        ]);
        let cfg = DiscriminatorConfig {
            scales: 1,
            ..DiscriminatorConfig::default()
        };
        Discriminator::from_scales(cfg, vec![seq])
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let d = toy(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fake = Image::from_fn(8, 8, 3, |_, _, _| rng.random::<f64>());
        let real = Image::from_fn(8, 8, 3, |_, _, _| rng.random::<f64>());

        let zero = |d: &Discriminator| d.params().iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let mut g_disc = zero(&d);
        let mut g_gen = zero(&d);
        for (x, t) in [(&fake, 0.0), (&real, 1.0)] {
            let tr = d.forward_trace(x).unwrap();
            let (_, gs) = lsgan_term(&tr.scores(), t);
            d.backward(&tr, gs, Some(&mut g_disc), false, false);
        }
        let tr = d.forward_trace(&fake).unwrap();
        let (_, gs) = lsgan_term(&tr.scores(), 1.0);
        let gin = d.backward(&tr, gs, Some(&mut g_gen), true, false).input.unwrap();

        let eps = 1e-6;
        let check = |a: f64, fd: f64| assert!((a - fd).abs() <= 1e-3 * a.abs().max(fd.abs()) + 1e-9, "{a} vs {fd}");
        for pi in 0..g_disc.len() {
            for idx in [0, g_disc[pi].len() - 1] {
                let perturbed = |s: f64| {
                    let mut dd = d.clone();
                    dd.params_mut()[pi][idx] += s;
                    dd
                };
                let (dp, dm) = (perturbed(eps), perturbed(-eps));
                let fd = (loss_disc(&dp, std::slice::from_ref(&fake), std::slice::from_ref(&real)).unwrap()
                    - loss_disc(&dm, std::slice::from_ref(&fake), std::slice::from_ref(&real)).unwrap())
                    / (2.0 * eps);
                check(g_disc[pi][idx], fd);
                let fd = (loss_gen(&dp, std::slice::from_ref(&fake)).unwrap() - loss_gen(&dm, std::slice::from_ref(&fake)).unwrap()) / (2.0 * eps);
                check(g_gen[pi][idx], fd);
            }
        }
        for idx in [0, 77, 191] {
            let mut xp = fake.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = fake.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss_gen(&d, &[xp]).unwrap() - loss_gen(&d, &[xm]).unwrap()) / (2.0 * eps);
            check(gin.data()[idx], fd);
        }
    }
}
