//! Adversarial regression of the defocus `sigma` through a frozen
//! discriminator, with a paired photometric fitter and a grid search used as
//! oracles.
//!
//! `sigma` is optimized through `sigma = softplus(theta)`, so the optimizer
//! variable is unconstrained; iterates are kept inside `(0, sigma_max]` by
//! clamping `theta`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{lsgan_term, param_digest, Adam, Discriminator};
use crate::occlusion::{composite, composite_tangent, render_sigma, sample_drop_field, DropField, OcclusionConfig, OcclusionKind, PhysicalParams};

const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Fixed-step gradient descent on `theta`.
    Gd,
    Adam,
}

/// The `[estimation]` configuration section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub init_sigma: f64,
    pub steps: usize,
    pub step_size: f64,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Fraction of the final iterates averaged into the reported estimate.
    pub tail_fraction: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            init_sigma: 2.0,
            steps: 200,
            step_size: 0.05,
            batch: 4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            tail_fraction: 0.25,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self, sigma_max: f64) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::range("steps", 0.0, ">= 1"));
        }
        if self.batch == 0 {
            return Err(Error::range("batch", 0.0, ">= 1"));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma <= sigma_max) {
            return Err(Error::range("init_sigma", self.init_sigma, format!("(0, {sigma_max}]")));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::range("step_size", self.step_size, "(0, inf)"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::range("tail_fraction", self.tail_fraction, "(0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationStep {
    pub sigma: f64,
    pub loss: f64,
    pub grad_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationTrace {
    pub kind: OcclusionKind,
    pub steps: Vec<EstimationStep>,
    /// Mean of the last `tail_fraction` of the evaluated iterates.
    pub sigma_hat: f64,
    /// Set when the loop stopped early on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

impl EstimationTrace {
    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            kind: self.kind,
            sigma: Some(self.sigma_hat),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(s: f64) -> f64 {
    if s > 30.0 {
        s
    } else {
        s + (-(-s).exp()).ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the reparameterized descent loop. `eval(step, sigma)` returns the
/// loss and `dL/dsigma` at `sigma`.
pub(crate) fn optimize(
    cfg: &EstimationConfig,
    sigma_max: f64,
    kind: OcclusionKind,
    mut eval: impl FnMut(usize, f64) -> Result<(f64, f64)>,
) -> Result<EstimationTrace> {
    cfg.validate(sigma_max)?;
    let (lo, hi) = (softplus_inv(SIGMA_FLOOR), softplus_inv(sigma_max));
    let mut theta = softplus_inv(cfg.init_sigma).min(hi);
    let mut adam = Adam::new(cfg.step_size, 0.9, 0.999);
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut aborted = None;
    for t in 0..cfg.steps {
        let sigma = softplus(theta).min(sigma_max);
        let (loss, grad) = eval(t, sigma)?;
        if !loss.is_finite() || !grad.is_finite() {
            aborted = Some(format!("non-finite loss {loss} or gradient {grad} at step {t}"));
            break;
        }
        steps.push(EstimationStep { sigma, loss, grad_sigma: grad });
        let g_theta = grad * sigmoid(theta);
        match cfg.optimizer {
            OptimizerKind::Gd => theta -= cfg.step_size * g_theta,
            OptimizerKind::Adam => {
                let mut p = vec![theta];
                adam.step(vec![&mut p], &[vec![g_theta]]);
                theta = p[0];
            }
        }
        theta = theta.clamp(lo, hi);
    }
    let sigma_hat = if steps.is_empty() {
        cfg.init_sigma
    } else {
        let k = ((steps.len() as f64 * cfg.tail_fraction).ceil() as usize).clamp(1, steps.len());
        steps[steps.len() - k..].iter().map(|s| s.sigma).sum::<f64>() / k as f64
    };
    Ok(EstimationTrace {
        kind,
        steps,
        sigma_hat,
        aborted,
    })
}

fn sigma_params(kind: OcclusionKind, sigma: f64) -> Result<PhysicalParams> {
    match kind {
        OcclusionKind::Drop => Ok(PhysicalParams::drop(sigma)),
        OcclusionKind::Dirt => Ok(PhysicalParams::dirt(sigma)),
        OcclusionKind::Overlay => Err(Error::Config("overlays have no physical parameters to estimate".into())),
    }
}

/// Generator loss of a single occluded source and its derivative in `sigma`.
pub fn adversarial_loss_and_grad(d: &Discriminator, scene: &Image, field: &DropField, sigma: f64, occ: &OcclusionConfig) -> Result<(f64, f64)> {
    let r = render_sigma(scene, field, &sigma_params(occ.kind, sigma)?, occ, true)?;
    let y = composite(scene, &r)?;
    let tr = d.forward_trace(&y)?;
    let (loss, gs) = lsgan_term(&tr.scores(), 1.0);
    let gin = d.backward(&tr, gs, None, true, false).input.expect("input gradient requested");
    let dy = composite_tangent(scene, &r)?;
    let g = gin.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
    Ok((loss, g))
}

fn check_sources(sources: &[Image]) -> Result<(usize, usize)> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Contract("estimation needs at least one source image".into()))?;
    if sources.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::Contract("source images must share one shape".into()));
    }
    Ok(first.extent())
}

/// Draws `(source index, field seed)` for every batch slot of every step.
fn schedule(seed: u64, steps: usize, batch: usize, n: usize) -> Vec<Vec<(usize, u64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| (0..batch).map(|_| (rng.random_range(0..n), rng.random::<u64>())).collect())
        .collect()
}

/// Descends `E[(D_ent(y_p) - 1)^2]` in `sigma` with `y_p` the source
/// composited with a fresh occluder field every step. The discriminator is
/// only read; its parameter digest is compared before and after.
pub fn estimate_parameters(d: &Discriminator, sources: &[Image], occ: &OcclusionConfig, cfg: &EstimationConfig) -> Result<EstimationTrace> {
    let extent = check_sources(sources)?;
    sigma_params(occ.kind, cfg.init_sigma)?;
    let before = param_digest(&d.params());
    let plan = schedule(cfg.seed, cfg.steps, cfg.batch, sources.len());
    let trace = optimize(cfg, occ.sigma_max, occ.kind, |t, sigma| {
        let parts: Vec<(f64, f64)> = plan[t]
            .par_iter()
            .map(|&(i, fseed)| {
                let field = sample_drop_field(fseed, extent, occ, None)?;
                adversarial_loss_and_grad(d, &sources[i], &field, sigma, occ)
            })
            .collect::<Result<_>>()?;
        let n = parts.len() as f64;
        Ok(parts.iter().fold((0.0, 0.0), |(l, g), p| (l + p.0 / n, g + p.1 / n)))
    })?;
    if param_digest(&d.params()) != before {
        return Err(Error::Internal("discriminator parameters changed during estimation".into()));
    }
    Ok(trace)
}

/// A clear scene, its occluded observation and the occluder field used.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub clear: Image,
    pub occluded: Image,
    pub field: DropField,
}

fn photometric_one(p: &PairedSample, sigma: f64, occ: &OcclusionConfig, tangent: bool) -> Result<(f64, f64)> {
    let r = render_sigma(&p.clear, &p.field, &sigma_params(occ.kind, sigma)?, occ, tangent)?;
    let y = composite(&p.clear, &r)?;
    let n = y.data().len() as f64;
    let diff: Vec<f64> = y.data().iter().zip(p.occluded.data()).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = if tangent {
        let dy = composite_tangent(&p.clear, &r)?;
        2.0 * diff.iter().zip(dy.data()).map(|(a, b)| a * b).sum::<f64>() / n
    } else {
        0.0
    };
    Ok((loss, grad))
}

/// Mean squared error between re-rendered and observed occluded images.
pub fn photometric_loss(pairs: &[PairedSample], sigma: f64, occ: &OcclusionConfig) -> Result<f64> {
    let parts: Vec<f64> = pairs
        .par_iter()
        .map(|p| photometric_one(p, sigma, occ, false).map(|r| r.0))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() / parts.len().max(1) as f64)
}

/// Fits `sigma` by gradient descent on [`photometric_loss`] over all pairs.
pub fn fit_sigma_photometric(pairs: &[PairedSample], occ: &OcclusionConfig, cfg: &EstimationConfig) -> Result<EstimationTrace> {
    if pairs.is_empty() {
        return Err(Error::Contract("photometric fit needs at least one pair".into()));
    }
    optimize(cfg, occ.sigma_max, occ.kind, |_, sigma| {
        let parts: Vec<(f64, f64)> = pairs
            .par_iter()
            .map(|p| photometric_one(p, sigma, occ, true))
            .collect::<Result<_>>()?;
        let n = parts.len() as f64;
        Ok(parts.iter().fold((0.0, 0.0), |(l, g), p| (l + p.0 / n, g + p.1 / n)))
    })
}

/// Returns the grid value with the smallest photometric loss and all losses.
pub fn grid_search_sigma(pairs: &[PairedSample], occ: &OcclusionConfig, grid: &[f64]) -> Result<(f64, Vec<f64>)> {
    let losses = grid.iter().map(|&s| photometric_loss(pairs, s, occ)).collect::<Result<Vec<_>>>()?;
    let best = losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| grid[i])
        .ok_or_else(|| Error::Contract("empty sigma grid".into()))?;
    Ok((best, losses))
}

/// The regressed parameter record written by `estimate-params`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub kind: OcclusionKind,
    pub sigma: Option<f64>,
    pub config_hash: String,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

impl ParamsFile {
    pub fn from_trace(trace: &EstimationTrace, config_hash: &str) -> Self {
        ParamsFile {
            kind: trace.kind,
            sigma: Some(trace.sigma_hat),
            config_hash: config_hash.to_string(),
            steps: trace.steps.len(),
            final_loss: trace.steps.last().map(|s| s.loss),
        }
    }

    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            kind: self.kind,
            sigma: self.sigma,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
