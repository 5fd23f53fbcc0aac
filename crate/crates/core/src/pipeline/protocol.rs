//! The full three-stage run and its paired ground-truth evaluation.

use std::path::Path;

use log::info;

use super::config::PipelineConfig;
use super::synthetic::Dataset;
use super::training::{train_baseline, train_disentangled, GanState, LogRecord, Stage3Inputs, TrainData};
use crate::error::{Error, Result};
use crate::estimation::{estimate_parameters, EstimationTrace, ParamsFile};
use crate::guidance::{compute_dg, write_dg_bin, GuidanceMap};
use crate::image::Image;
use crate::metrics::psnr;
use crate::nn::Generator;

/// Stage-2 outputs: the regressed parameters and the guidance map.
#[derive(Clone, Debug)]
pub struct Stage2Outcome {
    pub estimation: EstimationTrace,
    pub guidance: GuidanceMap,
}

/// Estimates parameters and guidance with the frozen stage-1 discriminator.
/// Guidance averages over at most `cfg.guidance.max_images` sources.
pub fn run_stage2(cfg: &PipelineConfig, baseline: &GanState, sources: &[Image]) -> Result<Stage2Outcome> {
    let d = &baseline.discriminator;
    let estimation = estimate_parameters(d, sources, &cfg.occlusion, &cfg.estimation)?;
    if let Some(reason) = &estimation.aborted {
        return Err(Error::NonFinite(format!("parameter estimation aborted: {reason}")));
    }
    let n = sources.len().min(cfg.guidance.max_images.max(1));
    let guidance = compute_dg(d, &sources[..n])?;
    Ok(Stage2Outcome { estimation, guidance })
}

/// Everything produced by one end-to-end run.
#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub baseline: GanState,
    pub baseline_log: Vec<LogRecord>,
    pub stage2: Stage2Outcome,
    pub disentangled: GanState,
    pub disentangled_log: Vec<LogRecord>,
}

/// Runs stages 1 to 3 on `data`. With `workdir`, writes `stage1.ckpt`,
/// `params.json`, `dg.bin` and `stage3.ckpt` there, and stage 3 reads its
/// inputs back from those files.
pub fn run_protocol(cfg: &PipelineConfig, data: &Dataset, workdir: Option<&Path>) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let train = TrainData {
        sources: &data.train_source,
        targets: &data.train_target,
    };
    let file = |name: &str| workdir.map(|d| d.join(name));
    info!("stage 1: entangled baseline");
    let (baseline, baseline_log) = train_baseline(cfg, &train, file("stage1.ckpt").as_deref())?;
    info!("stage 2: parameters and guidance");
    let stage2 = run_stage2(cfg, &baseline, &data.train_source)?;
    info!("estimated {:?}, sigma {:?}", stage2.estimation.kind, stage2.estimation.sigma_hat);
    let params = ParamsFile::from_trace(&stage2.estimation, &cfg.hash());
    let inputs = match workdir {
        Some(dir) => {
            let (p, g) = (dir.join("params.json"), dir.join("dg.bin"));
            params.write(&p)?;
            write_dg_bin(&stage2.guidance, &g)?;
            Stage3Inputs::load(Some(&p), Some(&g))?
        }
        None => Stage3Inputs {
            params,
            guidance: stage2.guidance.clone(),
        },
    };
    info!("stage 3: disentangled training");
    let injection = inputs.injection(cfg, None)?;
    let (disentangled, disentangled_log) = train_disentangled(cfg, &train, &injection, file("stage3.ckpt").as_deref())?;
    Ok(ProtocolOutcome {
        baseline,
        baseline_log,
        stage2,
        disentangled,
        disentangled_log,
    })
}

/// Paired comparison of a generator with the occlusion-free ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthScore {
    /// Mean PSNR of `G(x)` against `gt_style(x)`, in dB.
    pub psnr: f64,
    /// Mean absolute residual weighted by the occluder mask.
    pub mask_residual: f64,
}

pub fn score_against_ground_truth(g: &Generator, data: &Dataset) -> Result<GroundTruthScore> {
    if data.eval_source.is_empty() {
        return Err(Error::Contract("no held-out sources to evaluate".into()));
    }
    let (mut p, mut num, mut den) = (0.0, 0.0, 0.0);
    for ((x, gt), mask) in data.eval_source.iter().zip(&data.eval_gt_style).zip(&data.eval_gt_masks) {
        let y = g.forward(x)?;
        p += psnr(&y, gt)?.min(100.0);
        let m = mask.plane(0);
        let n = m.len();
        for c in 0..y.channels() {
            let (yc, gc) = (&y.data()[c * n..(c + 1) * n], &gt.data()[c * n..(c + 1) * n]);
            for i in 0..n {
                num += m[i] * (yc[i] - gc[i]).abs();
                den += m[i];
            }
        }
    }
    Ok(GroundTruthScore {
        psnr: p / data.eval_source.len() as f64,
        mask_residual: if den > 0.0 { num / den } else { 0.0 },
    })
}
