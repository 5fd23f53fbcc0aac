//! Alternating LSGAN training, with optional occlusion injection after the
//! generator (one discriminator step per generator step).

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{InjectionVariant, PipelineConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::estimation::ParamsFile;
use crate::guidance::{injection_mask, read_dg_bin, GuidanceMap, InjectionMask};
use crate::image::{AlphaMap, Image};
use crate::nn::{add_grads, lsgan_term, scale_grads, zero_grads, Adam, Checkpoint, Discriminator, Generator};
use crate::occlusion::{
    composite, composite_scene_vjp, dilate_mask, render_gaussian_ablation, render_overlay, render_raindrops, render_sigma, sample_drop_field,
    OcclusionConfig, OcclusionKind, OcclusionRender, PhysicalParams,
};

/// Networks and optimizer state of one GAN.
#[derive(Clone, Debug)]
pub struct GanState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub iteration: usize,
}

impl GanState {
    pub fn fresh(cfg: &PipelineConfig, train: &TrainConfig) -> Self {
        GanState {
            generator: Generator::new(cfg.network.generator.clone(), train.seed ^ 0x6e6e),
            discriminator: Discriminator::new(cfg.network.discriminator.clone(), train.seed ^ 0xd15c),
            opt_g: Adam::gan(train.lr_g),
            opt_d: Adam::gan(train.lr_d),
            iteration: 0,
        }
    }

    pub fn save(&self, path: &Path, stage: u8, config_hash: &str) -> Result<()> {
        let mut ck = Checkpoint::new(stage, config_hash);
        ck.meta = serde_json::json!({
            "generator": self.generator.config(),
            "discriminator": self.discriminator.config(),
            "iteration": self.iteration,
        });
        ck.put_params("generator", &self.generator.params());
        ck.put_params("discriminator", &self.discriminator.params());
        ck.put_adam("opt_g", &self.opt_g);
        ck.put_adam("opt_d", &self.opt_d);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path)?;
        let bad = |what: &str| Error::format(path, format!("checkpoint metadata lacks {what}"));
        let gcfg = serde_json::from_value(ck.meta.get("generator").cloned().ok_or_else(|| bad("generator"))?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let dcfg = serde_json::from_value(ck.meta.get("discriminator").cloned().ok_or_else(|| bad("discriminator"))?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut generator = Generator::new(gcfg, 0);
        let mut discriminator = Discriminator::new(dcfg, 0);
        ck.take_params("generator", generator.params_mut())?;
        ck.take_params("discriminator", discriminator.params_mut())?;
        let state = GanState {
            generator,
            discriminator,
            opt_g: ck.adam("opt_g")?,
            opt_d: ck.adam("opt_d")?,
            iteration: ck.meta.get("iteration").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
        };
        Ok((state, ck))
    }
}

/// Scalar losses recorded every `log_every` iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub loss_g: f64,
    pub loss_d: f64,
}

/// Plain-text trace, one `iteration=.. loss_g=.. loss_d=..` line per record.
pub fn format_log(records: &[LogRecord]) -> String {
    let mut s = String::new();
    for r in records {
        writeln!(s, "iteration={} loss_g={:.6} loss_d={:.6}", r.iteration, r.loss_g, r.loss_d).expect("string write");
    }
    s
}

/// The occlusion model applied to generated images before the discriminator.
#[derive(Clone, Debug)]
pub struct Injection {
    pub variant: InjectionVariant,
    pub params: PhysicalParams,
    pub occ: OcclusionConfig,
    pub mask: InjectionMask,
    pub overlay: Option<(Image, AlphaMap)>,
    /// Pixels outside the mask dilated by the occluder influence radius.
    forbidden: Vec<bool>,
}

impl Injection {
    pub fn new(variant: InjectionVariant, params: PhysicalParams, occ: OcclusionConfig, mask: InjectionMask, overlay: Option<(Image, AlphaMap)>) -> Result<Self> {
        if params.kind != occ.kind {
            return Err(Error::Config(format!("parameters are for {} but the occlusion kind is {}", params.kind, occ.kind)));
        }
        if variant == InjectionVariant::Refract && occ.kind != OcclusionKind::Drop {
            return Err(Error::Config("the refract variant only applies to drops".into()));
        }
        if occ.kind == OcclusionKind::Overlay && overlay.is_none() {
            return Err(Error::Config("overlay injection needs an overlay image".into()));
        }
        let forbidden = dilate_mask(&mask.allowed, mask.height, mask.width, occ.influence_radius())
            .into_iter()
            .map(|a| !a)
            .collect();
        Ok(Injection {
            variant,
            params,
            occ,
            mask,
            overlay,
            forbidden,
        })
    }

    /// Renders an occluder layout drawn from `seed` over `scene`.
    pub fn render(&self, scene: &Image, seed: u64) -> Result<OcclusionRender> {
        if self.occ.kind == OcclusionKind::Overlay {
            let (ov, alpha) = self.overlay.as_ref().expect("checked at construction");
            let (h, w) = scene.extent();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let du = rng.random_range(-(w as i64) / 4..=(w as i64) / 4);
            let dv = rng.random_range(-(h as i64) / 4..=(h as i64) / 4);
            let mut r = render_overlay(scene, ov, alpha, (du, dv))?;
            for (a, ok) in r.alpha.image_mut().data_mut().iter_mut().zip(&self.mask.allowed) {
                if !ok {
                    *a = 1.0;
                }
            }
            return Ok(r);
        }
        let field = sample_drop_field(seed, scene.extent(), &self.occ, Some(&self.mask.allowed))?;
        match self.variant {
            InjectionVariant::Ours => render_sigma(scene, &field, &self.params, &self.occ, false),
            InjectionVariant::Refract => render_raindrops(scene, &field.without_shape_variability(self.occ.refract_rho), &self.params, &self.occ),
            InjectionVariant::Gaussian => render_gaussian_ablation(scene, &field, &self.occ),
        }
    }

    /// True when the render leaves every pixel far from the mask untouched.
    pub fn respects_mask(&self, render: &OcclusionRender) -> bool {
        render.alpha.values().iter().zip(&self.forbidden).all(|(a, f)| !f || *a == 1.0)
    }
}

/// Stage-2 artifacts consumed by disentangled training.
#[derive(Clone, Debug)]
pub struct Stage3Inputs {
    pub params: ParamsFile,
    pub guidance: GuidanceMap,
}

impl Stage3Inputs {
    pub fn load(params: Option<&Path>, guidance: Option<&Path>) -> Result<Self> {
        let need = |p: Option<&Path>, what: &str| {
            p.filter(|p| p.exists())
                .map(Path::to_path_buf)
                .ok_or_else(|| Error::Config(format!("stage 3 needs the {what} produced by stage 2")))
        };
        let params = ParamsFile::read(&need(params, "parameter file")?)?;
        let guidance = read_dg_bin(&need(guidance, "guidance map")?)?;
        Ok(Stage3Inputs { params, guidance })
    }

    pub fn injection(&self, cfg: &PipelineConfig, overlay: Option<(Image, AlphaMap)>) -> Result<Injection> {
        let mask = injection_mask(&self.guidance, cfg.stage3.beta)?;
        if mask.height != cfg.data.extent || mask.width != cfg.data.extent {
            return Err(Error::Config("guidance map extent differs from data.extent".into()));
        }
        Injection::new(cfg.stage3.variant, self.params.params(), cfg.occlusion.clone(), mask, overlay)
    }
}

/// Unpaired training images.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub sources: &'a [Image],
    pub targets: &'a [Image],
}

struct Sample {
    trace: crate::nn::GenTrace,
    render: Option<OcclusionRender>,
    y_d: Image,
}

fn total_loss_and_grads<F>(n: usize, f: F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(usize) -> Result<(f64, Vec<Vec<f64>>)> + Sync + Send,
{
    let parts: Vec<(f64, Vec<Vec<f64>>)> = (0..n).into_par_iter().map(f).collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut loss, mut grads) = it.next().expect("non-empty batch");
    for (l, g) in it {
        loss += l;
        add_grads(&mut grads, &g);
    }
    scale_grads(&mut grads, 1.0 / n as f64);
    Ok((loss / n as f64, grads))
}

/// Learning-rate multiplier at `iteration` of a `train.iterations` schedule.
pub fn lr_factor(train: &TrainConfig, iteration: usize) -> f64 {
    let total = train.iterations as f64;
    let start = train.decay_from * total;
    let t = iteration as f64;
    if t < start || total <= start {
        1.0
    } else {
        ((total - t) / (total - start)).max(0.0)
    }
}

/// Runs alternating updates until `state.iteration` reaches `until` (at most
/// `train.iterations`), so an interrupted run resumes where it stopped. On a
/// non-finite loss the state is rolled back to the last finite iteration
/// before the error is returned.
pub fn run_gan(state: &mut GanState, data: &TrainData, train: &TrainConfig, injection: Option<&Injection>, until: usize) -> Result<Vec<LogRecord>> {
    if data.sources.is_empty() || data.targets.is_empty() {
        return Err(Error::Contract("training needs source and target images".into()));
    }
    let mut log = Vec::new();
    let b = train.batch;
    while state.iteration < until.min(train.iterations) {
        let f = lr_factor(train, state.iteration);
        state.opt_g.lr = train.lr_g * f;
        state.opt_d.lr = train.lr_d * f;
        // one stream per iteration keeps resumed runs on the same draws
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        rng.set_stream(state.iteration as u64);
        let plan: Vec<(usize, usize, u64)> = (0..b)
            .map(|_| (rng.random_range(0..data.sources.len()), rng.random_range(0..data.targets.len()), rng.random()))
            .collect();
        let samples: Vec<Sample> = plan
            .par_iter()
            .map(|&(si, _, seed)| {
                let trace = state.generator.forward_trace(&data.sources[si])?;
                let (render, y_d) = match injection {
                    Some(inj) => {
                        let r = inj.render(&trace.output, seed)?;
                        let y = composite(&trace.output, &r)?;
                        (Some(r), y)
                    }
                    None => (None, trace.output.clone()),
                };
                Ok(Sample { trace, render, y_d })
            })
            .collect::<Result<_>>()?;
        if let (Some(inj), Some(r)) = (injection, samples[0].render.as_ref()) {
            if !inj.respects_mask(r) {
                return Err(Error::Internal("occluder rendered outside the injection mask".into()));
            }
        }
        let snapshot = state.clone();

        let d = &state.discriminator;
        let (loss_d, grads_d) = total_loss_and_grads(b, |k| {
            let mut g = zero_grads(&d.params());
            let tf = d.forward_trace(&samples[k].y_d)?;
            let (lf, gf) = lsgan_term(&tf.scores(), 0.0);
            d.backward(&tf, gf, Some(&mut g), false, false);
            let tr = d.forward_trace(&data.targets[plan[k].1])?;
            let (lr, gr) = lsgan_term(&tr.scores(), 1.0);
            d.backward(&tr, gr, Some(&mut g), false, false);
            Ok((lf + lr, g))
        })?;
        if !loss_d.is_finite() {
            *state = snapshot;
            return Err(Error::NonFinite(format!("discriminator loss at iteration {}", state.iteration)));
        }
        state.opt_d.step(state.discriminator.params_mut(), &grads_d);

        let (d, gen) = (&state.discriminator, &state.generator);
        let (loss_g, grads_g) = total_loss_and_grads(b, |k| {
            let s = &samples[k];
            let tr = d.forward_trace(&s.y_d)?;
            let (l, gs) = lsgan_term(&tr.scores(), 1.0);
            let gin = d.backward(&tr, gs, None, true, false).input.expect("input gradient requested");
            let g_scene = match &s.render {
                Some(r) => composite_scene_vjp(&s.trace.output, r, &gin)?,
                None => gin,
            };
            let mut g = zero_grads(&gen.params());
            gen.backward(&s.trace, &g_scene, &mut g)?;
            Ok((l, g))
        })?;
        if !loss_g.is_finite() {
            *state = snapshot;
            return Err(Error::NonFinite(format!("generator loss at iteration {}", state.iteration)));
        }
        state.opt_g.step(state.generator.params_mut(), &grads_g);
        state.iteration += 1;
        if state.iteration.is_multiple_of(train.log_every) {
            info!("iteration {} loss_g {loss_g:.4} loss_d {loss_d:.4}", state.iteration);
            log.push(LogRecord {
                iteration: state.iteration,
                loss_g,
                loss_d,
            });
        }
    }
    Ok(log)
}

fn finish(state: &GanState, result: Result<Vec<LogRecord>>, out: Option<&Path>, stage: u8, hash: &str) -> Result<Vec<LogRecord>> {
    if let Some(path) = out {
        state.save(path, stage, hash)?;
        if let Ok(log) = &result {
            let lp = path.with_extension("log");
            std::fs::write(&lp, format_log(log)).map_err(|e| Error::io(&lp, e))?;
        }
    }
    result
}

/// Stage 1: the entangled baseline, no injection. The checkpoint (written
/// also when training stops on a non-finite loss) holds `G'` and `D_ent`.
pub fn train_baseline(cfg: &PipelineConfig, data: &TrainData, out: Option<&Path>) -> Result<(GanState, Vec<LogRecord>)> {
    let mut state = GanState::fresh(cfg, &cfg.stage1);
    let result = run_gan(&mut state, data, &cfg.stage1, None, cfg.stage1.iterations);
    let log = finish(&state, result, out, 1, &cfg.hash())?;
    Ok((state, log))
}

/// Stage 3: fresh networks trained with occlusions injected after `G`
/// wherever the guidance map is below `beta`.
pub fn train_disentangled(cfg: &PipelineConfig, data: &TrainData, injection: &Injection, out: Option<&Path>) -> Result<(GanState, Vec<LogRecord>)> {
    let train = cfg.stage3.train();
    let mut state = GanState::fresh(cfg, &train);
    let result = run_gan(&mut state, data, &train, Some(injection), train.iterations);
    let log = finish(&state, result, out, 3, &cfg.hash())?;
    Ok((state, log))
}

/// Fraction of held-out images the discriminator labels correctly, using a
/// mean patch score threshold of 0.5.
pub fn discriminator_accuracy(d: &Discriminator, real: &[Image], fake: &[Image]) -> Result<f64> {
    let mean = |x: &Image| -> Result<f64> {
        let s = d.forward(x)?;
        Ok(s.iter().map(|t| t.mean()).sum::<f64>() / s.len() as f64)
    };
    let mut correct = 0usize;
    for x in real {
        correct += (mean(x)? > 0.5) as usize;
    }
    for x in fake {
        correct += (mean(x)? <= 0.5) as usize;
    }
    Ok(correct as f64 / (real.len() + fake.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DiscriminatorConfig, GeneratorConfig};
    use crate::pipeline::synthetic::procedural_scene;

    fn tiny_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.network.generator = GeneratorConfig { nf: 4, n_res: 1, ..Default::default() };
        cfg.network.discriminator = DiscriminatorConfig { nf: 4, ..Default::default() };
        cfg.stage1 = TrainConfig { iterations: 2, batch: 2, log_every: 1, ..Default::default() };
        cfg.stage3.iterations = 2;
        cfg.stage3.batch = 2;
        cfg.stage3.log_every = 1;
        cfg
    }

    fn images(seed: u64, n: usize) -> Vec<Image> {
        (0..n).map(|i| procedural_scene(seed + i as u64, (32, 32))).collect()
    }

    fn full_mask(allowed: bool) -> InjectionMask {
        InjectionMask { height: 32, width: 32, beta: 0.5, allowed: vec![allowed; 32 * 32] }
    }

    #[test]
    fn smoke_run_writes_a_loadable_checkpoint() {
        let cfg = tiny_cfg();
        let (src, tgt) = (images(0, 3), images(10, 3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stage1.ckpt");
        let (state, log) = train_baseline(&cfg, &TrainData { sources: &src, targets: &tgt }, Some(&path)).unwrap();
        assert_eq!(log.len(), 2);
        assert!(log.iter().all(|r| r.loss_g >= 0.0 && r.loss_d >= 0.0));
        let (back, ck) = GanState::load(&path).unwrap();
        assert_eq!(ck.stage, 1);
        assert_eq!(ck.config_hash, cfg.hash());
        assert_eq!(back.iteration, 2);
        let y = back.generator.forward(&src[0]).unwrap();
        assert_eq!(y, state.generator.forward(&src[0]).unwrap());
        assert!(back.discriminator.forward(&y).unwrap().iter().all(|t| t.is_finite()));
        assert!(std::fs::read_to_string(path.with_extension("log")).unwrap().starts_with("iteration=1 "));
    }

    #[test]
    fn learning_rate_holds_then_decays_to_zero() {
        let t = TrainConfig { iterations: 100, decay_from: 0.5, ..Default::default() };
        assert_eq!(lr_factor(&t, 0), 1.0);
        assert_eq!(lr_factor(&t, 49), 1.0);
        assert_eq!(lr_factor(&t, 50), 1.0);
        assert!((lr_factor(&t, 75) - 0.5).abs() < 1e-12);
        assert!(lr_factor(&t, 99) > 0.0);
        assert_eq!(lr_factor(&TrainConfig { decay_from: 1.0, ..t }, 99), 1.0);
    }

    #[test]
    fn resumed_training_matches_an_uninterrupted_run() {
        let cfg = tiny_cfg();
        let (src, tgt) = (images(0, 3), images(10, 3));
        let data = TrainData { sources: &src, targets: &tgt };
        let train = TrainConfig { iterations: 3, ..cfg.stage1.clone() };
        let mut once = GanState::fresh(&cfg, &train);
        run_gan(&mut once, &data, &train, None, 3).unwrap();
        let mut twice = GanState::fresh(&cfg, &train);
        run_gan(&mut twice, &data, &train, None, 1).unwrap();
        run_gan(&mut twice, &data, &train, None, 3).unwrap();
        assert_eq!(twice.iteration, 3);
        assert_eq!(once.generator, twice.generator);
        assert_eq!(once.discriminator, twice.discriminator);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_cfg();
        let (src, tgt) = (images(0, 3), images(10, 3));
        let data = TrainData { sources: &src, targets: &tgt };
        let a = train_baseline(&cfg, &data, None).unwrap();
        let b = train_baseline(&cfg, &data, None).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.generator, b.0.generator);
    }

    #[test]
    fn empty_mask_reduces_to_baseline_generator_output() {
        let cfg = tiny_cfg();
        let inj = Injection::new(InjectionVariant::Ours, PhysicalParams::drop(2.0), cfg.occlusion.clone(), full_mask(false), None).unwrap();
        let x = procedural_scene(3, (32, 32));
        let r = inj.render(&x, 9).unwrap();
        assert!(r.alpha.values().iter().all(|a| *a == 1.0));
        assert_eq!(composite(&x, &r).unwrap(), x);
        assert!(inj.respects_mask(&r));
    }

    #[test]
    fn injection_variants_render_inside_the_mask() {
        let cfg = tiny_cfg();
        let mut mask = full_mask(false);
        for y in 0..12 {
            for x in 0..32 {
                mask.allowed[y * 32 + x] = true;
            }
        }
        let occ = OcclusionConfig { p_r: 1.0, ..cfg.occlusion.clone() };
        let x = procedural_scene(3, (32, 32));
        for v in [InjectionVariant::Ours, InjectionVariant::Refract, InjectionVariant::Gaussian] {
            let inj = Injection::new(v, PhysicalParams::drop(1.5), occ.clone(), mask.clone(), None).unwrap();
            for seed in 0..5 {
                let r = inj.render(&x, seed).unwrap();
                assert!(inj.respects_mask(&r), "{v:?}");
            }
        }
        assert!(Injection::new(InjectionVariant::Ours, PhysicalParams::dirt(1.0), occ, mask, None).is_err());
    }

    #[test]
    fn stage3_requires_stage2_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("params.json");
        assert!(matches!(Stage3Inputs::load(Some(&missing), None), Err(Error::Config(_))));
        assert!(matches!(Stage3Inputs::load(None, None), Err(Error::Config(_))));
    }

    #[test]
    fn disentangled_smoke_run() {
        let cfg = tiny_cfg();
        let (src, tgt) = (images(0, 3), images(10, 3));
        let inj = Injection::new(InjectionVariant::Ours, PhysicalParams::drop(2.0), cfg.occlusion.clone(), full_mask(true), None).unwrap();
        let (state, log) = train_disentangled(&cfg, &TrainData { sources: &src, targets: &tgt }, &inj, None).unwrap();
        assert_eq!(state.iteration, 2);
        assert!(log.iter().all(|r| r.loss_g.is_finite()));
    }

    #[test]
    fn accuracy_of_a_constant_critic() {
        let mut d = Discriminator::new(DiscriminatorConfig { nf: 4, ..Default::default() }, 1);
        for p in d.params_mut() {
            p.fill(0.0);
        }
        let xs = images(0, 2);
        assert_eq!(discriminator_accuracy(&d, &xs, &xs).unwrap(), 0.5);
    }
}
