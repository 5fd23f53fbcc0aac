//! Stage-1 training on a toy color-shift dataset.

use disocc::image::Image;
use disocc::pipeline::{apply_style, discriminator_accuracy, procedural_scene, train_baseline, PipelineConfig, StyleSpec, TrainData};

#[test]
fn baseline_discriminator_separates_held_out_real_and_fake() {
    let mut cfg = PipelineConfig::default();
    cfg.data.style = StyleSpec {
        gradient: 0.0,
        ..StyleSpec::default()
    };
    cfg.stage1.iterations = 2000;
    let extent = (32, 32);
    let sources: Vec<Image> = (0..64).map(|i| procedural_scene(i, extent)).collect();
    let targets: Vec<Image> = (0..64).map(|i| apply_style(&procedural_scene(1000 + i, extent), &cfg.data.style)).collect();
    let (state, log) = train_baseline(&cfg, &TrainData { sources: &sources, targets: &targets }, None).unwrap();
    assert!(log.iter().all(|r| r.loss_g.is_finite() && r.loss_d.is_finite()));

    let real: Vec<Image> = (0..32).map(|i| apply_style(&procedural_scene(5000 + i, extent), &cfg.data.style)).collect();
    let fake: Vec<Image> = (0..32).map(|i| state.generator.forward(&procedural_scene(6000 + i, extent)).unwrap()).collect();
    let acc = discriminator_accuracy(&state.discriminator, &real, &fake).unwrap();
    assert!(acc > 0.6, "held-out accuracy {acc}");
}
