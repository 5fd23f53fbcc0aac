//! Trains a small baseline on data whose style shift touches only the top
//! half, then writes the resulting guidance map and injection masks.
//!
//! cargo run --release --example guidance_map -- out_dir

use std::path::PathBuf;

use disocc::guidance::{compute_dg, injection_mask, write_dg_bin, write_dg_preview};
use disocc::pipeline::{train_baseline, Dataset, PipelineConfig, StyleRegion, TrainData};

fn main() -> disocc::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "guidance_out".into()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let mut cfg = PipelineConfig::default();
    cfg.data.style.region = StyleRegion::TopHalf;
    cfg.data.n_train = 64;
    cfg.occlusion.p_r = 0.0;
    cfg.stage1.iterations = 300;
    let data = Dataset::generate(&cfg.data, &cfg.occlusion)?;
    let (state, _) = train_baseline(&cfg, &TrainData { sources: &data.train_source, targets: &data.train_target }, None)?;
    let dg = compute_dg(&state.discriminator, &data.train_source[..32])?;
    let half = dg.values.len() / 2;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean DG top {:.3}, bottom {:.3}", mean(&dg.values[..half]), mean(&dg.values[half..]));
    for beta in [0.25, 0.5, 0.75] {
        println!("beta {beta}: {} of {} pixels allow injection", injection_mask(&dg, beta)?.count(), dg.values.len());
    }
    write_dg_bin(&dg, &out.join("dg.bin"))?;
    write_dg_preview(&dg, &out.join("dg.png"))?;
    Ok(())
}
