//! Recovers a known defocus from paired clear / rainy images, by gradient
//! descent on the photometric error and by a coarse grid search.
//!
//! cargo run --release --example estimate_sigma -- 12

use disocc::estimation::{fit_sigma_photometric, grid_search_sigma, EstimationConfig, OptimizerKind, PairedSample};
use disocc::occlusion::{composite, render_raindrops, sample_drop_field, OcclusionConfig, PhysicalParams};
use disocc::pipeline::procedural_scene;

fn main() -> disocc::Result<()> {
    let truth: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let occ = OcclusionConfig {
        p_r: 0.5,
        r_min: 6.0,
        r_max: 12.0,
        sigma_max: 30.0,
        ..OcclusionConfig::default()
    };
    let pairs = (0..4)
        .map(|i| {
            let clear = procedural_scene(100 + i, (64, 64));
            let field = sample_drop_field(200 + i, (64, 64), &occ, None)?;
            let occluded = composite(&clear, &render_raindrops(&clear, &field, &PhysicalParams::drop(truth), &occ)?)?;
            Ok(PairedSample { clear, occluded, field })
        })
        .collect::<disocc::Result<Vec<_>>>()?;
    let cfg = EstimationConfig {
        init_sigma: 3.0,
        steps: 150,
        step_size: 0.1,
        optimizer: OptimizerKind::Adam,
        ..EstimationConfig::default()
    };
    let trace = fit_sigma_photometric(&pairs, &occ, &cfg)?;
    let grid: Vec<f64> = (1..=6).map(|k| 5.0 * k as f64).collect();
    let (best, losses) = grid_search_sigma(&pairs, &occ, &grid)?;
    let est = trace.sigma_hat;
    println!("true sigma {truth}, fitted {est:.3} ({:+.2}%)", 100.0 * (est - truth) / truth);
    println!("grid {grid:?}\nlosses {losses:?}\ngrid best {best}");
    Ok(())
}
