//! Soiling blobs at increasing defocus, and a translated alpha overlay.
//!
//! cargo run --release --example dirt_and_overlay -- out_dir

use std::path::PathBuf;

use disocc::image::{write_png, AlphaMap, Image};
use disocc::occlusion::{composite, render_dirt, render_overlay, sample_drop_field, OcclusionConfig, OcclusionKind, PhysicalParams};
use disocc::pipeline::procedural_scene;

fn main() -> disocc::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "dirt_out".into()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let scene = procedural_scene(11, (96, 96));
    let cfg = OcclusionConfig {
        kind: OcclusionKind::Dirt,
        p_r: 0.35,
        r_min: 6.0,
        r_max: 14.0,
        sigma_max: 12.0,
        shape_amp_max: 0.35,
        ..OcclusionConfig::default()
    };
    let field = sample_drop_field(5, scene.extent(), &cfg, None)?;
    for sigma in [0.5, 3.0, 8.0] {
        let r = render_dirt(&scene, &field, &PhysicalParams::dirt(sigma), &cfg)?;
        write_png(&composite(&scene, &r)?, out.join(format!("dirt_sigma{sigma}.png")))?;
    }

    // a fence-like grid overlay: opaque dark bars, scene visible elsewhere
    let (h, w) = scene.extent();
    let bars = |y: usize, x: usize| y % 16 < 3 || x % 16 < 3;
    let overlay = Image::from_fn(h, w, 3, |c, _, _| [0.25, 0.22, 0.2][c]);
    let alpha = AlphaMap::from_image(Image::from_fn(h, w, 1, |_, y, x| if bars(y, x) { 0.0 } else { 1.0 }))?;
    for (i, shift) in [(0, 0), (5, -3)].into_iter().enumerate() {
        let r = render_overlay(&scene, &overlay, &alpha, shift)?;
        write_png(&composite(&scene, &r)?, out.join(format!("overlay_{i}.png")))?;
    }
    println!("wrote renders to {}", out.display());
    Ok(())
}
