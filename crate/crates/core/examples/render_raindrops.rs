//! Renders refractive raindrops over a procedural scene at three defocus
//! levels and writes the composites plus the displacement map.
//!
//! cargo run --release --example render_raindrops -- out_dir

use std::path::PathBuf;

use disocc::image::write_png;
use disocc::occlusion::{composite, drop_displacement, render_raindrops, sample_drop_field, OcclusionConfig, PhysicalParams};
use disocc::pipeline::procedural_scene;

fn main() -> disocc::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "raindrops_out".into()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let cfg = OcclusionConfig {
        p_r: 0.6,
        r_min: 4.0,
        r_max: 9.0,
        ..OcclusionConfig::default()
    };
    let scene = procedural_scene(7, (96, 96));
    let field = sample_drop_field(3, scene.extent(), &cfg, None)?;
    println!("{} drops", field.len());
    write_png(&scene, out.join("scene.png"))?;
    write_png(&drop_displacement(&field, cfg.magnification).to_image(0.05), out.join("displacement.png"))?;
    for sigma in [0.5, 2.0, 5.0] {
        let r = render_raindrops(&scene, &field, &PhysicalParams::drop(sigma), &cfg)?;
        let y = composite(&scene, &r)?;
        println!("sigma {sigma}: mean alpha {:.3}", r.alpha.mean());
        write_png(&y, out.join(format!("drops_sigma{sigma}.png")))?;
    }
    Ok(())
}
