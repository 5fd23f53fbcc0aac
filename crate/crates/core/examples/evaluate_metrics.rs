//! Distribution and paired metrics on small synthetic sets: FID with the
//! statistics extractor, IS/CIS with a trained classifier, perceptual
//! distance and diversity, SSIM and PSNR.
//!
//! cargo run --release --example evaluate_metrics

use disocc::metrics::{fid, inception_scores, perceptual_distance, perceptual_diversity, ssim_psnr, ClassifierExtractor, StatsExtractor};
use disocc::pipeline::{apply_style, procedural_scene, train_classifier, PipelineConfig};

fn main() -> disocc::Result<()> {
    let cfg = PipelineConfig::default();
    let clear: Vec<_> = (0..24).map(|i| procedural_scene(i, (32, 32))).collect();
    let other: Vec<_> = (100..124).map(|i| procedural_scene(i, (32, 32))).collect();
    let styled: Vec<_> = clear.iter().map(|x| apply_style(x, &cfg.data.style)).collect();
    let stats = StatsExtractor;
    println!("FID clear vs clear'  {:.4}", fid(&clear, &other, &stats)?);
    println!("FID clear vs styled  {:.4}", fid(&clear, &styled, &stats)?);

    let pairs: Vec<_> = clear.iter().cloned().zip(styled.iter().cloned()).collect();
    let (s, p) = ssim_psnr(&pairs)?;
    println!("SSIM {s:.4}, PSNR {p:.2} dB");
    println!("perceptual distance {:.4}", perceptual_distance(&pairs, &stats)?);
    let (div, n) = perceptual_diversity(&clear, &stats, 100, 1)?;
    println!("diversity {div:.4} over {n} pairs");

    let (classifier, loss) = train_classifier(&cfg)?;
    println!("classifier loss {loss:.3}");
    let posterior = ClassifierExtractor::new(classifier);
    let groups: Vec<Vec<_>> = clear.chunks(2).zip(styled.chunks(2)).map(|(a, b)| a.iter().chain(b).cloned().collect()).collect();
    let (is, cis) = inception_scores(&groups, &posterior)?;
    println!("IS {is:.3}, CIS {cis:.3}");
    Ok(())
}
