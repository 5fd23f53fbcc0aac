use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use disocc::estimation::ParamsFile;
use disocc::guidance::{compute_dg, write_dg_bin, write_dg_preview};
use disocc::image::{read_png, write_png, Image};
use disocc::metrics::{
    fid, inception_scores, perceptual_distance, perceptual_diversity, ssim_psnr, ClassifierExtractor, FeatureExtractor, MetricReport, StatsExtractor,
};
use disocc::occlusion::{composite, OcclusionKind};
use disocc::pipeline::{
    load_classifier, load_overlay, occlude, read_manifest, save_classifier, train_baseline, train_classifier, train_disentangled, Dataset,
    GanState, PipelineConfig, Stage3Inputs, TrainData,
};
use disocc::{Error, Result};

#[derive(Parser)]
#[command(name = "disocc", version, about = "Occlusion-disentangled unpaired image translation")]
struct Cli {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Fid,
    Is,
    Cis,
    Lpips,
    Ssim,
    Psnr,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its manifests.
    MakeData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: train the entangled baseline.
    TrainBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: regress occlusion parameters with the frozen baseline discriminator.
    EstimateParams {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: average GradCAM of the baseline discriminator over the sources.
    ComputeGuidance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Stage 3: train from scratch with guided occlusion injection.
    TrainDisentangled {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        guidance: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a directory of PNGs; optionally add occluders rendered with
    /// estimated parameters.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add occluders with these parameters after translation.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Per-cell occluder probability at render time.
        #[arg(long)]
        p_r: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the classifier used as IS/CIS posterior and feature extractor.
    TrainClassifier {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two directories of PNGs.
    Evaluate {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Classifier checkpoint; without it the image-statistics extractor is used.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
}

fn png_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_png(&p)?)))
        .collect()
}

fn need_b(b: &Option<PathBuf>) -> Result<&Path> {
    b.as_deref().ok_or_else(|| Error::Config("this metric needs --b".into()))
}

fn pairs(a: &[(String, Image)], b: &[(String, Image)]) -> Result<Vec<(Image, Image)>> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("paired metric needs equal set sizes, got {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x.1.clone(), y.1.clone())).collect())
}

fn evaluate(cfg: &PipelineConfig, metric: Metric, a: &Path, b: &Option<PathBuf>, classifier: &Option<PathBuf>) -> Result<MetricReport> {
    let set_a = png_dir(a)?;
    let extractor: Box<dyn FeatureExtractor> = match classifier {
        Some(p) => Box::new(ClassifierExtractor::new(load_classifier(p)?)),
        None => Box::new(StatsExtractor),
    };
    let images = |s: &[(String, Image)]| s.iter().map(|x| x.1.clone()).collect::<Vec<_>>();
    let mut report = MetricReport {
        metric: String::new(),
        value: 0.0,
        set_a: set_a.len(),
        set_b: 0,
        pairs: None,
        extractor: None,
        config_hash: cfg.hash(),
    };
    match metric {
        Metric::Fid => {
            let set_b = png_dir(need_b(b)?)?;
            report.metric = "fid".into();
            report.set_b = set_b.len();
            report.value = fid(&images(&set_a), &images(&set_b), extractor.as_ref())?;
            report.extractor = Some(extractor.provenance());
        }
        Metric::Is | Metric::Cis => {
            let path = classifier.as_ref().ok_or_else(|| Error::Config("IS and CIS need --classifier".into()))?;
            let posterior = ClassifierExtractor::new(load_classifier(path)?);
            // translations of one source share the file-name prefix before the last `_`
            let mut groups: BTreeMap<String, Vec<Image>> = BTreeMap::new();
            for (name, img) in &set_a {
                let key = name.rsplit_once('_').map_or(name.as_str(), |(k, _)| k).to_string();
                groups.entry(key).or_default().push(img.clone());
            }
            let groups: Vec<Vec<Image>> = groups.into_values().collect();
            let (is, cis) = inception_scores(&groups, &posterior)?;
            let cis_metric = matches!(metric, Metric::Cis);
            report.metric = if cis_metric { "cis" } else { "is" }.into();
            report.value = if cis_metric { cis } else { is };
            report.extractor = Some(posterior.provenance());
        }
        Metric::Lpips => {
            report.metric = "lpips".into();
            match b {
                Some(b) => {
                    let set_b = png_dir(b)?;
                    let p = pairs(&set_a, &set_b)?;
                    report.set_b = set_b.len();
                    report.pairs = Some(p.len());
                    report.value = perceptual_distance(&p, extractor.as_ref())?;
                }
                None => {
                    let (v, n) = perceptual_diversity(&images(&set_a), extractor.as_ref(), cfg.metrics.n_pairs, cfg.metrics.seed)?;
                    report.metric = "lpips_diversity".into();
                    report.pairs = Some(n);
                    report.value = v;
                }
            }
            report.extractor = Some(extractor.provenance());
        }
        Metric::Ssim | Metric::Psnr => {
            let set_b = png_dir(need_b(b)?)?;
            let p = pairs(&set_a, &set_b)?;
            let (s, db) = ssim_psnr(&p)?;
            let is_ssim = matches!(metric, Metric::Ssim);
            report.metric = if is_ssim { "ssim" } else { "psnr" }.into();
            report.value = if is_ssim { s } else { db };
            report.set_b = set_b.len();
            report.pairs = Some(p.len());
        }
    }
    Ok(report)
}

fn train_data(root: &Path) -> Result<(Vec<Image>, Vec<Image>)> {
    Ok((read_manifest(root, "train_source.txt")?, read_manifest(root, "train_target.txt")?))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    match cli.command {
        Command::MakeData { out } => {
            let d = Dataset::generate(&cfg.data, &cfg.occlusion)?;
            d.write(&out)?;
            println!("wrote {} training and {} evaluation images to {}", d.train_source.len(), d.eval_source.len(), out.display());
        }
        Command::TrainBaseline { data, out } => {
            let (s, t) = train_data(&data)?;
            let (_, log) = train_baseline(&cfg, &TrainData { sources: &s, targets: &t }, Some(&out))?;
            if let Some(last) = log.last() {
                println!("iteration {} loss_g {:.4} loss_d {:.4}", last.iteration, last.loss_g, last.loss_d);
            }
        }
        Command::EstimateParams { checkpoint, data, out } => {
            let (state, _) = GanState::load(&checkpoint)?;
            let sources = read_manifest(&data, "train_source.txt")?;
            let trace = disocc::estimation::estimate_parameters(&state.discriminator, &sources, &cfg.occlusion, &cfg.estimation)?;
            let file = ParamsFile::from_trace(&trace, &cfg.hash());
            file.write(&out)?;
            println!("{}", serde_json::to_string(&file).map_err(|e| Error::Internal(e.to_string()))?);
        }
        Command::ComputeGuidance {
            checkpoint,
            data,
            out,
            preview,
        } => {
            let (state, _) = GanState::load(&checkpoint)?;
            let sources = read_manifest(&data, "train_source.txt")?;
            let n = sources.len().min(cfg.guidance.max_images.max(1));
            let dg = compute_dg(&state.discriminator, &sources[..n])?;
            write_dg_bin(&dg, &out)?;
            let meta = out.with_extension("json");
            let text = serde_json::json!({ "height": dg.height, "width": dg.width, "images": n, "provenance": dg.provenance });
            fs::write(&meta, format!("{text:#}\n")).map_err(|e| Error::Io { path: meta, source: e })?;
            if let Some(p) = preview {
                write_dg_preview(&dg, &p)?;
            }
        }
        Command::TrainDisentangled { data, params, guidance, out } => {
            let inputs = Stage3Inputs::load(Some(&params), Some(&guidance))?;
            let overlay = match (cfg.occlusion.kind, &cfg.occlusion.overlay_path) {
                (OcclusionKind::Overlay, Some(p)) => Some(load_overlay(Path::new(p))?),
                _ => None,
            };
            let injection = inputs.injection(&cfg, overlay)?;
            let (s, t) = train_data(&data)?;
            let (_, log) = train_disentangled(&cfg, &TrainData { sources: &s, targets: &t }, &injection, Some(&out))?;
            if let Some(last) = log.last() {
                println!("iteration {} loss_g {:.4} loss_d {:.4}", last.iteration, last.loss_g, last.loss_d);
            }
        }
        Command::Render {
            checkpoint,
            input,
            out,
            params,
            p_r,
            seed,
        } => {
            let (state, _) = GanState::load(&checkpoint)?;
            let params = params.as_deref().map(ParamsFile::read).transpose()?;
            let mut occ = cfg.occlusion.clone();
            if let Some(p) = p_r {
                occ.p_r = p;
            }
            let overlay = match (occ.kind, &occ.overlay_path) {
                (OcclusionKind::Overlay, Some(p)) => Some(load_overlay(Path::new(p))?),
                _ => None,
            };
            fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            for (i, (name, x)) in png_dir(&input)?.into_iter().enumerate() {
                let mut y = state.generator.forward(&x)?;
                if let Some(p) = &params {
                    let sigma = p.sigma.unwrap_or(0.0);
                    let r = occlude(&y, seed.wrapping_add(i as u64), sigma, &occ, overlay.as_ref())?;
                    y = composite(&y, &r)?;
                }
                write_png(&y, out.join(format!("{name}.png")))?;
            }
        }
        Command::TrainClassifier { out } => {
            let (c, loss) = train_classifier(&cfg)?;
            save_classifier(&c, &out, &cfg.hash())?;
            println!("final training loss {loss:.4}");
        }
        Command::Evaluate {
            metric,
            a,
            b,
            out,
            classifier,
        } => {
            let report = evaluate(&cfg, metric, &a, &b, &classifier)?;
            report.write(&out)?;
            println!("{} = {}", report.metric, report.value);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
