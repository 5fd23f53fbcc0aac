//! Three-stage protocol: entangled baseline, parameter and guidance
//! estimation with the frozen baseline discriminator, then disentangled
//! training from scratch. Also the synthetic dataset with ground truth.

pub mod classifier;
pub mod config;
pub mod protocol;
pub mod synthetic;
pub mod training;

pub use classifier::{classifier_accuracy, load_classifier, save_classifier, train_classifier, CLASSIFIER_CLASSES};
pub use config::{DataConfig, GuidanceConfig, InjectionVariant, MetricsConfig, NetworkConfig, PipelineConfig, Stage3Config, StyleRegion, StyleSpec, TrainConfig};
pub use protocol::{run_protocol, run_stage2, score_against_ground_truth, GroundTruthScore, ProtocolOutcome, Stage2Outcome};
pub use synthetic::{apply_style, load_overlay, manifest_paths, occlude, procedural_scene, read_manifest, Dataset, MANIFESTS};
pub use training::{
    discriminator_accuracy, format_log, run_gan, train_baseline, train_disentangled, GanState, Injection, LogRecord, Stage3Inputs, TrainData,
};
