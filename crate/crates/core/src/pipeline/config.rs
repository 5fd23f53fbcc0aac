use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::EstimationConfig;
use crate::nn::{hex, DiscriminatorConfig, GeneratorConfig};
use crate::occlusion::OcclusionConfig;

/// Where a synthetic style shift applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleRegion {
    Full,
    TopHalf,
}

/// Channel-wise affine color shift plus a vertical luminance gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleSpec {
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    /// Added luminance at the top row; the bottom row gets the negative.
    pub gradient: f64,
    pub region: StyleRegion,
}

impl Default for StyleSpec {
    fn default() -> Self {
        StyleSpec {
            gain: [1.2, 0.85, 0.55],
            bias: [0.0, 0.05, 0.25],
            gradient: 0.15,
            region: StyleRegion::Full,
        }
    }
}

/// `[data]`: the synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub extent: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    /// Defocus used to render target-domain occluders.
    pub true_sigma: f64,
    pub style: StyleSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            extent: 32,
            n_train: 200,
            n_eval: 40,
            seed: 1,
            true_sigma: 2.0,
            style: StyleSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

/// `[stage1]`: entangled baseline training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Fraction of training after which both learning rates decay linearly
    /// to zero; 1 keeps them constant.
    pub decay_from: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            batch: 4,
            lr_g: 2e-4,
            lr_d: 2e-4,
            seed: 11,
            log_every: 100,
            decay_from: 0.5,
        }
    }
}

/// Occlusion model injected during disentangled training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionVariant {
    /// The full model with the regressed parameters.
    Ours,
    /// Refraction without shape or thickness variability.
    Refract,
    /// Scene-independent Gaussian-shaped occluders.
    Gaussian,
}

impl std::str::FromStr for InjectionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(InjectionVariant::Ours),
            "refract" => Ok(InjectionVariant::Refract),
            "gaussian" => Ok(InjectionVariant::Gaussian),
            other => Err(Error::Config(format!("unknown injection variant `{other}`"))),
        }
    }
}

/// `[stage3]`: disentangled training from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage3Config {
    pub iterations: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
    pub log_every: usize,
    pub decay_from: f64,
    pub beta: f64,
    pub variant: InjectionVariant,
}

impl Default for Stage3Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Stage3Config {
            iterations: t.iterations,
            batch: t.batch,
            lr_g: t.lr_g,
            lr_d: t.lr_d,
            seed: 13,
            log_every: t.log_every,
            decay_from: t.decay_from,
            beta: 0.75,
            variant: InjectionVariant::Ours,
        }
    }
}

impl Stage3Config {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch: self.batch,
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            seed: self.seed,
            log_every: self.log_every,
            decay_from: self.decay_from,
        }
    }
}

/// `[guidance]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Upper bound on source images averaged into the map.
    pub max_images: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { max_images: 64 }
    }
}

/// `[metrics]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Random pairs drawn for perceptual diversity.
    pub n_pairs: usize,
    pub seed: u64,
    pub classifier_samples: usize,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            n_pairs: 1900,
            seed: 5,
            classifier_samples: 60,
            classifier_epochs: 30,
            classifier_lr: 1e-2,
        }
    }
}

/// The whole configuration file, one section per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub occlusion: OcclusionConfig,
    pub network: NetworkConfig,
    pub stage1: TrainConfig,
    pub estimation: EstimationConfig,
    pub guidance: GuidanceConfig,
    pub stage3: Stage3Config,
    pub metrics: MetricsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.data.extent;
        if e < 32 || !e.is_multiple_of(8) {
            return Err(Error::Config(format!("data.extent {e} must be a multiple of 8 and at least 32")));
        }
        if self.data.n_train == 0 || self.data.n_eval == 0 {
            return Err(Error::Config("data.n_train and data.n_eval must be positive".into()));
        }
        if !(self.data.true_sigma > 0.0 && self.data.true_sigma <= self.occlusion.sigma_max) {
            return Err(Error::range("data.true_sigma", self.data.true_sigma, format!("(0, {}]", self.occlusion.sigma_max)));
        }
        if self.network.generator.channels != 3 || self.network.discriminator.channels != 3 {
            return Err(Error::Config("networks operate on 3-channel images".into()));
        }
        if self.network.discriminator.scales < 2 {
            return Err(Error::Config("the discriminator needs at least two scales".into()));
        }
        if !e.is_multiple_of(1 << (self.network.discriminator.scales + 1)) {
            return Err(Error::Config(format!("data.extent {e} is not divisible by the discriminator stride")));
        }
        for (name, t) in [("stage1", &self.stage1), ("stage3", &self.stage3.train())] {
            if t.batch == 0 || t.log_every == 0 {
                return Err(Error::Config(format!("{name}.batch and {name}.log_every must be positive")));
            }
            if !(0.0..=1.0).contains(&t.decay_from) {
                return Err(Error::Config(format!("{name}.decay_from {} is outside [0, 1]", t.decay_from)));
            }
        }
        if !(0.0..=1.0).contains(&self.stage3.beta) {
            return Err(Error::range("stage3.beta", self.stage3.beta, "[0, 1]"));
        }
        self.estimation.validate(self.occlusion.sigma_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn partial_files_use_defaults_and_unknown_keys_fail() {
        let cfg = PipelineConfig::from_toml("[stage3]\nbeta = 0.5\nvariant = \"refract\"\n[occlusion]\nkind = \"dirt\"\n").unwrap();
        assert_eq!(cfg.stage3.beta, 0.5);
        assert_eq!(cfg.stage3.variant, InjectionVariant::Refract);
        assert_eq!(cfg.data, DataConfig::default());
        assert!(PipelineConfig::from_toml("[stage3]\nbogus = 1\n").is_err());
        assert!(matches!(PipelineConfig::from_toml("[stage3]\nbeta = 2.0\n"), Err(Error::ParamRange { .. })));
        assert!(PipelineConfig::from_toml("[data]\nextent = 36\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let mut cfg = PipelineConfig::default();
        let h = cfg.hash();
        cfg.stage3.beta = 0.25;
        assert_ne!(cfg.hash(), h);
    }
}
