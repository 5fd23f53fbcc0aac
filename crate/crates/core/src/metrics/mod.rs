//! Evaluation metrics: FID, IS/CIS, feature-space perceptual distance and
//! diversity, SSIM and PSNR, plus the JSON report record.
//!
//! Distribution metrics take a [`FeatureExtractor`]; each report carries the
//! extractor's provenance string and reports with different provenance refuse
//! to be compared.

mod extractor;
mod fid;
mod scores;
mod ssim;

pub use extractor::{ClassPosterior, ClassifierExtractor, FeatureExtractor, StatsExtractor};
pub use fid::{fid, frechet_distance, gaussian_fit, FID_REGULARIZATION};
pub use scores::{feature_distance, inception_score, inception_scores, perceptual_distance, perceptual_diversity};
pub use ssim::{psnr, ssim, ssim_psnr, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

fn ser_value<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_value<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum V {
        N(f64),
        S(String),
    }
    match V::deserialize(d)? {
        V::N(v) => Ok(v),
        V::S(s) if s == "inf" => Ok(f64::INFINITY),
        V::S(s) => Err(serde::de::Error::custom(format!("bad metric value `{s}`"))),
    }
}

/// One evaluated metric. `value` is serialized as `"inf"` when infinite
/// (PSNR of identical pairs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    #[serde(serialize_with = "ser_value", deserialize_with = "de_value")]
    pub value: f64,
    pub set_a: usize,
    pub set_b: usize,
    /// Number of pairs actually evaluated, for pairwise metrics.
    pub pairs: Option<usize>,
    pub extractor: Option<String>,
    pub config_hash: String,
}

impl MetricReport {
    /// Orders two reports of the same metric and extractor.
    pub fn compare(&self, other: &MetricReport) -> Result<Ordering> {
        if self.metric != other.metric || self.extractor != other.extractor {
            return Err(Error::Contract(format!(
                "cannot compare {} ({:?}) with {} ({:?})",
                self.metric, self.extractor, other.metric, other.extractor
            )));
        }
        Ok(self.value.total_cmp(&other.value))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(extractor: &str, value: f64) -> MetricReport {
        MetricReport {
            metric: "fid".into(),
            value,
            set_a: 4,
            set_b: 4,
            pairs: None,
            extractor: Some(extractor.into()),
            config_hash: "h".into(),
        }
    }

    #[test]
    fn infinite_values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.json");
        let r = MetricReport { metric: "psnr".into(), extractor: None, ..report("x", f64::INFINITY) };
        r.write(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("\"inf\""));
        assert_eq!(MetricReport::read(&p).unwrap(), r);
    }

    #[test]
    fn mixed_extractors_do_not_compare() {
        assert_eq!(report("a", 1.0).compare(&report("a", 2.0)).unwrap(), Ordering::Less);
        assert!(report("a", 1.0).compare(&report("b", 2.0)).is_err());
    }
}
