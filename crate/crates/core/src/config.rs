//! Pipeline configuration, read from JSON with nested sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EvolutionConfig;
use crate::metrics::{Metric, RwWeights};
use crate::ntk::{HeadConfig, NtkConfig};
use crate::svm::SvmConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    /// Scale every feature row to unit L2 norm before scoring.
    pub l2_normalize: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZooConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowDataConfig {
    pub samples_per_class: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for LowDataConfig {
    fn default() -> Self {
        LowDataConfig {
            samples_per_class: 2,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub rw_weights: RwWeights,
    pub list: Vec<Metric>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            rw_weights: RwWeights::InverseRank,
            list: Metric::defaults(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub features: FeaturesConfig,
    pub svm: SvmConfig,
    pub head: HeadConfig,
    pub ntk: NtkConfig,
    pub evolution: EvolutionConfig,
    pub zoo: ZooConfig,
    pub output: OutputConfig,
    pub lowdata: LowDataConfig,
    pub metrics: MetricsConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.svm.validate()?;
        self.evolution.validate()?;
        if self.head.h1 == 0 || self.head.h2 == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if self.ntk.samples_per_class == 0 {
            return Err(Error::Config("ntk.samples_per_class must be positive".into()));
        }
        if self.lowdata.samples_per_class == 0 || self.lowdata.repeats == 0 {
            return Err(Error::Config(
                "lowdata.samples_per_class and lowdata.repeats must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::TimeScale;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.head.h1, 1024);
        assert_eq!(cfg.head.h2, 2048);
        assert_eq!(cfg.ntk.samples_per_class, 64);
        assert_eq!(cfg.svm.c, 1.0);
        assert_eq!(cfg.svm.max_iter, 1000);
        assert_eq!(cfg.evolution.time, TimeScale::Auto);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = PipelineConfig::from_json(
            r#"{"svm": {"c": 0.5}, "evolution": {"time": "fixed:2"}, "head": {"activation": "tanh"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.svm.c, 0.5);
        assert_eq!(cfg.svm.tol, 1e-4);
        assert_eq!(cfg.evolution.time, TimeScale::Fixed(2.0));
        assert_eq!(cfg.head.activation, crate::head::Activation::Tanh);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            r#"{"svm": {"gamma": 1}}"#,
            r#"{"bogus": {}}"#,
            r#"{"ntk": {"samples": 3}}"#,
        ] {
            let err = PipelineConfig::from_json(text).unwrap_err();
            assert_eq!(err.kind(), "Config", "{text}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_json(r#"{"svm": {"c": -1}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"evolution": {"target_coeff": 1.5}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"evolution": {"time": -2}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"lowdata": {"repeats": 0}}"#).is_err());
    }
}
