//! Run configuration: quality thresholds, model and training hyperparameters,
//! split fractions. Loadable from a `key = value` sectioned text file; the
//! CLI exposes a flag per field.

use crate::error::{PcgError, Result};
use crate::recording::DurationClass;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub rmssd_threshold: f64,
    pub zcr_threshold: f64,
    /// Daubechies order of the assessment wavelet (taps = 2 * order).
    pub wavelet_order: usize,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            rmssd_threshold: 0.4,
            zcr_threshold: 0.4,
            wavelet_order: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub heads: usize,
    pub ffn_width: usize,
    pub channels: usize,
    pub dropout: f64,
    pub block1_count: usize,
    pub block2_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            heads: 2,
            ffn_width: 32,
            channels: 32,
            dropout: 0.2,
            block1_count: 3,
            block2_count: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation-accuracy improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 100,
            patience: 20,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of patients held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining training pool held out for validation.
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.05,
            val_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub duration_class: DurationClassField,
    pub quality: QualityConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub split: SplitConfig,
}

/// Wrapper so the config file can say `duration_class = "5s"` at top level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DurationClassField(pub String);

impl Default for DurationClassField {
    fn default() -> Self {
        Self("5s".to_string())
    }
}

impl RunConfig {
    pub fn duration(&self) -> Result<DurationClass> {
        self.duration_class.0.parse()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| PcgError::Config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let q = &self.quality;
        if !(0.0..=1.0).contains(&q.rmssd_threshold) {
            return Err(PcgError::Config("rmssd_threshold must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&q.zcr_threshold) {
            return Err(PcgError::Config("zcr_threshold must be in [0, 1]".into()));
        }
        if q.wavelet_order < 1 || q.wavelet_order > 10 {
            return Err(PcgError::Config("wavelet_order must be in [1, 10]".into()));
        }
        let m = &self.model;
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(PcgError::Config("dropout must be in [0, 1)".into()));
        }
        if m.heads == 0 || m.channels == 0 || m.channels % m.heads != 0 {
            return Err(PcgError::Config("heads must divide channels".into()));
        }
        if m.ffn_width == 0 {
            return Err(PcgError::Config("ffn_width must be positive".into()));
        }
        let s = &self.split;
        for (name, v) in [("test_fraction", s.test_fraction), ("val_fraction", s.val_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(PcgError::Config(format!("{name} must be in (0, 1)")));
            }
        }
        if self.training.batch_size == 0 {
            return Err(PcgError::Config("batch_size must be positive".into()));
        }
        if !(self.training.learning_rate > 0.0) {
            return Err(PcgError::Config("learning_rate must be positive".into()));
        }
        self.duration()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model.heads, 2);
        assert_eq!(cfg.model.ffn_width, 32);
        assert_eq!(cfg.model.channels, 32);
        assert_eq!(cfg.model.dropout, 0.2);
        assert_eq!(cfg.model.block1_count, 3);
        assert_eq!(cfg.model.block2_count, 2);
        assert_eq!(cfg.quality.rmssd_threshold, 0.4);
        assert_eq!(cfg.quality.zcr_threshold, 0.4);
        assert_eq!(cfg.split.test_fraction, 0.05);
        cfg.validate().unwrap();
    }

    #[test]
    fn sectioned_key_value_file_parses() {
        let text = r#"
duration_class = "3s"

[quality]
rmssd_threshold = 0.3

[model]
heads = 4
channels = 32

[training]
epochs = 7
seed = 99

[split]
test_fraction = 0.1
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.duration().unwrap(), DurationClass::S3);
        assert_eq!(cfg.quality.rmssd_threshold, 0.3);
        assert_eq!(cfg.quality.zcr_threshold, 0.4); // default preserved
        assert_eq!(cfg.model.heads, 4);
        assert_eq!(cfg.training.epochs, 7);
        assert_eq!(cfg.training.seed, 99);
        assert_eq!(cfg.split.test_fraction, 0.1);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.model.dropout = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.model.heads = 3; // does not divide 32
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.split.test_fraction = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.duration_class = DurationClassField("9s".into());
        assert!(cfg.validate().is_err());
    }
}
