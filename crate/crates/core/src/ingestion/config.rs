use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentParams;
use crate::binio::short_hash;
use crate::dtp::DtpConfig;
use crate::embeddings::EmbeddingKind;
use crate::error::{Error, Result};
use crate::localization::AnchorGrid;
use crate::neural::TrainConfig;
use crate::retrieval::{IndexConfig, QueryOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Proposals scoring below this wordness are discarded.
    pub wordness: f64,
    /// Overlap threshold of the wordness NMS at indexing time.
    pub score_nms: f64,
    /// Overlap threshold of the similarity NMS on query results.
    pub query_nms: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { wordness: 0.01, score_nms: 0.4, query_nms: 0.01 }
    }
}

/// Every tunable of a run, loaded from TOML. Missing keys take defaults and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub embedding: EmbeddingKind,
    /// Rescale pages so the longest side equals `resize_long_side`.
    pub resize_pages: bool,
    pub resize_long_side: usize,
    /// Ground-truth boxes that vanish at this downsampling are dropped.
    pub min_gt_downsample: u32,
    pub dtp: DtpConfig,
    pub anchors: AnchorGrid,
    pub use_rpn: bool,
    pub thresholds: Thresholds,
    pub train: TrainConfig,
    pub augment: AugmentParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingKind::default(),
            resize_pages: true,
            resize_long_side: 1720,
            min_gt_downsample: 8,
            dtp: DtpConfig::default(),
            anchors: AnchorGrid::default(),
            use_rpn: false,
            thresholds: Thresholds::default(),
            train: TrainConfig::default(),
            augment: AugmentParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Fingerprint of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        short_hash(self.to_toml_string().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.dtp.validate()?;
        self.anchors.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        let t = &self.thresholds;
        for (name, v) in [("wordness", t.wordness), ("score_nms", t.score_nms), ("query_nms", t.query_nms)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("threshold {name} must lie in [0, 1]")));
            }
        }
        if self.resize_long_side == 0 {
            return Err(Error::Config("resize_long_side must be positive".into()));
        }
        Ok(())
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            dtp: self.dtp.clone(),
            anchors: self.anchors.clone(),
            use_rpn: self.use_rpn,
            wordness_threshold: self.thresholds.wordness,
            score_nms: self.thresholds.score_nms,
        }
    }

    pub fn query_options(&self, k: usize) -> QueryOptions {
        QueryOptions { k, nms_overlap: self.thresholds.query_nms, pages: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = RunConfig { use_rpn: true, ..cfg.clone() };
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn partial_and_bad_configs() {
        let cfg = RunConfig::from_toml_str("embedding = \"phoc\"\n[train]\nhidden = 32\n").unwrap();
        assert_eq!(cfg.embedding, EmbeddingKind::Phoc);
        assert_eq!(cfg.train.hidden, 32);
        assert_eq!(cfg.thresholds, Thresholds::default());
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[thresholds]\nwordness = 2.0").is_err());
    }
}
