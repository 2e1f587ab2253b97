//! Pipeline configuration. Every field has a default, so an empty TOML
//! document is a valid config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enhance::EnhancementKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// Paste box against existing-instance boxes.
    #[default]
    Bbox,
    /// Pasted mask against existing-instance masks.
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Scores carried by the annotation file; unscored instances are rejected.
    #[default]
    Annotations,
    /// Deterministic hash-derived pseudo-scores.
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Uniform,
    /// Draw a class uniformly, then an instance within it.
    ClassBalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreParams {
    pub b: f64,
    pub d: f64,
    pub source: ScoreSource,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            b: 0.2,
            d: 0.02,
            source: ScoreSource::Annotations,
        }
    }
}

/// Closed interval of admissible area ratios, used both for filtering
/// instances and for truncating the scale distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaWindow {
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Default for AreaWindow {
    fn default() -> Self {
        Self {
            min_ratio: 0.05,
            max_ratio: 0.95,
        }
    }
}

impl AreaWindow {
    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.min_ratio && ratio <= self.max_ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundRules {
    pub min_side: usize,
    pub max_aspect: f64,
    pub max_coverage: f64,
}

impl Default for BackgroundRules {
    fn default() -> Self {
        Self {
            min_side: 512,
            max_aspect: 2.0,
            max_coverage: 0.85,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancementParams {
    pub erode_frac: f64,
    pub dilate_frac: f64,
    pub hull_expand_px: usize,
    pub ellipse_expand_factor: f64,
    pub bezier_jitter_frac: f64,
    /// Sampling weights in [`EnhancementKind::ALL`] order.
    pub weights: [f64; 6],
}

impl Default for EnhancementParams {
    fn default() -> Self {
        Self {
            erode_frac: 0.1,
            dilate_frac: 0.1,
            hull_expand_px: 3,
            ellipse_expand_factor: 1.1,
            bezier_jitter_frac: 0.1,
            weights: [1.0; 6],
        }
    }
}

impl EnhancementParams {
    pub fn validate(&self) -> Result<()> {
        for (name, frac) in [
            ("erode_frac", self.erode_frac),
            ("dilate_frac", self.dilate_frac),
            ("bezier_jitter_frac", self.bezier_jitter_frac),
        ] {
            if !(0.0..=0.5).contains(&frac) {
                return Err(Error::InvalidConfig(format!("{name} = {frac} outside [0, 0.5]")));
            }
        }
        if !(self.ellipse_expand_factor >= 1.0 && self.ellipse_expand_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ellipse_expand_factor = {} must be >= 1",
                self.ellipse_expand_factor
            )));
        }
        Ok(())
    }

    /// Weight vector with every kind but `kind` zeroed.
    pub fn only(mut self, kind: EnhancementKind) -> Self {
        self.weights = [0.0; 6];
        self.weights[kind.index()] = 1.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Placements need IoU strictly below this against every existing instance.
    pub iou_threshold: f64,
    pub iou_mode: IouMode,
    pub score: ScoreParams,
    pub area_window: AreaWindow,
    pub background_rules: BackgroundRules,
    pub trimap_band_px: usize,
    pub upscale_cap: f64,
    pub retry_limit: usize,
    pub enhancement: EnhancementParams,
    pub pairing: Pairing,
    pub global_seed: u64,
    pub corpus: CorpusPaths,
}

/// Annotation files of the two corpora. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backgrounds: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            iou_mode: IouMode::Bbox,
            score: ScoreParams::default(),
            area_window: AreaWindow::default(),
            background_rules: BackgroundRules::default(),
            trimap_band_px: 5,
            upscale_cap: 2.0,
            retry_limit: 8,
            enhancement: EnhancementParams::default(),
            pairing: Pairing::Uniform,
            global_seed: 0,
            corpus: CorpusPaths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.iou_threshold;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidConfig(format!("iou_threshold = {r} outside [0, 1]")));
        }
        let w = self.area_window;
        if !(0.0 <= w.min_ratio && w.min_ratio < w.max_ratio && w.max_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "area window [{}, {}] must satisfy 0 <= min < max <= 1",
                w.min_ratio, w.max_ratio
            )));
        }
        if self.retry_limit < 1 {
            return Err(Error::InvalidConfig("retry_limit must be >= 1".into()));
        }
        if !(self.upscale_cap > 0.0 && self.upscale_cap.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "upscale_cap = {} must be positive",
                self.upscale_cap
            )));
        }
        if self.background_rules.max_aspect < 1.0 {
            return Err(Error::InvalidConfig("max_aspect must be >= 1".into()));
        }
        self.enhancement.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::UnreadableFile {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corpus.instances, &mut cfg.corpus.backgrounds].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.score.b, 0.2);
        assert_eq!(cfg.score.d, 0.02);
        assert_eq!(cfg.background_rules.min_side, 512);
    }

    #[test]
    fn nested_override() {
        let cfg = PipelineConfig::from_toml_str(
            "iou_threshold = 0.5\n[area_window]\nmin_ratio = 0.1\n[enhancement]\nhull_expand_px = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.iou_threshold, 0.5);
        assert_eq!(cfg.area_window.min_ratio, 0.1);
        assert_eq!(cfg.area_window.max_ratio, 0.95);
        assert_eq!(cfg.enhancement.hull_expand_px, 7);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(PipelineConfig::from_toml_str("iou_threshold = 1.5").is_err());
        assert!(PipelineConfig::from_toml_str("retry_limit = 0").is_err());
        assert!(PipelineConfig::from_toml_str("[area_window]\nmin_ratio = 0.9\nmax_ratio = 0.5").is_err());
        assert!(PipelineConfig::from_toml_str("unknown_key = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.iou_mode = IouMode::Mask;
        cfg.global_seed = 99;
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }
}
