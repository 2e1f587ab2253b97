//! `manifest.jsonl`: one header line, then one line per emitted sample in
//! increasing sample index.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::CorpusSource;
use crate::config::{IouMode, PipelineConfig};
use crate::enhance::EnhancementSpec;
use crate::error::{Error, Result};
use crate::model::Rect;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MANIFEST_SCHEMA: &str = "synremoval.manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    /// Enhancement drawn per sample.
    Train,
    /// Exact masks, optionally dilated by a fixed radius.
    Val { dilate_px: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpora {
    pub instances: CorpusSource,
    pub backgrounds: CorpusSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub sample_index: u64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema: String,
    pub schema_version: u32,
    pub tool_version: String,
    pub split: SplitKind,
    pub global_seed: u64,
    pub start_index: u64,
    pub requested: u64,
    pub emitted: u64,
    pub skipped: Vec<SkipRecord>,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub corpora: Corpora,
    /// Pixel digest of every background the samples may reference.
    pub backgrounds: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub input: String,
    pub mask: String,
    pub enhanced_mask: String,
    pub ground_truth: String,
}

impl SampleFiles {
    pub fn for_index(index: u64) -> Self {
        let name = format!("{index:08}.png");
        Self {
            input: format!("inputs/{name}"),
            mask: format!("masks/{name}"),
            enhanced_mask: format!("enhanced_masks/{name}"),
            ground_truth: format!("gts/{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_index: u64,
    pub seed: u64,
    pub instance_id: String,
    pub background_id: String,
    #[serde(rename = "class")]
    pub class_label: String,
    pub scale: f64,
    pub resize_factor: f64,
    pub center: (usize, usize),
    pub paste_box: Rect,
    pub iou_threshold: f64,
    pub iou_mode: IouMode,
    pub enhancement: EnhancementSpec,
    pub files: SampleFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
}

impl BuildManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes `manifest.jsonl` under `dir` through a temporary file and a
    /// rename, so readers never see a partial manifest.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let schema = |message: String| Error::SchemaViolation {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| schema("manifest is empty".into()))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| schema(format!("header: {e}")))?;
        if header.schema != MANIFEST_SCHEMA || header.schema_version != MANIFEST_VERSION {
            return Err(schema(format!(
                "unsupported schema {} v{}",
                header.schema, header.schema_version
            )));
        }
        let mut records: Vec<ManifestRecord> = Vec::new();
        for (n, line) in lines {
            let record: ManifestRecord =
                serde_json::from_str(line).map_err(|e| schema(format!("line {}: {e}", n + 1)))?;
            if records.last().is_some_and(|prev| prev.sample_index >= record.sample_index) {
                return Err(schema(format!("line {}: sample_index not increasing", n + 1)));
            }
            records.push(record);
        }
        Ok(Self { header, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::UnreadableFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}
