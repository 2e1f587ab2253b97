//! Loading instance and background corpora from annotation files, and
//! preparing them (filters, class statistics, cached ground-truth bytes).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::{crop_instance, decode_mask, load_annotations, AnnotationSet, ImageEntry};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::filtering::{compute_class_stats, filter_backgrounds, filter_instances, provider_for, FilterReport};
use crate::imageio::{decode_png, encode_png};
use crate::model::{BackgroundRecord, ClassStats, Image, InstanceRecord, InstanceRegion};

/// Where a corpus came from and a digest of its annotation file and images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSource {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct InstanceCorpus {
    pub source: CorpusSource,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone)]
pub struct BackgroundCorpus {
    pub source: CorpusSource,
    pub backgrounds: Vec<BackgroundRecord>,
}

struct LoadedSet {
    set: AnnotationSet,
    images: Vec<Image>,
    source: CorpusSource,
}

fn load_set(path: &Path) -> Result<LoadedSet> {
    let path = std::fs::canonicalize(path).map_err(|source| Error::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let set = load_annotations(&path)?;
    let annotation_bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let read = |entry: &ImageEntry| -> Result<(Vec<u8>, Image)> {
        let file = set.image_path(entry);
        let bytes = std::fs::read(&file).map_err(|source| Error::UnreadableFile {
            path: file.clone(),
            source,
        })?;
        let image = decode_png(&bytes, &file)?;
        if image.dims() != (entry.width, entry.height) {
            return Err(Error::SchemaViolation {
                path: path.clone(),
                message: format!(
                    "image {} is {:?}, annotated as {}x{}",
                    entry.id,
                    image.dims(),
                    entry.width,
                    entry.height
                ),
            });
        }
        Ok((bytes, image))
    };
    let loaded = set.images.par_iter().map(read).collect::<Result<Vec<_>>>()?;
    let mut hasher = Sha256::new();
    hasher.update(&annotation_bytes);
    let mut images = Vec::with_capacity(loaded.len());
    for (entry, (bytes, image)) in set.images.iter().zip(loaded) {
        hasher.update(entry.id.as_bytes());
        hasher.update(&bytes);
        images.push(image);
    }
    Ok(LoadedSet {
        source: CorpusSource {
            path,
            sha256: hex::encode(hasher.finalize()),
        },
        set,
        images,
    })
}

/// Cuts every annotated object out of its image. Instance ids are
/// `<image id>#<annotation position>`.
pub fn load_instance_corpus(path: &Path) -> Result<InstanceCorpus> {
    let LoadedSet { set, images, source } = load_set(path)?;
    let mut instances = Vec::new();
    for (k, ann) in set.annotations.iter().enumerate() {
        let pos = set.images.iter().position(|i| i.id == ann.image_id).expect("validated on parse");
        let image = &images[pos];
        let decoded = decode_mask(&ann.region, image.width(), image.height())?;
        if decoded.mask.is_empty() {
            log::warn!("{}: annotation {k} covers no pixel centers", source.path.display());
            continue;
        }
        let id = format!("{}#{k}", ann.image_id);
        instances.push(crop_instance(id, image, &decoded.mask, &ann.class_label, ann.score)?);
    }
    Ok(InstanceCorpus { source, instances })
}

/// Every image becomes a background; its annotations are the objects
/// already present in it.
pub fn load_background_corpus(path: &Path) -> Result<BackgroundCorpus> {
    let LoadedSet { set, images, source } = load_set(path)?;
    let mut backgrounds = Vec::with_capacity(images.len());
    for (entry, image) in set.images.iter().zip(images) {
        let mut regions = Vec::new();
        for ann in set.annotations_for(&entry.id) {
            let decoded = decode_mask(&ann.region, entry.width, entry.height)?;
            regions.extend(InstanceRegion::from_mask(decoded.mask));
        }
        backgrounds.push(BackgroundRecord::new(entry.id.clone(), image, regions)?);
    }
    Ok(BackgroundCorpus { source, backgrounds })
}

/// A kept background with its ground-truth PNG encoded once.
#[derive(Debug, Clone)]
pub struct PreparedBackground {
    pub record: BackgroundRecord,
    pub gt_png: Vec<u8>,
    /// SHA-256 of the raw pixel bytes.
    pub pixel_sha256: String,
}

pub fn pixel_sha256(image: &Image) -> String {
    hex::encode(Sha256::digest(image.data()))
}

/// Filtered corpora ready for sampling.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub instances: Vec<InstanceRecord>,
    pub by_class: BTreeMap<String, Vec<usize>>,
    pub class_stats: BTreeMap<String, ClassStats>,
    pub backgrounds: Vec<PreparedBackground>,
    pub report: FilterReport,
    pub instance_source: CorpusSource,
    pub background_source: CorpusSource,
}

impl PreparedCorpus {
    pub fn background(&self, id: &str) -> Option<&PreparedBackground> {
        self.backgrounds.iter().find(|b| b.record.id == id)
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceRecord> {
        self.instances.iter().find(|i| i.id == id)
    }
}

pub fn prepare(cfg: &PipelineConfig, instances: InstanceCorpus, backgrounds: BackgroundCorpus) -> Result<PreparedCorpus> {
    let (instance_source, background_source) = (instances.source, backgrounds.source);
    let provider = provider_for(cfg.score.source);
    let inst = filter_instances(instances.instances, cfg, provider.as_ref());
    let bgs = filter_backgrounds(backgrounds.backgrounds, cfg);
    let report = FilterReport::new(&inst, &bgs);
    if inst.kept.is_empty() {
        return Err(Error::ExhaustedCorpus("no instance passes the filters".into()));
    }
    if bgs.kept.is_empty() {
        return Err(Error::ExhaustedCorpus("no background passes the filters".into()));
    }
    let class_stats = compute_class_stats(&inst.kept, &inst.thresholds);
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, record) in inst.kept.iter().enumerate() {
        by_class.entry(record.class_label.clone()).or_default().push(i);
    }
    let backgrounds = bgs
        .kept
        .into_par_iter()
        .map(|record| PreparedBackground {
            gt_png: encode_png(&record.image),
            pixel_sha256: pixel_sha256(&record.image),
            record,
        })
        .collect();
    Ok(PreparedCorpus {
        instances: inst.kept,
        by_class,
        class_stats,
        backgrounds,
        report,
        instance_source,
        background_source,
    })
}
