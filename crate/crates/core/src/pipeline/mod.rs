//! Parallel dataset build: sample pairing, placement retries, compositing,
//! file output and the manifest.
//!
//! Every sample index owns a random stream seeded from the global seed and
//! the index, so output bytes do not depend on the number of workers or
//! on scheduling.

mod corpus;
mod manifest;
mod validate;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

pub use corpus::{
    load_background_corpus, load_instance_corpus, pixel_sha256, prepare, BackgroundCorpus, CorpusSource,
    InstanceCorpus, PreparedBackground, PreparedCorpus,
};
pub use manifest::{
    BuildManifest, Corpora, ManifestHeader, ManifestRecord, SampleFiles, SkipRecord, SplitKind, MANIFEST_FILE,
    MANIFEST_SCHEMA, MANIFEST_VERSION,
};
pub use validate::{check_sample, validate_dataset, Check, CheckTally, SampleEvidence, ValidationReport};

use crate::compositor::build_triplet;
use crate::config::{Pairing, PipelineConfig};
use crate::enhance::{dilate_px, EnhancementSpec};
use crate::error::{Error, Result};
use crate::imageio::{encode_png, write_bytes};
use crate::model::{derive_sample_seed, sample_rng, InstanceRecord, SampleRng, Triplet};
use crate::placement::{feasible_region, pick_center, resize_instance, sample_scale, Placement, ResizedInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub count: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// First sample index, for resuming or sharding a run.
    pub start_index: u64,
    pub split: SplitKind,
}

impl BuildOptions {
    pub fn train(count: u64, workers: usize) -> Self {
        Self {
            count,
            workers,
            start_index: 0,
            split: SplitKind::Train,
        }
    }

    pub fn val(count: u64, workers: usize, dilate_px: usize) -> Self {
        Self {
            split: SplitKind::Val { dilate_px },
            ..Self::train(count, workers)
        }
    }
}

/// A generated sample before it is written.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: u64,
    pub triplet: Triplet,
}

#[derive(Debug, Clone)]
pub enum SampleOutcome {
    Emitted(Box<Sample>),
    Skipped(SkipRecord),
}

fn pick_instance<'a>(corpus: &'a PreparedCorpus, pairing: Pairing, rng: &mut SampleRng) -> &'a InstanceRecord {
    match pairing {
        Pairing::Uniform => &corpus.instances[rng.random_range(0..corpus.instances.len())],
        Pairing::ClassBalanced => {
            let class = rng.random_range(0..corpus.by_class.len());
            let members = corpus.by_class.values().nth(class).expect("index in range");
            &corpus.instances[members[rng.random_range(0..members.len())]]
        }
    }
}

/// Generates sample `index` of a run seeded with `cfg.global_seed`.
///
/// Up to `retry_limit` (background, instance) pairs are drawn; for each,
/// up to `retry_limit` scales are tried until the feasible region is
/// non-empty. The sample is skipped when every attempt fails.
pub fn generate_sample(cfg: &PipelineConfig, corpus: &PreparedCorpus, split: SplitKind, index: u64) -> Result<SampleOutcome> {
    let seed = derive_sample_seed(cfg.global_seed, index);
    let mut rng = sample_rng(seed);
    let mut last_reason = String::from("no attempt");
    for _ in 0..cfg.retry_limit {
        let bg = &corpus.backgrounds[rng.random_range(0..corpus.backgrounds.len())];
        let inst = pick_instance(corpus, cfg.pairing, &mut rng);
        let stats = &corpus.class_stats[&inst.class_label];
        let frame = bg.record.image.dims();
        for _ in 0..cfg.retry_limit {
            let scale = sample_scale(stats, &cfg.area_window, cfg.retry_limit, &mut rng);
            let resized = match resize_instance(inst, scale, frame, cfg.upscale_cap) {
                Ok(r) => r,
                Err(e @ Error::DegenerateResize { .. }) => {
                    last_reason = e.to_string();
                    continue;
                }
                Err(e) => return Err(e),
            };
            let region = match feasible_region(&bg.record, &resized.mask, cfg.iou_threshold, cfg.iou_mode) {
                Ok(r) if !r.is_empty() => r,
                Ok(_) => {
                    last_reason = format!("no feasible center in background {}", bg.record.id);
                    continue;
                }
                Err(e @ Error::InstanceTooLarge { .. }) => {
                    last_reason = e.to_string();
                    continue;
                }
                Err(e) => return Err(e),
            };
            let center = pick_center(&region, &mut rng)?;
            let (w, h) = resized.mask.dims();
            let placement = Placement::new(scale, resized.factor, w, h, center);
            let fixed = match split {
                SplitKind::Train => None,
                SplitKind::Val { .. } => Some(EnhancementSpec::original()),
            };
            let mut triplet = build_triplet(
                &bg.record,
                &inst.id,
                &inst.class_label,
                &resized,
                &placement,
                cfg,
                fixed,
                seed,
                &mut rng,
            )?;
            if let SplitKind::Val { dilate_px: px } = split {
                triplet.enhanced_mask = dilate_px(&triplet.mask, px);
            }
            post_check(cfg, split, bg, &resized, &triplet, index)?;
            return Ok(SampleOutcome::Emitted(Box::new(Sample { index, triplet })));
        }
    }
    Ok(SampleOutcome::Skipped(SkipRecord {
        sample_index: index,
        seed,
        reason: last_reason,
    }))
}

fn post_check(
    cfg: &PipelineConfig,
    split: SplitKind,
    bg: &PreparedBackground,
    resized: &ResizedInstance,
    t: &Triplet,
    index: u64,
) -> Result<()> {
    let failed: Vec<String> = check_sample(&SampleEvidence {
        cfg,
        split,
        background: &bg.record,
        instance: resized,
        center: t.meta.center,
        paste_box: t.meta.paste_box,
        enhancement: t.meta.enhancement.kind,
        input: &t.input,
        mask: &t.mask,
        enhanced_mask: &t.enhanced_mask,
        ground_truth: &t.ground_truth,
    })
    .into_iter()
    .filter(|(_, ok)| !ok)
    .map(|(c, _)| c.to_string())
    .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::InvariantViolation(format!("sample {index}: {}", failed.join(", "))))
    }
}

fn write_sample(out: &Path, sample: &Sample, gt_png: &[u8], cfg: &PipelineConfig) -> Result<ManifestRecord> {
    let files = SampleFiles::for_index(sample.index);
    let t = &sample.triplet;
    write_bytes(&out.join(&files.input), &encode_png(&t.input))?;
    write_bytes(&out.join(&files.mask), &encode_png(&t.mask.to_image()))?;
    write_bytes(&out.join(&files.enhanced_mask), &encode_png(&t.enhanced_mask.to_image()))?;
    write_bytes(&out.join(&files.ground_truth), gt_png)?;
    let m = &t.meta;
    Ok(ManifestRecord {
        sample_index: sample.index,
        seed: m.seed,
        instance_id: m.instance_id.clone(),
        background_id: m.background_id.clone(),
        class_label: m.class_label.clone(),
        scale: m.scale,
        resize_factor: m.resize_factor,
        center: m.center,
        paste_box: m.paste_box,
        iou_threshold: cfg.iou_threshold,
        iou_mode: cfg.iou_mode,
        enhancement: m.enhancement,
        files,
    })
}

fn run_in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(job))
}

/// Generates `opts.count` samples into `out` and commits `manifest.jsonl`.
///
/// Samples whose retry budget runs out are recorded as skips in the
/// header. If every requested sample is skipped the build fails with
/// `ExhaustedCorpus` and no manifest is written.
pub fn build_dataset(cfg: &PipelineConfig, corpus: &PreparedCorpus, out: &Path, opts: BuildOptions) -> Result<BuildManifest> {
    cfg.validate()?;
    let indices = opts.start_index..opts.start_index + opts.count;
    let outcomes = run_in_pool(opts.workers, || {
        indices
            .into_par_iter()
            .map(|index| match generate_sample(cfg, corpus, opts.split, index)? {
                SampleOutcome::Emitted(sample) => {
                    let bg = corpus
                        .background(&sample.triplet.meta.background_id)
                        .expect("sample drawn from corpus");
                    write_sample(out, &sample, &bg.gt_png, cfg).map(Ok)
                }
                SampleOutcome::Skipped(skip) => Ok(Err(skip)),
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(s) => skipped.push(s),
        }
    }
    if opts.count > 0 && records.is_empty() {
        return Err(Error::ExhaustedCorpus(format!(
            "all {} samples skipped; last reason: {}",
            opts.count,
            skipped.last().map_or("", |s| s.reason.as_str())
        )));
    }
    for s in &skipped {
        log::warn!("skipped sample {}: {}", s.sample_index, s.reason);
    }
    let manifest = BuildManifest {
        header: ManifestHeader {
            schema: MANIFEST_SCHEMA.into(),
            schema_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            split: opts.split,
            global_seed: cfg.global_seed,
            start_index: opts.start_index,
            requested: opts.count,
            emitted: records.len() as u64,
            skipped,
            config_hash: cfg.content_hash(),
            config: cfg.clone(),
            corpora: Corpora {
                instances: corpus.instance_source.clone(),
                backgrounds: corpus.background_source.clone(),
            },
            backgrounds: corpus
                .backgrounds
                .iter()
                .map(|b| (b.record.id.clone(), b.pixel_sha256.clone()))
                .collect(),
        },
        records,
    };
    manifest.write_atomic(out)?;
    Ok(manifest)
}

/// Evaluation split: exact paste masks, dilated by `dilate_px` for the
/// enhanced mask.
pub fn build_val_split(
    cfg: &PipelineConfig,
    corpus: &PreparedCorpus,
    out: &Path,
    count: u64,
    workers: usize,
    dilate_px: usize,
) -> Result<BuildManifest> {
    build_dataset(cfg, corpus, out, BuildOptions::val(count, workers, dilate_px))
}

/// Loads both corpora from their annotation files and prepares them.
pub fn load_corpus(cfg: &PipelineConfig, instances: &Path, backgrounds: &Path) -> Result<PreparedCorpus> {
    prepare(cfg, load_instance_corpus(instances)?, load_background_corpus(backgrounds)?)
}
