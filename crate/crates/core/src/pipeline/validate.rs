//! Per-sample invariant checks, used both right after generation and when
//! re-validating a dataset from disk.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::corpus::{
    load_background_corpus, load_instance_corpus, pixel_sha256, BackgroundCorpus, InstanceCorpus,
};
use super::manifest::{BuildManifest, ManifestRecord, SplitKind};
use crate::config::{IouMode, PipelineConfig};
use crate::enhance::{dilate_px, EnhancementKind};
use crate::error::Result;
use crate::imageio::{read_mask, read_png};
use crate::model::{BackgroundRecord, BinaryMask, Image, InstanceRecord, Rect};
use crate::morphology::{dilate_disk, erode_disk};
use crate::placement::{iou, paste_box, resize_instance, Placement, Region, ResizedInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// All four files exist and decode.
    FilesPresent,
    /// The stored mask is the resized instance mask at the paste box.
    MaskConsistency,
    /// Input equals ground truth outside the dilated mask.
    Support,
    /// Input equals the instance on the eroded mask.
    InteriorFidelity,
    /// Ground truth equals the source background.
    GroundTruthPurity,
    /// Pasted region overlaps every existing instance below the threshold.
    IouBelowThreshold,
    /// The paste box respects the edge margins.
    Margins,
    /// The enhanced mask obeys the subset / superset law of its kind.
    EnhancementLaw,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::FilesPresent,
        Check::MaskConsistency,
        Check::Support,
        Check::InteriorFidelity,
        Check::GroundTruthPurity,
        Check::IouBelowThreshold,
        Check::Margins,
        Check::EnhancementLaw,
    ];
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = serde_json::to_value(self).expect("unit variant");
        f.write_str(name.as_str().expect("string"))
    }
}

/// Everything needed to check one generated sample.
pub struct SampleEvidence<'a> {
    pub cfg: &'a PipelineConfig,
    pub split: SplitKind,
    pub background: &'a BackgroundRecord,
    pub instance: &'a ResizedInstance,
    pub center: (usize, usize),
    pub paste_box: Rect,
    pub enhancement: EnhancementKind,
    pub input: &'a Image,
    pub mask: &'a BinaryMask,
    pub enhanced_mask: &'a BinaryMask,
    pub ground_truth: &'a Image,
}

fn band(mask: &BinaryMask, k: usize) -> (BinaryMask, BinaryMask) {
    if k == 0 {
        (mask.clone(), mask.clone())
    } else {
        (erode_disk(mask, k as f64), dilate_disk(mask, k as f64))
    }
}

/// Runs every in-memory check. `FilesPresent` is not included.
pub fn check_sample(ev: &SampleEvidence<'_>) -> Vec<(Check, bool)> {
    let bg = &ev.background.image;
    let (w, h) = bg.dims();
    let pbox = ev.paste_box;
    let frame_ok = ev.mask.dims() == (w, h)
        && ev.input.dims() == (w, h)
        && ev.enhanced_mask.dims() == (w, h)
        && ev.input.channels() == bg.channels();

    let fits = pbox.right() <= w && pbox.bottom() <= h && (pbox.width, pbox.height) == ev.instance.mask.dims();
    let mask_ok = frame_ok && fits && *ev.mask == ev.instance.mask.place(w, h, pbox.x, pbox.y);

    let (core, grown) = band(ev.mask, ev.cfg.trimap_band_px);
    let support_ok = frame_ok && ev.input.dims() == ev.ground_truth.dims() && {
        // rows clear of the grown mask compare as whole slices
        let span = grown.bbox();
        let row_len = w * ev.input.channels();
        let rows = ev.input.data().chunks_exact(row_len).zip(ev.ground_truth.data().chunks_exact(row_len));
        rows.enumerate().all(|(y, (a, b))| match span {
            Some(s) if (s.y..s.bottom()).contains(&y) => {
                (0..w).all(|x| grown.get(x, y) || ev.input.pixel(x, y) == ev.ground_truth.pixel(x, y))
            }
            _ => a == b,
        })
    };

    let fidelity_ok = mask_ok && {
        let inst = ev.instance.image.to_channels(bg.channels());
        inst.is_ok_and(|inst| {
            core.points()
                .all(|(x, y)| ev.input.pixel(x, y) == inst.pixel(x - pbox.x, y - pbox.y))
        })
    };

    let purity_ok = ev.ground_truth == bg;

    let iou_ok = frame_ok
        && ev.background.instance_regions.iter().all(|region| {
            let v = match ev.cfg.iou_mode {
                IouMode::Bbox => iou(Region::Box(pbox), Region::Box(region.bbox)),
                IouMode::Mask => iou(Region::Mask(ev.mask), Region::Mask(&region.to_mask(w, h))),
            };
            v.is_ok_and(|v| v < ev.cfg.iou_threshold)
        });

    let placement = Placement::new(0.0, 1.0, pbox.width, pbox.height, ev.center);
    let margins_ok = placement.within_margins(w, h) && paste_box(ev.center, pbox.width, pbox.height) == pbox;

    let law_ok = frame_ok && !ev.enhanced_mask.is_empty() && {
        let (m, e) = (ev.mask, ev.enhanced_mask);
        match (ev.split, ev.enhancement) {
            (SplitKind::Val { dilate_px: px }, _) => *e == dilate_px(m, px),
            (SplitKind::Train, EnhancementKind::Original) => e == m,
            (SplitKind::Train, EnhancementKind::Eroded) => e.is_subset_of(m),
            (SplitKind::Train, kind) => {
                debug_assert!(kind.is_superset());
                m.is_subset_of(e)
            }
        }
    };

    vec![
        (Check::MaskConsistency, mask_ok),
        (Check::Support, support_ok),
        (Check::InteriorFidelity, fidelity_ok),
        (Check::GroundTruthPurity, purity_ok),
        (Check::IouBelowThreshold, iou_ok),
        (Check::Margins, margins_ok),
        (Check::EnhancementLaw, law_ok),
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckTally {
    pub passed: usize,
    pub failed: usize,
    /// Sample indices that failed, in increasing order.
    pub failing_samples: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub instance_corpus_matches: bool,
    pub background_corpus_matches: bool,
    pub checks: BTreeMap<Check, CheckTally>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.instance_corpus_matches
            && self.background_corpus_matches
            && self.checks.values().all(|t| t.failed == 0)
    }

    pub fn failing_samples(&self) -> Vec<u64> {
        let mut all: Vec<u64> = self.checks.values().flat_map(|t| t.failing_samples.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

struct Lookup<'a> {
    instances: BTreeMap<&'a str, &'a InstanceRecord>,
    backgrounds: BTreeMap<&'a str, &'a BackgroundRecord>,
}

fn check_record(
    root: &Path,
    manifest: &BuildManifest,
    record: &ManifestRecord,
    lookup: &Lookup<'_>,
) -> Vec<(Check, bool)> {
    let all_failed = || Check::ALL.iter().map(|&c| (c, false)).collect();
    let files = &record.files;
    let loaded = (|| -> Result<_> {
        Ok((
            read_png(&root.join(&files.input))?,
            read_mask(&root.join(&files.mask))?,
            read_mask(&root.join(&files.enhanced_mask))?,
            read_png(&root.join(&files.ground_truth))?,
        ))
    })();
    let Ok((input, mask, enhanced_mask, ground_truth)) = loaded else {
        return all_failed();
    };
    let (Some(inst), Some(bg)) = (
        lookup.instances.get(record.instance_id.as_str()),
        lookup.backgrounds.get(record.background_id.as_str()),
    ) else {
        return all_failed();
    };
    let cfg = &manifest.header.config;
    let Ok(resized) = resize_instance(inst, record.scale, bg.image.dims(), cfg.upscale_cap) else {
        return all_failed();
    };
    let mut results = vec![(Check::FilesPresent, true)];
    results.extend(check_sample(&SampleEvidence {
        cfg,
        split: manifest.header.split,
        background: bg,
        instance: &resized,
        center: record.center,
        paste_box: record.paste_box,
        enhancement: record.enhancement.kind,
        input: &input,
        mask: &mask,
        enhanced_mask: &enhanced_mask,
        ground_truth: &ground_truth,
    }));
    let digest_ok = manifest
        .header
        .backgrounds
        .get(&record.background_id)
        .is_some_and(|d| *d == pixel_sha256(&ground_truth));
    for (check, ok) in results.iter_mut() {
        if *check == Check::GroundTruthPurity {
            *ok &= digest_ok;
        }
    }
    results
}

/// Re-checks every sample of the dataset whose manifest is at
/// `manifest_path`, reloading the corpora named in its header.
pub fn validate_dataset(manifest_path: &Path) -> Result<ValidationReport> {
    let manifest = BuildManifest::read(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let InstanceCorpus { source: isrc, instances } = load_instance_corpus(&manifest.header.corpora.instances.path)?;
    let BackgroundCorpus { source: bsrc, backgrounds } =
        load_background_corpus(&manifest.header.corpora.backgrounds.path)?;
    let lookup = Lookup {
        instances: instances.iter().map(|i| (i.id.as_str(), i)).collect(),
        backgrounds: backgrounds.iter().map(|b| (b.id.as_str(), b)).collect(),
    };
    let per_record: Vec<Vec<(Check, bool)>> = manifest
        .records
        .par_iter()
        .map(|r| check_record(root, &manifest, r, &lookup))
        .collect();
    let mut checks: BTreeMap<Check, CheckTally> = Check::ALL.iter().map(|&c| (c, CheckTally::default())).collect();
    for (record, results) in manifest.records.iter().zip(per_record) {
        for (check, ok) in results {
            let tally = checks.get_mut(&check).expect("all checks listed");
            if ok {
                tally.passed += 1;
            } else {
                tally.failed += 1;
                tally.failing_samples.push(record.sample_index);
            }
        }
    }
    Ok(ValidationReport {
        samples: manifest.records.len(),
        instance_corpus_matches: isrc.sha256 == manifest.header.corpora.instances.sha256,
        background_corpus_matches: bsrc.sha256 == manifest.header.corpora.backgrounds.sha256,
        checks,
    })
}
