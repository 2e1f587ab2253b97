//! Instance and background quality filters, per-class score thresholds and
//! per-class size statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, ScoreSource};
use crate::error::{Error, Result};
use crate::model::{derive_sample_seed, BackgroundRecord, ClassStats, InstanceRecord};

/// `min(b, max(scores) - d)`.
pub fn class_threshold(scores: &[f64], b: f64, d: f64) -> Result<f64> {
    let max = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyClass(String::new()));
    }
    Ok(b.min(max - d))
}

/// Source of per-instance relevance scores.
pub trait ScoreProvider: Sync {
    fn score(&self, instance: &InstanceRecord) -> f64;
}

/// Uses the score carried by the record; NaN when absent.
pub struct AnnotatedScores;

impl ScoreProvider for AnnotatedScores {
    fn score(&self, instance: &InstanceRecord) -> f64 {
        instance.score
    }
}

/// Deterministic pseudo-scores in `[0, 0.4)` derived from the instance id.
pub struct StubScores {
    pub salt: u64,
}

impl ScoreProvider for StubScores {
    fn score(&self, instance: &InstanceRecord) -> f64 {
        // FNV-1a over the id, then mixed with the salt
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in instance.id.bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mixed = derive_sample_seed(self.salt, h);
        (mixed >> 11) as f64 / (1u64 << 53) as f64 * 0.4
    }
}

pub fn provider_for(source: ScoreSource) -> Box<dyn ScoreProvider> {
    match source {
        ScoreSource::Annotations => Box::new(AnnotatedScores),
        ScoreSource::Stub => Box::new(StubScores { salt: 0 }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceReject {
    AreaTooLarge,
    AreaTooSmall,
    LowScore,
    Unscored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundReject {
    LowResolution,
    ExtremeAspect,
    OverCovered,
}

#[derive(Debug)]
pub struct InstanceFilterOutcome {
    /// Kept records, with `score` set to the provider's value.
    pub kept: Vec<InstanceRecord>,
    pub rejected: Vec<(InstanceRecord, InstanceReject)>,
    /// Score threshold per class, over the records that passed the area rule.
    pub thresholds: BTreeMap<String, f64>,
}

/// Area rule first (closed window), then the per-class score rule
/// (`score >= threshold`). Thresholds are computed over the scores of the
/// records that survived the area rule.
pub fn filter_instances(
    instances: Vec<InstanceRecord>,
    cfg: &PipelineConfig,
    provider: &dyn ScoreProvider,
) -> InstanceFilterOutcome {
    let window = cfg.area_window;
    let mut rejected = Vec::new();
    let mut area_ok = Vec::new();
    for mut inst in instances {
        if inst.area_ratio > window.max_ratio {
            rejected.push((inst, InstanceReject::AreaTooLarge));
        } else if inst.area_ratio < window.min_ratio {
            rejected.push((inst, InstanceReject::AreaTooSmall));
        } else {
            inst.score = provider.score(&inst);
            area_ok.push(inst);
        }
    }

    let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for inst in area_ok.iter().filter(|i| i.is_scored()) {
        by_class
            .entry(inst.class_label.clone())
            .or_default()
            .push(inst.score);
    }
    let thresholds: BTreeMap<String, f64> = by_class
        .into_iter()
        .map(|(class, scores)| {
            let t = class_threshold(&scores, cfg.score.b, cfg.score.d)
                .expect("class has at least one finite score");
            (class, t)
        })
        .collect();

    let mut kept = Vec::new();
    for inst in area_ok {
        match thresholds.get(&inst.class_label) {
            _ if !inst.is_scored() => rejected.push((inst, InstanceReject::Unscored)),
            Some(&t) if inst.score >= t => kept.push(inst),
            _ => rejected.push((inst, InstanceReject::LowScore)),
        }
    }
    InstanceFilterOutcome {
        kept,
        rejected,
        thresholds,
    }
}

#[derive(Debug)]
pub struct BackgroundFilterOutcome {
    pub kept: Vec<BackgroundRecord>,
    /// Every failed rule is listed.
    pub rejected: Vec<(BackgroundRecord, Vec<BackgroundReject>)>,
}

pub fn background_rejections(
    width: usize,
    height: usize,
    coverage: f64,
    cfg: &PipelineConfig,
) -> Vec<BackgroundReject> {
    let rules = cfg.background_rules;
    let (short, long) = (width.min(height), width.max(height));
    let mut reasons = Vec::new();
    if short < rules.min_side {
        reasons.push(BackgroundReject::LowResolution);
    }
    if long as f64 / short as f64 > rules.max_aspect {
        reasons.push(BackgroundReject::ExtremeAspect);
    }
    if coverage > rules.max_coverage {
        reasons.push(BackgroundReject::OverCovered);
    }
    reasons
}

pub fn filter_backgrounds(
    backgrounds: Vec<BackgroundRecord>,
    cfg: &PipelineConfig,
) -> BackgroundFilterOutcome {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for bg in backgrounds {
        let reasons = background_rejections(bg.width(), bg.height(), bg.coverage_ratio, cfg);
        if reasons.is_empty() {
            kept.push(bg);
        } else {
            rejected.push((bg, reasons));
        }
    }
    BackgroundFilterOutcome { kept, rejected }
}

/// Mean and population variance of the area ratio per class. Sums run in
/// input order so results are reproducible bit for bit.
pub fn compute_class_stats(
    kept: &[InstanceRecord],
    thresholds: &BTreeMap<String, f64>,
) -> BTreeMap<String, ClassStats> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for inst in kept {
        groups
            .entry(inst.class_label.as_str())
            .or_default()
            .push(inst.area_ratio);
    }
    groups
        .into_iter()
        .map(|(class, ratios)| {
            let n = ratios.len() as f64;
            let mu = ratios.iter().sum::<f64>() / n;
            let sigma2 = ratios.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / n;
            let stats = ClassStats {
                class_label: class.to_string(),
                mu,
                sigma2,
                score_threshold: thresholds.get(class).copied().unwrap_or(f64::NAN),
                count: ratios.len(),
            };
            (class.to_string(), stats)
        })
        .collect()
}

/// Summary written next to a build: rejection counts, thresholds and
/// per-class statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub instances_total: usize,
    pub instances_kept: usize,
    pub instance_rejections: BTreeMap<InstanceReject, usize>,
    pub backgrounds_total: usize,
    pub backgrounds_kept: usize,
    pub background_rejections: BTreeMap<BackgroundReject, usize>,
    pub thresholds: BTreeMap<String, f64>,
    pub class_stats: Vec<ClassStats>,
}

impl FilterReport {
    pub fn new(instances: &InstanceFilterOutcome, backgrounds: &BackgroundFilterOutcome) -> Self {
        let mut instance_rejections = BTreeMap::new();
        for (_, r) in &instances.rejected {
            *instance_rejections.entry(*r).or_insert(0) += 1;
        }
        let mut background_rejections = BTreeMap::new();
        for (_, reasons) in &backgrounds.rejected {
            for r in reasons {
                *background_rejections.entry(*r).or_insert(0) += 1;
            }
        }
        Self {
            instances_total: instances.kept.len() + instances.rejected.len(),
            instances_kept: instances.kept.len(),
            instance_rejections,
            backgrounds_total: backgrounds.kept.len() + backgrounds.rejected.len(),
            backgrounds_kept: backgrounds.kept.len(),
            background_rejections,
            thresholds: instances.thresholds.clone(),
            class_stats: compute_class_stats(&instances.kept, &instances.thresholds)
                .into_values()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BinaryMask, Image, InstanceRegion, Rect};

    fn inst(id: &str, class: &str, area_ratio: f64, score: f64) -> InstanceRecord {
        InstanceRecord {
            id: id.into(),
            class_label: class.into(),
            image: Image::filled(1, 1, &[0, 0, 0]).unwrap(),
            mask: BinaryMask::full(1, 1),
            area_ratio,
            score,
        }
    }

    #[test]
    fn threshold_examples() {
        let t = class_threshold(&[0.15, 0.18, 0.25], 0.2, 0.02).unwrap();
        assert_eq!(t, 0.2);
        let t = class_threshold(&[0.10, 0.19], 0.2, 0.02).unwrap();
        assert_eq!(t, 0.19 - 0.02);
        assert!((t - 0.17).abs() < 1e-15);
        assert_eq!(class_threshold(&[0.22], 0.2, 0.02).unwrap(), 0.2);
        assert!(matches!(class_threshold(&[], 0.2, 0.02), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn area_and_score_rules() {
        let cfg = PipelineConfig::default();
        let items = vec![
            inst("big", "a", 0.96, 0.5),
            inst("small", "a", 0.04, 0.5),
            inst("lo", "a", 0.05, 0.5),
            inst("hi", "a", 0.95, 0.5),
            inst("weak", "a", 0.5, 0.1),
            inst("none", "a", 0.5, f64::NAN),
        ];
        let out = filter_instances(items, &cfg, &AnnotatedScores);
        let kept: Vec<_> = out.kept.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(kept, vec!["lo", "hi"]);
        let reason = |id: &str| out.rejected.iter().find(|(i, _)| i.id == id).unwrap().1;
        assert_eq!(reason("big"), InstanceReject::AreaTooLarge);
        assert_eq!(reason("small"), InstanceReject::AreaTooSmall);
        assert_eq!(reason("weak"), InstanceReject::LowScore);
        assert_eq!(reason("none"), InstanceReject::Unscored);
        // only the area survivors feed the threshold: max 0.5 -> min(0.2, 0.48)
        assert_eq!(out.thresholds["a"], 0.2);
    }

    #[test]
    fn score_equal_to_threshold_is_kept() {
        let cfg = PipelineConfig::default();
        // threshold = min(0.2, 0.19 - 0.02) = 0.17
        let items = vec![inst("top", "c", 0.5, 0.19), inst("edge", "c", 0.5, 0.19 - 0.02)];
        let out = filter_instances(items, &cfg, &AnnotatedScores);
        assert_eq!(out.kept.len(), 2);
    }

    #[test]
    fn background_rules() {
        let cfg = PipelineConfig::default();
        assert_eq!(
            background_rejections(511, 800, 0.0, &cfg),
            vec![BackgroundReject::LowResolution]
        );
        assert!(background_rejections(1200, 500, 0.0, &cfg).contains(&BackgroundReject::ExtremeAspect));
        assert_eq!(
            background_rejections(1206, 600, 0.0, &cfg),
            vec![BackgroundReject::ExtremeAspect]
        );
        assert_eq!(
            background_rejections(800, 600, 0.86, &cfg),
            vec![BackgroundReject::OverCovered]
        );
        assert!(background_rejections(1024, 512, 0.85, &cfg).is_empty());

        let img = Image::filled(600, 600, &[0]).unwrap();
        let covered = BackgroundRecord::new(
            "c",
            img.clone(),
            vec![InstanceRegion::from_box(Rect::new(0, 0, 600, 599))],
        )
        .unwrap();
        let clean = BackgroundRecord::new("k", img, vec![]).unwrap();
        let out = filter_backgrounds(vec![covered, clean], &cfg);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.rejected[0].1, vec![BackgroundReject::OverCovered]);
    }

    #[test]
    fn class_stats_examples() {
        let t = BTreeMap::new();
        let s = compute_class_stats(&[inst("a", "x", 0.1, 0.3), inst("b", "x", 0.3, 0.3)], &t);
        assert!((s["x"].mu - 0.2).abs() < 1e-15);
        assert!((s["x"].sigma2 - 0.01).abs() < 1e-15);
        let s = compute_class_stats(&[inst("a", "y", 0.25, 0.3)], &t);
        assert_eq!((s["y"].mu, s["y"].sigma2), (0.25, 0.0));
        let s = compute_class_stats(&[inst("a", "z", 0.2, 0.3), inst("b", "z", 0.2, 0.3), inst("c", "z", 0.2, 0.3)], &t);
        assert!((s["z"].mu - 0.2).abs() < 1e-15);
        assert!(s["z"].sigma2.abs() < 1e-30);
    }

    #[test]
    fn stub_scores_are_deterministic_and_bounded() {
        let p = StubScores { salt: 3 };
        let a = inst("abc", "x", 0.5, f64::NAN);
        assert_eq!(p.score(&a), p.score(&a));
        for i in 0..200 {
            let s = p.score(&inst(&format!("id{i}"), "x", 0.5, 0.0));
            assert!((0.0..0.4).contains(&s));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_instances() -> impl Strategy<Value = Vec<InstanceRecord>> {
            proptest::collection::vec((0usize..3, 0.0f64..1.0, 0.0f64..0.4), 0..30).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (c, a, s))| inst(&format!("i{i}"), &format!("c{c}"), a, s))
                    .collect()
            })
        }

        fn kept_ids(items: &[InstanceRecord], cfg: &PipelineConfig) -> Vec<String> {
            let mut ids: Vec<_> = filter_instances(items.to_vec(), cfg, &AnnotatedScores)
                .kept
                .into_iter()
                .map(|i| i.id)
                .collect();
            ids.sort();
            ids
        }

        proptest! {
            #[test]
            fn partition_and_permutation(items in arb_instances()) {
                let cfg = PipelineConfig::default();
                let out = filter_instances(items.clone(), &cfg, &AnnotatedScores);
                prop_assert_eq!(out.kept.len() + out.rejected.len(), items.len());
                let mut reversed = items.clone();
                reversed.reverse();
                prop_assert_eq!(kept_ids(&items, &cfg), kept_ids(&reversed, &cfg));
            }

            #[test]
            fn monotone_in_b_and_d(items in arb_instances(), b in 0.0f64..0.4, d in 0.0f64..0.1, db in 0.0f64..0.2, dd in 0.0f64..0.1) {
                let mut cfg = PipelineConfig::default();
                cfg.score.b = b;
                cfg.score.d = d;
                let base = kept_ids(&items, &cfg);
                // thres = min(b, max - d) rises with b and falls with d
                let mut raised_b = cfg.clone();
                raised_b.score.b = b + db;
                let fewer = kept_ids(&items, &raised_b);
                prop_assert!(fewer.iter().all(|id| base.contains(id)));
                let mut raised_d = cfg.clone();
                raised_d.score.d = d + dd;
                let more = kept_ids(&items, &raised_d);
                prop_assert!(base.iter().all(|id| more.contains(id)));
            }
        }
    }
}
