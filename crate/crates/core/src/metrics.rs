//! PSNR and SSIM over whole frames or mask regions, and directory-level
//! evaluation reports.
//!
//! SSIM follows the original single-scale definition: an 11x11 Gaussian
//! window with sigma 1.5, `K1 = 0.01`, `K2 = 0.03`, `L = 255`, population
//! (not sample) moments, averaged over window centers whose window lies
//! fully inside the frame. Multi-channel images average the per-channel
//! values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imageio::{read_mask, read_png};
use crate::model::{BinaryMask, Image};

const PEAK: f64 = 255.0;
const WINDOW: usize = 11;
const RADIUS: usize = WINDOW / 2;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

/// Peak signal-to-noise ratio in dB; identical inputs give `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => serializer.serialize_f64(*v),
            Psnr::Infinite => serializer.serialize_str("inf"),
        }
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::DimMismatch(format!(
            "{:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    Ok(())
}

fn check_region(a: &Image, region: Option<&BinaryMask>) -> Result<()> {
    if let Some(r) = region {
        if r.dims() != a.dims() {
            return Err(Error::DimMismatch(format!("region {:?} vs image {:?}", r.dims(), a.dims())));
        }
    }
    Ok(())
}

/// Sum of squared differences over the region and the number of samples
/// (pixels times channels) it covers.
pub fn squared_error(a: &Image, b: &Image, region: Option<&BinaryMask>) -> Result<(u64, u64)> {
    check_pair(a, b)?;
    check_region(a, region)?;
    let c = a.channels();
    let mut sum = 0u64;
    let mut n = 0u64;
    for (i, (pa, pb)) in a.data().chunks_exact(c).zip(b.data().chunks_exact(c)).enumerate() {
        if region.is_some_and(|r| !r.bits()[i]) {
            continue;
        }
        for (&x, &y) in pa.iter().zip(pb) {
            let d = x as i64 - y as i64;
            sum += (d * d) as u64;
        }
        n += c as u64;
    }
    Ok((sum, n))
}

pub fn mse(a: &Image, b: &Image, region: Option<&BinaryMask>) -> Result<f64> {
    let (sum, n) = squared_error(a, b, region)?;
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(sum as f64 / n as f64)
}

pub fn psnr(a: &Image, b: &Image, region: Option<&BinaryMask>) -> Result<Psnr> {
    let err = mse(a, b, region)?;
    if err == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (PEAK * PEAK / err).log10()))
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - RADIUS as f64;
        *w = (-0.5 * x * x / (SIGMA * SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Weighted window sums at every valid center, for a plane of `w x h`
/// samples. Output is `(w - 10) x (h - 10)`.
fn filter_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - 2 * RADIUS;
    let oh = h - 2 * RADIUS;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&line[x..x + WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}

/// SSIM index at every valid window center of one channel.
fn ssim_map(a: &[f64], b: &[f64], w: usize, h: usize) -> Vec<f64> {
    let kernel = gaussian_kernel();
    let product = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(a, w, h, &kernel);
    let mu_b = filter_valid(b, w, h, &kernel);
    let aa = filter_valid(&product(a, a), w, h, &kernel);
    let bb = filter_valid(&product(b, b), w, h, &kernel);
    let ab = filter_valid(&product(a, b), w, h, &kernel);
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .collect()
}

fn channel_plane(image: &Image, channel: usize) -> Vec<f64> {
    let c = image.channels();
    image.data().iter().skip(channel).step_by(c).map(|&v| v as f64).collect()
}

/// Mean SSIM. With a region, only window centers inside it are averaged.
pub fn ssim(a: &Image, b: &Image, region: Option<&BinaryMask>) -> Result<f64> {
    check_pair(a, b)?;
    check_region(a, region)?;
    let (w, h) = a.dims();
    if w.min(h) < WINDOW {
        return Err(Error::TooSmall { window: WINDOW });
    }
    let ow = w - 2 * RADIUS;
    let centers: Vec<usize> = (0..ow * (h - 2 * RADIUS))
        .filter(|&i| region.is_none_or(|r| r.get(i % ow + RADIUS, i / ow + RADIUS)))
        .collect();
    if centers.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let map = ssim_map(&channel_plane(a, ch), &channel_plane(b, ch), w, h);
        total += centers.iter().map(|&i| map[i]).sum::<f64>() / centers.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Metrics for one result image. Region metrics are absent when the region
/// is empty (or, for SSIM, holds no valid window center).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub stem: String,
    pub psnr_full: Psnr,
    pub ssim_full: f64,
    pub psnr_masked: Option<Psnr>,
    pub ssim_masked: Option<f64>,
    pub psnr_unmasked: Option<Psnr>,
}

/// Mean over finite values; infinite PSNRs are counted separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanStat {
    pub mean: Option<f64>,
    pub count: usize,
    pub infinite: usize,
}

impl MeanStat {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut sum, mut count, mut infinite) = (0.0, 0, 0);
        for v in values {
            if v.is_finite() {
                sum += v;
                count += 1;
            } else {
                infinite += 1;
            }
        }
        Self {
            mean: (count > 0).then(|| sum / count as f64),
            count,
            infinite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub images: usize,
    pub psnr_full: MeanStat,
    pub ssim_full: MeanStat,
    pub psnr_masked: MeanStat,
    pub ssim_masked: MeanStat,
    pub psnr_unmasked: MeanStat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricReport {
    pub fn from_images(images: Vec<ImageMetrics>) -> Self {
        let aggregate = AggregateMetrics {
            images: images.len(),
            psnr_full: MeanStat::of(images.iter().map(|m| m.psnr_full.value())),
            ssim_full: MeanStat::of(images.iter().map(|m| m.ssim_full)),
            psnr_masked: MeanStat::of(images.iter().filter_map(|m| m.psnr_masked).map(Psnr::value)),
            ssim_masked: MeanStat::of(images.iter().filter_map(|m| m.ssim_masked)),
            psnr_unmasked: MeanStat::of(images.iter().filter_map(|m| m.psnr_unmasked).map(Psnr::value)),
        };
        Self { images, aggregate }
    }

    /// One JSON object per image, then one `{"aggregate": ...}` line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.images {
            out.push_str(&serde_json::to_string(m).expect("serializable"));
            out.push('\n');
        }
        let agg = serde_json::json!({ "aggregate": self.aggregate });
        out.push_str(&agg.to_string());
        out.push('\n');
        out
    }

    /// Table with one row per image and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<String>| v.unwrap_or_default();
        writer
            .write_record(["stem", "psnr_full", "ssim_full", "psnr_masked", "ssim_masked", "psnr_unmasked"])
            .expect("in-memory write");
        for m in &self.images {
            writer
                .write_record([
                    m.stem.clone(),
                    m.psnr_full.to_string(),
                    m.ssim_full.to_string(),
                    opt(m.psnr_masked.map(|p| p.to_string())),
                    opt(m.ssim_masked.map(|s| s.to_string())),
                    opt(m.psnr_unmasked.map(|p| p.to_string())),
                ])
                .expect("in-memory write");
        }
        let a = &self.aggregate;
        let mean = |s: &MeanStat| opt(s.mean.map(|v| v.to_string()));
        writer
            .write_record([
                "mean".to_string(),
                mean(&a.psnr_full),
                mean(&a.ssim_full),
                mean(&a.psnr_masked),
                mean(&a.ssim_masked),
                mean(&a.psnr_unmasked),
            ])
            .expect("in-memory write");
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

pub fn image_metrics(stem: &str, result: &Image, gt: &Image, mask: Option<&BinaryMask>) -> Result<ImageMetrics> {
    let optional = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyRegion) => Ok(None),
        Err(e) => Err(e),
    };
    let optional_psnr = |r: Result<Psnr>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyRegion) => Ok(None),
        Err(e) => Err(e),
    };
    let (psnr_masked, ssim_masked, psnr_unmasked) = match mask {
        Some(m) => {
            let outside = m.complement();
            (
                optional_psnr(psnr(result, gt, Some(m)))?,
                optional(ssim(result, gt, Some(m)))?,
                optional_psnr(psnr(result, gt, Some(&outside)))?,
            )
        }
        None => (None, None, None),
    };
    Ok(ImageMetrics {
        stem: stem.to_string(),
        psnr_full: psnr(result, gt, None)?,
        ssim_full: ssim(result, gt, None)?,
        psnr_masked,
        ssim_masked,
        psnr_unmasked,
    })
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::UnreadableFile {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut stems = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string(), path);
            }
        }
    }
    Ok(stems)
}

fn unmatched(a: &BTreeMap<String, PathBuf>, b: &BTreeMap<String, PathBuf>) -> Vec<String> {
    a.keys().filter(|k| !b.contains_key(*k)).cloned().collect()
}

/// Pairs PNG files by stem across the directories and evaluates every
/// pair. Rows are ordered by stem.
pub fn evaluate_directory(results: &Path, gts: &Path, masks: Option<&Path>) -> Result<MetricReport> {
    let res = png_stems(results)?;
    let gt = png_stems(gts)?;
    let mk = masks.map(png_stems).transpose()?;
    let mut missing = unmatched(&res, &gt);
    missing.extend(unmatched(&gt, &res));
    if let Some(mk) = &mk {
        missing.extend(unmatched(&res, mk));
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::PairingError(format!(
            "{} unmatched stem(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let images = res
        .par_iter()
        .map(|(stem, path)| {
            let result = read_png(path)?;
            let truth = read_png(&gt[stem])?;
            let mask = match &mk {
                Some(mk) => Some(read_mask(&mk[stem])?),
                None => None,
            };
            image_metrics(stem, &result, &truth, mask.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_images(images))
}
