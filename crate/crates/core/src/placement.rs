//! Paste scale sampling, instance resizing, the feasible-center region and
//! center selection.
//!
//! A placement of a `w x h` instance at center `(cx, cy)` covers the box
//! with top-left corner `(cx - w/2, cy - h/2)` (integer division). Centers
//! are restricted to `[ceil(w/2), W - ceil(w/2)] x [ceil(h/2), H - ceil(h/2)]`,
//! which keeps that box inside the frame.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{AreaWindow, IouMode};
use crate::error::{Error, Result};
use crate::model::{round_to_u8, BackgroundRecord, BinaryMask, ClassStats, Image, InstanceRecord, Rect};

/// Half extents used as edge margins: `(ceil(w/2), ceil(h/2))`.
pub fn margins(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(2), height.div_ceil(2))
}

/// Box covered by a `width x height` instance centered at `center`.
/// The center must be at least `(width/2, height/2)`.
pub fn paste_box(center: (usize, usize), width: usize, height: usize) -> Rect {
    Rect::new(center.0 - width / 2, center.1 - height / 2, width, height)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub factor: f64,
    pub width: usize,
    pub height: usize,
    pub center: (usize, usize),
    pub margins: (usize, usize),
}

impl Placement {
    pub fn new(scale: f64, factor: f64, width: usize, height: usize, center: (usize, usize)) -> Self {
        Self {
            scale,
            factor,
            width,
            height,
            center,
            margins: margins(width, height),
        }
    }

    pub fn paste_box(&self) -> Rect {
        paste_box(self.center, self.width, self.height)
    }

    /// Whether the center lies in the margin rectangle of a `bg_w x bg_h` frame.
    pub fn within_margins(&self, bg_w: usize, bg_h: usize) -> bool {
        let (ex, ey) = self.margins;
        let (cx, cy) = self.center;
        cx >= ex && cy >= ey && cx + ex <= bg_w && cy + ey <= bg_h
    }
}

/// Draws a scale from `N(mu, sigma2)`, rejecting draws outside the closed
/// window. After `retry_limit` rejected draws the last draw is clamped.
pub fn sample_scale<R: Rng + ?Sized>(
    stats: &ClassStats,
    window: &AreaWindow,
    retry_limit: usize,
    rng: &mut R,
) -> f64 {
    let sigma = stats.sigma2.max(0.0).sqrt();
    let normal = Normal::new(stats.mu, sigma).expect("finite mean and non-negative deviation");
    let mut s = stats.mu;
    for _ in 0..retry_limit.max(1) {
        s = normal.sample(rng);
        if window.contains(s) {
            return s;
        }
    }
    s.clamp(window.min_ratio, window.max_ratio)
}

/// An instance resampled for pasting, re-tightened to its mask.
#[derive(Debug, Clone)]
pub struct ResizedInstance {
    pub image: Image,
    pub mask: BinaryMask,
    pub factor: f64,
    /// Dimensions of the resampled crop before re-tightening.
    pub resampled_dims: (usize, usize),
    /// Tight mask box within the resampled crop.
    pub tight: Rect,
}

fn bilinear(src: &Image, width: usize, height: usize) -> Image {
    let (sw, sh, c) = (src.width(), src.height(), src.channels());
    let axis = |i: usize, scale: f64, n: usize| {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|x| axis(x, sw as f64 / width as f64, sw)).collect();
    let data = src.data();
    let mut out = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let (y0, y1, ty) = axis(y, sh as f64 / height as f64, sh);
        let (row0, row1) = (&data[y0 * sw * c..(y0 + 1) * sw * c], &data[y1 * sw * c..(y1 + 1) * sw * c]);
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let p = |row: &[u8], xx: usize| row[xx * c + ch] as f64;
                let top = p(row0, x0) * (1.0 - tx) + p(row0, x1) * tx;
                let bottom = p(row1, x0) * (1.0 - tx) + p(row1, x1) * tx;
                out.push(round_to_u8(top * (1.0 - ty) + bottom * ty));
            }
        }
    }
    Image::new(width, height, c, out).expect("resize target dims are positive")
}

fn nearest_mask(src: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    let (sw, sh) = src.dims();
    BinaryMask::from_fn(width, height, |x, y| {
        let sx = (((x as f64 + 0.5) * sw as f64 / width as f64) as usize).min(sw - 1);
        let sy = (((y as f64 + 0.5) * sh as f64 / height as f64) as usize).min(sh - 1);
        src.get(sx, sy)
    })
}

/// Resamples an instance crop to exactly `dims` (bilinear image,
/// nearest-neighbour mask) and re-tightens it.
pub fn resize_to_dims(inst: &InstanceRecord, dims: (usize, usize), factor: f64) -> Result<ResizedInstance> {
    let (w, h) = dims;
    if w == 0 || h == 0 {
        return Err(Error::DegenerateResize {
            width: w,
            height: h,
        });
    }
    let (image, mask) = if dims == inst.image.dims() {
        (inst.image.clone(), inst.mask.clone())
    } else {
        (bilinear(&inst.image, w, h), nearest_mask(&inst.mask, w, h))
    };
    let tight = mask.bbox().ok_or(Error::DegenerateResize {
        width: w,
        height: h,
    })?;
    Ok(ResizedInstance {
        image: image.crop(tight)?,
        mask: mask.crop(tight)?,
        factor,
        resampled_dims: dims,
        tight,
    })
}

/// Scales an instance so its mask area approaches `scale * W * H`. The
/// linear factor is `sqrt(target / area)`, capped at `upscale_cap`.
pub fn resize_instance(
    inst: &InstanceRecord,
    scale: f64,
    background: (usize, usize),
    upscale_cap: f64,
) -> Result<ResizedInstance> {
    let target = scale * (background.0 * background.1) as f64;
    let area = inst.mask.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }
    let factor = (target / area as f64).sqrt().min(upscale_cap);
    let (w, h) = inst.mask.dims();
    let dims = (
        (w as f64 * factor).round() as usize,
        (h as f64 * factor).round() as usize,
    );
    resize_to_dims(inst, dims, factor)
}

#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Box(Rect),
    Mask(&'a BinaryMask),
}

impl Region<'_> {
    fn area(&self) -> usize {
        match self {
            Region::Box(r) => r.area(),
            Region::Mask(m) => m.area(),
        }
    }
}

fn mask_box_intersection(mask: &BinaryMask, rect: Rect) -> usize {
    let x1 = rect.right().min(mask.width());
    let y1 = rect.bottom().min(mask.height());
    let mut n = 0;
    for y in rect.y.min(y1)..y1 {
        for x in rect.x.min(x1)..x1 {
            n += mask.get(x, y) as usize;
        }
    }
    n
}

/// Intersection over union of two regions in the same frame.
pub fn iou(a: Region<'_>, b: Region<'_>) -> Result<f64> {
    let inter = match (a, b) {
        (Region::Box(p), Region::Box(q)) => p.intersection_area(&q),
        (Region::Mask(m), Region::Box(r)) | (Region::Box(r), Region::Mask(m)) => {
            mask_box_intersection(m, r)
        }
        (Region::Mask(p), Region::Mask(q)) => {
            if p.dims() != q.dims() {
                return Err(Error::FrameMismatch(format!("{:?} vs {:?}", p.dims(), q.dims())));
            }
            p.intersection_count(q)
        }
    };
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Err(Error::BothEmpty);
    }
    Ok(inter as f64 / union as f64)
}

/// Admissible paste centers as a bitmap over background pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    pub centers: BinaryMask,
    pub count: usize,
}

impl FeasibleRegion {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Centers whose placement has IoU strictly below `r` with every existing
/// instance and whose paste box stays clear of the frame edges.
pub fn feasible_region(
    bg: &BackgroundRecord,
    instance_mask: &BinaryMask,
    r: f64,
    mode: IouMode,
) -> Result<FeasibleRegion> {
    let (bw, bh) = (bg.width(), bg.height());
    let (w, h) = instance_mask.dims();
    if w > bw || h > bh {
        return Err(Error::InstanceTooLarge {
            width: w,
            height: h,
            bg_width: bw,
            bg_height: bh,
        });
    }
    let (ex, ey) = margins(w, h);
    if ex > bw - ex || ey > bh - ey || (!bg.instance_regions.is_empty() && !(0.0 < r)) {
        // no room inside the margins, or even a disjoint placement fails IoU < r
        return Ok(FeasibleRegion {
            centers: BinaryMask::empty(bw, bh),
            count: 0,
        });
    }

    let (cx_range, cy_range) = (ex..=bw - ex, ey..=bh - ey);
    let mut admissible = BinaryMask::from_fn(bw, bh, |x, y| cx_range.contains(&x) && cy_range.contains(&y));
    let paste_area = match mode {
        IouMode::Bbox => w * h,
        IouMode::Mask => instance_mask.area(),
    };
    let packed_instance = match mode {
        IouMode::Bbox => None,
        IouMode::Mask => Some(PackedRows::new(instance_mask)),
    };
    for region in &bg.instance_regions {
        let (area, packed_region) = match mode {
            IouMode::Bbox => (region.bbox.area(), None),
            IouMode::Mask => {
                let m = region.to_mask(bw, bh);
                (m.area(), Some(PackedRows::new(&m)))
            }
        };
        // paste origins whose box meets the region box
        let b = region.bbox;
        let x_lo = (b.x + 1).saturating_sub(w);
        let y_lo = (b.y + 1).saturating_sub(h);
        let mut window = vec![0u64; w.div_ceil(64)];
        let mut column = Vec::new();
        for cx in cx_range.clone() {
            let x0 = cx - w / 2;
            if x0 < x_lo || x0 >= b.right() {
                continue;
            }
            if let Some(region_rows) = &packed_region {
                // this origin's column strip of the region, one row per frame row
                column.clear();
                for y in 0..bh {
                    region_rows.extract(y, x0, w, &mut window);
                    column.extend_from_slice(&window);
                }
            }
            for cy in cy_range.clone() {
                let y0 = cy - h / 2;
                if y0 < y_lo || y0 >= b.bottom() {
                    continue;
                }
                let placed = Rect::new(x0, y0, w, h);
                let inter = match (&packed_instance, mode) {
                    (Some(inst), IouMode::Mask) => inst.overlap(&column, y0),
                    _ => placed.intersection_area(&b),
                };
                let union = paste_area + area - inter;
                if (inter as f64 / union as f64) >= r {
                    admissible.set(cx, cy, false);
                }
            }
        }
    }
    let count = admissible.area();
    Ok(FeasibleRegion { centers: admissible, count })
}

/// Mask rows packed into 64-bit words, bit `x % 64` of word `x / 64`
/// holding column `x`.
struct PackedRows {
    words: usize,
    data: Vec<u64>,
}

impl PackedRows {
    fn new(mask: &BinaryMask) -> Self {
        let words = mask.width().div_ceil(64);
        let mut data = vec![0u64; words * mask.height()];
        for (x, y) in mask.points() {
            data[y * words + x / 64] |= 1 << (x % 64);
        }
        Self { words, data }
    }

    /// Columns `x0 .. x0 + len` of row `y`, repacked from bit 0.
    fn extract(&self, y: usize, x0: usize, len: usize, out: &mut [u64]) {
        let row = &self.data[y * self.words..(y + 1) * self.words];
        let (wk, bk) = (x0 / 64, x0 % 64);
        for (i, o) in out.iter_mut().enumerate() {
            let lo = row.get(wk + i).copied().unwrap_or(0);
            let hi = row.get(wk + i + 1).copied().unwrap_or(0);
            *o = if bk == 0 { lo } else { lo >> bk | hi << (64 - bk) };
        }
        if len % 64 != 0 {
            out[out.len() - 1] &= (1u64 << (len % 64)) - 1;
        }
    }

    /// Pixels shared with `strip` (rows of this mask's width) when this
    /// mask's top row sits on strip row `y0`.
    fn overlap(&self, strip: &[u64], y0: usize) -> usize {
        let n = self.data.len();
        let other = &strip[y0 * self.words..y0 * self.words + n];
        self.data
            .iter()
            .zip(other)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

/// Uniform draw over the feasible centers.
pub fn pick_center<R: Rng + ?Sized>(region: &FeasibleRegion, rng: &mut R) -> Result<(usize, usize)> {
    if region.count == 0 {
        return Err(Error::EmptyFeasibleRegion);
    }
    let k = rng.random_range(0..region.count);
    region
        .centers
        .points()
        .nth(k)
        .ok_or(Error::EmptyFeasibleRegion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_rng, InstanceRegion};
    use proptest::prelude::*;

    fn stats(mu: f64, sigma2: f64) -> ClassStats {
        ClassStats {
            class_label: "c".into(),
            mu,
            sigma2,
            score_threshold: 0.2,
            count: 1,
        }
    }

    fn solid_instance(w: usize, h: usize) -> InstanceRecord {
        InstanceRecord {
            id: "i".into(),
            class_label: "c".into(),
            image: Image::from_fn(w, h, 3, |x, y, c| (x * 10 + y * 3 + c) as u8).unwrap(),
            mask: BinaryMask::full(w, h),
            area_ratio: 0.1,
            score: 0.3,
        }
    }

    #[test]
    fn degenerate_gaussian_is_constant() {
        let mut rng = sample_rng(1);
        let window = AreaWindow::default();
        for _ in 0..100 {
            assert_eq!(sample_scale(&stats(0.1, 0.0), &window, 8, &mut rng), 0.1);
        }
    }

    #[test]
    fn exhausted_retries_clamp() {
        let mut rng = sample_rng(2);
        let s = sample_scale(&stats(0.04, 0.0), &AreaWindow::default(), 8, &mut rng);
        assert_eq!(s, 0.05);
    }

    #[test]
    fn empirical_mean_of_scales() {
        let mut rng = sample_rng(3);
        // window covers mean +- 4 sd so truncation bias is negligible
        let window = AreaWindow { min_ratio: 0.02, max_ratio: 0.18 };
        let n = 100_000;
        let st = stats(0.1, 0.0004);
        let draws: Vec<f64> = (0..n).map(|_| sample_scale(&st, &window, 8, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 0.1).abs() <= 4.0 * 0.02 / (n as f64).sqrt(), "{mean}");
        assert!((sd - 0.02).abs() <= 0.05 * 0.02, "{sd}");
    }

    #[test]
    fn resize_factors() {
        let inst = solid_instance(20, 20);
        let r = resize_instance(&inst, 0.04, (100, 100), 2.0).unwrap();
        assert_eq!(r.factor, 1.0);
        assert_eq!(r.image, inst.image);

        let inst = solid_instance(10, 10);
        let r = resize_instance(&inst, 0.04, (100, 100), 2.0).unwrap();
        assert_eq!(r.factor, 2.0);
        assert_eq!(r.mask.dims(), (20, 20));

        // sqrt(0.49 * 10000 / 400) = 3.5, capped at 2
        let inst = solid_instance(20, 20);
        let r = resize_instance(&inst, 0.49, (100, 100), 2.0).unwrap();
        assert_eq!(r.factor, 2.0);
        assert_eq!(r.mask.dims(), (40, 40));
    }

    #[test]
    fn degenerate_resize() {
        let inst = solid_instance(2, 2);
        assert!(matches!(
            resize_instance(&inst, 1e-6, (100, 100), 2.0),
            Err(Error::DegenerateResize { .. })
        ));
    }

    #[test]
    fn iou_examples() {
        let a = Rect::new(0, 0, 4, 4);
        assert_eq!(iou(Region::Box(a), Region::Box(a)).unwrap(), 1.0);
        assert_eq!(iou(Region::Box(a), Region::Box(Rect::new(10, 10, 2, 2))).unwrap(), 0.0);
        let p = Rect::new(0, 0, 2, 1);
        let q = Rect::new(1, 0, 2, 1);
        assert!((iou(Region::Box(p), Region::Box(q)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = BinaryMask::empty(4, 4);
        assert!(matches!(iou(Region::Mask(&empty), Region::Mask(&empty)), Err(Error::BothEmpty)));
        let m = BinaryMask::from_rect(8, 8, p);
        assert!((iou(Region::Mask(&m), Region::Box(q)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    fn bg(w: usize, h: usize, boxes: &[Rect]) -> BackgroundRecord {
        BackgroundRecord::new(
            "bg",
            Image::filled(w, h, &[0, 0, 0]).unwrap(),
            boxes.iter().map(|&b| InstanceRegion::from_box(b)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn no_instances_gives_margin_rectangle() {
        let region = feasible_region(&bg(10, 8, &[]), &BinaryMask::full(3, 4), 0.3, IouMode::Bbox).unwrap();
        let expect = BinaryMask::from_fn(10, 8, |x, y| (2..=8).contains(&x) && (2..=6).contains(&y));
        assert_eq!(region.centers, expect);
        assert_eq!(region.count, 7 * 5);
    }

    #[test]
    fn threshold_one_equals_margins_unless_identical() {
        let b = bg(10, 10, &[Rect::new(0, 0, 5, 5)]);
        let region = feasible_region(&b, &BinaryMask::full(3, 3), 1.0, IouMode::Bbox).unwrap();
        let free = feasible_region(&bg(10, 10, &[]), &BinaryMask::full(3, 3), 1.0, IouMode::Bbox).unwrap();
        assert_eq!(region, free);
    }

    #[test]
    fn zero_threshold_with_instance_is_empty() {
        let b = bg(10, 10, &[Rect::new(0, 0, 5, 5)]);
        let region = feasible_region(&b, &BinaryMask::full(3, 3), 0.0, IouMode::Bbox).unwrap();
        assert!(region.is_empty());
    }

    #[test]
    fn too_large_instance() {
        assert!(matches!(
            feasible_region(&bg(10, 10, &[]), &BinaryMask::full(11, 2), 0.3, IouMode::Bbox),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    fn arb_bits(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(prop::bool::weighted(0.4), w * h)
            .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
    }

    fn arb_mask_case() -> impl Strategy<Value = (BinaryMask, BinaryMask, f64)> {
        (70usize..140, 8usize..20, 1usize..80, 1usize..6)
            .prop_flat_map(|(bw, bh, w, h)| (arb_bits(bw, bh), arb_bits(w.min(bw), h.min(bh)), 0.05f64..1.0))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mask_mode_matches_pixel_iou((existing, inst, r) in arb_mask_case()) {
            prop_assume!(!existing.is_empty() && !inst.is_empty());
            let (bw, bh) = existing.dims();
            let b = BackgroundRecord::new(
                "b",
                Image::filled(bw, bh, &[0]).unwrap(),
                vec![InstanceRegion::from_mask(existing.clone()).unwrap()],
            )
            .unwrap();
            let got = feasible_region(&b, &inst, r, IouMode::Mask).unwrap();
            let (w, h) = inst.dims();
            let (ex, ey) = margins(w, h);
            for cy in 0..bh {
                for cx in 0..bw {
                    let inside = cx >= ex && cy >= ey && cx + ex <= bw && cy + ey <= bh;
                    let want = inside && {
                        let pb = paste_box((cx, cy), w, h);
                        let placed = inst.place(bw, bh, pb.x, pb.y);
                        iou(Region::Mask(&placed), Region::Mask(&existing)).unwrap() < r
                    };
                    prop_assert_eq!(got.centers.get(cx, cy), want, "center ({}, {})", cx, cy);
                }
            }
        }
    }

    #[test]
    fn pick_center_cases() {
        let mut rng = sample_rng(5);
        let mut centers = BinaryMask::empty(5, 5);
        centers.set(2, 3, true);
        let single = FeasibleRegion { centers, count: 1 };
        for _ in 0..20 {
            assert_eq!(pick_center(&single, &mut rng).unwrap(), (2, 3));
        }
        let empty = FeasibleRegion {
            centers: BinaryMask::empty(5, 5),
            count: 0,
        };
        assert!(matches!(pick_center(&empty, &mut rng), Err(Error::EmptyFeasibleRegion)));
    }

    #[test]
    fn pick_center_is_uniform() {
        // chi-square with 3 degrees of freedom; critical value at 0.001 is 16.266
        let mut centers = BinaryMask::empty(4, 4);
        for (x, y) in [(0, 0), (1, 2), (3, 3), (2, 1)] {
            centers.set(x, y, true);
        }
        let region = FeasibleRegion { centers, count: 4 };
        let mut rng = sample_rng(11);
        let mut counts = std::collections::HashMap::new();
        let n = 100_000;
        for _ in 0..n {
            *counts.entry(pick_center(&region, &mut rng).unwrap()).or_insert(0usize) += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert_eq!(counts.len(), 4);
        assert!(chi2 < 16.266, "chi2 = {chi2}");
    }
}
