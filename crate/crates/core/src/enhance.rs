//! Mask deformations that mimic hand-drawn user masks.
//!
//! Six kinds: the original mask, disk erosion, disk dilation, the convex
//! hull (slightly dilated), an expanded minimum enclosing ellipse, and the
//! bounding box with each edge bent outward by a cubic curve.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnhancementParams;
use crate::error::{Error, Result};
use crate::geometry::{
    convex_hull, cubic_point, fill_convex, fill_polygon, minimum_enclosing_ellipse,
};
use crate::model::BinaryMask;
use crate::morphology::{dilate_disk, erode_disk};

const ELLIPSE_TOLERANCE: f64 = 1e-3;
const CURVE_SEGMENTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementKind {
    Original,
    Eroded,
    Dilated,
    ConvexHull,
    Ellipse,
    BboxBezier,
}

impl EnhancementKind {
    pub const ALL: [EnhancementKind; 6] = [
        EnhancementKind::Original,
        EnhancementKind::Eroded,
        EnhancementKind::Dilated,
        EnhancementKind::ConvexHull,
        EnhancementKind::Ellipse,
        EnhancementKind::BboxBezier,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            EnhancementKind::Original => "original",
            EnhancementKind::Eroded => "eroded",
            EnhancementKind::Dilated => "dilated",
            EnhancementKind::ConvexHull => "convex_hull",
            EnhancementKind::Ellipse => "ellipse",
            EnhancementKind::BboxBezier => "bbox_bezier",
        }
    }

    /// Whether the deformed mask always contains the original.
    pub fn is_superset(self) -> bool {
        matches!(
            self,
            EnhancementKind::Dilated
                | EnhancementKind::ConvexHull
                | EnhancementKind::Ellipse
                | EnhancementKind::BboxBezier
        )
    }
}

impl fmt::Display for EnhancementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnhancementKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "hull" && *k == EnhancementKind::ConvexHull))
            .ok_or_else(|| format!("unknown enhancement type `{s}`"))
    }
}

/// A chosen deformation and its magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancementSpec {
    pub kind: EnhancementKind,
    pub erode_frac: f64,
    pub dilate_frac: f64,
    pub hull_expand_px: usize,
    pub ellipse_expand_factor: f64,
    pub bezier_jitter_frac: f64,
}

impl EnhancementSpec {
    pub fn new(kind: EnhancementKind, params: &EnhancementParams) -> Self {
        Self {
            kind,
            erode_frac: params.erode_frac,
            dilate_frac: params.dilate_frac,
            hull_expand_px: params.hull_expand_px,
            ellipse_expand_factor: params.ellipse_expand_factor,
            bezier_jitter_frac: params.bezier_jitter_frac,
        }
    }

    pub fn original() -> Self {
        Self::new(EnhancementKind::Original, &EnhancementParams::default())
    }
}

/// Categorical draw over the six kinds with the configured weights.
pub fn pick_enhancement<R: Rng + ?Sized>(
    rng: &mut R,
    params: &EnhancementParams,
) -> Result<EnhancementSpec> {
    let weights = params.weights;
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights);
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (kind, &w) in EnhancementKind::ALL.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        acc += w;
        chosen = Some(*kind);
        if u < acc {
            break;
        }
    }
    Ok(EnhancementSpec::new(chosen.expect("positive total weight"), params))
}

/// Leftmost and rightmost set pixel of every row; enough to span the hull.
fn row_extremes(mask: &BinaryMask) -> Vec<(i64, i64)> {
    let w = mask.width();
    let mut pts = Vec::new();
    for (y, row) in mask.bits().chunks_exact(w).enumerate() {
        if let (Some(a), Some(b)) = (row.iter().position(|&v| v), row.iter().rposition(|&v| v)) {
            pts.push((a as i64, y as i64));
            if b != a {
                pts.push((b as i64, y as i64));
            }
        }
    }
    pts
}

fn relative_radius(mask: &BinaryMask, frac: f64) -> f64 {
    let bbox = mask.bbox().expect("caller checked non-empty");
    (frac * bbox.width.min(bbox.height) as f64).max(1.0)
}

fn union_in_place(target: &mut BinaryMask, other: &BinaryMask) {
    for (x, y) in other.points() {
        target.set(x, y, true);
    }
}

fn convex_hull_mask(mask: &BinaryMask, expand_px: usize) -> BinaryMask {
    let hull = convex_hull(&row_extremes(mask));
    let mut out = fill_convex(&hull, mask.width(), mask.height());
    union_in_place(&mut out, mask);
    if expand_px > 0 {
        out = dilate_disk(&out, expand_px as f64);
    }
    out
}

fn ellipse_mask(mask: &BinaryMask, expand: f64) -> BinaryMask {
    let hull = convex_hull(&row_extremes(mask));
    let mut points: Vec<[f64; 2]> = hull.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
    if hull.len() < 3 {
        // collinear pixel centers: use pixel corners so the set spans the plane
        points = hull
            .iter()
            .flat_map(|&(x, y)| {
                let (x, y) = (x as f64, y as f64);
                [[x - 0.5, y - 0.5], [x + 0.5, y - 0.5], [x + 0.5, y + 0.5], [x - 0.5, y + 0.5]]
            })
            .collect();
    }
    let ellipse = minimum_enclosing_ellipse(&points, ELLIPSE_TOLERANCE)
        .expect("hull vertices or pixel corners span the plane");
    let mut out = ellipse.scaled(expand).rasterize(mask.width(), mask.height());
    union_in_place(&mut out, mask);
    out
}

fn bbox_bezier_mask<R: Rng + ?Sized>(mask: &BinaryMask, jitter_frac: f64, rng: &mut R) -> BinaryMask {
    let bbox = mask.bbox().expect("caller checked non-empty");
    let (x0, y0) = (bbox.x as f64, bbox.y as f64);
    let (x1, y1) = (bbox.right() as f64, bbox.bottom() as f64);
    // corners in corner coordinates, walked clockwise on screen, with the
    // outward normal of the edge leaving each corner
    let edges = [
        ([x0, y0], [x1, y0], [0.0, -1.0]),
        ([x1, y0], [x1, y1], [1.0, 0.0]),
        ([x1, y1], [x0, y1], [0.0, 1.0]),
        ([x0, y1], [x0, y0], [-1.0, 0.0]),
    ];
    let mut outline = Vec::with_capacity(4 * CURVE_SEGMENTS);
    for (a, b, n) in edges {
        let length = ((b[0] - a[0]).abs()).max((b[1] - a[1]).abs());
        let max_offset = jitter_frac * length;
        let d1 = rng.random::<f64>() * max_offset;
        let d2 = rng.random::<f64>() * max_offset;
        let lerp = |t: f64| [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
        let c1 = lerp(1.0 / 3.0);
        let c2 = lerp(2.0 / 3.0);
        let control = [
            a,
            [c1[0] + n[0] * d1, c1[1] + n[1] * d1],
            [c2[0] + n[0] * d2, c2[1] + n[1] * d2],
            b,
        ];
        for i in 0..CURVE_SEGMENTS {
            let p = cubic_point(control, i as f64 / CURVE_SEGMENTS as f64);
            outline.push((p[0], p[1]));
        }
    }
    let mut out = fill_polygon(&outline, mask.width(), mask.height());
    union_in_place(&mut out, &BinaryMask::from_rect(mask.width(), mask.height(), bbox));
    out
}

/// Applies one deformation. The result always has the dimensions of the
/// input and is non-empty for non-empty input.
pub fn enhance_mask<R: Rng + ?Sized>(
    mask: &BinaryMask,
    spec: &EnhancementSpec,
    rng: &mut R,
) -> Result<BinaryMask> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let out = match spec.kind {
        EnhancementKind::Original => mask.clone(),
        EnhancementKind::Eroded => {
            let eroded = erode_disk(mask, relative_radius(mask, spec.erode_frac));
            if eroded.is_empty() {
                mask.clone()
            } else {
                eroded
            }
        }
        EnhancementKind::Dilated => dilate_disk(mask, relative_radius(mask, spec.dilate_frac)),
        EnhancementKind::ConvexHull => convex_hull_mask(mask, spec.hull_expand_px),
        EnhancementKind::Ellipse => ellipse_mask(mask, spec.ellipse_expand_factor),
        EnhancementKind::BboxBezier => bbox_bezier_mask(mask, spec.bezier_jitter_frac, rng),
    };
    Ok(out)
}

/// Dilation by a fixed pixel radius, as applied to evaluation masks.
pub fn dilate_px(mask: &BinaryMask, px: usize) -> BinaryMask {
    if px == 0 {
        mask.clone()
    } else {
        dilate_disk(mask, px as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_rng;

    fn spec(kind: EnhancementKind) -> EnhancementSpec {
        EnhancementSpec::new(kind, &EnhancementParams::default())
    }

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    #[test]
    fn original_is_identity() {
        let m = disk(20, 20, 9.0, 9.0, 5.0);
        assert_eq!(enhance_mask(&m, &spec(EnhancementKind::Original), &mut sample_rng(0)).unwrap(), m);
    }

    #[test]
    fn eroded_square_by_one() {
        let m = BinaryMask::from_fn(9, 9, |x, y| (2..7).contains(&x) && (2..7).contains(&y));
        // frac 0.1 of a 5 px side floors to the 1 px minimum
        let out = enhance_mask(&m, &spec(EnhancementKind::Eroded), &mut sample_rng(0)).unwrap();
        let expect = BinaryMask::from_fn(9, 9, |x, y| (3..6).contains(&x) && (3..6).contains(&y));
        assert_eq!(out, expect);
    }

    #[test]
    fn eroded_falls_back_when_annihilated() {
        let mut m = BinaryMask::empty(5, 5);
        m.set(2, 2, true);
        let out = enhance_mask(&m, &spec(EnhancementKind::Eroded), &mut sample_rng(0)).unwrap();
        assert_eq!(out, m);
    }

    fn brute_hull_contains(points: &[(i64, i64)], p: (i64, i64)) -> bool {
        // p is in the hull of a planar set iff it lies in a triangle (possibly
        // degenerate) spanned by three of the points
        let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| {
            (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
        };
        let on_segment = |a: (i64, i64), b: (i64, i64)| {
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        };
        for i in 0..points.len() {
            for j in i..points.len() {
                if on_segment(points[i], points[j]) {
                    return true;
                }
                for k in j + 1..points.len() {
                    let (a, b, c) = (points[i], points[j], points[k]);
                    let d1 = cross(a, b, p);
                    let d2 = cross(b, c, p);
                    let d3 = cross(c, a, p);
                    let neg = d1 < 0 || d2 < 0 || d3 < 0;
                    let pos = d1 > 0 || d2 > 0 || d3 > 0;
                    if !(neg && pos) && cross(a, b, c) != 0 {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn convex_hull_of_plus_matches_brute_force() {
        let masks = [
            // thin plus: hull is a diamond
            BinaryMask::from_fn(7, 7, |x, y| (1..=5).contains(&x) && (1..=5).contains(&y) && (x == 3 || y == 3)),
            // thick plus: corners notched out of a 5x5 block
            BinaryMask::from_fn(7, 7, |x, y| {
                (1..=5).contains(&x) && (1..=5).contains(&y) && !((x == 1 || x == 5) && (y == 1 || y == 5))
            }),
        ];
        for m in masks {
            let mut s = spec(EnhancementKind::ConvexHull);
            s.hull_expand_px = 0;
            let out = enhance_mask(&m, &s, &mut sample_rng(0)).unwrap();
            let pts: Vec<(i64, i64)> = m.points().map(|(x, y)| (x as i64, y as i64)).collect();
            let brute = BinaryMask::from_fn(7, 7, |x, y| brute_hull_contains(&pts, (x as i64, y as i64)));
            assert_eq!(out, brute);
            assert!(m.is_subset_of(&out));
        }
        // with the default expansion every notch is filled
        let thick = BinaryMask::from_fn(7, 7, |x, y| {
            (1..=5).contains(&x) && (1..=5).contains(&y) && !((x == 1 || x == 5) && (y == 1 || y == 5))
        });
        let out = enhance_mask(&thick, &spec(EnhancementKind::ConvexHull), &mut sample_rng(0)).unwrap();
        for (x, y) in [(1, 1), (1, 5), (5, 1), (5, 5)] {
            assert!(out.get(x, y));
        }
    }

    #[test]
    fn ellipse_of_disk_is_tight_superset() {
        let m = disk(64, 64, 31.0, 31.0, 15.0);
        let mut s = spec(EnhancementKind::Ellipse);
        s.ellipse_expand_factor = 1.0;
        let out = enhance_mask(&m, &s, &mut sample_rng(0)).unwrap();
        assert!(m.is_subset_of(&out));
        let extra = (out.area() - m.area()) as f64 / m.area() as f64;
        assert!(extra <= 0.15, "extra area {extra}");
    }

    #[test]
    fn ellipse_of_collinear_mask() {
        let m = BinaryMask::from_fn(20, 20, |x, y| y == 7 && (3..15).contains(&x));
        let out = enhance_mask(&m, &spec(EnhancementKind::Ellipse), &mut sample_rng(0)).unwrap();
        assert!(m.is_subset_of(&out));
        let mut single = BinaryMask::empty(9, 9);
        single.set(4, 4, true);
        let out = enhance_mask(&single, &spec(EnhancementKind::Ellipse), &mut sample_rng(0)).unwrap();
        assert!(out.get(4, 4));
    }

    #[test]
    fn bezier_covers_bbox() {
        let bbox = crate::model::Rect::new(10, 5, 10, 20);
        let m = BinaryMask::from_fn(40, 40, |x, y| bbox.contains(x, y) && (x + y) % 3 != 0);
        let mut s = spec(EnhancementKind::BboxBezier);
        s.bezier_jitter_frac = 0.3;
        let out = enhance_mask(&m, &s, &mut sample_rng(9)).unwrap();
        assert!(BinaryMask::from_rect(40, 40, bbox).is_subset_of(&out));
        assert!(out.area() > bbox.area());
    }

    #[test]
    fn pick_enhancement_weights() {
        let mut rng = sample_rng(4);
        let only = EnhancementParams::default().only(EnhancementKind::Dilated);
        for _ in 0..100 {
            assert_eq!(pick_enhancement(&mut rng, &only).unwrap().kind, EnhancementKind::Dilated);
        }
        let mut zero = EnhancementParams::default();
        zero.weights = [0.0; 6];
        assert!(matches!(pick_enhancement(&mut rng, &zero), Err(Error::InvalidWeights)));
        zero.weights[0] = -1.0;
        assert!(pick_enhancement(&mut rng, &zero).is_err());
    }

    #[test]
    fn uniform_pick_counts() {
        // binomial(60000, 1/6): sd = 91.3, so 500 is beyond 5 sd
        let mut rng = sample_rng(12);
        let params = EnhancementParams::default();
        let mut counts = [0usize; 6];
        for _ in 0..60_000 {
            counts[pick_enhancement(&mut rng, &params).unwrap().kind.index()] += 1;
        }
        for c in counts {
            assert!((9_500..=10_500).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("dilated".parse::<EnhancementKind>().unwrap(), EnhancementKind::Dilated);
        assert_eq!("convex-hull".parse::<EnhancementKind>().unwrap(), EnhancementKind::ConvexHull);
        assert_eq!("bbox_bezier".parse::<EnhancementKind>().unwrap(), EnhancementKind::BboxBezier);
        assert!("blob".parse::<EnhancementKind>().is_err());
    }

    #[test]
    fn empty_mask_is_error() {
        let m = BinaryMask::empty(4, 4);
        assert!(matches!(
            enhance_mask(&m, &spec(EnhancementKind::Dilated), &mut sample_rng(0)),
            Err(Error::EmptyMask)
        ));
    }
}
