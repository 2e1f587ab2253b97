//! Trimap construction, distance-ramp alpha, blending and triplet assembly.

use rand::Rng;

use crate::config::PipelineConfig;
use crate::enhance::{enhance_mask, pick_enhancement, EnhancementSpec};
use crate::error::{Error, Result};
use crate::model::{
    round_to_u8, AlphaMap, BackgroundRecord, BinaryMask, Image, Rect, Trimap, TrimapLabel, Triplet, TripletMeta,
};
use crate::morphology::{dilate_disk, erode_disk, window_field};
use crate::placement::{Placement, ResizedInstance};

/// Foreground is the mask eroded by a disk of radius `band`, Background the
/// complement of the mask dilated by the same disk, Unknown the rest.
pub fn make_trimap(mask: &BinaryMask, band: usize) -> Trimap {
    let (w, h) = mask.dims();
    let (fg, grown) = if band == 0 {
        (mask.clone(), mask.clone())
    } else {
        (erode_disk(mask, band as f64), dilate_disk(mask, band as f64))
    };
    let labels = fg
        .bits()
        .iter()
        .zip(grown.bits())
        .map(|(&f, &g)| match (f, g) {
            (true, _) => TrimapLabel::Foreground,
            (false, true) => TrimapLabel::Unknown,
            (false, false) => TrimapLabel::Background,
        })
        .collect();
    Trimap::new(w, h, labels).expect("labels match mask dimensions")
}

/// Alpha is 1 on Foreground, 0 on Background and `d_b / (d_b + d_f)` on
/// Unknown, where `d_f` and `d_b` are Euclidean distances to the nearest
/// Foreground and Background pixel.
pub fn solve_alpha(trimap: &Trimap) -> AlphaMap {
    let (w, h) = (trimap.width(), trimap.height());
    let mut alpha: Vec<f64> = trimap
        .labels()
        .iter()
        .map(|&l| if l == TrimapLabel::Foreground { 1.0 } else { 0.0 })
        .collect();
    let fg = trimap.mask_of(TrimapLabel::Foreground);
    let bg = trimap.mask_of(TrimapLabel::Background);
    let unknown = trimap.mask_of(TrimapLabel::Unknown);
    let Some(unknown_box) = unknown.bbox() else {
        return AlphaMap::new(w, h, alpha).expect("values in [0, 1]");
    };
    if fg.is_empty() {
        return AlphaMap::new(w, h, alpha).expect("values in [0, 1]");
    }
    // Everything outside the non-Background box is Background, so any
    // Background pixel beyond it can be clamped one pixel past the box to a
    // closer Background pixel. The window is therefore exact for both fields.
    let core = fg.bbox().expect("non-empty").union(&unknown_box);
    let window = core.expand_within(1, w, h);
    let to_fg = window_field(&fg, window);
    let to_bg = window_field(&bg, window);
    for y in unknown_box.y..unknown_box.bottom() {
        for x in unknown_box.x..unknown_box.right() {
            if trimap.get(x, y) != TrimapLabel::Unknown {
                continue;
            }
            let (lx, ly) = (x - window.x, y - window.y);
            let df = to_fg.distance(lx, ly);
            let db = to_bg.distance(lx, ly);
            alpha[y * w + x] = if db.is_infinite() {
                1.0
            } else {
                (db / (db + df)).clamp(0.0, 1.0)
            };
        }
    }
    AlphaMap::new(w, h, alpha).expect("values in [0, 1]")
}

/// An instance crop positioned in a background frame.
#[derive(Debug, Clone)]
pub struct PlacedInstance {
    pub image: Image,
    pub mask: BinaryMask,
    /// Top-left corner of the crop in the background frame.
    pub origin: (usize, usize),
}

impl PlacedInstance {
    pub fn bbox(&self) -> Rect {
        Rect::new(self.origin.0, self.origin.1, self.mask.width(), self.mask.height())
    }

    /// The instance mask in a `width x height` frame.
    pub fn frame_mask(&self, width: usize, height: usize) -> BinaryMask {
        self.mask.place(width, height, self.origin.0, self.origin.1)
    }
}

/// Offsets searched for a nearby mask pixel before falling back to a
/// distance field.
const NEAR_SEARCH_RADIUS: isize = 8;

/// Offsets within `radius`, ordered by distance, then row, then column.
fn nearby_offsets(radius: isize) -> Vec<(isize, isize)> {
    let mut offsets: Vec<(isize, isize)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx * dx + dy * dy <= radius * radius)
        .collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    offsets
}

/// Composites `placed` over `bg` as `alpha * instance + (1 - alpha) * bg`.
///
/// Pixels with zero alpha are copied from `bg` unchanged. Where alpha is
/// positive outside the instance mask, the instance layer takes the color
/// of the nearest mask pixel.
pub fn blend(bg: &Image, placed: &PlacedInstance, alpha: &AlphaMap) -> Result<Image> {
    let (w, h) = bg.dims();
    let c = bg.channels();
    if (alpha.width(), alpha.height()) != (w, h) {
        return Err(Error::FrameMismatch(format!(
            "alpha {}x{} vs background {w}x{h}",
            alpha.width(),
            alpha.height()
        )));
    }
    if placed.image.channels() != c {
        return Err(Error::FrameMismatch(format!(
            "instance has {} channels, background {c}",
            placed.image.channels()
        )));
    }
    if placed.image.dims() != placed.mask.dims() {
        return Err(Error::FrameMismatch("instance image and mask differ in size".into()));
    }
    let inst_box = placed.bbox();
    if inst_box.right() > w || inst_box.bottom() > h {
        return Err(Error::FrameMismatch(format!("instance {inst_box:?} outside {w}x{h}")));
    }
    let frame_mask = placed.frame_mask(w, h);
    let mut support: Option<Rect> = None;
    for (i, &a) in alpha.values().iter().enumerate() {
        if a > 0.0 {
            let px = Rect::new(i % w, i / w, 1, 1);
            support = Some(support.map_or(px, |s| s.union(&px)));
        }
    }
    let mut out = bg.clone();
    let Some(support) = support else {
        return Ok(out);
    };
    if frame_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let offsets = nearby_offsets(NEAR_SEARCH_RADIUS);
    let window = support.union(&inst_box);
    let mut far_field = None;
    for y in support.y..support.bottom() {
        for x in support.x..support.right() {
            let a = alpha.get(x, y);
            if a <= 0.0 {
                continue;
            }
            let near = |&(dx, dy): &(isize, isize)| {
                let (nx, ny) = (x.checked_add_signed(dx)?, y.checked_add_signed(dy)?);
                (nx < w && ny < h && frame_mask.get(nx, ny)).then_some((nx, ny))
            };
            let (sx, sy) = match offsets.iter().find_map(near) {
                Some(p) => p,
                None => {
                    let field = far_field.get_or_insert_with(|| window_field(&frame_mask, window));
                    let (nx, ny) = field
                        .nearest(x - window.x, y - window.y)
                        .expect("mask is non-empty");
                    (nx + window.x, ny + window.y)
                }
            };
            let fg = placed.image.pixel(sx - placed.origin.0, sy - placed.origin.1);
            let px = out.pixel_mut(x, y);
            for ch in 0..c {
                let v = a * fg[ch] as f64 + (1.0 - a) * px[ch] as f64;
                px[ch] = round_to_u8(v);
            }
        }
    }
    Ok(out)
}

/// Places `instance` at `placement` over `bg`, blends it, draws and applies
/// a mask deformation, and records everything needed to reproduce it.
///
/// With `enhancement` set, that deformation is used instead of a draw.
#[allow(clippy::too_many_arguments)]
pub fn build_triplet<R: Rng + ?Sized>(
    bg: &BackgroundRecord,
    instance_id: &str,
    class_label: &str,
    instance: &ResizedInstance,
    placement: &Placement,
    cfg: &PipelineConfig,
    enhancement: Option<EnhancementSpec>,
    seed: u64,
    rng: &mut R,
) -> Result<Triplet> {
    let (w, h) = bg.image.dims();
    let pbox = placement.paste_box();
    if !placement.within_margins(w, h) || (pbox.width, pbox.height) != instance.mask.dims() {
        return Err(Error::FrameMismatch(format!(
            "placement {pbox:?} does not fit {w}x{h} or the instance crop"
        )));
    }
    let placed = PlacedInstance {
        image: instance.image.to_channels(bg.image.channels())?,
        mask: instance.mask.clone(),
        origin: (pbox.x, pbox.y),
    };
    let mask = placed.frame_mask(w, h);
    let trimap = make_trimap(&mask, cfg.trimap_band_px);
    let alpha = solve_alpha(&trimap);
    let input = blend(&bg.image, &placed, &alpha)?;
    let spec = match enhancement {
        Some(spec) => spec,
        None => pick_enhancement(rng, &cfg.enhancement)?,
    };
    let enhanced_mask = enhance_mask(&mask, &spec, rng)?;
    Ok(Triplet {
        input,
        mask,
        enhanced_mask,
        ground_truth: bg.image.clone(),
        meta: TripletMeta {
            instance_id: instance_id.to_string(),
            background_id: bg.id.clone(),
            class_label: class_label.to_string(),
            scale: placement.scale,
            resize_factor: placement.factor,
            center: placement.center,
            paste_box: pbox,
            enhancement: spec,
            seed,
        },
    })
}
