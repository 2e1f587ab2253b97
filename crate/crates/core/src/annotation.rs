//! Instance-segmentation annotation files.
//!
//! The file is JSON with two arrays:
//!
//! ```json
//! {
//!   "images": [{"id": "img0", "file": "images/img0.png", "width": 64, "height": 48}],
//!   "annotations": [
//!     {"image_id": "img0", "class": "cup", "score": 0.27,
//!      "region": {"polygon": [[4, 4], [20, 4], [20, 30], [4, 30]]}},
//!     {"image_id": "img0", "class": "cup",
//!      "region": {"rle": {"counts": [10, 5, 3057], "order": "row-major"}}}
//!   ]
//! }
//! ```
//!
//! Ids may be strings or integers. Image paths are relative to the
//! annotation file. Polygons are in corner coordinates and filled even-odd
//! at pixel centers. Run lengths alternate unset/set starting with unset
//! pixels and must sum to `width * height`; `order` is `row-major`
//! (default) or `column-major`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::fill_polygon;
use crate::model::{BinaryMask, Image, InstanceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RleOrder {
    #[default]
    RowMajor,
    ColumnMajor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rle {
    pub counts: Vec<u64>,
    #[serde(default)]
    pub order: RleOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionEncoding {
    Polygon(Vec<[f64; 2]>),
    Rle(Rle),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageEntry {
    pub id: String,
    pub file: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotation {
    pub image_id: String,
    pub class_label: String,
    pub region: RegionEncoding,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedAnnotation {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationSet {
    /// Directory the image paths are relative to.
    pub root: PathBuf,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<Annotation>,
    pub dropped: Vec<DroppedAnnotation>,
}

impl AnnotationSet {
    pub fn image(&self, id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn image_path(&self, entry: &ImageEntry) -> PathBuf {
        self.root.join(&entry.file)
    }

    pub fn annotations_for<'a>(&'a self, image_id: &'a str) -> impl Iterator<Item = &'a Annotation> + 'a {
        self.annotations.iter().filter(move |a| a.image_id == image_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeWarning {
    /// Fewer than three vertices; the mask is empty.
    DegeneratePolygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMask {
    pub mask: BinaryMask,
    pub warning: Option<DecodeWarning>,
}

pub fn decode_mask(region: &RegionEncoding, width: usize, height: usize) -> Result<DecodedMask> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidMask(format!("cannot decode into {width}x{height}")));
    }
    match region {
        RegionEncoding::Polygon(vertices) => {
            if vertices.len() < 3 {
                log::warn!("degenerate polygon with {} vertices", vertices.len());
                return Ok(DecodedMask {
                    mask: BinaryMask::empty(width, height),
                    warning: Some(DecodeWarning::DegeneratePolygon),
                });
            }
            let pts: Vec<(f64, f64)> = vertices.iter().map(|v| (v[0], v[1])).collect();
            Ok(DecodedMask {
                mask: fill_polygon(&pts, width, height),
                warning: None,
            })
        }
        RegionEncoding::Rle(rle) => decode_rle(rle, width, height).map(|mask| DecodedMask {
            mask,
            warning: None,
        }),
    }
}

fn decode_rle(rle: &Rle, width: usize, height: usize) -> Result<BinaryMask> {
    let expected = (width * height) as u64;
    let total = rle.counts.iter().try_fold(0u64, |acc, &c| acc.checked_add(c));
    match total {
        Some(t) if t == expected => {}
        got => {
            return Err(Error::LengthMismatch {
                got: got.unwrap_or(u64::MAX),
                expected,
            })
        }
    }
    let mut bits = vec![false; width * height];
    let mut pos = 0usize;
    for (run, &count) in rle.counts.iter().enumerate() {
        let count = count as usize;
        if run % 2 == 1 {
            for linear in pos..pos + count {
                let index = match rle.order {
                    RleOrder::RowMajor => linear,
                    RleOrder::ColumnMajor => (linear % height) * width + linear / height,
                };
                bits[index] = true;
            }
        }
        pos += count;
    }
    BinaryMask::new(width, height, bits)
}

pub fn encode_rle(mask: &BinaryMask, order: RleOrder) -> Rle {
    let (w, h) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for linear in 0..w * h {
        let bit = match order {
            RleOrder::RowMajor => mask.bits()[linear],
            RleOrder::ColumnMajor => mask.get(linear / h, linear % h),
        };
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    Rle { counts, order }
}

fn id_string(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_image(value: &Value) -> std::result::Result<ImageEntry, String> {
    let id = value.get("id").and_then(id_string).ok_or("missing image id")?;
    let file = value
        .get("file")
        .and_then(Value::as_str)
        .ok_or("missing image file")?;
    let dim = |key: &str| {
        value
            .get(key)
            .and_then(Value::as_u64)
            .filter(|&v| v > 0)
            .map(|v| v as usize)
            .ok_or(format!("image {id}: missing or zero {key}"))
    };
    Ok(ImageEntry {
        width: dim("width")?,
        height: dim("height")?,
        id,
        file: PathBuf::from(file),
    })
}

fn parse_annotation(value: &Value, images: &[ImageEntry]) -> std::result::Result<Annotation, String> {
    let image_id = value
        .get("image_id")
        .and_then(id_string)
        .ok_or("missing image_id")?;
    let image = images
        .iter()
        .find(|i| i.id == image_id)
        .ok_or(format!("unknown image id {image_id}"))?;
    let class_label = value
        .get("class")
        .and_then(Value::as_str)
        .ok_or("missing class")?
        .to_string();
    let region: RegionEncoding = serde_json::from_value(
        value.get("region").cloned().ok_or("missing region")?,
    )
    .map_err(|e| format!("bad region: {e}"))?;
    let score = match value.get("score") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or("score is not a number")?),
    };
    match &region {
        RegionEncoding::Polygon(vertices) => {
            if vertices.len() < 3 {
                return Err("degenerate polygon".into());
            }
            let (w, h) = (image.width as f64, image.height as f64);
            if let Some(v) = vertices
                .iter()
                .find(|v| !(0.0..=w).contains(&v[0]) || !(0.0..=h).contains(&v[1]))
            {
                return Err(format!("vertex {v:?} outside {w}x{h}"));
            }
        }
        RegionEncoding::Rle(rle) => {
            let sum: u64 = rle.counts.iter().sum();
            if sum != (image.width * image.height) as u64 {
                return Err(format!(
                    "run lengths sum to {sum}, expected {}",
                    image.width * image.height
                ));
            }
        }
    }
    Ok(Annotation {
        image_id,
        class_label,
        region,
        score,
    })
}

/// Parses and validates an annotation file. Annotations that reference
/// unknown images or carry malformed regions are dropped and recorded.
pub fn parse_annotations(text: &str, path: &Path) -> Result<AnnotationSet> {
    let schema = |message: String| Error::SchemaViolation {
        path: path.to_path_buf(),
        message,
    };
    let doc: Value = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let images_json = doc
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("top level must have an \"images\" array".into()))?;
    let annotations_json = doc
        .get("annotations")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("top level must have an \"annotations\" array".into()))?;

    let mut images = Vec::with_capacity(images_json.len());
    for value in images_json {
        let entry = parse_image(value).map_err(schema)?;
        if images.iter().any(|i: &ImageEntry| i.id == entry.id) {
            return Err(schema(format!("duplicate image id {}", entry.id)));
        }
        images.push(entry);
    }

    let mut annotations = Vec::new();
    let mut dropped = Vec::new();
    for (index, value) in annotations_json.iter().enumerate() {
        match parse_annotation(value, &images) {
            Ok(a) => annotations.push(a),
            Err(reason) => {
                log::warn!("{}: dropping annotation {index}: {reason}", path.display());
                dropped.push(DroppedAnnotation { index, reason });
            }
        }
    }
    Ok(AnnotationSet {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        images,
        annotations,
        dropped,
    })
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations(&text, path)
}

/// Cuts the tight bounding box of `mask` out of `source`.
pub fn crop_instance(
    id: impl Into<String>,
    source: &Image,
    mask: &BinaryMask,
    class_label: impl Into<String>,
    score: Option<f64>,
) -> Result<InstanceRecord> {
    if mask.dims() != source.dims() {
        return Err(Error::DimMismatch(format!(
            "mask {:?} vs image {:?}",
            mask.dims(),
            source.dims()
        )));
    }
    let bbox = mask.bbox().ok_or(Error::EmptyMask)?;
    let crop_mask = mask.crop(bbox)?;
    let area_ratio = crop_mask.area() as f64 / (source.width() * source.height()) as f64;
    Ok(InstanceRecord {
        id: id.into(),
        class_label: class_label.into(),
        image: source.crop(bbox)?,
        mask: crop_mask,
        area_ratio,
        score: score.unwrap_or(f64::NAN),
    })
}
