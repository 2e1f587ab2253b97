//! A small synthetic corpus for tests, demos and benchmarks.
//!
//! Backgrounds are textured 512x512 images, each holding up to three
//! annotated blobs. Instances are 256x256 images with one polygon object
//! each, scored so that most pass the default filters.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::fill_polygon;
use crate::imageio::write_png;
use crate::model::{derive_sample_seed, round_to_u8, sample_rng, Image, SampleRng};

const CLASSES: [&str; 3] = ["ball", "cup", "leaf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyCorpusSpec {
    pub backgrounds: usize,
    pub instances: usize,
    pub background_size: usize,
    pub instance_size: usize,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            backgrounds: 20,
            instances: 15,
            background_size: 512,
            instance_size: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyCorpusPaths {
    pub instances: PathBuf,
    pub backgrounds: PathBuf,
}

fn texture(w: usize, h: usize, rng: &mut SampleRng) -> Image {
    let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
    let (fx, fy) = (rng.random_range(0.01..0.05), rng.random_range(0.01..0.05));
    let salt = rng.random::<u64>();
    Image::from_fn(w, h, 3, |x, y, c| {
        let wave = 40.0 * ((x as f64 * fx + c as f64).sin() * (y as f64 * fy).cos());
        let noise = (derive_sample_seed(salt, (y * w + x) as u64 * 3 + c as u64) >> 60) as f64 - 8.0;
        round_to_u8(base[c] + wave + noise)
    })
    .expect("positive dims")
}

/// Star-ish polygon around `center` with radii drawn in `[r_min, r_max]`.
fn blob(center: (f64, f64), r_min: f64, r_max: f64, limit: (f64, f64), rng: &mut SampleRng) -> Vec<[f64; 2]> {
    let n = rng.random_range(6..14);
    let phase = rng.random_range(0.0..TAU);
    (0..n)
        .map(|i| {
            let t = phase + TAU * i as f64 / n as f64;
            let r = rng.random_range(r_min..=r_max);
            [
                (center.0 + r * t.cos()).clamp(0.0, limit.0).round(),
                (center.1 + r * t.sin()).clamp(0.0, limit.1).round(),
            ]
        })
        .collect()
}

fn paint(image: &mut Image, polygon: &[[f64; 2]], rng: &mut SampleRng) {
    let (w, h) = image.dims();
    let pts: Vec<(f64, f64)> = polygon.iter().map(|p| (p[0], p[1])).collect();
    let mask = fill_polygon(&pts, w, h);
    let color: [u8; 3] = [rng.random(), rng.random(), rng.random()];
    for (x, y) in mask.points() {
        let px = image.pixel_mut(x, y);
        for c in 0..3 {
            px[c] = color[c].saturating_add(((x + 2 * y) % 24) as u8);
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    crate::imageio::write_bytes(path, text.as_bytes())
}

/// Writes `backgrounds.json`, `instances.json` and their images under `dir`.
pub fn write_toy_corpus(dir: &Path, spec: &ToyCorpusSpec) -> Result<ToyCorpusPaths> {
    if spec.backgrounds == 0 || spec.instances == 0 || spec.instance_size < 16 {
        return Err(Error::InvalidConfig("toy corpus needs backgrounds, instances and size >= 16".into()));
    }
    let mut rng = sample_rng(derive_sample_seed(spec.seed, u64::MAX));

    let s = spec.background_size;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for b in 0..spec.backgrounds {
        let mut image = texture(s, s, &mut rng);
        let id = format!("bg{b:03}");
        let file = format!("backgrounds/{id}.png");
        for _ in 0..rng.random_range(0..=3) {
            let c = (rng.random_range(0.15..0.85) * s as f64, rng.random_range(0.15..0.85) * s as f64);
            let r = rng.random_range(0.04..0.12) * s as f64;
            let poly = blob(c, 0.6 * r, r, (s as f64, s as f64), &mut rng);
            paint(&mut image, &poly, &mut rng);
            annotations.push(json!({
                "image_id": id,
                "class": CLASSES[rng.random_range(0..CLASSES.len())],
                "region": {"polygon": poly},
            }));
        }
        write_png(&dir.join(&file), &image)?;
        images.push(json!({"id": id, "file": file, "width": s, "height": s}));
    }
    let backgrounds = dir.join("backgrounds.json");
    write_json(&backgrounds, &json!({"images": images, "annotations": annotations}))?;

    let s = spec.instance_size;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for i in 0..spec.instances {
        let mut image = texture(s, s, &mut rng);
        let id = format!("src{i:03}");
        let file = format!("instances/{id}.png");
        let class = CLASSES[i % CLASSES.len()];
        // every fifth instance is tiny (filtered by area), every seventh
        // scores low (filtered by score)
        let r = if i % 5 == 4 {
            0.06 * s as f64
        } else {
            rng.random_range(0.2..0.32) * s as f64
        };
        let score = if i % 7 == 6 { 0.05 } else { rng.random_range(0.22..0.4) };
        let c = (s as f64 / 2.0, s as f64 / 2.0);
        let poly = blob(c, 0.7 * r, r, (s as f64, s as f64), &mut rng);
        paint(&mut image, &poly, &mut rng);
        annotations.push(json!({
            "image_id": id,
            "class": class,
            "score": score,
            "region": {"polygon": poly},
        }));
        write_png(&dir.join(&file), &image)?;
        images.push(json!({"id": id, "file": file, "width": s, "height": s}));
    }
    let instances = dir.join("instances.json");
    write_json(&instances, &json!({"images": images, "annotations": annotations}))?;
    Ok(ToyCorpusPaths { instances, backgrounds })
}
