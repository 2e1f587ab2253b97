//! End-to-end builds on the toy corpus.

use std::path::{Path, PathBuf};

use synremoval::config::PipelineConfig;
use synremoval::enhance::EnhancementKind;
use synremoval::imageio::{read_mask, read_png, write_png};
use synremoval::pipeline::{
    build_dataset, build_val_split, load_corpus, validate_dataset, BuildManifest, BuildOptions, Check,
    PreparedCorpus, MANIFEST_FILE,
};
use synremoval::toy::{write_toy_corpus, ToyCorpusPaths, ToyCorpusSpec};
use synremoval::Error;

fn toy(dir: &Path) -> ToyCorpusPaths {
    write_toy_corpus(dir, &ToyCorpusSpec::default()).unwrap()
}

fn corpus(cfg: &PipelineConfig, paths: &ToyCorpusPaths) -> PreparedCorpus {
    load_corpus(cfg, &paths.instances, &paths.backgrounds).unwrap()
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn toy_corpus_passes_filters() {
    let dir = tempfile::tempdir().unwrap();
    let paths = toy(dir.path());
    let cfg = PipelineConfig::default();
    let c = corpus(&cfg, &paths);
    assert_eq!(c.backgrounds.len(), 20);
    assert_eq!(c.instances.len(), 10);
    assert_eq!(c.report.instances_total, 15);
}

#[test]
fn build_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let paths = toy(&dir.path().join("corpus"));
    let cfg = PipelineConfig { global_seed: 7, ..PipelineConfig::default() };
    let c = corpus(&cfg, &paths);
    let start = std::time::Instant::now();
    let a = build_dataset(&cfg, &c, &dir.path().join("a"), BuildOptions::train(40, 1)).unwrap();
    eprintln!("40 samples on 1 worker: {:?}", start.elapsed());
    let b = build_dataset(&cfg, &c, &dir.path().join("b"), BuildOptions::train(40, 4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 40);
    assert_eq!(tree_bytes(&dir.path().join("a")), tree_bytes(&dir.path().join("b")));

    let report = validate_dataset(&dir.path().join("a").join(MANIFEST_FILE)).unwrap();
    assert!(report.all_passed(), "{report:#?}");
    assert_eq!(report.samples, 40);
}

#[test]
fn empty_build_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let paths = toy(&dir.path().join("corpus"));
    let cfg = PipelineConfig::default();
    let m = build_dataset(&cfg, &corpus(&cfg, &paths), &dir.path().join("out"), BuildOptions::train(0, 1)).unwrap();
    assert!(m.records.is_empty());
    let text = std::fs::read_to_string(dir.path().join("out").join(MANIFEST_FILE)).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn val_split_dilation() {
    let dir = tempfile::tempdir().unwrap();
    let paths = toy(&dir.path().join("corpus"));
    let cfg = PipelineConfig::default();
    let c = corpus(&cfg, &paths);
    let out0 = dir.path().join("v0");
    let m = build_val_split(&cfg, &c, &out0, 6, 2, 0).unwrap();
    for r in &m.records {
        assert_eq!(r.enhancement.kind, EnhancementKind::Original);
        assert_eq!(read_mask(&out0.join(&r.files.mask)).unwrap(), read_mask(&out0.join(&r.files.enhanced_mask)).unwrap());
    }
    let out3 = dir.path().join("v3");
    let m = build_val_split(&cfg, &c, &out3, 6, 2, 3).unwrap();
    for r in &m.records {
        let mask = read_mask(&out3.join(&r.files.mask)).unwrap();
        let enhanced = read_mask(&out3.join(&r.files.enhanced_mask)).unwrap();
        assert!(mask.is_subset_of(&enhanced) && enhanced.area() > mask.area());
    }
    assert!(validate_dataset(&out3.join(MANIFEST_FILE)).unwrap().all_passed());
}

#[test]
fn planted_faults_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let paths = toy(&dir.path().join("corpus"));
    let cfg = PipelineConfig::default();
    let out = dir.path().join("out");
    let m = build_dataset(&cfg, &corpus(&cfg, &paths), &out, BuildOptions::train(5, 1)).unwrap();

    // a pixel far outside the band of sample 2
    let target = &m.records[2];
    let input_path = out.join(&target.files.input);
    let mut input = read_png(&input_path).unwrap();
    let (x, y) = if target.paste_box.x > 20 { (2, 2) } else { (input.width() - 3, input.height() - 3) };
    let gt = read_png(&out.join(&target.files.ground_truth)).unwrap();
    let flipped: Vec<u8> = gt.pixel(x, y).iter().map(|v| v ^ 0x40).collect();
    let data: Vec<u8> = {
        let mut d = input.clone().into_data();
        let i = (y * input.width() + x) * 3;
        d[i..i + 3].copy_from_slice(&flipped);
        d
    };
    input = synremoval::Image::new(input.width(), input.height(), 3, data).unwrap();
    write_png(&input_path, &input).unwrap();
    let report = validate_dataset(&out.join(MANIFEST_FILE)).unwrap();
    assert!(!report.all_passed());
    assert_eq!(report.checks[&Check::Support].failing_samples, vec![target.sample_index]);
    assert_eq!(report.failing_samples(), vec![target.sample_index]);

    // move the center of sample 0 so the paste box leaves the frame margins
    let mut manifest = BuildManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    manifest.records[0].center = (0, 0);
    manifest.write_atomic(&out).unwrap();
    let report = validate_dataset(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(report.checks[&Check::Margins].failing_samples, vec![manifest.records[0].sample_index]);
}

#[test]
fn zero_threshold_exhausts_occupied_backgrounds() {
    let dir = tempfile::tempdir().unwrap();
    let paths = toy(&dir.path().join("corpus"));
    // keep only backgrounds that already hold an object
    let text = std::fs::read_to_string(&paths.backgrounds).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let occupied: Vec<String> = doc["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["image_id"].as_str().unwrap().to_string())
        .collect();
    doc["images"].as_array_mut().unwrap().retain(|i| occupied.contains(&i["id"].as_str().unwrap().to_string()));
    std::fs::write(&paths.backgrounds, doc.to_string()).unwrap();

    let cfg = PipelineConfig { iou_threshold: 0.0, retry_limit: 2, ..PipelineConfig::default() };
    let err = build_dataset(&cfg, &corpus(&cfg, &paths), &dir.path().join("out"), BuildOptions::train(3, 1)).unwrap_err();
    assert!(matches!(err, Error::ExhaustedCorpus(_)), "{err}");
    assert!(!dir.path().join("out").join(MANIFEST_FILE).exists());
}
