//! Python bindings: config, images, masks, dataset builds, validation and
//! metrics.

#[pyo3::pymodule]
mod synremoval_py {
    use std::path::PathBuf;

    use pyo3::exceptions::{PyIOError, PyValueError};
    use pyo3::prelude::*;

    use synremoval::config::{IouMode, PipelineConfig};
    use synremoval::enhance::{enhance_mask, EnhancementKind, EnhancementSpec};
    use synremoval::model::sample_rng;
    use synremoval::pipeline::{build_dataset as build, load_corpus, validate_dataset as validate, BuildOptions};

    fn to_py(e: synremoval::Error) -> PyErr {
        if e.is_io() {
            PyIOError::new_err(e.to_string())
        } else {
            PyValueError::new_err(e.to_string())
        }
    }

    /// Pipeline configuration.
    #[pyclass(name = "Config", skip_from_py_object)]
    #[derive(Clone, Default)]
    struct Config {
        inner: PipelineConfig,
    }

    #[pymethods]
    impl Config {
        #[new]
        fn new() -> Self {
            Self::default()
        }

        #[staticmethod]
        fn from_toml(text: &str) -> PyResult<Self> {
            Ok(Self {
                inner: PipelineConfig::from_toml_str(text).map_err(to_py)?,
            })
        }

        #[staticmethod]
        fn load(path: PathBuf) -> PyResult<Self> {
            Ok(Self {
                inner: PipelineConfig::load(&path).map_err(to_py)?,
            })
        }

        fn to_toml(&self) -> String {
            self.inner.to_toml_string()
        }

        fn content_hash(&self) -> String {
            self.inner.content_hash()
        }

        #[getter]
        fn global_seed(&self) -> u64 {
            self.inner.global_seed
        }

        #[setter]
        fn set_global_seed(&mut self, seed: u64) {
            self.inner.global_seed = seed;
        }

        #[getter]
        fn iou_threshold(&self) -> f64 {
            self.inner.iou_threshold
        }

        #[setter]
        fn set_iou_threshold(&mut self, r: f64) -> PyResult<()> {
            let mut next = self.inner.clone();
            next.iou_threshold = r;
            next.validate().map_err(to_py)?;
            self.inner = next;
            Ok(())
        }

        #[getter]
        fn iou_mode(&self) -> &'static str {
            match self.inner.iou_mode {
                IouMode::Bbox => "bbox",
                IouMode::Mask => "mask",
            }
        }

        #[setter]
        fn set_iou_mode(&mut self, mode: &str) -> PyResult<()> {
            self.inner.iou_mode = match mode {
                "bbox" => IouMode::Bbox,
                "mask" => IouMode::Mask,
                other => return Err(PyValueError::new_err(format!("unknown iou mode `{other}`"))),
            };
            Ok(())
        }

        #[getter]
        fn trimap_band_px(&self) -> usize {
            self.inner.trimap_band_px
        }

        #[setter]
        fn set_trimap_band_px(&mut self, band: usize) {
            self.inner.trimap_band_px = band;
        }
    }

    /// An 8-bit image with 1 or 3 channels.
    #[pyclass(name = "Image", skip_from_py_object)]
    #[derive(Clone)]
    struct Image {
        inner: synremoval::Image,
    }

    #[pymethods]
    impl Image {
        #[new]
        fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<Self> {
            Ok(Self {
                inner: synremoval::Image::new(width, height, channels, data).map_err(to_py)?,
            })
        }

        #[staticmethod]
        fn read(path: PathBuf) -> PyResult<Self> {
            Ok(Self {
                inner: synremoval::imageio::read_png(&path).map_err(to_py)?,
            })
        }

        fn write(&self, path: PathBuf) -> PyResult<()> {
            synremoval::imageio::write_png(&path, &self.inner).map_err(to_py)
        }

        #[getter]
        fn width(&self) -> usize {
            self.inner.width()
        }

        #[getter]
        fn height(&self) -> usize {
            self.inner.height()
        }

        #[getter]
        fn channels(&self) -> usize {
            self.inner.channels()
        }

        fn data(&self) -> Vec<u8> {
            self.inner.data().to_vec()
        }
    }

    /// A binary mask.
    #[pyclass(name = "Mask", skip_from_py_object)]
    #[derive(Clone)]
    struct Mask {
        inner: synremoval::BinaryMask,
    }

    #[pymethods]
    impl Mask {
        /// Builds a mask from rows of truthy values.
        #[new]
        fn new(rows: Vec<Vec<bool>>) -> PyResult<Self> {
            let height = rows.len();
            let width = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != width) {
                return Err(PyValueError::new_err("rows differ in length"));
            }
            let bits = rows.into_iter().flatten().collect();
            Ok(Self {
                inner: synremoval::BinaryMask::new(width, height, bits).map_err(to_py)?,
            })
        }

        #[staticmethod]
        fn read(path: PathBuf) -> PyResult<Self> {
            Ok(Self {
                inner: synremoval::imageio::read_mask(&path).map_err(to_py)?,
            })
        }

        fn write(&self, path: PathBuf) -> PyResult<()> {
            synremoval::imageio::write_mask(&path, &self.inner).map_err(to_py)
        }

        #[getter]
        fn width(&self) -> usize {
            self.inner.width()
        }

        #[getter]
        fn height(&self) -> usize {
            self.inner.height()
        }

        fn area(&self) -> usize {
            self.inner.area()
        }

        fn rows(&self) -> Vec<Vec<bool>> {
            self.inner
                .bits()
                .chunks(self.inner.width().max(1))
                .map(<[bool]>::to_vec)
                .collect()
        }

        fn is_subset_of(&self, other: &Mask) -> bool {
            self.inner.is_subset_of(&other.inner)
        }

        fn dilate(&self, radius: f64) -> Self {
            Self {
                inner: synremoval::morphology::dilate_disk(&self.inner, radius),
            }
        }

        fn erode(&self, radius: f64) -> Self {
            Self {
                inner: synremoval::morphology::erode_disk(&self.inner, radius),
            }
        }

        /// Applies a deformation kind (`original`, `eroded`, `dilated`,
        /// `convex_hull`, `ellipse`, `bbox_bezier`).
        #[pyo3(signature = (kind, seed = 0, config = None))]
        fn enhance(&self, kind: &str, seed: u64, config: Option<&Config>) -> PyResult<Self> {
            let kind: EnhancementKind = kind
                .parse()
                .map_err(|_| PyValueError::new_err(format!("unknown enhancement `{kind}`")))?;
            let params = config.map_or_else(|| PipelineConfig::default().enhancement, |c| c.inner.enhancement);
            let out = enhance_mask(&self.inner, &EnhancementSpec::new(kind, &params), &mut sample_rng(seed))
                .map_err(to_py)?;
            Ok(Self { inner: out })
        }
    }

    #[pyfunction]
    #[pyo3(signature = (a, b, mask = None))]
    fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> PyResult<f64> {
        let v = synremoval::metrics::psnr(&a.inner, &b.inner, mask.map(|m| &m.inner)).map_err(to_py)?;
        Ok(v.value())
    }

    #[pyfunction]
    #[pyo3(signature = (a, b, mask = None))]
    fn ssim(a: &Image, b: &Image, mask: Option<&Mask>) -> PyResult<f64> {
        synremoval::metrics::ssim(&a.inner, &b.inner, mask.map(|m| &m.inner)).map_err(to_py)
    }

    /// Scores a results directory against ground truths; returns the report
    /// as JSON lines or CSV.
    #[pyfunction]
    #[pyo3(signature = (results, gts, masks = None, format = "jsonl"))]
    fn evaluate_directory(results: PathBuf, gts: PathBuf, masks: Option<PathBuf>, format: &str) -> PyResult<String> {
        let report = synremoval::metrics::evaluate_directory(&results, &gts, masks.as_deref()).map_err(to_py)?;
        match format {
            "jsonl" => Ok(report.to_jsonl()),
            "csv" => Ok(report.to_csv()),
            other => Err(PyValueError::new_err(format!("unknown format `{other}`"))),
        }
    }

    /// Writes the synthetic corpus; returns the (instances, backgrounds)
    /// annotation paths.
    #[pyfunction]
    #[pyo3(signature = (dir, seed = 0))]
    fn write_toy_corpus(dir: PathBuf, seed: u64) -> PyResult<(PathBuf, PathBuf)> {
        let spec = synremoval::toy::ToyCorpusSpec {
            seed,
            ..Default::default()
        };
        let paths = synremoval::toy::write_toy_corpus(&dir, &spec).map_err(to_py)?;
        Ok((paths.instances, paths.backgrounds))
    }

    /// Builds a dataset and returns `(emitted, skipped)`. A `dilate_px`
    /// value builds the evaluation split instead of the training split.
    #[pyfunction]
    #[pyo3(signature = (instances, backgrounds, out, count, config = None, workers = 0, dilate_px = None))]
    #[allow(clippy::too_many_arguments)]
    fn build_dataset(
        py: Python<'_>,
        instances: PathBuf,
        backgrounds: PathBuf,
        out: PathBuf,
        count: u64,
        config: Option<&Config>,
        workers: usize,
        dilate_px: Option<usize>,
    ) -> PyResult<(u64, usize)> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        let opts = match dilate_px {
            Some(px) => BuildOptions::val(count, workers, px),
            None => BuildOptions::train(count, workers),
        };
        let manifest = py
            .detach(|| {
                let corpus = load_corpus(&cfg, &instances, &backgrounds)?;
                build(&cfg, &corpus, &out, opts)
            })
            .map_err(to_py)?;
        Ok((manifest.header.emitted, manifest.header.skipped.len()))
    }

    /// Re-checks a built dataset; returns `(all_passed, failing_samples)`.
    #[pyfunction]
    fn validate_dataset(py: Python<'_>, manifest: PathBuf) -> PyResult<(bool, Vec<u64>)> {
        let report = py.detach(|| validate(&manifest)).map_err(to_py)?;
        Ok((report.all_passed(), report.failing_samples()))
    }
}
