//! Python module `chroma`: training, colorization, evaluation and gradient
//! checking on top of `chroma_core`.

use std::path::PathBuf;

use chroma_core::autodiff::gradcheck::DEFAULT_TOLERANCE;
use chroma_core::colorspace::{self, RgbImage};
use chroma_core::dataset::{self, Corpus};
use chroma_core::inference::{self, Colorizer as _, GanColorizer};
use chroma_core::training::{self, Checkpoint, NetworkGradCheck, TrainConfig};
use chroma_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Shape { .. } | Error::Rank { .. } | Error::Precondition { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn config_from(settings: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            cfg.set(&key, &value).map_err(to_py)?;
        }
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// `(L, a, b)` of an sRGB triple in `[0, 1]`.
#[pyfunction]
fn srgb_to_lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let [l, a, b] = colorspace::srgb_to_lab([r, g, b]);
    (l, a, b)
}

/// sRGB triple of a LAB color, clamped to `[0, 1]`.
#[pyfunction]
fn lab_to_srgb(l: f64, a: f64, b: f64) -> (f64, f64, f64) {
    let [r, g, b] = colorspace::lab_to_srgb([l, a, b]);
    (r, g, b)
}

/// Crops/resizes every image under `input` into `out`; returns `(written, failed)`.
#[pyfunction]
#[pyo3(signature = (input, out, size=dataset::DEFAULT_TARGET_SIZE, manifest=None))]
fn prepare(py: Python<'_>, input: PathBuf, out: PathBuf, size: usize, manifest: Option<String>) -> PyResult<(usize, usize)> {
    py.detach(|| {
        let crops = manifest.map(|m| dataset::parse_crop_manifest(&m)).transpose()?;
        let scan = dataset::scan(&input, crops.as_ref())?;
        let m = scan.manifest.with_target_size(size)?;
        let report = dataset::prepare(&m, &m.entries, &out)?;
        Ok((report.processed(), report.failed.len()))
    })
    .map_err(to_py)
}

/// Maximum relative error of the finite-difference check on tiny networks.
#[pyfunction]
#[pyo3(signature = (size=16, width=4, seed=0, coords=200))]
fn gradcheck(py: Python<'_>, size: usize, width: usize, seed: u64, coords: usize) -> PyResult<f64> {
    let check = NetworkGradCheck {
        image_size: size,
        base_width: width,
        seed,
        coords,
        ..NetworkGradCheck::default()
    };
    let report = py.detach(|| check.run()).map_err(to_py)?;
    Ok(report.max_rel_err)
}

#[pyfunction]
fn gradcheck_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

/// Both channel GANs and their optimizer state.
#[pyclass(module = "chroma")]
struct Trainer {
    inner: training::Trainer,
}

#[pymethods]
impl Trainer {
    /// `settings` uses config-file keys, e.g. `{"lr": 0.01, "size": 32}`.
    #[new]
    #[pyo3(signature = (settings=None))]
    fn new(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = config_from(settings)?;
        Ok(Self {
            inner: training::Trainer::new(cfg).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn resume(path: PathBuf) -> PyResult<Self> {
        let inner = Checkpoint::load(&path).and_then(|c| c.into_trainer()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn epoch(&self) -> u64 {
        self.inner.epoch
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.config.image_size
    }

    /// One epoch over `data_dir`; returns `(step, channel, d_loss, g_loss)` rows.
    fn train_epoch(&mut self, py: Python<'_>, data_dir: PathBuf) -> PyResult<Vec<(u64, String, f32, f32)>> {
        let inner = &mut self.inner;
        py.detach(|| {
            let corpus = Corpus::load(&data_dir, inner.config.image_size)?;
            let mut rows = Vec::new();
            inner.train_epoch(&corpus.pairs(), |r| {
                rows.push((r.step, r.channel.to_string(), r.d_loss, r.g_loss));
            })?;
            Ok(rows)
        })
        .map_err(to_py)
    }

    /// Trains to the configured epoch count, writing checkpoints and metrics.
    fn fit(&mut self, py: Python<'_>, data_dir: PathBuf, out_dir: PathBuf) -> PyResult<()> {
        let inner = &mut self.inner;
        py.detach(|| {
            let corpus = Corpus::load(&data_dir, inner.config.image_size)?;
            inner.fit(&corpus, &out_dir)
        })
        .map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_trainer(&self.inner).save(&path).map_err(to_py)
    }
}

/// The trained generators of a checkpoint.
#[pyclass(module = "chroma")]
struct Colorizer {
    inner: GanColorizer,
}

#[pymethods]
impl Colorizer {
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: GanColorizer::load(&checkpoint, None).map_err(to_py)?,
        })
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.image_size()
    }

    /// Colorizes interleaved RGB floats in `[0, 1]`; returns `size*size*3` floats.
    #[pyo3(signature = (width, height, pixels, z_seed=inference::DEFAULT_Z_SEED))]
    fn colorize_pixels(&self, width: usize, height: usize, pixels: Vec<f32>, z_seed: u64) -> PyResult<Vec<f32>> {
        let img = RgbImage::new(width, height, pixels).map_err(to_py)?;
        let res = inference::colorize(&self.inner, &img, z_seed, None).map_err(to_py)?;
        Ok(res.output.data().to_vec())
    }

    /// Reads an image file and writes the colorized PNG.
    #[pyo3(signature = (input, out, z_seed=inference::DEFAULT_Z_SEED))]
    fn colorize_file(&self, py: Python<'_>, input: PathBuf, out: PathBuf, z_seed: u64) -> PyResult<()> {
        let c = &self.inner;
        py.detach(|| {
            let img = RgbImage::from_rgb8(&dataset::load_rgb8(&input)?);
            let res = inference::colorize(c, &img, z_seed, None)?;
            res.output.save_png(&out)
        })
        .map_err(to_py)
    }

    /// Scores every image under `data_dir`; returns `(csv, summary)`.
    #[pyo3(signature = (data_dir, z_seed=inference::DEFAULT_Z_SEED))]
    fn evaluate(&self, py: Python<'_>, data_dir: PathBuf, z_seed: u64) -> PyResult<(String, String)> {
        let c = &self.inner;
        py.detach(|| {
            let corpus = Corpus::load(&data_dir, c.image_size())?;
            let report = inference::evaluate(c, &corpus.examples, z_seed)?;
            Ok((report.to_csv(), report.summary_line()))
        })
        .map_err(to_py)
    }
}

#[pymodule]
fn chroma(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(srgb_to_lab, m)?)?;
    m.add_function(wrap_pyfunction!(lab_to_srgb, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_tolerance, m)?)?;
    m.add_class::<Trainer>()?;
    m.add_class::<Colorizer>()?;
    Ok(())
}
