//! Python bindings. Grids cross the boundary as row-major nested lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use spcgan::evalstat;
use spcgan::gac::{self, FitGrid};
use spcgan::phantom::{self, GrayImage, PairedSample, PhantomSpec, SegMask};
use spcgan::trainer::{self, TrainConfig};

create_exception!(spcgan, SpcganError, PyException);

fn err(e: spcgan::Error) -> PyErr {
    SpcganError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    SpcganError::new_err(format!("bad configuration: {e}"))
}

fn flatten(rows: Vec<Vec<f32>>) -> PyResult<(usize, usize, Vec<f32>)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(SpcganError::new_err("expected a non-empty rectangular grid"));
    }
    Ok((w, h, rows.into_iter().flatten().collect()))
}

fn nest(w: usize, data: &[f32]) -> Vec<Vec<f32>> {
    data.chunks(w).map(<[f32]>::to_vec).collect()
}

/// Grayscale image on `[-1, 1]`.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage(GrayImage);

#[pymethods]
impl PyImage {
    #[new]
    #[pyo3(signature = (rows, spacing = 0.1))]
    fn new(rows: Vec<Vec<f32>>, spacing: f64) -> PyResult<Self> {
        let (w, h, data) = flatten(rows)?;
        GrayImage::new(w, h, spacing, data).map(Self).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.0.spacing()
    }

    fn to_list(&self) -> Vec<Vec<f32>> {
        nest(self.0.width(), self.0.data())
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.width(), self.0.height())
    }
}

/// Binary (or soft) segmentation mask on `[0, 1]`.
#[pyclass(name = "Mask", from_py_object)]
#[derive(Clone)]
struct PyMask(SegMask);

#[pymethods]
impl PyMask {
    /// Values that are all 0 or 1 give a binary mask, anything else a soft one.
    #[new]
    fn new(rows: Vec<Vec<f32>>) -> PyResult<Self> {
        let (w, h, data) = flatten(rows)?;
        if data.iter().all(|&v| v == 0.0 || v == 1.0) {
            SegMask::binary(w, h, data).map(Self).map_err(err)
        } else {
            SegMask::soft(w, h, data).map(Self).map_err(err)
        }
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn area(&self) -> usize {
        self.0.area()
    }

    fn dice(&self, other: &PyMask) -> PyResult<f64> {
        evalstat::dice(&self.0, &other.0).map(|d| d.dsc).map_err(err)
    }

    fn to_list(&self) -> Vec<Vec<f32>> {
        nest(self.0.width(), self.0.data())
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, area={})", self.0.width(), self.0.height(), self.0.area())
    }
}

/// An image with its reference mask and lesion label.
#[pyclass(name = "Phantom", from_py_object)]
#[derive(Clone)]
struct PyPhantom(PairedSample);

#[pymethods]
impl PyPhantom {
    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn image(&self) -> PyImage {
        PyImage(self.0.image.clone())
    }

    #[getter]
    fn mask(&self) -> PyMask {
        PyMask(self.0.mask.clone())
    }

    #[getter]
    fn lesion_class(&self) -> &'static str {
        self.0.lesion_class.as_str()
    }

    fn __repr__(&self) -> String {
        format!("Phantom(id={:?}, class={})", self.0.id, self.0.lesion_class.as_str())
    }
}

#[pyclass(name = "LevelSetParams", from_py_object)]
#[derive(Clone)]
struct PyLevelSetParams(gac::LevelSetParams);

#[pymethods]
impl PyLevelSetParams {
    #[new]
    #[pyo3(signature = (epsilon = 0.0, alpha = 0.0, sigma = 2.0, dt = 0.5, steps = 50, init_radius = 3.0))]
    fn new(epsilon: f64, alpha: f64, sigma: f64, dt: f64, steps: usize, init_radius: f64) -> PyResult<Self> {
        let p = gac::LevelSetParams {
            epsilon,
            alpha,
            sigma,
            dt,
            steps,
            init_radius,
        };
        p.validate().map_err(err)?;
        Ok(Self(p))
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps
    }

    #[getter]
    fn init_radius(&self) -> f64 {
        self.0.init_radius
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "LevelSetParams(epsilon={}, alpha={}, sigma={}, dt={}, steps={}, init_radius={})",
            p.epsilon, p.alpha, p.sigma, p.dt, p.steps, p.init_radius
        )
    }
}

/// Trained networks plus the configuration that produced them.
#[pyclass(name = "Checkpoint")]
struct PyCheckpoint(trainer::Checkpoint);

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        trainer::Checkpoint::load(&path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.0.epoch
    }

    #[getter]
    fn val_loss(&self) -> Option<f64> {
        self.0.val_loss
    }

    #[getter]
    fn val_dice(&self) -> Option<f64> {
        self.0.val_dice
    }

    #[pyo3(signature = (image, threshold = 0.0))]
    fn segment(&self, image: &PyImage, threshold: f64) -> PyResult<PyMask> {
        trainer::segment(&image.0, &self.0, threshold).map(PyMask).map_err(err)
    }
}

/// Draws one phantom; `spec` is an optional JSON phantom specification.
#[pyfunction]
#[pyo3(signature = (seed, spec = None))]
fn generate_phantom(seed: u64, spec: Option<&str>) -> PyResult<PyPhantom> {
    let spec: PhantomSpec = match spec {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => PhantomSpec::default(),
    };
    phantom::generate_phantom(&spec, seed).map(PyPhantom).map_err(err)
}

/// Loads every sample of a manifest, verifying checksums.
#[pyfunction]
fn load_manifest(path: PathBuf) -> PyResult<Vec<PyPhantom>> {
    let (_, samples) = phantom::load_samples(&path).map_err(err)?;
    Ok(samples.into_iter().map(PyPhantom).collect())
}

#[pyfunction]
fn dice(a: &PyMask, b: &PyMask) -> PyResult<f64> {
    a.dice(b)
}

/// One-sided paired t-test of `mean(a - b) > 0`; returns `(t, p, df)`.
#[pyfunction]
fn paired_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let r = evalstat::paired_ttest_one_sided(&a, &b).map_err(err)?;
    Ok((r.t, r.p, r.df))
}

/// Learning rate at `epoch` under a JSON training configuration.
#[pyfunction]
#[pyo3(signature = (epoch, config = None))]
fn lr_at(epoch: usize, config: Option<&str>) -> PyResult<f64> {
    let cfg = train_config(config)?;
    trainer::lr_at(epoch, &cfg).map_err(err)
}

fn train_config(config: Option<&str>) -> PyResult<TrainConfig> {
    match config {
        Some(s) => serde_json::from_str(s).map_err(json_err),
        None => Ok(TrainConfig::default()),
    }
}

fn samples(v: Vec<PyPhantom>) -> Vec<PairedSample> {
    v.into_iter().map(|p| p.0).collect()
}

/// Trains on `train_set`, selecting on `val_set`; returns the checkpoint.
#[pyfunction]
#[pyo3(signature = (train_set, val_set, config = None))]
fn train(py: Python<'_>, train_set: Vec<PyPhantom>, val_set: Vec<PyPhantom>, config: Option<&str>) -> PyResult<PyCheckpoint> {
    let cfg = train_config(config)?;
    let (t, v) = (samples(train_set), samples(val_set));
    py.detach(|| trainer::train(&t, &v, &cfg))
        .map(|(ckpt, _)| PyCheckpoint(ckpt))
        .map_err(err)
}

/// Edge-stopping speed map of an image.
#[pyfunction]
fn speed_map(image: &PyImage, sigma: f64) -> PyResult<Vec<Vec<f64>>> {
    let g = gac::speed_map(&image.0, sigma).map_err(err)?;
    Ok(g.values().chunks(g.width()).map(<[f64]>::to_vec).collect())
}

/// Level-set segmentation seeded at `center` (`(row, col)`), or the image
/// center when omitted.
#[pyfunction]
#[pyo3(signature = (image, params, center = None))]
fn levelset_segment(image: &PyImage, params: &PyLevelSetParams, center: Option<(f64, f64)>) -> PyResult<PyMask> {
    gac::segment(&image.0, &params.0, center).map(PyMask).map_err(err)
}

/// Fits level-set parameters on phantoms; `grid` is an optional JSON grid.
/// Returns `(params, mean_dice)`.
#[pyfunction]
#[pyo3(signature = (train_set, grid = None))]
fn fit_levelset(py: Python<'_>, train_set: Vec<PyPhantom>, grid: Option<&str>) -> PyResult<(PyLevelSetParams, f64)> {
    let grid: FitGrid = match grid {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => FitGrid::default(),
    };
    let t = samples(train_set);
    let r = py.detach(|| gac::fit_params(&t, &grid)).map_err(err)?;
    Ok((PyLevelSetParams(r.params), r.mean_dsc))
}

#[pymodule(name = "spcgan")]
fn spcgan_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpcganError", m.py().get_type::<SpcganError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyPhantom>()?;
    m.add_class::<PyLevelSetParams>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(load_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(paired_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(speed_map, m)?)?;
    m.add_function(wrap_pyfunction!(levelset_segment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_levelset, m)?)?;
    Ok(())
}
