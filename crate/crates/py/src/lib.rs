//! Python bindings: cubes, spectral bases, the hybrid model, training runs
//! and metrics. Structured results (reports, manifests) come back as plain
//! dicts.

use std::path::{Path, PathBuf};

use hypernet::data::{self, Border, HsiCube, SynthSpec};
use hypernet::dimred::{self, Method, Preprocess, ReducedBasis, SpectralMatrix};
use hypernet::metrics::EvalReport;
use hypernet::model::{self, HybridModel};
use hypernet::pipeline::{self, RunManifest};
use hypernet::{Error, ErrorCategory};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    let msg = format!("[{}] {err}", err.kind());
    match (&err, err.category()) {
        (Error::Io(_), _) => PyOSError::new_err(msg),
        (_, ErrorCategory::Numeric) => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for hypernet::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Serializes through JSON into Python objects.
fn to_dict<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py_err()
}

/// Labeled hyperspectral cube, `height × width × bands`.
#[pyclass(name = "Cube", module = "hypernet_py", frozen)]
struct PyCube(HsiCube);

#[pymethods]
impl PyCube {
    /// Reads `<base>.hsij`, `<base>.hsib` and `<base>.hsil`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(data::load_cube(&path).py_err()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::write_cube(&path, &self.0).py_err()
    }

    /// `(height, width, bands)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.height(), self.0.width(), self.0.bands())
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.0.class_names().to_vec()
    }

    /// Labeled pixels per class, index 0 holding class 1.
    fn class_histogram(&self) -> Vec<usize> {
        self.0.class_histogram()
    }

    /// Row-major labels, 0 meaning unlabeled.
    fn labels(&self) -> Vec<u16> {
        self.0.labels().to_vec()
    }

    fn spectrum(&self, row: usize, col: usize) -> PyResult<Vec<f32>> {
        if row >= self.0.height() || col >= self.0.width() {
            return Err(to_py(Error::Index(format!("pixel ({row}, {col}) outside the cube"))));
        }
        Ok(self.0.spectrum(row, col).to_vec())
    }

    /// Copy rescaled to [0, 1] with the cube's global minimum and maximum.
    fn normalized(&self) -> Self {
        Self(data::normalize(&self.0))
    }

    fn __repr__(&self) -> String {
        format!("Cube({}×{}×{}, {} classes)", self.0.height(), self.0.width(), self.0.bands(), self.0.class_count())
    }
}

/// Generates a labeled synthetic scene. Returns `(cube, manifest)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (classes=6, height=86, width=83, bands=204, noise=0.02, seed=7, sites=3))]
fn synth<'py>(
    py: Python<'py>,
    classes: usize,
    height: usize,
    width: usize,
    bands: usize,
    noise: f64,
    seed: u64,
    sites: usize,
) -> PyResult<(PyCube, Bound<'py, PyAny>)> {
    let spec = SynthSpec { classes, height, width, bands, noise, seed, sites_per_class: sites };
    let (cube, manifest) = data::synth_cube(&spec).py_err()?;
    Ok((PyCube(cube), to_dict(py, &manifest)?))
}

/// Fitted linear reduction `h = projection · (x − mean)`.
#[pyclass(name = "Basis", module = "hypernet_py", frozen)]
struct PyBasis(ReducedBasis);

#[pymethods]
impl PyBasis {
    /// Fits on every labeled pixel of `cube`.
    #[staticmethod]
    #[pyo3(signature = (cube, method="pca", bands=15, seed=0, center=false, standardize=false))]
    fn fit(
        py: Python<'_>,
        cube: &PyCube,
        method: &str,
        bands: usize,
        seed: u64,
        center: bool,
        standardize: bool,
    ) -> PyResult<Self> {
        let method: Method = parse(method)?;
        let prep = Preprocess { center, standardize };
        let (basis, _) = py.detach(|| pipeline::fit_cube_basis(&cube.0, method, bands, seed, prep)).py_err()?;
        Ok(Self(basis))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(dimred::read_basis(&path).py_err()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dimred::write_basis(&path, &self.0).py_err()
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.as_str()
    }

    /// `retained × bands`, one row per component.
    #[getter]
    fn projection(&self) -> Vec<Vec<f64>> {
        self.0.projection.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.0.mean.to_vec()
    }

    #[getter]
    fn explained(&self) -> Option<Vec<f64>> {
        self.0.explained.as_ref().map(|e| e.to_vec())
    }

    /// Reduces a list of spectra.
    fn transform(&self, spectra: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let samples = spectra.len();
        let bands = spectra.first().map_or(0, Vec::len);
        if spectra.iter().any(|s| s.len() != bands) {
            return Err(to_py(Error::Dimension("spectra have different lengths".into())));
        }
        let matrix = SpectralMatrix::from_rows(samples, bands, spectra.concat()).py_err()?;
        let reduced = self.0.transform(&matrix).py_err()?;
        Ok(reduced.data().rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Largest principal angle, in radians, between the two row spaces.
    fn angle(&self, other: &PyBasis) -> PyResult<f64> {
        if self.0.projection.dim() != other.0.projection.dim() {
            return Err(to_py(Error::Dimension(format!(
                "bases have shapes {:?} and {:?}",
                self.0.projection.dim(),
                other.0.projection.dim()
            ))));
        }
        Ok(dimred::subspace_angle(&self.0.projection, &other.0.projection))
    }

    fn __repr__(&self) -> String {
        format!("Basis({}, {} -> {})", self.0.method.as_str(), self.0.bands(), self.0.retained())
    }
}

/// The hybrid 3D/2D CNN.
#[pyclass(name = "Model", module = "hypernet_py", frozen)]
struct PyModel(HybridModel);

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (window=9, bands=15, classes=16, seed=0))]
    fn new(window: usize, bands: usize, classes: usize, seed: u64) -> PyResult<Self> {
        Ok(Self(model::build_model(window, bands, classes, seed).py_err()?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(model::load_checkpoint(&path).py_err()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&path, &self.0).py_err()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    /// `(name, output_shape, params)` per layer.
    fn layer_summary(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.0.layer_summary().into_iter().map(|r| (r.name, r.output_shape, r.params)).collect()
    }

    /// 1-based classes for `n` patches given as one flat channels-last list.
    fn predict(&self, py: Python<'_>, patches: Vec<f64>, n: usize) -> PyResult<Vec<u16>> {
        py.detach(|| self.0.predict(&patches, n)).py_err()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(window={}, bands={}, classes={}, params={})",
            self.0.window(),
            self.0.bands(),
            self.0.class_count(),
            self.0.param_count()
        )
    }
}

/// Trains on the cube at `cube`, writes the run to `out` and returns the
/// test report.
#[pyfunction]
#[pyo3(signature = (
    cube, out, dr="pca", bands=15, window=9, epochs=50, batch=256, lr=1e-3, dropout=0.4, seed=0,
    fold=None, border="interior", normalize=true, standardize=false,
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    cube: PathBuf,
    out: PathBuf,
    dr: &str,
    bands: usize,
    window: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    dropout: f64,
    seed: u64,
    fold: Option<usize>,
    border: &str,
    normalize: bool,
    standardize: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut manifest = RunManifest::new(cube);
    manifest.dr = parse(dr)?;
    manifest.border = parse::<Border>(border)?;
    manifest.bands = bands;
    manifest.window = window;
    manifest.fold = fold;
    manifest.normalize = normalize;
    manifest.standardize = standardize;
    manifest.train.epochs = epochs;
    manifest.train.batch_size = batch;
    manifest.train.learning_rate = lr;
    manifest.train.dropout_rate = dropout;
    manifest.train.seed = seed;
    let report = py
        .detach(|| -> hypernet::Result<EvalReport> {
            let cube = data::load_cube(&manifest.cube)?;
            let outcome = pipeline::train_run(&manifest, &cube, &mut |_| {})?;
            outcome.write(&out)?;
            Ok(outcome.report)
        })
        .py_err()?;
    to_dict(py, &report)
}

/// Re-evaluates a checkpoint written by `train`. `cube` defaults to the
/// run's own cube.
#[pyfunction]
#[pyo3(signature = (checkpoint, cube=None, full_map=false))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    cube: Option<PathBuf>,
    full_map: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| -> hypernet::Result<EvalReport> {
            let dir = checkpoint.parent().unwrap_or(Path::new("."));
            let (manifest, _, basis) = pipeline::load_run(dir)?;
            let model = model::load_checkpoint(&checkpoint)?;
            let cube = data::load_cube(cube.as_deref().unwrap_or(&manifest.cube))?;
            Ok(pipeline::eval_run(&manifest, &model, &basis, &cube, full_map)?.0)
        })
        .py_err()?;
    to_dict(py, &report)
}

/// OA, AA, κ, per-class scores and the confusion matrix for 1-based labels.
#[pyfunction]
#[pyo3(signature = (truth, predicted, classes))]
fn metrics<'py>(py: Python<'py>, truth: Vec<u16>, predicted: Vec<u16>, classes: usize) -> PyResult<Bound<'py, PyAny>> {
    let names = data::default_class_names(classes);
    let cm = hypernet::metrics::confusion(&truth, &predicted, classes).py_err()?;
    to_dict(py, &EvalReport::from_confusion(cm, &names).py_err()?)
}

/// `(train, validation, test)` sizes for a class of `n` samples.
#[pyfunction]
fn split_counts(n: usize) -> (usize, usize, usize) {
    data::split_counts(n)
}

#[pymodule]
fn hypernet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCube>()?;
    m.add_class::<PyBasis>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(split_counts, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
