//! Python bindings: thin wrappers around the dataset container, the
//! randomized selector, the greedy baselines, and the kernel ridge
//! classifier. Matrices cross the boundary as lists of rows.

use std::collections::BTreeSet;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use randsel::baselines::{self, FeatureRanking};
use randsel::contribution::{self, EstimateParams};
use randsel::datagen;
use randsel::dataset::{self, Dataset};
use randsel::evaluation::KernelClassifier;
use randsel::kernel::{self, BandwidthSpec};
use randsel::resample::FeatureSubset;
use randsel::selector::{self, SelectionTrace, SelectorConfig};

fn to_py_err(e: randsel::Error) -> PyErr {
    use randsel::Error::*;
    match e {
        InvalidParameter(_) | InvalidData(_) => PyValueError::new_err(e.to_string()),
        Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Rectangular list-of-rows to an owned matrix.
fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix needs at least one row"));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix rows have unequal lengths"));
    }
    let m = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((m, n), flat)
        .map_err(|e| PyValueError::new_err(format!("bad matrix shape: {e}")))
}

fn bandwidth_of(gamma: Option<f64>) -> BandwidthSpec {
    match gamma {
        Some(g) => BandwidthSpec::Fixed(g),
        None => BandwidthSpec::MedianHeuristic,
    }
}

fn ranking_tuples(r: &FeatureRanking) -> Vec<(usize, f64, bool)> {
    r.entries()
        .iter()
        .map(|e| (e.feature, e.score, e.degenerate))
        .collect()
}

/// Standardized dataset with +-1 labels.
#[pyclass(name = "Dataset")]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Columns are standardized on construction, exactly as in Rust.
    #[new]
    #[pyo3(signature = (x, y, relevant = None))]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>, relevant: Option<Vec<usize>>) -> PyResult<Self> {
        let x = to_matrix(x)?;
        let relevant: Option<BTreeSet<usize>> = relevant.map(|v| v.into_iter().collect());
        Ok(PyDataset {
            inner: Dataset::new(x, y, relevant).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (m, n, noise_sd = 0.3, seed = 0))]
    fn gen_xor(m: usize, n: usize, noise_sd: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: datagen::gen_xor(m, n, noise_sd, seed).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (m, n, seed = 0))]
    fn gen_weston_linear(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: datagen::gen_weston_linear(m, n, seed).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (m, n, seed = 0))]
    fn gen_weston_nonlinear(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: datagen::gen_weston_nonlinear(m, n, seed).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: dataset::read_csv(&path).map_err(to_py_err)?,
        })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        dataset::write_csv(&self.inner, &path).map_err(to_py_err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    fn x(&self) -> Vec<Vec<f64>> {
        self.inner
            .x()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    fn relevant(&self) -> Option<Vec<usize>> {
        self.inner
            .relevant()
            .map(|s| s.iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(m={}, n_features={})",
            self.inner.m(),
            self.inner.n_features()
        )
    }
}

/// Selector settings; `gamma=None` means the per-draw median heuristic.
#[pyclass(name = "SelectorConfig", skip_from_py_object)]
#[derive(Clone)]
pub struct PySelectorConfig {
    inner: SelectorConfig,
}

#[pymethods]
impl PySelectorConfig {
    #[new]
    #[pyo3(signature = (
        n_bootstraps = 1000,
        subsample = 50,
        cull_fraction = 0.25,
        top_fraction = 0.25,
        occasions = 3,
        fixing_enabled = false,
        gamma = None,
        master_seed = 0,
        min_features = 2,
        coupled_draws = true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_bootstraps: usize,
        subsample: usize,
        cull_fraction: f64,
        top_fraction: f64,
        occasions: u32,
        fixing_enabled: bool,
        gamma: Option<f64>,
        master_seed: u64,
        min_features: usize,
        coupled_draws: bool,
    ) -> PyResult<Self> {
        let inner = SelectorConfig {
            n_bootstraps,
            subsample,
            cull_fraction,
            top_fraction,
            occasions,
            fixing_enabled,
            bandwidth: bandwidth_of(gamma),
            master_seed,
            min_features,
            coupled_draws,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(PySelectorConfig { inner })
    }

    #[getter]
    fn n_bootstraps(&self) -> usize {
        self.inner.n_bootstraps
    }

    #[getter]
    fn subsample(&self) -> usize {
        self.inner.subsample
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    fn __repr__(&self) -> String {
        format!(
            "SelectorConfig(n_bootstraps={}, subsample={}, master_seed={})",
            self.inner.n_bootstraps, self.inner.subsample, self.inner.master_seed
        )
    }
}

/// One selector iteration; `contributions` pairs each active feature with its
/// estimated alignment contribution.
#[pyclass(name = "Iteration")]
pub struct PyIteration {
    #[pyo3(get)]
    iteration: u64,
    #[pyo3(get)]
    active_before: Vec<usize>,
    #[pyo3(get)]
    contributions: Vec<(usize, f64)>,
    #[pyo3(get)]
    culled: Vec<usize>,
    #[pyo3(get)]
    fixed: Vec<usize>,
    #[pyo3(get)]
    kernel_evals: u64,
    #[pyo3(get)]
    active_after: Vec<usize>,
}

/// Complete record of one selection run.
#[pyclass(name = "SelectionTrace")]
pub struct PyTrace {
    inner: SelectionTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn selected(&self) -> Vec<usize> {
        self.inner.selected.clone()
    }

    #[getter]
    fn fixed(&self) -> Vec<usize> {
        self.inner.fixed.clone()
    }

    #[getter]
    fn total_kernel_evals(&self) -> u64 {
        self.inner.total_kernel_evals
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features
    }

    fn iterations(&self) -> Vec<PyIteration> {
        self.inner
            .iterations
            .iter()
            .map(|it| PyIteration {
                iteration: it.iteration,
                active_before: it.active_before.clone(),
                contributions: it
                    .table
                    .entries()
                    .iter()
                    .map(|e| (e.feature, e.contribution))
                    .collect(),
                culled: it.culled.clone(),
                fixed: it.fixed.clone(),
                kernel_evals: it.kernel_evals,
                active_after: it.active_after.clone(),
            })
            .collect()
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn __repr__(&self) -> String {
        format!(
            "SelectionTrace(selected={:?}, iterations={})",
            self.inner.selected,
            self.inner.iterations.len()
        )
    }
}

/// Runs the randomized selector; deterministic for a fixed config.
#[pyfunction]
fn select(data: PyRef<PyDataset>, config: PyRef<PySelectorConfig>) -> PyResult<PyTrace> {
    Ok(PyTrace {
        inner: selector::randsel(&data.inner, &config.inner).map_err(to_py_err)?,
    })
}

/// Per-feature contribution estimates over `n_draws` random subspaces,
/// as (feature, contribution, mean_plus, mean_base, unsampled) tuples.
#[pyfunction]
#[pyo3(signature = (data, n_draws, subsample, active = None, gamma = None, coupled = true, seed = 0))]
fn estimate_contributions(
    data: PyRef<PyDataset>,
    n_draws: usize,
    subsample: usize,
    active: Option<Vec<usize>>,
    gamma: Option<f64>,
    coupled: bool,
    seed: u64,
) -> PyResult<Vec<(usize, f64, f64, f64, bool)>> {
    let active = match active {
        Some(ids) => FeatureSubset::new(ids).map_err(to_py_err)?,
        None => FeatureSubset::full(data.inner.n_features()),
    };
    let params = EstimateParams {
        n_draws,
        subsample,
        bandwidth: bandwidth_of(gamma),
        coupled,
        master_seed: seed,
        iteration: 1,
    };
    let (table, _) =
        contribution::estimate_contributions(&data.inner, &active, &params).map_err(to_py_err)?;
    Ok(table
        .entries()
        .iter()
        .map(|e| (e.feature, e.contribution, e.mean_plus, e.mean_base, e.unsampled))
        .collect())
}

/// Forward greedy ranking, best first, as (feature, score, degenerate).
#[pyfunction]
#[pyo3(signature = (data, gamma = None, k_max = None))]
fn fohsic(
    data: PyRef<PyDataset>,
    gamma: Option<f64>,
    k_max: Option<usize>,
) -> PyResult<Vec<(usize, f64, bool)>> {
    let k_max = k_max.unwrap_or(data.inner.n_features());
    let ranking =
        baselines::fohsic(&data.inner, bandwidth_of(gamma), k_max).map_err(to_py_err)?;
    Ok(ranking_tuples(&ranking))
}

/// Backward-elimination ranking, best first, as (feature, score, degenerate).
#[pyfunction]
#[pyo3(signature = (data, gamma = None))]
fn bahsic(data: PyRef<PyDataset>, gamma: Option<f64>) -> PyResult<Vec<(usize, f64, bool)>> {
    let ranking = baselines::bahsic(&data.inner, bandwidth_of(gamma)).map_err(to_py_err)?;
    Ok(ranking_tuples(&ranking))
}

/// Absolute Pearson correlation ranking, best first.
#[pyfunction]
fn corr_filter(data: PyRef<PyDataset>) -> PyResult<Vec<(usize, f64, bool)>> {
    let ranking = baselines::corr_filter(&data.inner).map_err(to_py_err)?;
    Ok(ranking_tuples(&ranking))
}

/// Centered kernel-target alignment of a feature subset, in [-1, 1].
#[pyfunction]
#[pyo3(signature = (data, features, gamma = None))]
fn subset_alignment(
    data: PyRef<PyDataset>,
    features: Vec<usize>,
    gamma: Option<f64>,
) -> PyResult<f64> {
    kernel::subset_alignment(data.inner.x(), data.inner.y(), &features, bandwidth_of(gamma))
        .map_err(to_py_err)
}

/// Median-heuristic bandwidth over the full dataset: 1 / median pairwise
/// squared distance.
#[pyfunction]
fn median_gamma(data: PyRef<PyDataset>) -> PyResult<f64> {
    kernel::median_heuristic(data.inner.x()).map_err(to_py_err)
}

/// Gaussian kernel ridge trained on +-1 labels; predicts label signs.
#[pyclass(name = "KernelClassifier")]
pub struct PyKernelClassifier {
    inner: KernelClassifier,
}

#[pymethods]
impl PyKernelClassifier {
    #[staticmethod]
    #[pyo3(signature = (x, y, gamma, lambda = 1.0))]
    fn train(x: Vec<Vec<f64>>, y: Vec<f64>, gamma: f64, lambda: f64) -> PyResult<Self> {
        let x = to_matrix(x)?;
        Ok(PyKernelClassifier {
            inner: KernelClassifier::train(x.view(), &y, gamma, lambda).map_err(to_py_err)?,
        })
    }

    fn decision_function(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = to_matrix(x)?;
        self.inner.decision_function(x.view()).map_err(to_py_err)
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = to_matrix(x)?;
        self.inner.predict(x.view()).map_err(to_py_err)
    }
}

/// Registers every binding on `m`; shared by the module init and the tests.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PySelectorConfig>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyIteration>()?;
    m.add_class::<PyKernelClassifier>()?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_contributions, m)?)?;
    m.add_function(wrap_pyfunction!(fohsic, m)?)?;
    m.add_function(wrap_pyfunction!(bahsic, m)?)?;
    m.add_function(wrap_pyfunction!(corr_filter, m)?)?;
    m.add_function(wrap_pyfunction!(subset_alignment, m)?)?;
    m.add_function(wrap_pyfunction!(median_gamma, m)?)?;
    Ok(())
}

#[pymodule]
fn randsel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
