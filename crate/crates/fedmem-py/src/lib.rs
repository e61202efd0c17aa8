//! Python bindings for the fedmem simulator: dataset construction and
//! partitioning, model parameter containers, evaluation, and the full
//! experiment / sweep / report / personalize pipeline driven by the same
//! JSON configuration documents the CLI consumes.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use fedmem::config::ExperimentConfig;
use fedmem::data;
use fedmem::error::Error;
use fedmem::experiment;
use fedmem::metrics;
use fedmem::numerics::{self, ParamSet};
use fedmem::partition::{Monopoly, PartitionMode, PartitionSpec};
use fedmem::protocol;
use fedmem::report;

/// Validation problems become ValueError, everything else RuntimeError —
/// mirroring the CLI's exit codes 1 and 2.
fn to_py(err: Error) -> PyErr {
    if err.is_validation() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn parse_config(config_json: &str) -> PyResult<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("invalid config JSON: {e}")))?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// A labelled feature matrix.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Load a `label,f0,f1,...` CSV.
    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::load_csv(&path).map_err(to_py)?,
        })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        data::save_csv(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len())
            .map(|i| self.inner.features.row(i).to_vec())
            .collect()
    }

    fn label_histogram(&self) -> Vec<usize> {
        self.inner.label_histogram().counts().to_vec()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!(
                "index {bad} out of range for dataset of {}",
                self.inner.len()
            )));
        }
        Ok(PyDataset {
            inner: self.inner.subset(&indices),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(len={}, dim={}, num_classes={})",
            self.inner.len(),
            self.inner.dim(),
            self.inner.num_classes
        )
    }
}

/// Dense network parameters in the binary container format.
#[pyclass(name = "ParamSet", frozen)]
struct PyParamSet {
    inner: ParamSet,
}

#[pymethods]
impl PyParamSet {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyParamSet {
            inner: numerics::load_params(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        numerics::save_params(&self.inner, &path).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(buf: &[u8]) -> PyResult<Self> {
        Ok(PyParamSet {
            inner: numerics::from_bytes(buf).map_err(to_py)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &numerics::to_bytes(&self.inner))
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    /// `(out_dim, in_dim)` per layer.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.inner
            .layers()
            .iter()
            .map(|l| (l.out_dim(), l.in_dim()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "ParamSet(layers={}, params={})",
            self.inner.layers().len(),
            self.inner.num_params()
        )
    }
}

/// Isotropic Gaussian class blobs with deterministic layout and sampling.
#[pyfunction]
#[pyo3(signature = (classes, dim, per_class, spread, layout_seed, sample_seed))]
fn make_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    layout_seed: u64,
    sample_seed: u64,
) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: data::make_blobs(classes, dim, per_class, spread, layout_seed, sample_seed)
            .map_err(to_py)?,
    })
}

/// Stratified train/test split.
#[pyfunction]
fn split_train_test(
    dataset: &PyDataset,
    test_fraction: f64,
    seed: u64,
) -> PyResult<(PyDataset, PyDataset)> {
    let (train, test) =
        data::split_train_test(&dataset.inner, test_fraction, seed).map_err(to_py)?;
    Ok((PyDataset { inner: train }, PyDataset { inner: test }))
}

/// Dirichlet-heterogeneous index partition: `{client: [row, ...]}`.
#[pyfunction]
fn partition_dirichlet(
    dataset: &PyDataset,
    alpha: f64,
    num_clients: usize,
    seed: u64,
) -> PyResult<std::collections::BTreeMap<usize, Vec<usize>>> {
    let spec = PartitionSpec {
        mode: PartitionMode::Dirichlet { alpha },
        num_clients,
        seed,
        monopoly: None,
    };
    spec.validate(dataset.inner.num_classes).map_err(to_py)?;
    Ok(fedmem::partition::partition(&dataset.inner, &spec)
        .map_err(to_py)?
        .to_map())
}

/// Pathological gamma-classes-per-client partition, optionally granting one
/// client exclusive ownership of some classes.
#[pyfunction]
#[pyo3(signature = (dataset, gamma, num_clients, seed, monopoly_client=None, monopoly_classes=None))]
fn partition_pathological(
    dataset: &PyDataset,
    gamma: usize,
    num_clients: usize,
    seed: u64,
    monopoly_client: Option<usize>,
    monopoly_classes: Option<Vec<usize>>,
) -> PyResult<std::collections::BTreeMap<usize, Vec<usize>>> {
    let monopoly = match (monopoly_client, monopoly_classes) {
        (Some(client_id), Some(classes)) => Some(Monopoly { client_id, classes }),
        (None, None) => None,
        _ => {
            return Err(PyValueError::new_err(
                "monopoly_client and monopoly_classes must be given together",
            ))
        }
    };
    let spec = PartitionSpec {
        mode: PartitionMode::Pathological { gamma },
        num_clients,
        seed,
        monopoly,
    };
    spec.validate(dataset.inner.num_classes).map_err(to_py)?;
    Ok(fedmem::partition::partition(&dataset.inner, &spec)
        .map_err(to_py)?
        .to_map())
}

/// Accuracy and per-class accuracy (None for classes with no test rows).
#[pyfunction]
fn evaluate(params: &PyParamSet, dataset: &PyDataset) -> PyResult<(f64, Vec<Option<f64>>)> {
    let eval = protocol::evaluate(&params.inner, &dataset.inner).map_err(to_py)?;
    let per_class = eval
        .per_class
        .iter()
        .map(|&v| if v.is_nan() { None } else { Some(v) })
        .collect();
    Ok((eval.accuracy, per_class))
}

/// Run every configured strategy over all repeats; writes the metrics CSV
/// and returns the number of records.
#[pyfunction]
#[pyo3(signature = (config_json, out_csv, tag=None))]
fn run_experiment(config_json: &str, out_csv: PathBuf, tag: Option<&str>) -> PyResult<usize> {
    let cfg = parse_config(config_json)?;
    let records = experiment::run_experiment(&cfg, tag).map_err(to_py)?;
    metrics::write_csv(&out_csv, &records).map_err(to_py)?;
    Ok(records.len())
}

/// Sweep one hyperparameter axis; writes the combined metrics CSV and
/// returns the number of records.
#[pyfunction]
fn run_sweep(config_json: &str, axis: &str, values: Vec<String>, out_csv: PathBuf) -> PyResult<usize> {
    let cfg = parse_config(config_json)?;
    let axis: experiment::SweepAxis = axis.parse().map_err(to_py)?;
    let records = experiment::sweep(&cfg, axis, &values).map_err(to_py)?;
    metrics::write_csv(&out_csv, &records).map_err(to_py)?;
    Ok(records.len())
}

/// Aggregate metrics CSVs into summary tables and SVG curves; returns the
/// written paths.
#[pyfunction]
fn run_report(csvs: Vec<PathBuf>, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    let paths = report::report(&csvs, &out_dir).map_err(to_py)?;
    let mut out = vec![paths.summary_csv, paths.summary_md];
    out.extend(paths.curves);
    Ok(out)
}

/// Run the personalization pipeline and write every produced model; returns
/// the written paths (global, generator, one per client).
#[pyfunction]
fn personalize_models(config_json: &str, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    let cfg = parse_config(config_json)?;
    experiment::run_personalize(&cfg, &out_dir).map_err(to_py)
}

#[pymodule]
fn fedmem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyParamSet>()?;
    m.add_function(wrap_pyfunction!(make_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(split_train_test, m)?)?;
    m.add_function(wrap_pyfunction!(partition_dirichlet, m)?)?;
    m.add_function(wrap_pyfunction!(partition_pathological, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_report, m)?)?;
    m.add_function(wrap_pyfunction!(personalize_models, m)?)?;
    m.add("CSV_HEADER", metrics::CSV_HEADER)?;
    Ok(())
}
