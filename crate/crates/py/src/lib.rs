//! Python bindings: graphs, spectra, divergences and federated runs.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fedssp_core::federation::{prepare_clients, run_experiment as run, FedConfig, Method};
use fedssp_core::graph::{normalized_laplacian, parse_tudataset, Graph, GraphDataset};
use fedssp_core::harness::stats::dataset_stats;
use fedssp_core::harness::synthetic::{generate_synthetic, Family, SyntheticSpec};
use fedssp_core::matrix::Matrix;
use fedssp_core::specnet::SpecNetConfig;
use fedssp_core::spectral::{self, dataset_divergence_matrix, graph_spectrum, DivergenceSource};
use fedssp_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Shape(_) | Error::Parse { .. } | Error::Data(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Numeric(_) | Error::Protocol(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// An undirected graph; features default to a constant column.
#[pyclass(name = "Graph", module = "fedssp", from_py_object)]
#[derive(Clone)]
pub struct PyGraph {
    inner: Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (n, edges, label = 0))]
    fn new(n: usize, edges: Vec<(usize, usize)>, label: usize) -> PyResult<Self> {
        Graph::from_edges(0, n, &edges, label)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges.clone()
    }

    #[getter]
    fn label(&self) -> usize {
        self.inner.label
    }

    fn degrees(&self) -> Vec<usize> {
        self.inner.degrees()
    }

    fn num_components(&self) -> usize {
        self.inner.num_components()
    }

    /// Symmetric normalized Laplacian as a list of rows.
    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows(&normalized_laplacian(&self.inner))
    }

    /// `(eigenvalues, eigenvectors)`, ascending, eigenvectors as columns of a row list.
    fn spectrum(&self) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let d = graph_spectrum(&self.inner).map_err(py_err)?;
        Ok((d.eigenvalues.clone(), rows(&d.eigenvectors)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n={}, edges={}, label={})",
            self.inner.n,
            self.inner.edges.len(),
            self.inner.label
        )
    }
}

/// A labelled collection of graphs.
#[pyclass(name = "Dataset", module = "fedssp", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: GraphDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads `<NAME>_A.txt` and friends from a TUDataset directory.
    #[staticmethod]
    fn load(directory: &str, name: &str) -> PyResult<Self> {
        parse_tudataset(directory, name)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// One family per class, `per_class` graphs each, sizes in `[min_nodes, max_nodes]`.
    #[staticmethod]
    #[pyo3(signature = (families, per_class, min_nodes, max_nodes, seed, name = None, edge_prob = 0.3))]
    fn synthetic(
        families: Vec<String>,
        per_class: usize,
        min_nodes: usize,
        max_nodes: usize,
        seed: u64,
        name: Option<String>,
        edge_prob: f64,
    ) -> PyResult<Self> {
        let families = families
            .iter()
            .map(|f| f.parse::<Family>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let mut spec = SyntheticSpec::new(&families, per_class, min_nodes, max_nodes);
        spec.edge_prob = edge_prob;
        let name = name.unwrap_or_else(|| spec.default_name());
        generate_synthetic(&spec, &name, seed)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.f_in
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.graphs.iter().map(|g| g.label).collect()
    }

    fn graph(&self, index: usize) -> PyResult<PyGraph> {
        self.inner
            .graphs
            .get(index)
            .map(|g| PyGraph { inner: g.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("graph index {index} out of range")))
    }

    /// `(eigenvalue histogram, algebraic connectivities)` over `[0, 2]`.
    #[pyo3(signature = (bins = 20))]
    fn spectral_stats(&self, py: Python<'_>, bins: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = py.detach(|| dataset_stats(&self.inner, bins)).map_err(py_err)?;
        Ok((s.eigen_hist, s.connectivities))
    }

    fn __len__(&self) -> usize {
        self.inner.graphs.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, graphs={}, classes={}, features={})",
            self.inner.name,
            self.inner.graphs.len(),
            self.inner.num_classes,
            self.inner.f_in
        )
    }
}

/// Base-2 Jensen-Shannon divergence of two histograms.
#[pyfunction]
fn js_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    spectral::js_divergence(&p, &q).map_err(py_err)
}

/// Normalized histogram of `values` over `bins` equal bins on `[0, 2]`.
#[pyfunction]
fn histogram(values: Vec<f64>, bins: usize) -> PyResult<Vec<f64>> {
    spectral::histogram(values, bins).map_err(py_err)
}

/// Pairwise JSD matrix; `source` is "eigenvalues" or "connectivity".
#[pyfunction]
#[pyo3(signature = (datasets, source = "eigenvalues", bins = 20))]
fn divergence_matrix(py: Python<'_>, datasets: Vec<PyDataset>, source: &str, bins: usize) -> PyResult<Vec<Vec<f64>>> {
    let source = match source {
        "eigenvalues" => DivergenceSource::Eigenvalues,
        "connectivity" => DivergenceSource::Connectivity,
        other => return Err(PyValueError::new_err(format!("unknown divergence source {other:?}"))),
    };
    py.detach(|| {
        let stats = datasets
            .iter()
            .map(|d| dataset_stats(&d.inner, bins))
            .collect::<Result<Vec<_>, _>>()?;
        dataset_divergence_matrix(&stats, source).map(|m| rows(&m.values))
    })
    .map_err(py_err)
}

/// Runs one federated experiment, one dataset per client. Returns a dict
/// with the overall mean and std of test accuracy at best validation, the
/// same at the last round, and per-seed client outcomes.
#[pyfunction]
#[pyo3(signature = (
    datasets, method = "fedssp", rounds = 20, seeds = vec![0], hidden = 32, heads = 4,
    tau = 0.5, mu = 0.5, lr = 1e-3, batch_size = 32, local_epochs = 1,
    split = (0.8, 0.1, 0.1), pgpa = true
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    datasets: Vec<PyDataset>,
    method: &str,
    rounds: usize,
    seeds: Vec<u64>,
    hidden: usize,
    heads: usize,
    tau: f64,
    mu: f64,
    lr: f64,
    batch_size: usize,
    local_epochs: usize,
    split: (f64, f64, f64),
    pgpa: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(py_err)?;
    let mut cfg = FedConfig {
        method,
        rounds,
        seeds,
        tau,
        mu,
        batch_size,
        local_epochs,
        split,
        pgpa,
        ..FedConfig::default()
    };
    cfg.optimizer.lr = lr;
    let model = SpecNetConfig {
        hidden,
        heads,
        ..SpecNetConfig::default()
    };
    let result = py
        .detach(|| {
            let clients = prepare_clients(datasets.into_iter().map(|d| d.inner).collect(), model.max_nodes)?;
            run(&clients, &model, &cfg)
        })
        .map_err(py_err)?;

    let out = PyDict::new(py);
    out.set_item("method", method.as_str())?;
    let overall = result.overall();
    out.set_item("mean", overall.mean)?;
    out.set_item("std", overall.std)?;
    let last = result.overall_final();
    out.set_item("final_mean", last.mean)?;
    out.set_item("final_std", last.std)?;
    let mut runs = Vec::with_capacity(result.runs.len());
    for r in &result.runs {
        let clients = r
            .outcomes
            .iter()
            .map(|o| {
                let d = PyDict::new(py);
                d.set_item("client", o.client)?;
                d.set_item("name", &o.name)?;
                d.set_item("best_round", o.best_round)?;
                d.set_item("best_val_acc", o.best_val_acc)?;
                d.set_item("test_at_best_val", o.test_at_best_val)?;
                d.set_item("final_test_acc", o.final_test_acc)?;
                Ok(d)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let run = PyDict::new(py);
        run.set_item("seed", r.seed)?;
        run.set_item("clients", clients)?;
        runs.push(run);
    }
    out.set_item("runs", runs)?;
    Ok(out)
}

#[pymodule]
fn fedssp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
