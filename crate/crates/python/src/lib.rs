//! Python bindings: `import overflowlab`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::overflowlab::exact::{self, ExactConfig};
use ::overflowlab::experiments::{self, ReplicationStats};
use ::overflowlab::splitting;
use ::overflowlab::{chain, network, reversed, ChainState, Error};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::NoConvergence { .. } | Error::RunawayRun { .. } | Error::TruncationNoConverge { .. } => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn stats_dict<'py>(py: Python<'py>, s: &ReplicationStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("m", s.m)?;
    d.set_item("mean", s.mean)?;
    d.set_item("variance", s.variance)?;
    d.set_item("cv2", s.cv2)?;
    d.set_item("std_error", s.std_error)?;
    d.set_item("mean_work", s.mean_work)?;
    d.set_item("work_normalized_cv2", s.work_normalized_cv2)?;
    Ok(d)
}

/// A validated open Jackson network (rates normalized to total one).
#[pyclass(name = "Network", module = "overflowlab", frozen)]
struct PyNetwork {
    inner: network::ValidatedNetwork,
}

impl PyNetwork {
    fn target_or_default(&self, target: Option<Vec<u8>>) -> Vec<u8> {
        target.unwrap_or_else(|| vec![1; self.inner.dim()])
    }
    fn state_or_origin(&self, x: Option<Vec<u32>>) -> ChainState {
        x.map(ChainState).unwrap_or_else(|| ChainState::zeros(self.inner.dim()))
    }
}

#[pymethods]
#[allow(clippy::too_many_arguments)]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (lam, mu, routing, name=None))]
    fn new(lam: Vec<f64>, mu: Vec<f64>, routing: Vec<Vec<f64>>, name: Option<String>) -> PyResult<Self> {
        let mut spec = network::NetworkSpec::new(lam, mu, routing);
        spec.name = name;
        let inner = network::validate(&spec).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec = network::NetworkSpec::from_json_str(text).map_err(to_py)?;
        Ok(Self { inner: network::validate(&spec).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let spec = network::NetworkSpec::from_json_file(path).map_err(to_py)?;
        Ok(Self { inner: network::validate(&spec).map_err(to_py)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    #[getter]
    fn lam(&self) -> Vec<f64> {
        self.inner.lambda().to_vec()
    }
    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu().to_vec()
    }
    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.inner.phi().to_vec()
    }
    #[getter]
    fn rho(&self) -> Vec<f64> {
        self.inner.rho().to_vec()
    }
    #[getter]
    fn rho_star(&self) -> f64 {
        self.inner.rho_star()
    }
    #[getter]
    fn beta(&self) -> usize {
        self.inner.beta()
    }

    /// `(rho_star_V, beta_V, gamma_V)` of a binary target vector.
    fn target_params(&self, v: Vec<u8>) -> PyResult<(f64, usize, f64)> {
        let t = self.inner.target_params(&v).map_err(to_py)?;
        Ok((t.rho_star_v(), t.beta_v(), t.gamma_v()))
    }

    fn stationary_pmf(&self, x: Vec<u32>) -> PyResult<f64> {
        if x.len() != self.inner.dim() {
            return Err(to_py(Error::DimensionMismatch { expected: self.inner.dim(), got: x.len() }));
        }
        Ok(self.inner.stationary_pmf(&x))
    }

    #[pyo3(signature = (n, target=None))]
    fn stationary_level_pmf(&self, n: u32, target: Option<Vec<u8>>) -> PyResult<f64> {
        let t = self.inner.target_params(&self.target_or_default(target)).map_err(to_py)?;
        Ok(self.inner.stationary_level_pmf(&t, n))
    }

    /// Increment table as `(kind, stations, probability)` tuples.
    fn increments(&self) -> Vec<(String, Vec<usize>, f64)> {
        chain::increment_table(&self.inner)
            .into_iter()
            .map(|e| {
                let (kind, stations) = match e.kind {
                    chain::EventKind::Arrival(i) => ("arrival", vec![i]),
                    chain::EventKind::Transfer(i, j) => ("transfer", vec![i, j]),
                    chain::EventKind::Departure(i) => ("departure", vec![i]),
                };
                (kind.to_string(), stations, e.probability)
            })
            .collect()
    }

    fn kernel_row(&self, x: Vec<u32>) -> Vec<(Vec<u32>, f64)> {
        chain::kernel_row(&self.inner, &ChainState(x)).into_iter().map(|(s, p)| (s.0, p)).collect()
    }

    fn reversed_kernel_row(&self, y: Vec<u32>) -> Vec<(Vec<u32>, f64)> {
        reversed::reversed_kernel_row(&self.inner, &ChainState(y)).entries.into_iter().map(|(s, p)| (s.0, p)).collect()
    }

    /// The reversed network, validated.
    fn reversed(&self) -> PyResult<Self> {
        Ok(Self { inner: network::validate(&reversed::reversed_network(&self.inner)).map_err(to_py)? })
    }

    #[pyo3(signature = (x, target=None))]
    fn subsolution_residual(&self, x: Vec<u32>, target: Option<Vec<u8>>) -> PyResult<f64> {
        let t = self.inner.target_params(&self.target_or_default(target)).map_err(to_py)?;
        chain::subsolution_residual(&self.inner, &t, &ChainState(x)).map_err(to_py)
    }

    /// Exact `p_n^V(x)` from the first-passage linear system.
    #[pyo3(signature = (n, target=None, x=None, tol=1e-12))]
    fn overflow_probability(&self, n: u32, target: Option<Vec<u8>>, x: Option<Vec<u32>>, tol: f64) -> PyResult<f64> {
        let cfg = ExactConfig { tol, ..ExactConfig::default() };
        exact::overflow_probability(&self.inner, n, &self.target_or_default(target), &self.state_or_origin(x), &cfg)
            .map_err(to_py)
    }

    #[pyo3(signature = (n, x, target=None))]
    fn regeneration_check(&self, n: u32, x: Vec<u32>, target: Option<Vec<u8>>) -> PyResult<(f64, f64)> {
        exact::regeneration_check(&self.inner, n, &self.target_or_default(target), &ChainState(x), &ExactConfig::default())
            .map_err(to_py)
    }

    /// Splitting estimate; returns a dict of replication statistics plus
    /// `levels` and `mean_terminal_count`.
    #[pyo3(signature = (n, m, seed, target=None, x=None, r=2))]
    fn split<'py>(
        &self,
        py: Python<'py>,
        n: u32,
        m: usize,
        seed: u64,
        target: Option<Vec<u8>>,
        x: Option<Vec<u32>>,
        r: u32,
    ) -> PyResult<Bound<'py, PyDict>> {
        let t = self.inner.target_params(&self.target_or_default(target)).map_err(to_py)?;
        let x0 = self.state_or_origin(x);
        let scheme = splitting::build_levels(&self.inner, &t, n, r, &x0).map_err(to_py)?;
        let vn = &self.inner;
        let outcomes = py
            .detach(|| splitting::run_replications(vn, &scheme, &x0, m, seed))
            .map_err(to_py)?;
        let values: Vec<f64> = outcomes.iter().map(|o| o.estimate).collect();
        let works: Vec<u64> = outcomes.iter().map(|o| o.work).collect();
        let stats = ReplicationStats::from_samples(&values, &works).map_err(to_py)?;
        let d = stats_dict(py, &stats)?;
        d.set_item("levels", scheme.total_levels())?;
        d.set_item(
            "mean_terminal_count",
            outcomes.iter().map(|o| o.terminal_count as f64).sum::<f64>() / m as f64,
        )?;
        Ok(d)
    }

    /// Crude Monte Carlo estimate.
    #[pyo3(signature = (n, m, seed, target=None, x=None))]
    fn naive_mc<'py>(
        &self,
        py: Python<'py>,
        n: u32,
        m: usize,
        seed: u64,
        target: Option<Vec<u8>>,
        x: Option<Vec<u32>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let v = self.target_or_default(target);
        let x0 = self.state_or_origin(x);
        let vn = &self.inner;
        let stats = py.detach(|| experiments::naive_mc(vn, n, &v, &x0, m, seed)).map_err(to_py)?;
        stats_dict(py, &stats)
    }

    /// Scaling study; returns the CSV report.
    #[pyo3(signature = (n_list, m, seed, target=None, x=None, r=2))]
    fn scaling_csv(
        &self,
        py: Python<'_>,
        n_list: Vec<u32>,
        m: usize,
        seed: u64,
        target: Option<Vec<u8>>,
        x: Option<Vec<u32>>,
        r: u32,
    ) -> PyResult<String> {
        let t = self.inner.target_params(&self.target_or_default(target)).map_err(to_py)?;
        let x0 = self.state_or_origin(x);
        let vn = &self.inner;
        let report = py
            .detach(|| experiments::scaling_study(vn, &t, &x0, &n_list, r, m, seed, &ExactConfig::default()))
            .map_err(to_py)?;
        Ok(report.to_csv())
    }

    fn __repr__(&self) -> String {
        format!("Network(d={}, rho={:?}, beta={})", self.inner.dim(), self.inner.rho(), self.inner.beta())
    }
}

/// `(slope, intercept, r_squared)` of log(value) against log(n).
#[pyfunction]
fn fit_exponent(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = experiments::fit_exponent(&points).map_err(to_py)?;
    Ok((f.slope, f.intercept, f.r_squared))
}

#[pyfunction]
fn replication_plan(cv2: f64, epsilon: f64, delta: f64) -> PyResult<u64> {
    experiments::replication_plan(cv2, epsilon, delta).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "overflowlab")]
fn overflowlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(fit_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(replication_plan, m)?)?;
    Ok(())
}
