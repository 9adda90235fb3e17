//! Python module `regret_ldp`: kernels, local rates, escape actions and
//! the experiment runner.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use regret_ldp::experiment::{run_experiment as run_pipeline, ExperimentConfig};
use regret_ldp::fixtures;
use regret_ldp::fluid::mean_drift;
use regret_ldp::markov::{self as mk, StochasticKernel};
use regret_ldp::rare::{minimize_escape_action, EscapeOptions, EscapeRegion};
use regret_ldp::rate::{local_rate_dual, local_rate_primal, path_action, tilted_hamiltonian, PathSpec};
use regret_ldp::sa::{simulate_algorithm, GeneralSA};

fn py_err(e: regret_ldp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A recursion `X_{n+1} = X_n + ε U(X_n, Φ_n, Ψ_n)` with its noise model.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    sa: GeneralSA,
}

#[pymethods]
impl PyModel {
    /// Scalar instance with state-dependent noise.
    #[staticmethod]
    fn scalar(epsilon: f64, x0: f64) -> PyResult<Self> {
        Ok(Self { sa: fixtures::scalar_sa(epsilon, x0).map_err(py_err)? })
    }

    /// Agent 0 of the 2-agent coordination game, embedded in `R^8`.
    #[staticmethod]
    fn two_agent(epsilon: f64) -> PyResult<Self> {
        Ok(Self { sa: fixtures::two_agent_sa(epsilon).map_err(py_err)? })
    }

    /// Model section of an experiment config file.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let loaded = ExperimentConfig::load(&path).map_err(py_err)?;
        let sa = loaded.config.build_model(&loaded.base).map_err(py_err)?;
        Ok(Self { sa })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.sa.dim()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.sa.epsilon
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.sa.x0.clone()
    }

    fn mean_drift(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        mean_drift(&self.sa, &x).map_err(py_err)
    }

    fn hamiltonian(&self, x: Vec<f64>, alpha: Vec<f64>) -> PyResult<f64> {
        tilted_hamiltonian(&self.sa, &x, &alpha).map_err(py_err)
    }

    /// `(L(x, β), α*)`; `α*` is `None` when the rate is infinite.
    fn local_rate(&self, x: Vec<f64>, beta: Vec<f64>) -> PyResult<(f64, Option<Vec<f64>>)> {
        let q = local_rate_dual(&self.sa, &x, &beta).map_err(py_err)?;
        Ok((q.value, q.alpha))
    }

    /// `L(x, β)` from the relative-entropy program.
    fn local_rate_primal(&self, x: Vec<f64>, beta: Vec<f64>) -> PyResult<f64> {
        Ok(local_rate_primal(&self.sa, &x, &beta).map_err(py_err)?.value)
    }

    fn path_action(&self, horizon: f64, knots: Vec<Vec<f64>>) -> PyResult<f64> {
        let path = PathSpec::new(horizon, knots).map_err(py_err)?;
        Ok(path_action(&self.sa, &path).map_err(py_err)?.value)
    }

    /// Minimal action to leave the interval `center ± half_width` by
    /// `horizon`, as `(action, hitting_time, knots)`. Scalar models only.
    #[pyo3(signature = (center, half_width, horizon, segments = 20))]
    fn escape_action(
        &self,
        py: Python<'_>,
        center: f64,
        half_width: f64,
        horizon: f64,
        segments: usize,
    ) -> PyResult<(f64, f64, Vec<Vec<f64>>)> {
        let region = EscapeRegion::interval(center, half_width).map_err(py_err)?;
        let sa = &self.sa;
        let best = py
            .detach(|| minimize_escape_action(sa, &region, &[center], horizon, segments, &EscapeOptions::default()))
            .map_err(py_err)?;
        Ok((best.action, best.hitting_time, best.path.knots))
    }

    /// Iterates `X_0 ..= X_N` of one run.
    fn simulate(&self, horizon: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(simulate_algorithm(&self.sa, horizon, seed).map_err(py_err)?.x)
    }
}

#[pyfunction]
fn invariant_measure(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let k = StochasticKernel::from_rows(rows).map_err(py_err)?;
    Ok(mk::invariant_measure(&k).map_err(py_err)?.into_inner())
}

#[pyfunction]
fn relative_entropy(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    mk::relative_entropy(&p, &q).map_err(py_err)
}

/// Runs every enabled stage of a config and returns the manifest's file list.
#[pyfunction]
#[pyo3(signature = (config, output_dir = None))]
fn run_experiment(py: Python<'_>, config: PathBuf, output_dir: Option<PathBuf>) -> PyResult<Vec<String>> {
    let loaded = ExperimentConfig::load(&config).map_err(py_err)?;
    let out = output_dir.unwrap_or_else(|| loaded.base.join(&loaded.config.output_dir));
    let report = py.detach(|| run_pipeline(&loaded, Path::new(&out), None)).map_err(py_err)?;
    Ok(report.manifest.files.into_iter().map(|f| f.path).collect())
}

#[pymodule]
#[pyo3(name = "regret_ldp")]
fn regret_ldp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(invariant_measure, m)?)?;
    m.add_function(wrap_pyfunction!(relative_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
