//! Python module `transnet`: characteristic and solution networks built from
//! a JSON problem description, plus the experiment runners.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use ::transnet::harness::{self, ExperimentConfig, HarnessError, ProblemConfig, Report, RunOptions};
use ::transnet::transport_core::{
    self as tc, certify_char, certify_solution, lipschitz_certificate, Direction, Kind, Limits, SolutionOptions,
    TransportProblem,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn problem(json: &str) -> PyResult<TransportProblem> {
    let cfg: ProblemConfig = serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.build().map_err(err)
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(err)
}

#[pyclass(module = "transnet")]
struct CharNet {
    net: tc::CharNetwork,
    problem: TransportProblem,
}

#[pymethods]
impl CharNet {
    #[new]
    #[pyo3(signature = (problem_json, eps, direction = "forward", max_params = None))]
    fn new(problem_json: &str, eps: f64, direction: &str, max_params: Option<f64>) -> PyResult<Self> {
        let problem = problem(problem_json)?;
        let direction: Direction = direction.parse().map_err(PyValueError::new_err)?;
        let limits = max_params.map(|max_params| Limits { max_params }).unwrap_or_default();
        let net = tc::build_char_net(&problem, eps, direction, &limits).map_err(err)?;
        Ok(Self { net, problem })
    }

    fn eval(&self, t: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.net.m || y.len() != self.net.dy {
            return Err(PyValueError::new_err(format!("expected |x| = {}, |y| = {}", self.net.m, self.net.dy)));
        }
        Ok(self.net.eval(t, &x, &y))
    }

    #[getter]
    fn size(&self) -> u64 {
        self.net.size()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.net.depth()
    }

    /// Sampled error certificate as JSON.
    #[pyo3(signature = (n = 1000, seed = 0))]
    fn certify(&self, n: usize, seed: u64) -> PyResult<String> {
        to_json(&certify_char(&self.net, &self.problem, n, seed).map_err(err)?)
    }

    #[pyo3(signature = (n = 200, seed = 0))]
    fn lipschitz(&self, n: usize, seed: u64) -> PyResult<String> {
        to_json(&lipschitz_certificate(&self.net, n, seed))
    }
}

#[pyclass(module = "transnet")]
struct SolutionNet {
    net: tc::SolutionNetwork,
    problem: TransportProblem,
}

#[pymethods]
impl SolutionNet {
    #[new]
    #[pyo3(signature = (problem_json, eps, minus_sign = false, max_params = None))]
    fn new(problem_json: &str, eps: f64, minus_sign: bool, max_params: Option<f64>) -> PyResult<Self> {
        let problem = problem(problem_json)?;
        let limits = max_params.map(|max_params| Limits { max_params }).unwrap_or_default();
        let net = tc::build_solution_net(&problem, eps, &SolutionOptions { minus_sign, limits }).map_err(err)?;
        Ok(Self { net, problem })
    }

    fn eval(&self, t: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.net.m || y.len() != self.net.dy {
            return Err(PyValueError::new_err(format!("expected |x| = {}, |y| = {}", self.net.m, self.net.dy)));
        }
        Ok(self.net.eval(t, &x, &y))
    }

    #[getter]
    fn size(&self) -> u64 {
        self.net.size()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.net.depth()
    }

    #[pyo3(signature = (n = 200, seed = 0))]
    fn certify(&self, n: usize, seed: u64) -> PyResult<String> {
        to_json(&certify_solution(&self.net, &self.problem, n, seed).map_err(err)?)
    }
}

/// Runs a harness command and writes its artifacts to `out`; returns the
/// report as JSON.
#[pyfunction]
#[pyo3(signature = (command, config = None, out = None, seed = None, kind = None, direction = None))]
fn run(
    command: &str,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    kind: Option<&str>,
    direction: Option<&str>,
) -> PyResult<String> {
    let opts = RunOptions {
        seed,
        kind: kind.map(str::parse::<Kind>).transpose().map_err(PyValueError::new_err)?,
        direction: direction.map(str::parse::<Direction>).transpose().map_err(PyValueError::new_err)?,
    };
    let load = || -> Result<ExperimentConfig, HarnessError> {
        let path = config.as_ref().ok_or_else(|| HarnessError::Config("config is required".into()))?;
        ExperimentConfig::from_path(path)
    };
    let report: Report = match command {
        "convergence" => harness::run_convergence(&load().map_err(err)?, &opts),
        "dy-scaling" => harness::run_dy_scaling(&load().map_err(err)?, &opts),
        "lipschitz" => harness::run_lipschitz(&load().map_err(err)?, &opts),
        "properties" => harness::run_properties(seed.unwrap_or(0)),
        "calibrate" => harness::run_calibrate(&Default::default(), seed.unwrap_or(0)),
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    }
    .map_err(err)?;
    if let Some(dir) = out {
        report.write(&dir).map_err(err)?;
    }
    to_json(&report)
}

/// `(slope, intercept, residual)` of `log₂ size` against `log₂(1/ε)`.
#[pyfunction]
fn fit_rate(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = harness::fit_rate(&points).map_err(err)?;
    Ok((f.slope, f.intercept, f.residual))
}

#[pymodule]
fn transnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CharNet>()?;
    m.add_class::<SolutionNet>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add("CSV_HEADER", harness::CSV_HEADER)?;
    Ok(())
}
