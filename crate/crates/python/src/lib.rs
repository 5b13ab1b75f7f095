//! Python bindings for `coxq-core`.
//!
//! Structured results come back as plain dicts and lists.

use coxq_core as core;
use coxq_core::{EnvSpec, QueueParams, ScalingRegime, SimConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(coxq, CoxqError, PyValueError);

fn err(e: core::CoxqError) -> PyErr {
    CoxqError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Law of the slot rate.
#[pyclass(name = "Env", module = "coxq", frozen)]
pub struct PyEnv(EnvSpec);

#[pymethods]
impl PyEnv {
    #[staticmethod]
    fn deterministic(lam: f64) -> PyResult<Self> {
        EnvSpec::deterministic(lam).map(Self).map_err(err)
    }

    #[staticmethod]
    fn gamma(shape: f64, scale: f64) -> PyResult<Self> {
        EnvSpec::gamma(shape, scale).map(Self).map_err(err)
    }

    #[staticmethod]
    fn exponential(rate: f64) -> PyResult<Self> {
        EnvSpec::exponential(rate).map(Self).map_err(err)
    }

    #[staticmethod]
    fn discrete(values: Vec<f64>, probs: Vec<f64>) -> PyResult<Self> {
        EnvSpec::discrete_finite(values, probs).map(Self).map_err(err)
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.0.mean()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.0.variance()
    }

    fn log_mgf(&self, theta: f64) -> PyResult<f64> {
        self.0.log_mgf(theta).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Env({:?})", self.0.family())
    }
}

#[pyfunction]
fn stationary_mean(env: &PyEnv, mu: f64) -> PyResult<f64> {
    core::stationary_mean(&env.0, mu).map_err(err)
}

#[pyfunction]
fn stationary_variance(env: &PyEnv, mu: f64, delta: f64) -> PyResult<f64> {
    core::stationary_variance(&env.0, mu, delta).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (env, mu, delta, z, max_terms = 10_000_000))]
fn stationary_pgf(env: &PyEnv, mu: f64, delta: f64, z: f64, max_terms: usize) -> PyResult<f64> {
    core::stationary_pgf(&env.0, mu, delta, z, max_terms)
        .map(|p| p.value)
        .map_err(err)
}

/// (exact, asymptotic) variance of the N-scaled stationary queue.
#[pyfunction]
fn scaled_variance(env: &PyEnv, mu: f64, n: u64, alpha: f64, delta: f64) -> PyResult<(f64, f64)> {
    let scaling = ScalingRegime::new(n, alpha, delta).map_err(err)?;
    let v = core::scaled_variance(&env.0, mu, &scaling).map_err(err)?;
    Ok((v.exact, v.asymptotic))
}

#[pyfunction]
fn clt_sigma2(env: &PyEnv, mu: f64, delta: f64, alpha: f64) -> PyResult<f64> {
    core::clt_sigma2(&env.0, mu, delta, alpha).map_err(err)
}

#[pyfunction]
fn fluid_limit(rho0: f64, env: &PyEnv, mu: f64, t: f64) -> PyResult<f64> {
    core::fluid_limit(rho0, &env.0, mu, t).map_err(err)
}

#[pyfunction]
fn fclt_covariance(
    env: &PyEnv,
    mu: Vec<f64>,
    delta: f64,
    alpha: f64,
    rho0: Vec<f64>,
    t: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let queues = QueueParams::new(mu).map_err(err)?;
    core::fclt_covariance(&env.0, &queues, delta, alpha, &rho0, t)
        .map(|c| c.matrix)
        .map_err(err)
}

/// (correlation, c_ik) for two queues sharing the arrival stream.
#[pyfunction]
fn stationary_correlation(env: &PyEnv, mu_i: f64, mu_k: f64, delta: f64, alpha: f64) -> PyResult<(f64, f64)> {
    let c = core::stationary_correlation(&env.0, mu_i, mu_k, delta, alpha).map_err(err)?;
    Ok((c.corr, c.c_const))
}

/// Simulates the N-scaled system and returns the counts, shaped
/// replication × grid time × queue, together with their sample moments.
///
/// With `stationary` the system first runs from empty for a warm-up long
/// enough to forget the empty start.
#[pyfunction]
#[pyo3(signature = (env, mu, n, alpha, delta, grid, replications, seed, stationary = false))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    env: &PyEnv,
    mu: Vec<f64>,
    n: u64,
    alpha: f64,
    delta: f64,
    grid: Vec<f64>,
    replications: usize,
    seed: u64,
    stationary: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let queues = QueueParams::new(mu).map_err(err)?;
    let scaling = ScalingRegime::new(n, alpha, delta).map_err(err)?;
    let horizon = grid.last().copied().unwrap_or(0.0).max(scaling.slot_length());
    let mut config = SimConfig::new(env.0.clone(), queues, scaling, horizon, grid, seed, replications);
    if stationary {
        config.warmup = core::stationary_warmup(&config.queues, &config.scaling);
    }
    let traj = py.detach(|| core::simulate(&config)).map_err(err)?;
    let counts: Vec<Vec<&[u64]>> = (0..traj.replications())
        .map(|r| (0..traj.grid().len()).map(|k| traj.state(r, k)).collect())
        .collect();
    let moments = core::estimate_moments(&traj).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({ "grid": traj.grid(), "counts": counts, "moments": moments }),
    )
}

fn multi_query(
    env: &PyEnv,
    mu: Vec<f64>,
    delta: f64,
    alpha: f64,
    t: f64,
    a: Vec<f64>,
) -> PyResult<core::MultiRateQuery> {
    Ok(core::MultiRateQuery {
        env: env.0.clone(),
        queues: QueueParams::new(mu).map_err(err)?,
        delta,
        alpha,
        t,
        a,
    })
}

/// Large-deviations rate of the tail event at time t. Scalar `mu` and `a`
/// give a single queue, equal-length lists a joint event over several.
#[pyfunction]
fn rate<'py>(
    py: Python<'py>,
    env: &PyEnv,
    mu: Bound<'py, PyAny>,
    delta: f64,
    alpha: f64,
    t: f64,
    a: Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let result = match (mu.extract::<f64>(), a.extract::<f64>()) {
        (Ok(mu), Ok(a)) => {
            let q = core::RateQuery {
                env: env.0.clone(),
                mu,
                delta,
                alpha,
                t,
                a,
            };
            py.detach(|| core::rate(&q))
        }
        _ => {
            let q = multi_query(env, mu.extract()?, delta, alpha, t, a.extract()?)?;
            py.detach(|| core::rate_multivariate(&q))
        }
    }
    .map_err(err)?;
    to_py(py, &result)
}

/// Importance-sampling estimate of P(Q^N(t)/N ≥ a) for a single queue
/// started empty.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn queue_tail<'py>(
    py: Python<'py>,
    env: &PyEnv,
    mu: f64,
    delta: f64,
    alpha: f64,
    t: f64,
    a: f64,
    n: u64,
    replications: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let q = core::RateQuery {
        env: env.0.clone(),
        mu,
        delta,
        alpha,
        t,
        a,
    };
    let scaling = ScalingRegime::new(n, alpha, delta).map_err(err)?;
    let (estimate, tilt) = py
        .detach(|| core::is_estimate_queue_tail(&q, &scaling, replications, seed))
        .map_err(err)?;
    to_py(py, &serde_json::json!({ "estimate": estimate, "tilt": tilt }))
}

#[pymodule]
fn coxq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CoxqError", m.py().get_type::<CoxqError>())?;
    m.add_class::<PyEnv>()?;
    m.add_function(wrap_pyfunction!(stationary_mean, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_variance, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_pgf, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_variance, m)?)?;
    m.add_function(wrap_pyfunction!(clt_sigma2, m)?)?;
    m.add_function(wrap_pyfunction!(fluid_limit, m)?)?;
    m.add_function(wrap_pyfunction!(fclt_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(rate, m)?)?;
    m.add_function(wrap_pyfunction!(queue_tail, m)?)?;
    Ok(())
}
