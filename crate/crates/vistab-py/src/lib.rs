//! Python bindings for the core toolkit: diagonal-Gaussian divergences,
//! PAC-Bayes certificate calculators, the two reference constructions,
//! stability-bound assembly from measured traces, and the config-driven
//! experiment pipeline.
//!
//! Every function mirrors its Rust counterpart and raises `ValueError`
//! where the library reports an error.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vistab::counterexamples as cx;
use vistab::experiment::config::ExperimentConfig;
use vistab::experiment::pipeline::run_experiment;
use vistab::gauss;
use vistab::pac_bayes as pb;
use vistab::stability as st;

fn to_py_err(e: vistab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Diagonal Gaussian with closed-form divergences to other diagonal
/// Gaussians.
#[pyclass(name = "DiagGaussian")]
struct PyDiagGaussian {
    inner: gauss::DiagGaussian,
}

#[pymethods]
impl PyDiagGaussian {
    #[new]
    fn new(mean: Vec<f64>, std: Vec<f64>) -> PyResult<Self> {
        Ok(PyDiagGaussian {
            inner: gauss::DiagGaussian::new(mean, std).map_err(to_py_err)?,
        })
    }

    /// Same mean and standard deviation in every coordinate.
    #[staticmethod]
    fn isotropic(dim: usize, mean: f64, std: f64) -> PyResult<Self> {
        Ok(PyDiagGaussian {
            inner: gauss::DiagGaussian::isotropic(dim, mean, std).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn std(&self) -> Vec<f64> {
        self.inner.std().to_vec()
    }

    /// KL divergence from `self` to `other`.
    fn kl_to(&self, other: &PyDiagGaussian) -> PyResult<f64> {
        gauss::kl_diag_gauss(&self.inner, &other.inner).map_err(to_py_err)
    }

    /// 2-Wasserstein distance between `self` and `other`.
    fn w2_to(&self, other: &PyDiagGaussian) -> PyResult<f64> {
        gauss::w2_diag_gauss(&self.inner, &other.inner).map_err(to_py_err)
    }

    /// Mean/variance-difference upper bound on `kl_to(other)`, valid when
    /// both standard deviations are at least `sigma0`.
    fn kl_upper_bound_to(&self, other: &PyDiagGaussian, sigma0: f64) -> PyResult<f64> {
        gauss::kl_upper_bound(&self.inner, &other.inner, sigma0).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("DiagGaussian(dim={})", self.inner.dim())
    }
}

/// Total-variation bound `sqrt(kl / 2)` from a KL divergence.
#[pyfunction]
fn tv_pinsker(kl: f64) -> PyResult<f64> {
    gauss::tv_pinsker(kl).map_err(to_py_err)
}

/// Trade-off parameter minimizing the linear-form certificate.
#[pyfunction]
#[pyo3(signature = (kl, n, c_loss=1.0, delta=0.025))]
fn germain_optimal_lambda(kl: f64, n: usize, c_loss: f64, delta: f64) -> PyResult<f64> {
    let cfg = pb::PacBayesConfig { c_loss, delta };
    pb::germain_optimal_lambda(kl, n, &cfg).map_err(to_py_err)
}

/// Linear-form certificate; `lam=None` uses the optimized trade-off.
#[pyfunction]
#[pyo3(signature = (kl, n, c_loss=1.0, delta=0.025, lam=None))]
fn germain_bound(kl: f64, n: usize, c_loss: f64, delta: f64, lam: Option<f64>) -> PyResult<f64> {
    let cfg = pb::PacBayesConfig { c_loss, delta };
    pb::germain_bound(kl, n, &cfg, lam).map_err(to_py_err)
}

/// Square-root-form certificate.
#[pyfunction]
#[pyo3(signature = (kl, n, c_loss=1.0, delta=0.025))]
fn mcallester_bound(kl: f64, n: usize, c_loss: f64, delta: f64) -> PyResult<f64> {
    let cfg = pb::PacBayesConfig { c_loss, delta };
    pb::mcallester_bound(kl, n, &cfg).map_err(to_py_err)
}

/// Best certificate over the geometric grid of prior variances centered at
/// `center`, returned as a dict with the winning index, variance, KL, and
/// value.
#[pyfunction]
#[pyo3(signature = (q, center, n, b=100.0, c=0.1, j_max=1000, c_loss=1.0, delta=0.025))]
#[allow(clippy::too_many_arguments)]
fn union_bound<'py>(
    py: Python<'py>,
    q: &PyDiagGaussian,
    center: Vec<f64>,
    n: usize,
    b: f64,
    c: f64,
    j_max: usize,
    c_loss: f64,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = pb::UnionGrid::new(b, c).map_err(to_py_err)?;
    let cfg = pb::PacBayesConfig { c_loss, delta };
    let best = pb::union_bound(&q.inner, &center, &grid, &cfg, n, j_max).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("value", best.value)?;
    out.set_item("j", best.j)?;
    out.set_item("lambda", best.lambda)?;
    out.set_item("kl", best.kl)?;
    Ok(out)
}

/// Two-step Bernoulli chain whose joint KL strictly exceeds the sum of the
/// first-step marginal KL and the parameter-conditioned second-step KL.
#[pyfunction]
#[pyo3(signature = (theta1=0.4, theta1_bar=0.6, update_delta=-0.2))]
fn bernoulli_chain<'py>(
    py: Python<'py>,
    theta1: f64,
    theta1_bar: f64,
    update_delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let setup = cx::BernoulliChainSetup {
        theta1,
        theta1_bar,
        update_delta,
    };
    let kls = cx::bernoulli_chain_kls(&setup).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("joint", kls.joint)?;
    out.set_item("conditional_sum", kls.conditional_sum)?;
    out.set_item("second_step", kls.second_step)?;
    out.set_item("gap", kls.gap)?;
    Ok(out)
}

/// Fixed-variance logistic run on paired example types with identical
/// gradients: the stability bound is exactly zero while the KL to the
/// initial posterior grows without limit.
#[pyfunction]
#[pyo3(signature = (sigma=0.05, learning_rate=0.1, steps=1000, n_data=20, mc_samples=4, seed=7))]
fn logistic_extreme<'py>(
    py: Python<'py>,
    sigma: f64,
    learning_rate: f64,
    steps: usize,
    n_data: usize,
    mc_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let setup = cx::LogisticExtremeSetup {
        sigma,
        learning_rate,
        steps,
        n_data,
        mc_samples,
        seed,
    };
    let run = cx::logistic_extreme_run(&setup).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("stability_bound", run.stability_bound)?;
    out.set_item("max_grad_delta", run.max_grad_delta)?;
    out.set_item("final_mean", run.final_mean())?;
    out.set_item("final_kl_to_init", run.final_pac_kl())?;
    out.set_item("pac_kls", &run.pac_kls)?;
    Ok(out)
}

/// Closed-form drift bound for the slow step-size schedule under a
/// contraction margin and a gradient-norm ceiling.
#[pyfunction]
fn log_t_expansion_bound(
    c: f64,
    grad_lipschitz: f64,
    grad_bound: f64,
    t_steps: usize,
    n: usize,
) -> PyResult<f64> {
    st::log_t_expansion_bound(c, grad_lipschitz, grad_bound, t_steps, n).map_err(to_py_err)
}

/// Conservative per-step expansion profile from twin-run ratio series:
/// per-step mean plus four population standard deviations.
#[pyfunction]
fn aggregate_expansion(series: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let series: Vec<st::ExpansionSeries> = series
        .into_iter()
        .map(|ratios| st::ExpansionSeries { ratios })
        .collect();
    Ok(st::aggregate_expansion(&series).map_err(to_py_err)?.eta)
}

/// Assembles the parameter-drift bounds and both route bounds from
/// measured per-step gradient deltas, the expansion profile, and the
/// step-size sequence.
#[pyfunction]
#[pyo3(signature = (deltas_m_l2, deltas_s_l1, deltas_s_l2, eta, alphas, n, c_loss=1.0, sigma0=0.01, k_lip=None))]
#[allow(clippy::too_many_arguments)]
fn stability_routes<'py>(
    py: Python<'py>,
    deltas_m_l2: Vec<f64>,
    deltas_s_l1: Vec<f64>,
    deltas_s_l2: Vec<f64>,
    eta: Vec<f64>,
    alphas: Vec<f64>,
    n: usize,
    c_loss: f64,
    sigma0: f64,
    k_lip: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let deltas = st::DeltaSeries {
        m_l2: deltas_m_l2,
        s_l1: deltas_s_l1,
        s_l2: deltas_s_l2,
    };
    let diffs = st::param_diff_bound(&st::StabilityBoundInputs {
        deltas: &deltas,
        eta: &eta,
        alphas: &alphas,
        n,
    })
    .map_err(to_py_err)?;
    let kl_route = st::kl_route_bound(&diffs, c_loss, sigma0).map_err(to_py_err)?;
    let (w2_route, w2_k_missing) = st::w2_route_bound(&diffs, k_lip).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("diff_m_l2", diffs.m_l2)?;
    out.set_item("diff_s_l1", diffs.s_l1)?;
    out.set_item("diff_s_l2", diffs.s_l2)?;
    out.set_item("kl_route", kl_route)?;
    out.set_item("w2_route", w2_route)?;
    out.set_item("w2_k_missing", w2_k_missing)?;
    Ok(out)
}

/// Runs the full measurement pipeline for a `key = value` config string
/// and returns one JSON report per condition. Artifacts are not written;
/// use the CLI for trace emission.
#[pyfunction]
fn run_bound_reports(config_text: &str) -> PyResult<Vec<String>> {
    let cfg = ExperimentConfig::parse_str(config_text).map_err(to_py_err)?;
    let artifacts = run_experiment(&cfg).map_err(to_py_err)?;
    artifacts
        .iter()
        .map(|a| a.report.to_json().map_err(to_py_err))
        .collect()
}

#[pymodule]
fn vistab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDiagGaussian>()?;
    m.add_function(wrap_pyfunction!(tv_pinsker, m)?)?;
    m.add_function(wrap_pyfunction!(germain_optimal_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(germain_bound, m)?)?;
    m.add_function(wrap_pyfunction!(mcallester_bound, m)?)?;
    m.add_function(wrap_pyfunction!(union_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bernoulli_chain, m)?)?;
    m.add_function(wrap_pyfunction!(logistic_extreme, m)?)?;
    m.add_function(wrap_pyfunction!(log_t_expansion_bound, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_expansion, m)?)?;
    m.add_function(wrap_pyfunction!(stability_routes, m)?)?;
    m.add_function(wrap_pyfunction!(run_bound_reports, m)?)?;
    Ok(())
}
