//! Python bindings for the simulator.
// pyo3 0.22 macros trip this lint on every PyResult function
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sonni::adversary::{self, AttackStrategy};
use sonni::analysis::{self, Formula};
use sonni::protocol::run::{run_protocol, RunOptions, TransportKind};
use sonni::protocol::Outcome;
use sonni::scenario::Mode;
use sonni::workload::SlotwiseModel;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn formula(name: &str) -> PyResult<Formula> {
    name.parse().map_err(value_err)
}

#[pyclass(name = "Scenario", module = "sonni_py")]
#[derive(Clone)]
struct PyScenario {
    inner: sonni::scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (slots=16, d=8, m=2, degree=2, quant_step=1e-3, noise=1e-9, mode="sonni", strategy="honest", k=1, seed=1, round=0, input=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        slots: usize,
        d: usize,
        m: usize,
        degree: usize,
        quant_step: f64,
        noise: f64,
        mode: &str,
        strategy: &str,
        k: usize,
        seed: u64,
        round: u64,
        input: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let mode = match mode {
            "sonni" => Mode::Sonni,
            "legacy" => Mode::Legacy,
            other => return Err(value_err(format!("unknown mode {other:?}"))),
        };
        let inner = sonni::scenario::Scenario {
            slots,
            d,
            m,
            degree,
            quant_step,
            encrypt_noise: noise,
            op_noise: noise,
            mode,
            strategy: AttackStrategy::parse(strategy, k).map_err(value_err)?,
            master_seed: seed,
            round,
            input,
            ..Default::default()
        };
        inner.validate().map_err(value_err)?;
        Ok(PyScenario { inner })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    /// The client input this scenario uses.
    fn client_input(&self) -> Vec<f64> {
        self.inner.client_input()
    }

    /// Provider model coefficients, one list per degree.
    fn model(&self) -> Vec<Vec<f64>> {
        self.inner.provider_model().coeffs().to_vec()
    }

    #[pyo3(signature = (transport="in-process"))]
    fn run(&self, transport: &str) -> PyResult<RunResult> {
        let opts = RunOptions {
            transport: transport.parse::<TransportKind>().map_err(value_err)?,
            ..Default::default()
        };
        let report = run_protocol(&self.inner, &opts).map_err(value_err)?;
        let assessed = adversary::assess(&self.inner, &report);
        let (status, value, aborted_by, reason) = match &report.outcome {
            Outcome::Delivered { value } => ("delivered", Some(value.clone()), None, None),
            Outcome::Aborted { by, reason } => {
                ("aborted", None, Some(by.to_string()), Some(reason.clone()))
            }
            Outcome::TransportFailure { reason } => {
                ("transport-failure", None, None, Some(reason.clone()))
            }
        };
        Ok(RunResult {
            status: status.into(),
            value,
            aborted_by,
            reason,
            transcript: report.transcript.canonical_lines(),
            leaked: assessed.parameters_leaked,
            detected: assessed.detected,
        })
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "Scenario(slots={}, d={}, m={}, degree={}, strategy={:?}, seed={})",
            s.slots,
            s.d,
            s.m,
            s.degree,
            s.strategy.name(),
            s.master_seed
        )
    }
}

#[pyclass(module = "sonni_py", get_all)]
struct RunResult {
    status: String,
    value: Option<Vec<f64>>,
    aborted_by: Option<String>,
    reason: Option<String>,
    /// Canonical transcript lines, timestamps removed.
    transcript: Vec<String>,
    leaked: usize,
    detected: bool,
}

#[pymethods]
impl RunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(status={:?}, leaked={}, detected={})",
            self.status, self.leaked, self.detected
        )
    }
}

#[pyclass(name = "ShufflePlan", module = "sonni_py")]
struct PyShufflePlan {
    inner: sonni::shuffle::ShufflePlan,
}

#[pymethods]
impl PyShufflePlan {
    #[getter]
    fn chosen_indices(&self) -> Vec<usize> {
        self.inner.chosen_indices().to_vec()
    }

    #[getter]
    fn forward(&self) -> Vec<usize> {
        self.inner.permutation().forward().to_vec()
    }

    #[getter]
    fn inverse(&self) -> Vec<usize> {
        self.inner.permutation().inverse().to_vec()
    }

    /// Moves `values[i]` to position `forward[i]`.
    fn apply(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        if values.len() != self.inner.permutation().len() {
            return Err(value_err(format!(
                "expected {} values, got {}",
                self.inner.permutation().len(),
                values.len()
            )));
        }
        Ok(self.inner.permutation().apply(&values))
    }
}

#[pyfunction]
fn plan_shuffle(d: usize, m: usize, seed: u64) -> PyResult<PyShufflePlan> {
    let inner = sonni::shuffle::plan_shuffle(d, m, seed).map_err(value_err)?;
    Ok(PyShufflePlan { inner })
}

#[pyfunction]
fn p_per_round(d: usize, m: usize, k: usize) -> PyResult<f64> {
    Ok(analysis::p_per_round(d, m, k).map_err(value_err)?.p)
}

#[pyfunction]
fn p_one_shot(d: usize, m: usize, k: usize) -> PyResult<f64> {
    Ok(analysis::p_one_shot(d, m, k).map_err(value_err)?.p)
}

/// Base-10 logarithm of the success probability; finite where `p` underflows.
#[pyfunction]
fn log10_probability(formula_name: &str, d: usize, m: usize, k: usize) -> PyResult<f64> {
    let r = analysis::probability(formula(formula_name)?, d, m, k).map_err(value_err)?;
    Ok(r.log10_p)
}

#[pyfunction]
#[pyo3(signature = (formula_name, d, m, k, trials=100_000, seed=1))]
fn monte_carlo<'py>(
    py: Python<'py>,
    formula_name: &str,
    d: usize,
    m: usize,
    k: usize,
    trials: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let f = formula(formula_name)?;
    let est = py
        .allow_threads(|| analysis::monte_carlo(f, d, m, k, trials, seed))
        .map_err(value_err)?;
    let exact = analysis::probability(f, d, m, k).map_err(value_err)?.p;
    let out = PyDict::new_bound(py);
    out.set_item("trials", est.trials)?;
    out.set_item("successes", est.successes)?;
    out.set_item("p_hat", est.p_hat)?;
    out.set_item("stderr", est.stderr)?;
    out.set_item("exact", exact)?;
    out.set_item("z", est.z_score(exact))?;
    Ok(out)
}

#[pyfunction]
fn table1(py: Python<'_>) -> PyResult<Vec<Bound<'_, PyDict>>> {
    analysis::reproduce_table1()
        .into_iter()
        .map(|r| {
            let row = PyDict::new_bound(py);
            row.set_item("m", r.m)?;
            row.set_item("k", r.k)?;
            row.set_item("d", r.d)?;
            row.set_item("one_shot", r.one_shot.p)?;
            row.set_item("per_round", r.per_round.p)?;
            row.set_item("printed", r.printed)?;
            row.set_item("log10_gap", r.log10_gap)?;
            row.set_item("same_order", r.same_order_of_magnitude())?;
            Ok(row)
        })
        .collect()
}

#[pyfunction]
fn paper_claims(py: Python<'_>) -> PyResult<Vec<Bound<'_, PyDict>>> {
    analysis::paper_claims()
        .into_iter()
        .map(|c| {
            let row = PyDict::new_bound(py);
            row.set_item("name", c.name)?;
            row.set_item("computed", c.computed)?;
            row.set_item("printed", c.printed)?;
            row.set_item("relative_error", c.relative_error)?;
            row.set_item("pass", c.pass)?;
            Ok(row)
        })
        .collect()
}

/// Evaluates a slotwise polynomial: `coeffs[e][i]` multiplies `x[i]**e`.
#[pyfunction]
fn eval_plain(coeffs: Vec<Vec<f64>>, x: Vec<f64>) -> PyResult<Vec<f64>> {
    let model = SlotwiseModel::new(coeffs).map_err(value_err)?;
    model.eval_plain(&x).map_err(value_err)
}

#[pymodule]
fn sonni_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<RunResult>()?;
    m.add_class::<PyShufflePlan>()?;
    m.add_function(wrap_pyfunction!(plan_shuffle, m)?)?;
    m.add_function(wrap_pyfunction!(p_per_round, m)?)?;
    m.add_function(wrap_pyfunction!(p_one_shot, m)?)?;
    m.add_function(wrap_pyfunction!(log10_probability, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(table1, m)?)?;
    m.add_function(wrap_pyfunction!(paper_claims, m)?)?;
    m.add_function(wrap_pyfunction!(eval_plain, m)?)?;
    Ok(())
}
