//! Python bindings: problems, the three optimizers, curvature updates, spec
//! validation, the experiment studies and the rate check.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use resopt::curvature::{HessianApprox, Update, VariationPair};
use resopt::experiments::{self, ExperimentError, ExperimentResult, RateCheckReport};
use resopt::objective::{
    classify_accuracy, generate_svm_data, DiagonalDistribution, LossKind, QuadraticDescriptor,
    QuadraticProblem, StochasticObjective, SvmProblem, TrainingSet,
};
use resopt::optimizer::{
    run_plain_sbfgs_with, run_res_with, run_sgd_with, OptimizerError, ResConfig, RunTrace,
    SgdConfig, StepSchedule, TraceOptions,
};
use resopt::rng::rng_from_seed;
use resopt::spec::{validate_spec as validate_text, Diagnostic, Format, StudyKind};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn experiment_error(e: ExperimentError) -> PyErr {
    match e {
        ExperimentError::InvalidArgument(_) | ExperimentError::Objective(_) => value_error(e),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn diagnostics_error(diags: &[Diagnostic]) -> PyErr {
    let lines: Vec<String> = diags.iter().map(ToString::to_string).collect();
    PyValueError::new_err(lines.join("\n"))
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_distribution(xi: &Bound<'_, PyAny>) -> PyResult<DiagonalDistribution> {
    if let Ok(level) = xi.extract::<u32>() {
        return Ok(DiagonalDistribution::PowersOfTen(level));
    }
    match xi.extract::<String>()?.as_str() {
        "uniform" => Ok(DiagonalDistribution::Uniform),
        other => Err(value_error(format!(
            "xi must be a nonnegative integer or \"uniform\", got {other:?}"
        ))),
    }
}

fn parse_loss(name: &str) -> PyResult<LossKind> {
    name.parse::<LossKind>().map_err(value_error)
}

fn parse_kind(name: Option<&str>) -> PyResult<Option<StudyKind>> {
    name.map(|k| k.parse::<StudyKind>().map_err(value_error)).transpose()
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(value_error("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn check_len(w: &[f64], dim: usize) -> PyResult<DVector<f64>> {
    if w.len() != dim {
        return Err(value_error(format!("expected a vector of length {dim}, got {}", w.len())));
    }
    Ok(DVector::from_column_slice(w))
}

/// Quadratic `f(w, θ) = ½ wᵀ(A + A·diag(θ))w + bᵀw` with diagonal `A`.
#[pyclass(name = "QuadraticProblem", module = "resopt", skip_from_py_object)]
#[derive(Clone)]
struct PyQuadratic {
    inner: QuadraticProblem,
}

#[pymethods]
impl PyQuadratic {
    #[new]
    #[pyo3(signature = (diag, b, theta0 = 0.5))]
    fn new(diag: Vec<f64>, b: Vec<f64>, theta0: f64) -> PyResult<Self> {
        let inner = QuadraticProblem::new(DVector::from_vec(diag), DVector::from_vec(b), theta0)
            .map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Random instance with `b ~ U[0,1]ⁿ`; `xi` is an integer level or "uniform".
    #[staticmethod]
    #[pyo3(signature = (n, xi, theta0 = 0.5, seed = 0))]
    fn generate(n: usize, xi: &Bound<'_, PyAny>, theta0: f64, seed: u64) -> PyResult<Self> {
        let dist = parse_distribution(xi)?;
        let inner =
            QuadraticProblem::generate_seeded(n, dist, theta0, seed).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let d: QuadraticDescriptor = serde_json::from_str(text).map_err(value_error)?;
        let inner = QuadraticProblem::from_descriptor(&d).map_err(value_error)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.descriptor()).map_err(value_error)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn diag(&self) -> Vec<f64> {
        self.inner.diag().as_slice().to_vec()
    }

    #[getter]
    fn b(&self) -> Vec<f64> {
        self.inner.b().as_slice().to_vec()
    }

    #[getter]
    fn theta0(&self) -> f64 {
        self.inner.theta0()
    }

    fn condition_number(&self) -> f64 {
        self.inner.condition_number()
    }

    fn optimum(&self) -> Vec<f64> {
        self.inner.optimum().as_slice().to_vec()
    }

    fn objective(&self, w: Vec<f64>) -> PyResult<f64> {
        let w = check_len(&w, self.inner.dim())?;
        Ok(self.inner.exact_objective(&w).expect("quadratics have a closed form"))
    }

    fn gradient(&self, w: Vec<f64>) -> PyResult<Vec<f64>> {
        let w = check_len(&w, self.inner.dim())?;
        let g = self.inner.exact_gradient(&w).map_err(value_error)?;
        Ok(g.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "QuadraticProblem(dim={}, theta0={}, condition={:.3e})",
            self.inner.dim(),
            self.inner.theta0(),
            self.inner.condition_number()
        )
    }
}

/// Regularized SVM `F(w) = (λ/2)‖w‖² + mean l(y xᵀw)` over a training set.
#[pyclass(name = "SvmProblem", module = "resopt", skip_from_py_object)]
#[derive(Clone)]
struct PySvm {
    inner: SvmProblem,
}

fn training_set(features: Vec<Vec<f64>>, labels: Vec<f64>) -> PyResult<TrainingSet> {
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != dim) {
        return Err(value_error("feature rows must all have the same length"));
    }
    TrainingSet::new(dim, features.concat(), labels).map_err(value_error)
}

#[pymethods]
impl PySvm {
    #[new]
    #[pyo3(signature = (features, labels, lam = 1e-3, loss = "squared_hinge"))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, lam: f64, loss: &str) -> PyResult<Self> {
        let data = training_set(features, labels)?;
        let inner = SvmProblem::new(data, lam, parse_loss(loss)?).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Synthetic two-class set of `size` pairs in dimension `n`.
    #[staticmethod]
    #[pyo3(signature = (n, size, seed = 0, lam = 1e-3, loss = "squared_hinge"))]
    fn generate(n: usize, size: usize, seed: u64, lam: f64, loss: &str) -> PyResult<Self> {
        let data = generate_svm_data(n, size, &mut rng_from_seed(seed)).map_err(value_error)?;
        let inner = SvmProblem::new(data, lam, parse_loss(loss)?).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.data().len()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn loss(&self) -> &'static str {
        self.inner.loss().name()
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.inner.data().labels().to_vec()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        let data = self.inner.data();
        (0..data.len()).map(|i| data.row(i).to_vec()).collect()
    }

    fn objective(&self, w: Vec<f64>) -> PyResult<f64> {
        let w = check_len(&w, self.inner.dim())?;
        Ok(self.inner.exact_objective(&w).expect("the SVM objective is a finite sum"))
    }

    /// Fraction of this problem's pairs classified correctly by `sign(wᵀx)`.
    fn accuracy(&self, w: Vec<f64>) -> PyResult<f64> {
        let w = check_len(&w, self.inner.dim())?;
        classify_accuracy(&w, self.inner.data()).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!(
            "SvmProblem(dim={}, size={}, lam={}, loss={})",
            self.inner.dim(),
            self.inner.data().len(),
            self.inner.lambda(),
            self.inner.loss().name()
        )
    }
}

/// Per-iteration record of one optimizer run.
#[pyclass(name = "Trace", module = "resopt", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyTrace {
    method: String,
    status: String,
    batch_size: usize,
    iterations: usize,
    skipped_updates: usize,
    final_iterate: Vec<f64>,
    t: Vec<usize>,
    functions_processed: Vec<usize>,
    eps: Vec<f64>,
    rel_dist: Vec<Option<f64>>,
    objective: Vec<Option<f64>>,
    error: Option<String>,
}

impl PyTrace {
    fn from_trace(trace: &RunTrace, error: Option<String>) -> Self {
        let r = &trace.records;
        Self {
            method: trace.method.name().to_string(),
            status: trace.status.name().to_string(),
            batch_size: trace.batch_size,
            iterations: trace.iterations(),
            skipped_updates: trace.skipped_updates,
            final_iterate: trace.final_iterate.as_slice().to_vec(),
            t: r.iter().map(|x| x.t).collect(),
            functions_processed: r.iter().map(|x| x.functions_processed).collect(),
            eps: r.iter().map(|x| x.eps_t).collect(),
            rel_dist: r.iter().map(|x| x.rel_dist).collect(),
            objective: r.iter().map(|x| x.objective).collect(),
            error,
        }
    }
}

#[pymethods]
impl PyTrace {
    fn __repr__(&self) -> String {
        format!(
            "Trace(method={}, status={}, iterations={}, skipped_updates={})",
            self.method, self.status, self.iterations, self.skipped_updates
        )
    }
}

enum Problem {
    Quadratic(QuadraticProblem),
    Svm(SvmProblem),
}

fn extract_problem(obj: &Bound<'_, PyAny>) -> PyResult<Problem> {
    if let Ok(q) = obj.cast::<PyQuadratic>() {
        return Ok(Problem::Quadratic(q.borrow().inner.clone()));
    }
    if let Ok(s) = obj.cast::<PySvm>() {
        return Ok(Problem::Svm(s.borrow().inner.clone()));
    }
    Err(value_error("problem must be a QuadraticProblem or an SvmProblem"))
}

#[derive(Clone, Copy)]
enum Which {
    Res,
    Plain,
    Sgd,
}

struct RunArgs {
    which: Which,
    batch_size: usize,
    delta: f64,
    gamma: f64,
    schedule: StepSchedule,
    b0_scale: Option<f64>,
    iters: usize,
    seed: u64,
    w0: Option<Vec<f64>>,
    objective_every: usize,
}

fn run_on<P: StochasticObjective>(p: &P, a: &RunArgs) -> PyResult<PyTrace> {
    let w0 = match &a.w0 {
        Some(w) => check_len(w, p.dim())?,
        None => DVector::zeros(p.dim()),
    };
    let opts = TraceOptions { objective_every: a.objective_every, keep_iterates: false };
    let result = match a.which {
        Which::Sgd => {
            let cfg = SgdConfig {
                batch_size: a.batch_size,
                schedule: a.schedule,
                max_iters: a.iters,
                seed: a.seed,
            };
            run_sgd_with(p, &cfg, w0, opts, |_| false)
        }
        Which::Res | Which::Plain => {
            let mut cfg = ResConfig::new(a.seed);
            cfg.batch_size = a.batch_size;
            cfg.delta = a.delta;
            cfg.gamma = a.gamma;
            cfg.schedule = a.schedule;
            cfg.b0_scale = a.b0_scale.unwrap_or(1.0 + a.delta);
            cfg.max_iters = a.iters;
            if let Which::Plain = a.which {
                cfg = cfg.plain();
                run_plain_sbfgs_with(p, &cfg, w0, opts, |_| false)
            } else {
                run_res_with(p, &cfg, w0, opts, |_| false)
            }
        }
    };
    match result {
        Ok(trace) => Ok(PyTrace::from_trace(&trace, None)),
        Err(e @ (OptimizerError::InvalidConfig(_) | OptimizerError::Objective(_))) => {
            Err(value_error(e))
        }
        // Divergence and curvature breakdowns still return the partial trace.
        Err(e) => {
            let msg = e.to_string();
            let trace = e.into_trace().expect("run failures carry a trace");
            Ok(PyTrace::from_trace(&trace, Some(msg)))
        }
    }
}

fn schedule(eps0: f64, t0: f64, constant_step: Option<f64>) -> PyResult<StepSchedule> {
    match constant_step {
        Some(eps) => StepSchedule::constant(eps),
        None => StepSchedule::decaying(eps0, t0),
    }
    .map_err(value_error)
}

fn run(py: Python<'_>, problem: &Bound<'_, PyAny>, args: RunArgs) -> PyResult<PyTrace> {
    let problem = extract_problem(problem)?;
    py.detach(|| match &problem {
        Problem::Quadratic(q) => run_on(q, &args),
        Problem::Svm(s) => run_on(s, &args),
    })
}

/// Regularized stochastic BFGS.
#[pyfunction]
#[pyo3(signature = (problem, *, batch_size = 5, delta = 1e-3, gamma = 1e-4, eps0 = 0.1,
    t0 = 1e3, constant_step = None, b0_scale = None, iters = 1000, seed = 0, w0 = None,
    objective_every = 1))]
#[allow(clippy::too_many_arguments)]
fn run_res(
    py: Python<'_>,
    problem: &Bound<'_, PyAny>,
    batch_size: usize,
    delta: f64,
    gamma: f64,
    eps0: f64,
    t0: f64,
    constant_step: Option<f64>,
    b0_scale: Option<f64>,
    iters: usize,
    seed: u64,
    w0: Option<Vec<f64>>,
    objective_every: usize,
) -> PyResult<PyTrace> {
    let schedule = schedule(eps0, t0, constant_step)?;
    let args = RunArgs {
        which: Which::Res,
        batch_size,
        delta,
        gamma,
        schedule,
        b0_scale,
        iters,
        seed,
        w0,
        objective_every,
    };
    run(py, problem, args)
}

/// Stochastic BFGS without regularization (`δ = Γ = 0`).
#[pyfunction]
#[pyo3(signature = (problem, *, batch_size = 5, eps0 = 0.1, t0 = 1e3, constant_step = None,
    b0_scale = None, iters = 1000, seed = 0, w0 = None, objective_every = 1))]
#[allow(clippy::too_many_arguments)]
fn run_plain(
    py: Python<'_>,
    problem: &Bound<'_, PyAny>,
    batch_size: usize,
    eps0: f64,
    t0: f64,
    constant_step: Option<f64>,
    b0_scale: Option<f64>,
    iters: usize,
    seed: u64,
    w0: Option<Vec<f64>>,
    objective_every: usize,
) -> PyResult<PyTrace> {
    let schedule = schedule(eps0, t0, constant_step)?;
    let args = RunArgs {
        which: Which::Plain,
        batch_size,
        delta: 0.0,
        gamma: 0.0,
        schedule,
        b0_scale: Some(b0_scale.unwrap_or(1.0)),
        iters,
        seed,
        w0,
        objective_every,
    };
    run(py, problem, args)
}

/// Stochastic gradient descent.
#[pyfunction]
#[pyo3(signature = (problem, *, batch_size = 1, eps0 = 0.1, t0 = 1e3, constant_step = None,
    iters = 1000, seed = 0, w0 = None, objective_every = 1))]
#[allow(clippy::too_many_arguments)]
fn run_sgd(
    py: Python<'_>,
    problem: &Bound<'_, PyAny>,
    batch_size: usize,
    eps0: f64,
    t0: f64,
    constant_step: Option<f64>,
    iters: usize,
    seed: u64,
    w0: Option<Vec<f64>>,
    objective_every: usize,
) -> PyResult<PyTrace> {
    let schedule = schedule(eps0, t0, constant_step)?;
    let args = RunArgs {
        which: Which::Sgd,
        batch_size,
        delta: 0.0,
        gamma: 0.0,
        schedule,
        b0_scale: None,
        iters,
        seed,
        w0,
        objective_every,
    };
    run(py, problem, args)
}

/// `ε₀T₀/(T₀ + t)`.
#[pyfunction]
fn step_size(eps0: f64, t0: f64, t: usize) -> PyResult<f64> {
    Ok(StepSchedule::decaying(eps0, t0).map_err(value_error)?.step_size(t))
}

/// Regularized BFGS update of `b` for the pair `(v, r)`. Returns `None` when
/// the update is skipped.
#[pyfunction]
fn regularized_update(
    b: Vec<Vec<f64>>,
    v: Vec<f64>,
    r: Vec<f64>,
    delta: f64,
) -> PyResult<Option<Vec<Vec<f64>>>> {
    let h = HessianApprox::new(to_matrix(&b)?, delta).map_err(value_error)?;
    let pair = VariationPair::new(DVector::from_vec(v), DVector::from_vec(r), delta)
        .map_err(value_error)?;
    Ok(match h.regularized_update(&pair).map_err(value_error)? {
        Update::Accepted(next) => Some(from_matrix(next.matrix())),
        Update::Skipped(_) => None,
    })
}

/// `B⁻¹ + ΓI`.
#[pyfunction]
#[pyo3(signature = (b, gamma, delta = 0.0))]
fn descent_matrix(b: Vec<Vec<f64>>, gamma: f64, delta: f64) -> PyResult<Vec<Vec<f64>>> {
    let h = HessianApprox::new(to_matrix(&b)?, delta).map_err(value_error)?;
    Ok(from_matrix(&h.descent_matrix(gamma).map_err(value_error)?))
}

/// Validates a TOML or JSON spec document and returns the complete spec,
/// defaults filled in, as a dict. Raises `ValueError` listing every violation.
#[pyfunction]
#[pyo3(signature = (text, kind = None))]
fn validate_spec<'py>(
    py: Python<'py>,
    text: &str,
    kind: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let v = validate_text(text, Format::sniff(text), parse_kind(kind)?)
        .map_err(|d| diagnostics_error(&d))?;
    json_to_py(py, &v.spec.to_json())
}

fn spec_from(text: &str, kind: Option<&str>, seed: Option<u64>) -> PyResult<resopt::spec::ExperimentSpec> {
    let mut spec = validate_text(text, Format::sniff(text), parse_kind(kind)?)
        .map_err(|d| diagnostics_error(&d))?
        .spec;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(spec)
}

/// Outcome of one study.
#[pyclass(name = "StudyResult", module = "resopt")]
struct PyStudyResult {
    inner: ExperimentResult,
}

#[pymethods]
impl PyStudyResult {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn metric(&self) -> &'static str {
        self.inner.metric.name()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.algorithms.iter().map(|a| a.label.clone()).collect()
    }

    /// Per-run values, summary and failures for one algorithm label.
    fn algorithm<'py>(&self, py: Python<'py>, label: &str) -> PyResult<Bound<'py, PyDict>> {
        let a = self
            .inner
            .algorithm(label)
            .ok_or_else(|| value_error(format!("no algorithm labelled {label:?}")))?;
        let d = PyDict::new(py);
        d.set_item("label", &a.label)?;
        d.set_item("values", &a.values)?;
        d.set_item("succeeded", &a.succeeded)?;
        let s = &a.summary;
        d.set_item("mean", s.mean)?;
        d.set_item("median", s.median)?;
        d.set_item("std", s.std)?;
        d.set_item("min", s.min)?;
        d.set_item("max", s.max)?;
        d.set_item("failures", s.failures)?;
        Ok(d)
    }

    #[getter]
    fn extras<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.inner.extras {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    fn report_lines(&self) -> Vec<String> {
        self.inner.report_lines()
    }

    /// Writes the CSV outputs into `dir` and returns the written paths.
    fn write(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        experiments::write_outputs(&self.inner, &dir)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("StudyResult(kind={}, labels={:?})", self.kind(), self.labels())
    }
}

/// Runs the study described by a spec document. `kind` names the study when
/// the document does not; `seed` overrides the document seed.
#[pyfunction]
#[pyo3(signature = (text = "", kind = None, seed = None))]
fn run_study(
    py: Python<'_>,
    text: &str,
    kind: Option<&str>,
    seed: Option<u64>,
) -> PyResult<PyStudyResult> {
    let spec = spec_from(text, kind, seed)?;
    let inner = py.detach(|| experiments::run_study(&spec)).map_err(experiment_error)?;
    Ok(PyStudyResult { inner })
}

fn rate_dict<'py>(py: Python<'py>, r: &RateCheckReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let rec = &r.recursion;
    d.set_item("c", rec.c)?;
    d.set_item("b", rec.b)?;
    d.set_item("t0", rec.t0)?;
    d.set_item("u0", rec.u0)?;
    d.set_item("q", rec.q)?;
    d.set_item("violations", rec.violations)?;
    d.set_item("nonnegative_factors", rec.nonnegative_factors)?;
    d.set_item("sequence_length", rec.sequence.len())?;
    if let Some(e) = &r.empirical {
        let emp = PyDict::new(py);
        emp.set_item("runs", e.runs)?;
        emp.set_item("rate_product", e.rate_product)?;
        emp.set_item("c0_estimate", e.c0_estimate)?;
        emp.set_item("violations", e.violations)?;
        emp.set_item("slope", e.slope)?;
        emp.set_item("mean_gap", &e.mean_gap)?;
        d.set_item("empirical", emp)?;
    } else {
        d.set_item("empirical", py.None())?;
    }
    d.set_item("report", r.report_lines())?;
    Ok(d)
}

/// Exact recursion check plus the empirical `O(1/t)` rate of RES.
#[pyfunction]
#[pyo3(signature = (text = "", seed = None))]
fn rate_check<'py>(
    py: Python<'py>,
    text: &str,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = spec_from(text, Some("rate_check"), seed)?;
    let report = py.detach(|| experiments::run_rate_check(&spec)).map_err(experiment_error)?;
    rate_dict(py, &report)
}

/// Iterates `u_{t+1} = (1 − c/(t+t₀))u_t + b/(t+t₀)²` and compares it with `Q/(t+t₀)`.
#[pyfunction]
#[pyo3(signature = (c, b, t0, u0, horizon = 100_000))]
fn check_recursion<'py>(
    py: Python<'py>,
    c: f64,
    b: f64,
    t0: f64,
    u0: f64,
    horizon: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let rec = experiments::check_recursion(c, b, t0, u0, horizon).map_err(experiment_error)?;
    rate_dict(py, &RateCheckReport { recursion: rec, empirical: None })
}

/// First iteration at which `‖w_t − w*‖/‖w*‖ ≤ rho`, counted in processed
/// functions, or `None` if the trace never gets there.
#[pyfunction]
fn convergence_time(trace: PyRef<'_, PyTrace>, rho: f64) -> Option<usize> {
    trace
        .rel_dist
        .iter()
        .zip(&trace.functions_processed)
        .find(|(d, _)| d.is_some_and(|d| d <= rho))
        .map(|(_, f)| *f)
}

#[pymodule(name = "resopt")]
pub fn resopt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuadratic>()?;
    m.add_class::<PySvm>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyStudyResult>()?;
    m.add_function(wrap_pyfunction!(run_res, m)?)?;
    m.add_function(wrap_pyfunction!(run_plain, m)?)?;
    m.add_function(wrap_pyfunction!(run_sgd, m)?)?;
    m.add_function(wrap_pyfunction!(step_size, m)?)?;
    m.add_function(wrap_pyfunction!(regularized_update, m)?)?;
    m.add_function(wrap_pyfunction!(descent_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(validate_spec, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(rate_check, m)?)?;
    m.add_function(wrap_pyfunction!(check_recursion, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_time, m)?)?;
    m.add("STUDIES", StudyKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())?;
    Ok(())
}
