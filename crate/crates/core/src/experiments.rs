//! Monte Carlo studies built on the optimizers: convergence times on random
//! quadratics, SVM objective and accuracy comparisons, objective-jump
//! detection, and the `O(1/t)` rate check.
//!
//! Realization `j` of a study draws every random quantity from
//! `child_seed(spec.seed, j)`, so results do not depend on thread count or
//! scheduling order.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::{create_file, fmt_f64, IoError};
use crate::objective::{
    classify_accuracy, generate_svm_data, ObjectiveError, QuadraticProblem, StochasticObjective,
    SvmProblem,
};
use crate::optimizer::{
    drive, OptimizerError, ResConfig, ResSolver, RunStatus, RunTrace, SgdConfig, SgdSolver,
    StepSchedule, Stepper, TraceOptions, TraceRecord,
};
use crate::rng::{child_seed, rng_from_seed, stream};
use crate::spec::{ExperimentSpec, StudyKind};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Io(#[from] IoError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ExperimentError> {
    Err(ExperimentError::InvalidArgument(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCriterion {
    /// Relative-distance threshold.
    pub rho: f64,
    /// Processed functions allowed before the run counts as a failure.
    pub cap: usize,
}

impl ConvergenceCriterion {
    pub fn new(rho: f64, cap: usize) -> Result<Self, ExperimentError> {
        if !(rho > 0.0 && rho.is_finite()) {
            return invalid(format!("rho must be positive, got {rho}"));
        }
        if cap == 0 {
            return invalid("cap must be positive");
        }
        Ok(Self { rho, cap })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergenceTime {
    /// Processed functions `L·t`, or the cap on failure.
    pub tau: usize,
    pub converged: bool,
}

/// First processed-function count at which `‖w_t − w*‖/‖w*‖ ≤ ρ`.
///
/// Uses stored iterates when present and the recorded relative distances
/// otherwise.
pub fn convergence_time(
    trace: &RunTrace,
    w_star: &DVector<f64>,
    crit: ConvergenceCriterion,
) -> Result<ConvergenceTime, ExperimentError> {
    let norm = w_star.norm();
    if !(norm > 0.0) {
        return invalid("w_star = 0: relative distance is undefined");
    }
    for r in &trace.records {
        if r.functions_processed > crit.cap {
            break;
        }
        let dist = match (&r.iterate, r.rel_dist) {
            (Some(w), _) => {
                if w.len() != w_star.len() {
                    return invalid(format!(
                        "iterate has dimension {}, optimum has {}",
                        w.len(),
                        w_star.len()
                    ));
                }
                (w - w_star).norm() / norm
            }
            (None, Some(d)) => d,
            (None, None) => return invalid("trace carries neither iterates nor distances"),
        };
        if dist <= crit.rho {
            return Ok(ConvergenceTime {
                tau: r.functions_processed,
                converged: true,
            });
        }
    }
    Ok(ConvergenceTime {
        tau: crit.cap,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub failures: usize,
}

pub fn summarize(values: &[f64], failures: usize) -> Summary {
    let count = values.len();
    if count == 0 {
        return Summary {
            count,
            mean: f64::NAN,
            median: f64::NAN,
            std: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
            failures,
        };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if count % 2 == 1 {
        sorted[count / 2]
    } else {
        0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
    };
    Summary {
        count,
        mean,
        median,
        std,
        min: sorted[0],
        max: sorted[count - 1],
        failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Bins `[e_k, e_{k+1})`, the last one closed. Values outside the edges land
/// in the nearest end bin and NaN in the last, so counts always sum to
/// `values.len()`.
pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<HistogramBin> {
    assert!(edges.len() >= 2, "a histogram needs at least two edges");
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if v.is_nan() {
            bins - 1
        } else {
            edges[1..].partition_point(|e| *e <= v).min(bins - 1)
        };
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lo: edges[k],
            hi: edges[k + 1],
            count,
        })
        .collect()
}

pub fn linear_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    (0..=bins)
        .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
        .collect()
}

/// `[0, 1)` followed by `bins − 1` log-spaced bins up to `cap`.
pub fn log_edges(cap: f64, bins: usize) -> Vec<f64> {
    if !(cap > 1.0) || bins < 2 {
        return linear_edges(0.0, cap.max(1.0), bins);
    }
    let steps = (bins - 1) as f64;
    let mut edges = vec![0.0];
    edges.extend((0..bins).map(|k| cap.powf(k as f64 / steps)));
    edges
}

/// Log-spaced edges covering the positive finite values.
fn auto_log_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let finite = values.iter().copied().filter(|v| v.is_finite() && *v > 0.0);
    let (lo, hi) = finite.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !(lo.is_finite() && hi > 0.0) {
        return linear_edges(0.0, 1.0, bins);
    }
    let (a, mut b) = (lo.log10().floor(), hi.log10().ceil());
    if b <= a {
        b = a + 1.0;
    }
    (0..=bins)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / bins as f64))
        .collect()
}

/// Sorted distinct integers in `[0, max]`: every value below 100 followed by
/// about `points` log-spaced values, always ending at `max`.
pub fn log_grid(max: usize, points: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..=max.min(99)).collect();
    if max >= 100 && points > 0 {
        let (a, b) = (100f64.ln(), (max as f64).ln());
        for k in 0..=points {
            let t = (a + (b - a) * k as f64 / points as f64).exp().round() as usize;
            grid.push(t.clamp(100, max));
        }
        grid.push(max);
    }
    grid.sort_unstable();
    grid.dedup();
    grid
}

fn thin(trace: RunTrace, points: usize) -> RunTrace {
    let last_t = trace.last().t;
    let keep = log_grid(last_t, points);
    let mut k = 0;
    let records = trace
        .records
        .into_iter()
        .filter(|r| {
            while k < keep.len() && keep[k] < r.t {
                k += 1;
            }
            k < keep.len() && keep[k] == r.t
        })
        .collect();
    RunTrace { records, ..trace }
}

/// True when the recorded objective ever exceeds `factor` times the running
/// minimum of earlier values, becomes non-finite, or the run diverged.
pub fn has_objective_jump(trace: &RunTrace, factor: f64) -> bool {
    if trace.status == RunStatus::Diverged {
        return true;
    }
    let mut best = f64::INFINITY;
    for f in trace.records.iter().filter_map(|r| r.objective) {
        if !f.is_finite() || f > factor * best {
            return true;
        }
        best = best.min(f);
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ConvergenceTime,
    FinalObjective,
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::ConvergenceTime => "tau",
            Metric::FinalObjective => "final_objective",
            Metric::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmResult {
    pub label: String,
    /// One value per realization, in realization order.
    pub values: Vec<f64>,
    /// Whether each realization succeeded (converged, or did not diverge).
    pub succeeded: Vec<bool>,
    pub summary: Summary,
    pub histogram: Vec<HistogramBin>,
}

impl AlgorithmResult {
    fn new(label: String, values: Vec<f64>, succeeded: Vec<bool>, edges: &[f64]) -> Self {
        let failures = succeeded.iter().filter(|s| !**s).count();
        Self {
            summary: summarize(&values, failures),
            histogram: histogram(&values, edges),
            label,
            values,
            succeeded,
        }
    }

    pub fn failure_rate(&self) -> f64 {
        self.summary.failures as f64 / self.values.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct NamedTrace {
    pub label: String,
    pub trace: RunTrace,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub kind: StudyKind,
    pub metric: Metric,
    pub algorithms: Vec<AlgorithmResult>,
    /// Traces of the first realization.
    pub traces: Vec<NamedTrace>,
    /// Study-specific scalars, such as failure rates or jump fractions.
    pub extras: Vec<(String, f64)>,
    pub rate: Option<RateCheckReport>,
}

impl ExperimentResult {
    pub fn algorithm(&self, label: &str) -> Option<&AlgorithmResult> {
        self.algorithms.iter().find(|a| a.label == label)
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// True when there were runs and every one of them failed by divergence.
    pub fn all_runs_diverged(&self) -> bool {
        self.metric != Metric::ConvergenceTime
            && !self.algorithms.is_empty()
            && self
                .algorithms
                .iter()
                .all(|a| a.succeeded.iter().all(|s| !s))
    }

    /// Human-readable summary, one line per item.
    pub fn report_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("study: {}", self.kind)];
        for a in &self.algorithms {
            let s = &a.summary;
            lines.push(format!(
                "{}: {} mean {:.6} median {:.6} std {:.6} failures {}/{}",
                a.label,
                self.metric.name(),
                s.mean,
                s.median,
                s.std,
                s.failures,
                s.count
            ));
        }
        for (k, v) in &self.extras {
            lines.push(format!("{k}: {v:.6}"));
        }
        if let Some(rate) = &self.rate {
            lines.extend(rate.report_lines());
        }
        lines
    }
}

impl fmt::Display for ExperimentResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in self.report_lines() {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

fn schedule(spec: &ExperimentSpec) -> Result<StepSchedule, ExperimentError> {
    Ok(match spec.constant_step {
        Some(eps) => StepSchedule::constant(eps)?,
        None => StepSchedule::decaying(spec.eps0, spec.t0)?,
    })
}

fn res_config(
    spec: &ExperimentSpec,
    batch_size: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ResConfig, ExperimentError> {
    let cfg = ResConfig {
        batch_size,
        delta: spec.delta,
        gamma: spec.gamma,
        schedule: schedule(spec)?,
        b0_scale: spec.b0_scale,
        max_iters,
        seed,
        freeze_curvature: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn plain_config(
    spec: &ExperimentSpec,
    seed: u64,
    max_iters: usize,
) -> Result<ResConfig, ExperimentError> {
    let mut cfg = res_config(spec, spec.batch_size, seed, max_iters)?.plain();
    cfg.b0_scale = spec.b0_scale;
    Ok(cfg)
}

fn sgd_config(
    spec: &ExperimentSpec,
    seed: u64,
    max_iters: usize,
) -> Result<SgdConfig, ExperimentError> {
    let cfg = SgdConfig {
        batch_size: spec.sgd_batch_size,
        schedule: schedule(spec)?,
        max_iters,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn initial_point(spec: &ExperimentSpec, n: usize) -> DVector<f64> {
    DVector::from_element(n, spec.init_scale)
}

fn realizations<T, F>(reps: usize, f: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(usize) -> Result<T, ExperimentError> + Sync + Send,
{
    (0..reps).into_par_iter().map(f).collect()
}

/// Keeps the partial trace of a diverged run; other errors propagate.
fn settle(res: Result<RunTrace, OptimizerError>) -> Result<RunTrace, ExperimentError> {
    match res {
        Ok(trace) => Ok(trace),
        Err(e) if e.trace().is_some() => Ok(e.into_trace().expect("trace checked above")),
        Err(e) => Err(e.into()),
    }
}

const TRACE_POINTS: usize = 400;

struct TauRun {
    time: ConvergenceTime,
    trace: Option<RunTrace>,
}

fn time_to_threshold<S: Stepper>(
    problem: &QuadraticProblem,
    stepper: &mut S,
    crit: ConvergenceCriterion,
    keep_trace: bool,
) -> Result<TauRun, ExperimentError> {
    let batch = stepper.batch_size();
    let max_iters = crit.cap.div_ceil(batch);
    let rho = crit.rho;
    let stop = |r: &TraceRecord| r.rel_dist.is_some_and(|d| d <= rho);
    let trace = settle(drive(
        problem,
        stepper,
        max_iters,
        TraceOptions::minimal(),
        stop,
    ))?;
    let time = convergence_time(&trace, &problem.optimum(), crit)?;
    Ok(TauRun {
        time,
        trace: keep_trace.then(|| thin(trace, TRACE_POINTS)),
    })
}

/// RES and SGD convergence times on one quadratic.
fn quadratic_pair(
    spec: &ExperimentSpec,
    problem: &QuadraticProblem,
    seed: u64,
    batch_size: usize,
    crit: ConvergenceCriterion,
    keep_trace: bool,
    with_sgd: bool,
) -> Result<(TauRun, Option<TauRun>), ExperimentError> {
    let w0 = initial_point(spec, problem.dim());
    let cfg = res_config(spec, batch_size, child_seed(seed, stream::RES), 0)?;
    let mut res = ResSolver::new(problem, cfg, w0.clone())?;
    let res_run = time_to_threshold(problem, &mut res, crit, keep_trace)?;
    let sgd_run = if with_sgd {
        let cfg = sgd_config(spec, child_seed(seed, stream::SGD), 0)?;
        let mut sgd = SgdSolver::new(problem, cfg, w0)?;
        Some(time_to_threshold(problem, &mut sgd, crit, keep_trace)?)
    } else {
        None
    };
    Ok((res_run, sgd_run))
}

fn tau_result(label: String, runs: &[&TauRun], cap: usize) -> AlgorithmResult {
    let values = runs.iter().map(|r| r.time.tau as f64).collect();
    let succeeded = runs.iter().map(|r| r.time.converged).collect();
    AlgorithmResult::new(label, values, succeeded, &log_edges(cap as f64, 30))
}

fn require_kind(spec: &ExperimentSpec, kinds: &[StudyKind]) -> Result<(), ExperimentError> {
    if kinds.contains(&spec.kind) {
        Ok(())
    } else {
        invalid(format!("study kind {} is not handled here", spec.kind))
    }
}

fn first_trace(label: &str, run: &TauRun) -> Option<NamedTrace> {
    run.trace.clone().map(|trace| NamedTrace {
        label: label.to_string(),
        trace,
    })
}

/// Convergence times of RES and SGD on `J` random quadratics of one
/// condition level.
pub fn run_condition_study(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    require_kind(spec, &[StudyKind::Condition])?;
    let crit = ConvergenceCriterion::new(spec.rho, spec.cap)?;
    let runs = realizations(spec.reps, |j| {
        let seed = child_seed(spec.seed, j as u64);
        let problem = QuadraticProblem::generate_seeded(
            spec.n,
            spec.xi,
            spec.theta0,
            child_seed(seed, stream::PROBLEM),
        )?;
        let (res, sgd) = quadratic_pair(spec, &problem, seed, spec.batch_size, crit, j == 0, true)?;
        Ok((res, sgd.expect("SGD requested")))
    })?;
    let res: Vec<&TauRun> = runs.iter().map(|r| &r.0).collect();
    let sgd: Vec<&TauRun> = runs.iter().map(|r| &r.1).collect();
    let algorithms = vec![
        tau_result("RES".into(), &res, spec.cap),
        tau_result("SGD".into(), &sgd, spec.cap),
    ];
    let ratio = algorithms[1].summary.mean / algorithms[0].summary.mean;
    let traces = [first_trace("RES", res[0]), first_trace("SGD", sgd[0])]
        .into_iter()
        .flatten()
        .collect();
    Ok(ExperimentResult {
        kind: spec.kind,
        metric: Metric::ConvergenceTime,
        algorithms,
        traces,
        extras: vec![("mean_ratio_sgd_over_res".into(), ratio)],
        rate: None,
    })
}

/// RES convergence times for each sample size `L`, all on the same problems.
pub fn run_sample_size_study(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    require_kind(spec, &[StudyKind::SampleSize])?;
    let crit = ConvergenceCriterion::new(spec.rho, spec.cap)?;
    let runs = realizations(spec.reps, |j| {
        let seed = child_seed(spec.seed, j as u64);
        let problem = QuadraticProblem::generate_seeded(
            spec.n,
            spec.xi,
            spec.theta0,
            child_seed(seed, stream::PROBLEM),
        )?;
        spec.sample_sizes
            .iter()
            .map(|&l| Ok(quadratic_pair(spec, &problem, seed, l, crit, j == 0, false)?.0))
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;
    let mut algorithms = Vec::new();
    let mut traces = Vec::new();
    for (k, l) in spec.sample_sizes.iter().enumerate() {
        let label = format!("RES L={l}");
        let column: Vec<&TauRun> = runs.iter().map(|r| &r[k]).collect();
        traces.extend(first_trace(&label, column[0]));
        algorithms.push(tau_result(label, &column, spec.cap));
    }
    Ok(ExperimentResult {
        kind: spec.kind,
        metric: Metric::ConvergenceTime,
        algorithms,
        traces,
        extras: Vec::new(),
        rate: None,
    })
}

/// RES and SGD convergence times for each dimension `n`.
pub fn run_dimension_study(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    require_kind(spec, &[StudyKind::Dimension])?;
    let crit = ConvergenceCriterion::new(spec.rho, spec.cap)?;
    let runs = realizations(spec.reps, |j| {
        let seed = child_seed(spec.seed, j as u64);
        spec.dims
            .iter()
            .map(|&n| {
                let problem = QuadraticProblem::generate_seeded(
                    n,
                    spec.xi,
                    spec.theta0,
                    child_seed(child_seed(seed, stream::PROBLEM), n as u64),
                )?;
                let (res, sgd) =
                    quadratic_pair(spec, &problem, seed, spec.batch_size, crit, j == 0, true)?;
                Ok((res, sgd.expect("SGD requested")))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;
    let mut algorithms = Vec::new();
    let mut traces = Vec::new();
    let mut extras = Vec::new();
    for (k, n) in spec.dims.iter().enumerate() {
        for (label, pick) in [("RES", 0), ("SGD", 1)] {
            let label = format!("{label} n={n}");
            let column: Vec<&TauRun> = runs
                .iter()
                .map(|r| if pick == 0 { &r[k].0 } else { &r[k].1 })
                .collect();
            traces.extend(first_trace(&label, column[0]));
            let result = tau_result(label.clone(), &column, spec.cap);
            extras.push((format!("failure_rate {label}"), result.failure_rate()));
            algorithms.push(result);
        }
    }
    Ok(ExperimentResult {
        kind: spec.kind,
        metric: Metric::ConvergenceTime,
        algorithms,
        traces,
        extras,
        rate: None,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SvmMethod {
    Res,
    Plain,
    Sgd,
}

impl SvmMethod {
    fn label(self) -> &'static str {
        match self {
            SvmMethod::Res => "RES",
            SvmMethod::Plain => "plain-SBFGS",
            SvmMethod::Sgd => "SGD",
        }
    }
}

struct SvmRun {
    trace: RunTrace,
    final_objective: f64,
    diverged: bool,
}

fn svm_run(
    spec: &ExperimentSpec,
    problem: &SvmProblem,
    method: SvmMethod,
    seed: u64,
    record: bool,
) -> Result<SvmRun, ExperimentError> {
    let n = problem.dim();
    let w0 = initial_point(spec, n);
    let batch = match method {
        SvmMethod::Sgd => spec.sgd_batch_size,
        _ => spec.batch_size,
    };
    let max_iters = spec.budget / batch;
    let opts = TraceOptions {
        objective_every: if record {
            (spec.record_every / batch).max(1)
        } else {
            0
        },
        keep_iterates: false,
    };
    let res = match method {
        SvmMethod::Res => {
            let cfg = res_config(spec, batch, child_seed(seed, stream::RES), max_iters)?;
            let mut s = ResSolver::new(problem, cfg, w0)?;
            drive(problem, &mut s, max_iters, opts, |_| false)
        }
        SvmMethod::Plain => {
            let cfg = plain_config(spec, child_seed(seed, stream::PLAIN), max_iters)?;
            let mut s = ResSolver::new_plain(problem, cfg, w0)?;
            drive(problem, &mut s, max_iters, opts, |_| false)
        }
        SvmMethod::Sgd => {
            let cfg = sgd_config(spec, child_seed(seed, stream::SGD), max_iters)?;
            let mut s = SgdSolver::new(problem, cfg, w0)?;
            drive(problem, &mut s, max_iters, opts, |_| false)
        }
    };
    let trace = settle(res)?;
    let diverged = trace.status == RunStatus::Diverged;
    let final_objective = if diverged {
        f64::INFINITY
    } else {
        problem
            .exact_objective(&trace.final_iterate)
            .unwrap_or(f64::NAN)
    };
    Ok(SvmRun {
        trace,
        final_objective,
        diverged,
    })
}

fn svm_problem(spec: &ExperimentSpec, n: usize, seed: u64) -> Result<SvmProblem, ExperimentError> {
    if spec.train_size == 0 {
        return invalid("the training set must not be empty");
    }
    let mut rng = rng_from_seed(child_seed(seed, stream::PROBLEM));
    let data = generate_svm_data(n, spec.train_size, &mut rng)?;
    Ok(SvmProblem::new(data, spec.lambda, spec.loss)?)
}

fn objective_result(label: String, runs: &[&SvmRun]) -> AlgorithmResult {
    let values: Vec<f64> = runs.iter().map(|r| r.final_objective).collect();
    let succeeded = runs.iter().map(|r| !r.diverged).collect();
    let edges = auto_log_edges(&values, 20);
    AlgorithmResult::new(label, values, succeeded, &edges)
}

/// Dispatches the three SVM sub-studies.
pub fn run_svm_study(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    match spec.kind {
        StudyKind::SvmConvergence => svm_convergence(spec),
        StudyKind::SvmAccuracy => svm_accuracy(spec),
        StudyKind::SvmRegularization => svm_regularization(spec),
        other => invalid(format!("study kind {other} is not an SVM study")),
    }
}

fn svm_convergence(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    const METHODS: [SvmMethod; 2] = [SvmMethod::Res, SvmMethod::Sgd];
    let runs = realizations(spec.reps, |j| {
        let seed = child_seed(spec.seed, j as u64);
        let mut out = Vec::new();
        for &n in &spec.dims {
            let problem = svm_problem(spec, n, child_seed(seed, n as u64))?;
            for m in METHODS {
                out.push(svm_run(spec, &problem, m, seed, j == 0)?);
            }
        }
        Ok(out)
    })?;
    let mut algorithms = Vec::new();
    let mut traces = Vec::new();
    for (k, n) in spec.dims.iter().enumerate() {
        for (i, m) in METHODS.iter().enumerate() {
            let label = format!("{} n={n}", m.label());
            let column: Vec<&SvmRun> = runs.iter().map(|r| &r[k * METHODS.len() + i]).collect();
            traces.push(NamedTrace {
                label: label.clone(),
                trace: column[0].trace.clone(),
            });
            algorithms.push(objective_result(label, &column));
        }
    }
    Ok(ExperimentResult {
        kind: spec.kind,
        metric: Metric::FinalObjective,
        algorithms,
        traces,
        extras: Vec::new(),
        rate: None,
    })
}

fn svm_accuracy(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    if spec.test_size == 0 {
        return invalid("the test set must not be empty");
    }
    let n = spec.n;
    let runs = realizations(spec.reps, |j| {
        let seed = child_seed(spec.seed, j as u64);
        let problem = svm_problem(spec, n, seed)?;
        let mut rng = rng_from_seed(child_seed(seed, stream::TEST_SET));
        let test = generate_svm_data(n, spec.test_size, &mut rng)?;
        let res = svm_run(spec, &problem, SvmMethod::Res, seed, false)?;
        let sgd = svm_run(spec, &problem, SvmMethod::Sgd, seed, false)?;
        let acc = |r: &SvmRun| classify_accuracy(&r.trace.final_iterate, &test);
        let clairvoyant = classify_accuracy(&DVector::from_element(n, 1.0), &test)?;
        Ok([
            (acc(&res)?, !res.diverged),
            (acc(&sgd)?, !sgd.diverged),
            (clairvoyant, true),
        ])
    })?;
    let edges = linear_edges(0.0, 1.0, 20);
    let column = |k: usize, label: &str| {
        AlgorithmResult::new(
            label.to_string(),
            runs.iter().map(|r| r[k].0).collect(),
            runs.iter().map(|r| r[k].1).collect(),
            &edges,
        )
    };
    let res = column(0, "RES");
    let sgd = column(1, "SGD");
    let clairvoyant = column(2, "clairvoyant");
    let sgd_max = sgd.summary.max;
    let above =
        res.values.iter().filter(|a| **a > sgd_max).count() as f64 / res.values.len() as f64;
    let extras = vec![("fraction_res_above_sgd_max".to_string(), above)];
    Ok(ExperimentResult {
        kind: spec.kind,
        metric: Metric::Accuracy,
        algorithms: vec![res, sgd, clairvoyant],
        traces: Vec::new(),
        extras,
        rate: None,
    })
}

fn svm_regularization(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    const METHODS: [SvmMethod; 3] = [SvmMethod::Res, SvmMethod::Plain, SvmMethod::Sgd];
    let n = spec.n;
    let runs = realizations(spec.reps, |j| {
        let seed = child_seed(spec.seed, j as u64);
        let problem = svm_problem(spec, n, seed)?;
        METHODS
            .iter()
            .map(|&m| svm_run(spec, &problem, m, seed, true))
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;
    let reps = runs.len() as f64;
    let mut algorithms = Vec::new();
    let mut traces = Vec::new();
    let mut extras = Vec::new();
    for (i, m) in METHODS.iter().enumerate() {
        let column: Vec<&SvmRun> = runs.iter().map(|r| &r[i]).collect();
        let jumps = column
            .iter()
            .filter(|r| has_objective_jump(&r.trace, spec.jump_factor))
            .count();
        extras.push((format!("jump_fraction {}", m.label()), jumps as f64 / reps));
        traces.push(NamedTrace {
            label: m.label().to_string(),
            trace: column[0].trace.clone(),
        });
        algorithms.push(objective_result(m.label().to_string(), &column));
    }
    let below = runs
        .iter()
        .filter(|r| r[0].final_objective < r[1].final_objective)
        .count();
    extras.insert(
        0,
        ("fraction_res_below_plain".to_string(), below as f64 / reps),
    );
    Ok(ExperimentResult {
        kind: spec.kind,
        metric: Metric::FinalObjective,
        algorithms,
        traces,
        extras,
        rate: None,
    })
}

/// `Q = max(b/(c − 1), t₀u₀)`.
pub fn lemma3_constant(c: f64, b: f64, t0: f64, u0: f64) -> f64 {
    (b / (c - 1.0)).max(t0 * u0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursionCheck {
    pub c: f64,
    pub b: f64,
    pub t0: f64,
    pub u0: f64,
    pub q: f64,
    /// `u_0, …, u_horizon`.
    pub sequence: Vec<f64>,
    pub violations: usize,
    /// Whether every factor `1 − c/(t + t₀)` is nonnegative, i.e. `t₀ ≥ c`.
    /// The bound is only guaranteed in that case.
    pub nonnegative_factors: bool,
}

impl RecursionCheck {
    pub fn bound(&self, t: usize) -> f64 {
        self.q / (t as f64 + self.t0)
    }
}

/// Iterates `u_{t+1} = (1 − c/(t + t₀))u_t + b/(t + t₀)²` with equality and
/// counts the `t ≤ horizon` where `u_t > Q/(t + t₀)` beyond a `10⁻¹²`
/// relative slack.
pub fn check_recursion(
    c: f64,
    b: f64,
    t0: f64,
    u0: f64,
    horizon: usize,
) -> Result<RecursionCheck, ExperimentError> {
    if !(c > 1.0 && c.is_finite()) {
        return invalid(format!("c must exceed 1, got {c}"));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return invalid(format!("b must be nonnegative, got {b}"));
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return invalid(format!("t0 must be positive, got {t0}"));
    }
    if !(u0 >= 0.0 && u0.is_finite()) {
        return invalid(format!("u0 must be nonnegative, got {u0}"));
    }
    let q = lemma3_constant(c, b, t0, u0);
    let mut sequence = Vec::with_capacity(horizon + 1);
    let mut u = u0;
    let mut violations = 0;
    for t in 0..=horizon {
        let s = t as f64 + t0;
        if u > q / s * (1.0 + 1e-12) {
            violations += 1;
        }
        sequence.push(u);
        u = (1.0 - c / s) * u + b / (s * s);
    }
    Ok(RecursionCheck {
        c,
        b,
        t0,
        u0,
        q,
        sequence,
        violations,
        nonnegative_factors: t0 >= c,
    })
}

/// Seed-averaged optimality gap of RES against the `C₀/(T₀ + t)` bound.
///
/// `C₀` needs the gradient second-moment bound `S²`, which is estimated as
/// the largest `‖ŝ‖²` seen on a pilot run, so the bound is an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalRate {
    pub runs: usize,
    pub eps0: f64,
    pub t0: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `2ε₀T₀Γ`.
    pub rate_product: f64,
    /// Upper curvature bound `M`.
    pub m_upper: f64,
    pub s_sq_estimate: f64,
    /// `K = M S²(1/δ + Γ)²/2`.
    pub k_estimate: f64,
    pub c0_estimate: f64,
    /// `Ê[F(w_t)] − F*` for `t = 0, …, iterations`.
    pub mean_gap: Vec<f64>,
    /// Iterations `t` above the estimated bound.
    pub violations: usize,
    /// Least-squares slope of `log gap` against `log t` on `[T₀, 100T₀]`.
    pub slope: f64,
}

impl EmpiricalRate {
    pub fn bound(&self, t: usize) -> f64 {
        self.c0_estimate / (self.t0 + t as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCheckReport {
    pub recursion: RecursionCheck,
    pub empirical: Option<EmpiricalRate>,
}

impl RateCheckReport {
    pub fn report_lines(&self) -> Vec<String> {
        let r = &self.recursion;
        let mut lines = vec![
            format!(
                "recursion: c {} b {} t0 {} u0 {} Q {} horizon {}",
                r.c,
                r.b,
                r.t0,
                r.u0,
                r.q,
                r.sequence.len() - 1
            ),
            format!("violations: {}", r.violations),
        ];
        if let Some(e) = &self.empirical {
            lines.push(format!(
                "empirical (estimate): runs {} 2*eps0*T0*Gamma {:.6} S^2 {:.6e} K {:.6e} C0 {:.6e}",
                e.runs, e.rate_product, e.s_sq_estimate, e.k_estimate, e.c0_estimate
            ));
            lines.push(format!(
                "empirical bound violations (estimate): {}",
                e.violations
            ));
            lines.push(format!("empirical log-log slope: {:.6}", e.slope));
        }
        lines
    }
}

/// Least-squares slope of `ln y` against `ln x` over positive pairs.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let m = logs.len() as f64;
    if logs.len() < 2 {
        return f64::NAN;
    }
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn empirical_rate(spec: &ExperimentSpec) -> Result<EmpiricalRate, ExperimentError> {
    if spec.constant_step.is_some() {
        return invalid("the rate check needs the decaying step schedule");
    }
    let product = 2.0 * spec.eps0 * spec.t0 * spec.gamma;
    if !(product > 1.0) {
        return invalid(format!(
            "the rate bound needs 2*eps0*T0*Gamma > 1, got {product}"
        ));
    }
    if !(spec.delta > 0.0) {
        return invalid("the rate bound needs delta > 0");
    }
    let problem = QuadraticProblem::generate_seeded(
        spec.n,
        spec.xi,
        spec.theta0,
        child_seed(spec.seed, stream::PROBLEM),
    )?;
    let f_star = problem.optimal_value();
    let w0 = initial_point(spec, spec.n);
    let iters = spec.rate_iters;

    let cfg = res_config(
        spec,
        spec.batch_size,
        child_seed(spec.seed, stream::PILOT),
        iters,
    )?;
    let mut pilot = ResSolver::new(&problem, cfg, w0.clone())?;
    let mut s_sq: f64 = 0.0;
    for _ in 0..iters {
        let step = pilot
            .step_detailed()
            .map_err(|e| ExperimentError::InvalidArgument(format!("pilot run failed: {e}")))?;
        s_sq = s_sq.max(step.gradient.norm_squared());
    }

    let gaps = realizations(spec.rate_runs, |r| {
        let seed = child_seed(child_seed(spec.seed, stream::RES), r as u64);
        let cfg = res_config(spec, spec.batch_size, seed, iters)?;
        let mut solver = ResSolver::new(&problem, cfg, w0.clone())?;
        let trace = drive(
            &problem,
            &mut solver,
            iters,
            TraceOptions::default(),
            |_| false,
        )?;
        Ok(trace
            .records
            .iter()
            .map(|rec| rec.objective.unwrap_or(f64::NAN) - f_star)
            .collect::<Vec<f64>>())
    })?;
    let mut mean_gap = vec![0.0; iters + 1];
    for g in &gaps {
        for (acc, v) in mean_gap.iter_mut().zip(g) {
            *acc += v;
        }
    }
    for v in &mut mean_gap {
        *v /= gaps.len() as f64;
    }

    let m_upper = problem.curvature_bounds().map(|b| b.upper).ok_or_else(|| {
        ExperimentError::InvalidArgument("problem has no curvature bounds".into())
    })?;
    let k = m_upper * s_sq * (1.0 / spec.delta + spec.gamma).powi(2) / 2.0;
    let initial_gap = problem.exact_objective(&w0).unwrap_or(f64::NAN) - f_star;
    let c0 = (spec.eps0 * spec.eps0 * spec.t0 * spec.t0 * k / (product - 1.0))
        .max(spec.t0 * initial_gap);
    let violations = mean_gap
        .iter()
        .enumerate()
        .filter(|(t, g)| **g > c0 / (spec.t0 + *t as f64))
        .count();

    let lo = spec.t0.ceil() as usize;
    let hi = ((100.0 * spec.t0).floor() as usize).min(iters);
    let points: Vec<(f64, f64)> = if lo < hi {
        let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
        let mut ts: Vec<usize> = (0..=100)
            .map(|k| (a + (b - a) * k as f64 / 100.0).exp().round() as usize)
            .map(|t| t.clamp(lo, hi))
            .collect();
        ts.dedup();
        ts.into_iter().map(|t| (t as f64, mean_gap[t])).collect()
    } else {
        Vec::new()
    };

    Ok(EmpiricalRate {
        runs: spec.rate_runs,
        eps0: spec.eps0,
        t0: spec.t0,
        gamma: spec.gamma,
        delta: spec.delta,
        rate_product: product,
        m_upper,
        s_sq_estimate: s_sq,
        k_estimate: k,
        c0_estimate: c0,
        mean_gap,
        violations,
        slope: log_log_slope(&points),
    })
}

/// The exact recursion check plus, when `rate_runs > 0`, the empirical RES
/// comparison.
pub fn run_rate_check(spec: &ExperimentSpec) -> Result<RateCheckReport, ExperimentError> {
    let recursion = check_recursion(
        spec.rate_c,
        spec.rate_b,
        spec.rate_t0,
        spec.rate_u0,
        spec.recursion_horizon,
    )?;
    let empirical = if spec.rate_runs > 0 {
        Some(empirical_rate(spec)?)
    } else {
        None
    };
    Ok(RateCheckReport {
        recursion,
        empirical,
    })
}

pub fn run_study(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    match spec.kind {
        StudyKind::Condition => run_condition_study(spec),
        StudyKind::SampleSize => run_sample_size_study(spec),
        StudyKind::Dimension => run_dimension_study(spec),
        StudyKind::SvmConvergence | StudyKind::SvmAccuracy | StudyKind::SvmRegularization => {
            run_svm_study(spec)
        }
        StudyKind::RateCheck => Ok(ExperimentResult {
            kind: spec.kind,
            metric: Metric::ConvergenceTime,
            algorithms: Vec::new(),
            traces: Vec::new(),
            extras: Vec::new(),
            rate: Some(run_rate_check(spec)?),
        }),
    }
}

/// `RES n=4` becomes `RES_n_4`.
pub fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<std::io::BufWriter<std::fs::File>>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self, IoError> {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_writer(create_file(&path)?);
        writer.write_record(header)?;
        Ok(Self { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<(), IoError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        Ok(self.writer.write_record(fields)?)
    }

    fn finish(mut self) -> Result<PathBuf, IoError> {
        self.writer.flush().map_err(|source| IoError::File {
            path: self.path.display().to_string(),
            source,
        })?;
        Ok(self.path)
    }
}

/// Writes every CSV for `result` into `dir` and returns the paths written.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();

    let mut summary = CsvOut::create(
        dir,
        "summary.csv",
        &["algorithm", "mean", "median", "std", "failures"],
    )?;
    for a in &result.algorithms {
        let s = &a.summary;
        summary.row([
            a.label.clone(),
            fmt_f64(s.mean),
            fmt_f64(s.median),
            fmt_f64(s.std),
            s.failures.to_string(),
        ])?;
    }
    written.push(summary.finish()?);

    let mut hist = CsvOut::create(
        dir,
        "histogram.csv",
        &["algorithm", "bin_lo", "bin_hi", "count"],
    )?;
    for a in &result.algorithms {
        for b in &a.histogram {
            hist.row([
                a.label.clone(),
                fmt_f64(b.lo),
                fmt_f64(b.hi),
                b.count.to_string(),
            ])?;
        }
    }
    written.push(hist.finish()?);

    let metric = result.metric.name();
    let mut values = CsvOut::create(
        dir,
        "values.csv",
        &["algorithm", "realization", metric, "succeeded"],
    )?;
    for a in &result.algorithms {
        for (j, (v, ok)) in a.values.iter().zip(&a.succeeded).enumerate() {
            values.row([
                a.label.clone(),
                j.to_string(),
                fmt_f64(*v),
                u8::from(*ok).to_string(),
            ])?;
        }
    }
    written.push(values.finish()?);

    if !result.extras.is_empty() {
        let mut extras = CsvOut::create(dir, "extras.csv", &["name", "value"])?;
        for (k, v) in &result.extras {
            extras.row([k.clone(), fmt_f64(*v)])?;
        }
        written.push(extras.finish()?);
    }

    for t in &result.traces {
        let path = dir.join(format!("trace_{}.csv", file_label(&t.label)));
        t.trace.write_csv(create_file(&path)?)?;
        written.push(path);
    }

    if let Some(rate) = &result.rate {
        let r = &rate.recursion;
        let mut rec = CsvOut::create(dir, "rate_recursion.csv", &["t", "u_t", "bound"])?;
        for t in log_grid(r.sequence.len() - 1, 2000) {
            rec.row([t.to_string(), fmt_f64(r.sequence[t]), fmt_f64(r.bound(t))])?;
        }
        written.push(rec.finish()?);
        if let Some(e) = &rate.empirical {
            let mut emp = CsvOut::create(
                dir,
                "rate_empirical.csv",
                &["t", "mean_gap", "bound_estimate"],
            )?;
            for t in log_grid(e.mean_gap.len() - 1, 2000) {
                emp.row([t.to_string(), fmt_f64(e.mean_gap[t]), fmt_f64(e.bound(t))])?;
            }
            written.push(emp.finish()?);
        }
        let mut s = CsvOut::create(dir, "rate_summary.csv", &["name", "value"])?;
        let mut put = |k: &str, v: f64| s.row([k.to_string(), fmt_f64(v)]);
        put("c", r.c)?;
        put("b", r.b)?;
        put("t0", r.t0)?;
        put("u0", r.u0)?;
        put("Q", r.q)?;
        put("violations", r.violations as f64)?;
        if let Some(e) = &rate.empirical {
            put("rate_product", e.rate_product)?;
            put("s_sq_estimate", e.s_sq_estimate)?;
            put("k_estimate", e.k_estimate)?;
            put("c0_estimate", e.c0_estimate)?;
            put("empirical_violations_estimate", e.violations as f64)?;
            put("slope", e.slope)?;
        }
        written.push(s.finish()?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::DiagonalDistribution;
    use crate::optimizer::{Method, TraceRecord};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn record(t: usize, l: usize, d: f64) -> TraceRecord {
        TraceRecord {
            t,
            functions_processed: l * t,
            eps_t: 0.1,
            rel_dist: Some(d),
            objective: None,
            skipped_update: false,
            iterate: None,
        }
    }

    fn trace_of(dists: &[f64], l: usize) -> RunTrace {
        RunTrace {
            method: Method::Res,
            batch_size: l,
            records: dists
                .iter()
                .enumerate()
                .map(|(t, d)| record(t, l, *d))
                .collect(),
            status: RunStatus::Completed,
            final_iterate: DVector::zeros(1),
            skipped_updates: 0,
        }
    }

    fn ones(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0)
    }

    #[test]
    fn start_within_threshold_gives_zero() {
        let crit = ConvergenceCriterion::new(0.5, 100).unwrap();
        let ct = convergence_time(&trace_of(&[0.1, 0.05], 5), &ones(1), crit).unwrap();
        assert_eq!(
            ct,
            ConvergenceTime {
                tau: 0,
                converged: true
            }
        );
    }

    #[test]
    fn tau_counts_processed_functions() {
        let crit = ConvergenceCriterion::new(0.1, 100).unwrap();
        let ct =
            convergence_time(&trace_of(&[1.0, 0.5, 0.2, 0.09, 0.01], 5), &ones(1), crit).unwrap();
        assert_eq!(
            ct,
            ConvergenceTime {
                tau: 15,
                converged: true
            }
        );
    }

    #[test]
    fn never_reaching_threshold_is_a_failure_at_the_cap() {
        let crit = ConvergenceCriterion::new(1e-3, 12).unwrap();
        let ct = convergence_time(&trace_of(&[1.0, 0.5, 0.2, 1e-4], 5), &ones(1), crit).unwrap();
        assert_eq!(
            ct,
            ConvergenceTime {
                tau: 12,
                converged: false
            }
        );
    }

    #[test]
    fn zero_optimum_and_bad_criteria_are_rejected() {
        let crit = ConvergenceCriterion::new(0.1, 10).unwrap();
        assert!(convergence_time(&trace_of(&[1.0], 1), &DVector::zeros(1), crit).is_err());
        assert!(ConvergenceCriterion::new(0.0, 10).is_err());
        assert!(ConvergenceCriterion::new(0.1, 0).is_err());
        let mut bare = trace_of(&[1.0], 1);
        bare.records[0].rel_dist = None;
        assert!(convergence_time(&bare, &ones(1), crit).is_err());
    }

    #[test]
    fn stored_iterates_take_precedence() {
        let mut tr = trace_of(&[1.0, 1.0], 2);
        tr.records[1].iterate = Some(DVector::from_column_slice(&[1.05, 1.0]));
        let crit = ConvergenceCriterion::new(0.1, 10).unwrap();
        let ct = convergence_time(&tr, &ones(2), crit).unwrap();
        assert_eq!(ct.tau, 2);
    }

    proptest! {
        #[test]
        fn tightening_rho_never_decreases_tau(
            dists in prop::collection::vec(0.0f64..2.0, 1..60),
            rho in 1e-3f64..1.5,
            shrink in 0.0f64..1.0,
        ) {
            let tr = trace_of(&dists, 3);
            let loose = ConvergenceCriterion::new(rho, 1000).unwrap();
            let tight = ConvergenceCriterion::new(rho * shrink.max(1e-6), 1000).unwrap();
            let a = convergence_time(&tr, &ones(1), loose).unwrap().tau;
            let b = convergence_time(&tr, &ones(1), tight).unwrap().tau;
            prop_assert!(b >= a);
        }

        #[test]
        fn histogram_counts_are_conserved(
            values in prop::collection::vec(prop_oneof![-10.0f64..1e6, Just(f64::NAN), Just(f64::INFINITY)], 0..200),
            bins in 1usize..40,
        ) {
            let total: usize = histogram(&values, &log_edges(1e5, bins)).iter().map(|b| b.count).sum();
            prop_assert_eq!(total, values.len());
            let total: usize = histogram(&values, &linear_edges(0.0, 1.0, bins)).iter().map(|b| b.count).sum();
            prop_assert_eq!(total, values.len());
        }
    }

    #[test]
    fn histogram_bins_are_half_open() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.5, 2.0], &[0.0, 1.0, 2.0]);
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), [2, 3]);
        let e = log_edges(1e4, 5);
        assert_eq!(e.len(), 6);
        assert_relative_eq!(e[5], 1e4, max_relative = 1e-12);
        assert_eq!(e[0], 0.0);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0, 10.0], 1);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert_relative_eq!(s.std, (50.0f64 / 3.0).sqrt(), max_relative = 1e-14);
        assert_eq!((s.min, s.max, s.failures), (1.0, 10.0, 1));
        let one = summarize(&[7.0], 0);
        assert_eq!((one.mean, one.median, one.std), (7.0, 7.0, 0.0));
    }

    #[test]
    fn log_grid_covers_the_ends() {
        let g = log_grid(100_000, 50);
        assert_eq!(g[0], 0);
        assert_eq!(*g.last().unwrap(), 100_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_grid(5, 10), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn jump_detection() {
        let mut tr = trace_of(&[1.0; 4], 1);
        for (r, f) in tr.records.iter_mut().zip([1.0, 0.1, 0.5, 0.2]) {
            r.objective = Some(f);
        }
        assert!(!has_objective_jump(&tr, 10.0));
        tr.records[3].objective = Some(1.5);
        assert!(has_objective_jump(&tr, 10.0));
        tr.records[3].objective = Some(0.2);
        tr.status = RunStatus::Diverged;
        assert!(has_objective_jump(&tr, 10.0));
    }

    #[test]
    fn recursion_examples() {
        assert_eq!(lemma3_constant(2.0, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(lemma3_constant(3.0, 4.0, 10.0, 1.0), 10.0);
        let r = check_recursion(2.0, 1.0, 1.0, 1.0, 100_000).unwrap();
        assert_eq!(r.q, 1.0);
        assert_eq!(r.sequence[1], 0.0);
        assert_eq!(r.violations, 0);
        let z = check_recursion(2.0, 0.0, 1.0, 0.0, 1000).unwrap();
        assert!(z.sequence.iter().all(|u| *u == 0.0));
        assert_eq!(z.violations, 0);
        assert!(check_recursion(1.0, 1.0, 1.0, 1.0, 10).is_err());
        assert!(check_recursion(2.0, -1.0, 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn slope_of_a_power_law() {
        let pts: Vec<(f64, f64)> = (1..50).map(|t| (t as f64, 3.0 / (t as f64))).collect();
        assert_relative_eq!(log_log_slope(&pts), -1.0, max_relative = 1e-12);
    }

    fn small(kind: StudyKind) -> ExperimentSpec {
        let mut s = ExperimentSpec::defaults(kind);
        s.reps = 3;
        s.seed = 5;
        s
    }

    #[test]
    fn single_realization_statistics_equal_the_value() {
        let mut s = small(StudyKind::Condition);
        s.reps = 1;
        s.n = 5;
        s.xi = DiagonalDistribution::PowersOfTen(0);
        s.cap = 2_000;
        let r = run_condition_study(&s).unwrap();
        for a in &r.algorithms {
            assert_eq!(a.values.len(), 1);
            assert_eq!(a.summary.mean, a.values[0]);
            assert_eq!(a.summary.median, a.values[0]);
        }
    }

    #[test]
    fn studies_are_reproducible_and_thread_independent() {
        let mut s = small(StudyKind::Condition);
        s.n = 5;
        s.cap = 3_000;
        let a = run_condition_study(&s).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| run_condition_study(&s)).unwrap();
        assert_eq!(a.algorithms, b.algorithms);
    }

    #[test]
    fn unit_cap_fails_everything() {
        let mut s = small(StudyKind::Dimension);
        s.dims = vec![5];
        s.cap = 1;
        let r = run_dimension_study(&s).unwrap();
        for a in &r.algorithms {
            assert!(a.values.iter().all(|v| *v == 1.0));
            assert_eq!(a.failure_rate(), 1.0);
        }
        assert_eq!(r.extra("failure_rate RES n=5"), Some(1.0));
    }

    #[test]
    fn single_sample_size_gives_one_column() {
        let mut s = small(StudyKind::SampleSize);
        s.n = 5;
        s.sample_sizes = vec![5];
        s.cap = 2_000;
        let r = run_sample_size_study(&s).unwrap();
        assert_eq!(r.algorithms.len(), 1);
        assert_eq!(r.algorithms[0].label, "RES L=5");
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut s = small(StudyKind::SvmAccuracy);
        s.train_size = 0;
        assert!(run_svm_study(&s).is_err());
        assert!(run_svm_study(&small(StudyKind::Condition)).is_err());
    }

    #[test]
    fn svm_studies_produce_every_column() {
        let mut s = small(StudyKind::SvmAccuracy);
        s.train_size = 200;
        s.test_size = 200;
        s.budget = 200;
        let r = run_svm_study(&s).unwrap();
        assert_eq!(r.algorithms.len(), 3);
        assert!(r
            .algorithms
            .iter()
            .all(|a| a.values.iter().all(|v| (0.0..=1.0).contains(v))));

        let mut s = small(StudyKind::SvmRegularization);
        s.train_size = 200;
        s.budget = 200;
        let r = run_svm_study(&s).unwrap();
        assert_eq!(r.algorithms.len(), 3);
        assert!(r.extra("fraction_res_below_plain").is_some());

        let mut s = small(StudyKind::SvmConvergence);
        s.train_size = 200;
        s.budget = 100;
        let r = run_svm_study(&s).unwrap();
        assert_eq!(r.algorithms.len(), 4);
        assert_eq!(r.traces.len(), 4);
    }

    #[test]
    fn non_compliant_rate_config_is_rejected() {
        let mut s = small(StudyKind::RateCheck);
        s.gamma = 1e-4;
        match run_rate_check(&s) {
            Err(ExperimentError::InvalidArgument(m)) => assert!(m.contains("0.002")),
            other => panic!("expected invalid argument, got {other:?}"),
        }
        s.rate_runs = 0;
        assert!(run_rate_check(&s).unwrap().empirical.is_none());
    }

    #[test]
    fn outputs_are_written() {
        let mut s = small(StudyKind::Condition);
        s.n = 5;
        s.cap = 1_000;
        let r = run_study(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&r, dir.path()).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"summary.csv".to_string()));
        assert!(names.contains(&"trace_RES.csv".to_string()));
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with("algorithm,mean,median,std,failures\n"));
        assert_eq!(summary.lines().count(), 3);
    }
}
