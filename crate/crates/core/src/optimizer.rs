//! RES, SGD and non-regularized stochastic BFGS drivers.
//!
//! Each method is a small stepper ([`ResSolver`], [`SgdSolver`]) that owns
//! its iterate and random stream. [`drive`] runs a stepper, records a
//! [`RunTrace`] and handles stopping and divergence; `run_*` are the usual
//! entry points.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvature::{CurvatureError, HessianApprox, SkipReason, VariationPair};
use crate::io::fmt_f64;
use crate::objective::{check_dim, ObjectiveError, StochasticObjective};
use crate::rng::{rng_from_seed, SimRng};

/// Iterates with a larger norm are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("run diverged after {} iterations", .0.iterations())]
    Diverged(Box<RunTrace>),
    #[error("curvature failure after {} iterations: {source}", trace.iterations())]
    Curvature {
        source: CurvatureError,
        trace: Box<RunTrace>,
    },
}

impl OptimizerError {
    /// The partial trace of a run that failed mid-way.
    pub fn trace(&self) -> Option<&RunTrace> {
        match self {
            OptimizerError::Diverged(trace) | OptimizerError::Curvature { trace, .. } => {
                Some(trace)
            }
            _ => None,
        }
    }

    pub fn into_trace(self) -> Option<RunTrace> {
        match self {
            OptimizerError::Diverged(trace) | OptimizerError::Curvature { trace, .. } => {
                Some(*trace)
            }
            _ => None,
        }
    }
}

/// Error from a single step, before a trace is attached.
#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
}

/// Step sizes `ε_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `ε_t = ε₀T₀/(T₀ + t)`.
    Decaying {
        eps0: f64,
        t0: f64,
    },
    Constant(f64),
}

impl StepSchedule {
    pub fn decaying(eps0: f64, t0: f64) -> Result<Self, OptimizerError> {
        if !(eps0 > 0.0 && eps0.is_finite() && t0 > 0.0 && t0.is_finite()) {
            return Err(OptimizerError::InvalidConfig(format!(
                "step schedule needs eps0 > 0 and T0 > 0, got eps0={eps0}, T0={t0}"
            )));
        }
        Ok(StepSchedule::Decaying { eps0, t0 })
    }

    pub fn constant(eps: f64) -> Result<Self, OptimizerError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(OptimizerError::InvalidConfig(format!(
                "constant step must be positive, got {eps}"
            )));
        }
        Ok(StepSchedule::Constant(eps))
    }

    pub fn step_size(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Decaying { eps0, t0 } => eps0 * t0 / (t0 + t as f64),
            StepSchedule::Constant(eps) => eps,
        }
    }

    /// Scales every step by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            StepSchedule::Decaying { eps0, t0 } => StepSchedule::Decaying {
                eps0: eps0 * factor,
                t0,
            },
            StepSchedule::Constant(eps) => StepSchedule::Constant(eps * factor),
        }
    }

    fn validate(&self) -> Result<(), OptimizerError> {
        match *self {
            StepSchedule::Decaying { eps0, t0 } => Self::decaying(eps0, t0).map(|_| ()),
            StepSchedule::Constant(eps) => Self::constant(eps).map(|_| ()),
        }
    }
}

pub fn step_size(schedule: &StepSchedule, t: usize) -> f64 {
    schedule.step_size(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Res,
    Sgd,
    PlainBfgs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Res => "RES",
            Method::Sgd => "SGD",
            Method::PlainBfgs => "plain-SBFGS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResConfig {
    pub batch_size: usize,
    pub delta: f64,
    pub gamma: f64,
    pub schedule: StepSchedule,
    /// `B̂₀ = b0_scale · I`.
    pub b0_scale: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Never update `B̂`; used to check the SGD limit.
    #[serde(default)]
    pub freeze_curvature: bool,
}

impl ResConfig {
    /// Quadratic-study defaults: `L = 5`, `δ = 10⁻³`, `Γ = 10⁻⁴`,
    /// `ε_t = 0.1·10³/(10³ + t)`, `B̂₀ = (1 + δ) I`.
    pub fn new(seed: u64) -> Self {
        let delta = 1e-3;
        Self {
            batch_size: 5,
            delta,
            gamma: 1e-4,
            schedule: StepSchedule::Decaying { eps0: 0.1, t0: 1e3 },
            b0_scale: 1.0 + delta,
            max_iters: 1_000,
            seed,
            freeze_curvature: false,
        }
    }

    /// Non-regularized stochastic BFGS: `δ = 0`, `Γ = 0`.
    pub fn plain(mut self) -> Self {
        self.delta = 0.0;
        self.gamma = 0.0;
        if !(self.b0_scale > 0.0) {
            self.b0_scale = 1.0;
        }
        self
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size L must be at least 1".into());
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be nonnegative, got {}", self.delta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be nonnegative, got {}", self.gamma));
        }
        if !(self.b0_scale > self.delta && self.b0_scale.is_finite()) {
            return bad(format!(
                "initial curvature scale {} must exceed delta {}",
                self.b0_scale, self.delta
            ));
        }
        self.schedule.validate()
    }

    /// Whether `2ε₀T₀Γ > 1`, the step-size condition behind the `O(1/t)`
    /// rate bound. Informational only.
    pub fn rate_guarantee(&self) -> bool {
        self.rate_product().is_some_and(|p| p > 1.0)
    }

    /// `2ε₀T₀Γ` for decaying schedules.
    pub fn rate_product(&self) -> Option<f64> {
        match self.schedule {
            StepSchedule::Decaying { eps0, t0 } => Some(2.0 * eps0 * t0 * self.gamma),
            StepSchedule::Constant(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub max_iters: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.batch_size == 0 {
            return Err(OptimizerError::InvalidConfig(
                "batch size L must be at least 1".into(),
            ));
        }
        self.schedule.validate()
    }
}

/// What [`drive`] records besides the mandatory fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOptions {
    /// Evaluate `F(w_t)` every this many iterations; 0 disables it.
    pub objective_every: usize,
    pub keep_iterates: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            objective_every: 1,
            keep_iterates: false,
        }
    }
}

impl TraceOptions {
    pub fn minimal() -> Self {
        Self {
            objective_every: 0,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub functions_processed: usize,
    /// Step size used by iteration `t`.
    pub eps_t: f64,
    /// `‖w_t − w*‖/‖w*‖` when the optimum is known and nonzero.
    pub rel_dist: Option<f64>,
    pub objective: Option<f64>,
    /// Whether the curvature update that produced this iterate was skipped.
    pub skipped_update: bool,
    pub iterate: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    Stopped,
    Diverged,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Stopped => "stopped",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub method: Method,
    pub batch_size: usize,
    pub records: Vec<TraceRecord>,
    pub status: RunStatus,
    pub final_iterate: DVector<f64>,
    pub skipped_updates: usize,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.t)
    }

    pub fn last(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("a trace always holds the initial record")
    }

    /// Writes `t,functions_processed,eps_t,rel_dist,objective,skipped_update,status`.
    /// Every row but the last carries status `running`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "functions_processed",
            "eps_t",
            "rel_dist",
            "objective",
            "skipped_update",
            "status",
        ])?;
        let last = self.records.len().saturating_sub(1);
        for (k, r) in self.records.iter().enumerate() {
            let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
            w.write_record([
                r.t.to_string(),
                r.functions_processed.to_string(),
                fmt_f64(r.eps_t),
                opt(r.rel_dist),
                opt(r.objective),
                u8::from(r.skipped_update).to_string(),
                if k == last {
                    self.status.name()
                } else {
                    "running"
                }
                .to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one iteration.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub eps: f64,
    pub skipped: Option<SkipReason>,
}

/// A sequential stochastic method.
pub trait Stepper {
    fn method(&self) -> Method;
    fn batch_size(&self) -> usize;
    fn iteration(&self) -> usize;
    fn iterate(&self) -> &DVector<f64>;
    fn step_size(&self, t: usize) -> f64;
    fn step(&mut self) -> Result<StepOutcome, StepError>;
}

/// Everything computed during one RES iteration.
#[derive(Debug, Clone)]
pub struct ResStep {
    pub batch_token: u64,
    pub eps: f64,
    pub gradient: DVector<f64>,
    pub direction: DVector<f64>,
    pub pair: VariationPair,
    pub skipped: Option<SkipReason>,
}

/// RES stepper. With `classic = true` the curvature update is the classic
/// BFGS update (requires `δ = 0`).
pub struct ResSolver<'a, P: StochasticObjective> {
    problem: &'a P,
    cfg: ResConfig,
    classic: bool,
    hessian: HessianApprox,
    w: DVector<f64>,
    t: usize,
    rng: SimRng,
}

impl<'a, P: StochasticObjective> ResSolver<'a, P> {
    pub fn new(problem: &'a P, cfg: ResConfig, w0: DVector<f64>) -> Result<Self, OptimizerError> {
        Self::build(problem, cfg, w0, false)
    }

    pub fn new_plain(
        problem: &'a P,
        cfg: ResConfig,
        w0: DVector<f64>,
    ) -> Result<Self, OptimizerError> {
        if cfg.delta != 0.0 || cfg.gamma != 0.0 {
            return Err(OptimizerError::InvalidConfig(format!(
                "plain stochastic BFGS needs delta = 0 and gamma = 0, got delta={}, gamma={}",
                cfg.delta, cfg.gamma
            )));
        }
        Self::build(problem, cfg, w0, true)
    }

    fn build(
        problem: &'a P,
        cfg: ResConfig,
        w0: DVector<f64>,
        classic: bool,
    ) -> Result<Self, OptimizerError> {
        cfg.validate()?;
        check_dim(problem.dim(), &w0)?;
        if w0.iter().any(|x| !x.is_finite()) {
            return Err(OptimizerError::InvalidConfig("w0 must be finite".into()));
        }
        let hessian = HessianApprox::scaled_identity(problem.dim(), cfg.b0_scale, cfg.delta)
            .map_err(|e| OptimizerError::InvalidConfig(e.to_string()))?;
        let rng = rng_from_seed(cfg.seed);
        Ok(Self {
            problem,
            cfg,
            classic,
            hessian,
            w: w0,
            t: 0,
            rng,
        })
    }

    pub fn hessian(&self) -> &HessianApprox {
        &self.hessian
    }

    pub fn config(&self) -> &ResConfig {
        &self.cfg
    }

    /// One iteration of the method, returning its intermediate quantities.
    pub fn step_detailed(&mut self) -> Result<ResStep, StepError> {
        let eps = self.cfg.schedule.step_size(self.t);
        let batch = self
            .problem
            .draw_batch(self.cfg.batch_size, &mut self.rng)?;
        let gradient = self.problem.stochastic_gradient(&self.w, &batch)?;
        let direction = self.hessian.descent_direction(&gradient, self.cfg.gamma)?;
        let w_next = &self.w - &direction * eps;
        // second gradient on the same batch
        let gradient_next = self.problem.stochastic_gradient(&w_next, &batch)?;
        let pair =
            VariationPair::new(&w_next - &self.w, gradient_next - &gradient, self.cfg.delta)?;
        let skipped = if self.cfg.freeze_curvature {
            Some(SkipReason::NoMovement)
        } else if self.classic {
            self.hessian.apply_classic(&pair)?
        } else {
            self.hessian.apply_regularized(&pair)?
        };
        #[cfg(debug_assertions)]
        if skipped.is_none() && self.cfg.delta > 0.0 {
            let tol = 1e-8 * self.hessian.matrix().amax().max(1.0);
            if !self.hessian.satisfies_floor(tol) {
                return Err(CurvatureError::NotPositiveDefinite(format!(
                    "smallest eigenvalue fell below delta = {}",
                    self.cfg.delta
                ))
                .into());
            }
        }
        self.w = w_next;
        self.t += 1;
        Ok(ResStep {
            batch_token: batch.token(),
            eps,
            gradient,
            direction,
            pair,
            skipped,
        })
    }
}

impl<P: StochasticObjective> Stepper for ResSolver<'_, P> {
    fn method(&self) -> Method {
        if self.classic {
            Method::PlainBfgs
        } else {
            Method::Res
        }
    }

    fn batch_size(&self) -> usize {
        self.cfg.batch_size
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&self) -> &DVector<f64> {
        &self.w
    }

    fn step_size(&self, t: usize) -> f64 {
        self.cfg.schedule.step_size(t)
    }

    fn step(&mut self) -> Result<StepOutcome, StepError> {
        let s = self.step_detailed()?;
        Ok(StepOutcome {
            eps: s.eps,
            skipped: s.skipped,
        })
    }
}

/// `w_{t+1} = w_t − ε_t ŝ(w_t, θ̃_t)`.
pub struct SgdSolver<'a, P: StochasticObjective> {
    problem: &'a P,
    cfg: SgdConfig,
    w: DVector<f64>,
    t: usize,
    rng: SimRng,
}

impl<'a, P: StochasticObjective> SgdSolver<'a, P> {
    pub fn new(problem: &'a P, cfg: SgdConfig, w0: DVector<f64>) -> Result<Self, OptimizerError> {
        cfg.validate()?;
        check_dim(problem.dim(), &w0)?;
        if w0.iter().any(|x| !x.is_finite()) {
            return Err(OptimizerError::InvalidConfig("w0 must be finite".into()));
        }
        let rng = rng_from_seed(cfg.seed);
        Ok(Self {
            problem,
            cfg,
            w: w0,
            t: 0,
            rng,
        })
    }
}

impl<P: StochasticObjective> Stepper for SgdSolver<'_, P> {
    fn method(&self) -> Method {
        Method::Sgd
    }

    fn batch_size(&self) -> usize {
        self.cfg.batch_size
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iterate(&self) -> &DVector<f64> {
        &self.w
    }

    fn step_size(&self, t: usize) -> f64 {
        self.cfg.schedule.step_size(t)
    }

    fn step(&mut self) -> Result<StepOutcome, StepError> {
        let eps = self.cfg.schedule.step_size(self.t);
        let batch = self
            .problem
            .draw_batch(self.cfg.batch_size, &mut self.rng)?;
        let g = self.problem.stochastic_gradient(&self.w, &batch)?;
        self.w.axpy(-eps, &g, 1.0);
        self.t += 1;
        Ok(StepOutcome { eps, skipped: None })
    }
}

/// Runs `stepper` for up to `max_iters` iterations or until `stop` accepts a
/// record (the initial record included).
pub fn drive<P, S, F>(
    problem: &P,
    stepper: &mut S,
    max_iters: usize,
    opts: TraceOptions,
    mut stop: F,
) -> Result<RunTrace, OptimizerError>
where
    P: StochasticObjective,
    S: Stepper,
    F: FnMut(&TraceRecord) -> bool,
{
    let optimum = problem.optimum();
    let optimum = optimum.as_ref().filter(|w| w.norm() > 0.0);
    let batch = stepper.batch_size();
    let make_record = |stepper: &S, skipped: bool| {
        let t = stepper.iteration();
        let w = stepper.iterate();
        let objective = if opts.objective_every > 0 && t.is_multiple_of(opts.objective_every) {
            problem.exact_objective(w)
        } else {
            None
        };
        TraceRecord {
            t,
            functions_processed: batch * t,
            eps_t: stepper.step_size(t),
            rel_dist: optimum.map(|ws| (w - ws).norm() / ws.norm()),
            objective,
            skipped_update: skipped,
            iterate: opts.keep_iterates.then(|| w.clone()),
        }
    };
    let mut trace = RunTrace {
        method: stepper.method(),
        batch_size: batch,
        records: vec![make_record(stepper, false)],
        status: RunStatus::Completed,
        final_iterate: stepper.iterate().clone(),
        skipped_updates: 0,
    };
    if stop(trace.last()) {
        trace.status = RunStatus::Stopped;
        return Ok(trace);
    }
    for _ in 0..max_iters {
        let outcome = match stepper.step() {
            Ok(o) => o,
            Err(StepError::Objective(e)) => return Err(e.into()),
            Err(StepError::Curvature(source)) => {
                trace.status = RunStatus::Diverged;
                return Err(OptimizerError::Curvature {
                    source,
                    trace: Box::new(trace),
                });
            }
        };
        let skipped = outcome.skipped.is_some();
        trace.skipped_updates += usize::from(skipped);
        let record = make_record(stepper, skipped);
        trace.final_iterate.copy_from(stepper.iterate());
        let w = stepper.iterate();
        let diverged = w.iter().any(|x| !x.is_finite()) || w.norm() > DIVERGENCE_NORM;
        trace.records.push(record);
        if diverged {
            trace.status = RunStatus::Diverged;
            return Err(OptimizerError::Diverged(Box::new(trace)));
        }
        if stop(trace.last()) {
            trace.status = RunStatus::Stopped;
            break;
        }
    }
    Ok(trace)
}

pub fn run_res<P: StochasticObjective>(
    problem: &P,
    cfg: &ResConfig,
    w0: DVector<f64>,
) -> Result<RunTrace, OptimizerError> {
    run_res_with(problem, cfg, w0, TraceOptions::default(), |_| false)
}

pub fn run_res_with<P, F>(
    problem: &P,
    cfg: &ResConfig,
    w0: DVector<f64>,
    opts: TraceOptions,
    stop: F,
) -> Result<RunTrace, OptimizerError>
where
    P: StochasticObjective,
    F: FnMut(&TraceRecord) -> bool,
{
    let mut solver = ResSolver::new(problem, cfg.clone(), w0)?;
    drive(problem, &mut solver, cfg.max_iters, opts, stop)
}

pub fn run_plain_sbfgs<P: StochasticObjective>(
    problem: &P,
    cfg: &ResConfig,
    w0: DVector<f64>,
) -> Result<RunTrace, OptimizerError> {
    run_plain_sbfgs_with(problem, cfg, w0, TraceOptions::default(), |_| false)
}

pub fn run_plain_sbfgs_with<P, F>(
    problem: &P,
    cfg: &ResConfig,
    w0: DVector<f64>,
    opts: TraceOptions,
    stop: F,
) -> Result<RunTrace, OptimizerError>
where
    P: StochasticObjective,
    F: FnMut(&TraceRecord) -> bool,
{
    let mut solver = ResSolver::new_plain(problem, cfg.clone(), w0)?;
    drive(problem, &mut solver, cfg.max_iters, opts, stop)
}

pub fn run_sgd<P: StochasticObjective>(
    problem: &P,
    cfg: &SgdConfig,
    w0: DVector<f64>,
) -> Result<RunTrace, OptimizerError> {
    run_sgd_with(problem, cfg, w0, TraceOptions::default(), |_| false)
}

pub fn run_sgd_with<P, F>(
    problem: &P,
    cfg: &SgdConfig,
    w0: DVector<f64>,
    opts: TraceOptions,
    stop: F,
) -> Result<RunTrace, OptimizerError>
where
    P: StochasticObjective,
    F: FnMut(&TraceRecord) -> bool,
{
    let mut solver = SgdSolver::new(problem, cfg.clone(), w0)?;
    drive(problem, &mut solver, cfg.max_iters, opts, stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{DiagonalDistribution, QuadraticProblem};
    use approx::assert_relative_eq;

    fn quad(diag: &[f64], b: &[f64], theta0: f64) -> QuadraticProblem {
        QuadraticProblem::new(
            DVector::from_column_slice(diag),
            DVector::from_column_slice(b),
            theta0,
        )
        .unwrap()
    }

    #[test]
    fn step_schedule_values() {
        let s = StepSchedule::decaying(0.1, 1e3).unwrap();
        assert_eq!(s.step_size(0), 0.1);
        assert_relative_eq!(step_size(&s, 1000), 0.05, epsilon = 1e-17);
        let s = StepSchedule::decaying(0.3, 7.0).unwrap();
        assert_relative_eq!(s.step_size(7), 0.15, epsilon = 1e-16);
        assert!(StepSchedule::decaying(0.0, 1.0).is_err());
        assert!(StepSchedule::constant(-1.0).is_err());
    }

    #[test]
    fn rate_guarantee_flag() {
        let cfg = ResConfig::new(0);
        assert_relative_eq!(cfg.rate_product().unwrap(), 0.02, epsilon = 1e-15);
        assert!(!cfg.rate_guarantee());
        let mut cfg = cfg;
        cfg.gamma = 0.1;
        assert!(cfg.rate_guarantee());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ResConfig::new(0);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ResConfig::new(0);
        cfg.b0_scale = cfg.delta;
        assert!(cfg.validate().is_err());
        let p = quad(&[1.0], &[1.0], 0.1);
        let cfg = ResConfig::new(0);
        assert!(run_plain_sbfgs(&p, &cfg, DVector::zeros(1)).is_err());
        assert!(run_res(&p, &cfg, DVector::zeros(2)).is_err());
    }

    #[test]
    fn sgd_closed_form_recursion() {
        // a = 1, b = 0, constant ε = 0.5: w_t = w0 · 0.5ᵗ
        let p = quad(&[1.0], &[0.0], 0.0);
        let cfg = SgdConfig {
            batch_size: 1,
            schedule: StepSchedule::constant(0.5).unwrap(),
            max_iters: 20,
            seed: 1,
        };
        let trace = run_sgd_with(
            &p,
            &cfg,
            DVector::from_element(1, 3.0),
            TraceOptions {
                objective_every: 1,
                keep_iterates: true,
            },
            |_| false,
        )
        .unwrap();
        for r in &trace.records {
            let w = r.iterate.as_ref().unwrap()[0];
            assert_eq!(w, 3.0 * 0.5f64.powi(r.t as i32));
        }
    }

    #[test]
    fn sgd_fixed_point_at_optimum() {
        let p = quad(&[2.0, 0.5], &[1.0, -1.0], 0.0);
        let ws = p.optimum();
        let cfg = SgdConfig {
            batch_size: 1,
            schedule: StepSchedule::decaying(0.1, 1e3).unwrap(),
            max_iters: 50,
            seed: 3,
        };
        let trace = run_sgd(&p, &cfg, ws.clone()).unwrap();
        assert!(trace.records.iter().all(|r| r.rel_dist == Some(0.0)));
        assert_eq!(trace.final_iterate, ws);
    }

    #[test]
    fn functions_processed_grows_by_batch() {
        let p = QuadraticProblem::generate_seeded(5, DiagonalDistribution::PowersOfTen(1), 0.5, 2)
            .unwrap();
        let mut cfg = ResConfig::new(4);
        cfg.max_iters = 30;
        let trace = run_res(&p, &cfg, DVector::zeros(5)).unwrap();
        assert_eq!(trace.records.len(), 31);
        for pair in trace.records.windows(2) {
            assert_eq!(pair[1].functions_processed, pair[0].functions_processed + 5);
        }
        assert_eq!(trace.status, RunStatus::Completed);
    }

    #[test]
    fn res_converges_on_noiseless_quadratic() {
        let p = quad(&[2.0, 4.0], &[1.0, -3.0], 0.0);
        let mut cfg = ResConfig::new(1);
        cfg.max_iters = 400;
        cfg.schedule = StepSchedule::decaying(0.5, 1e3).unwrap();
        let trace = run_res(&p, &cfg, DVector::zeros(2)).unwrap();
        let d: Vec<f64> = trace.records.iter().map(|r| r.rel_dist.unwrap()).collect();
        assert!(
            *d.last().unwrap() < 1e-8,
            "final distance {}",
            d.last().unwrap()
        );
        for w in d[10..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn plain_sbfgs_wiring_and_noiseless_convergence() {
        let p = quad(&[1.0, 3.0], &[0.5, 0.5], 0.0);
        let cfg = ResConfig {
            max_iters: 300,
            schedule: StepSchedule::constant(0.5).unwrap(),
            ..ResConfig::new(5).plain()
        };
        let mut solver = ResSolver::new_plain(&p, cfg.clone(), DVector::zeros(2)).unwrap();
        assert_eq!(solver.method(), Method::PlainBfgs);
        solver.step_detailed().unwrap();
        assert_eq!(solver.hessian().delta(), 0.0);
        let trace = run_plain_sbfgs(&p, &cfg, DVector::zeros(2)).unwrap();
        assert!(trace.last().rel_dist.unwrap() < 1e-8);
    }

    #[test]
    fn frozen_huge_curvature_matches_scaled_sgd() {
        let p = QuadraticProblem::generate_seeded(8, DiagonalDistribution::PowersOfTen(1), 0.5, 12)
            .unwrap();
        let gamma = 1e-2;
        let schedule = StepSchedule::decaying(0.5, 100.0).unwrap();
        let res_cfg = ResConfig {
            batch_size: 3,
            delta: 0.0,
            gamma,
            schedule,
            b0_scale: 1e14,
            max_iters: 200,
            seed: 77,
            freeze_curvature: true,
        };
        let sgd_cfg = SgdConfig {
            batch_size: 3,
            schedule: schedule.scaled(gamma),
            max_iters: 200,
            seed: 77,
        };
        let opts = TraceOptions {
            objective_every: 0,
            keep_iterates: true,
        };
        let a = run_res_with(&p, &res_cfg, DVector::zeros(8), opts, |_| false).unwrap();
        let b = run_sgd_with(&p, &sgd_cfg, DVector::zeros(8), opts, |_| false).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records).skip(1) {
            let (wa, wb) = (ra.iterate.as_ref().unwrap(), rb.iterate.as_ref().unwrap());
            assert!((wa - wb).norm() <= 1e-6 * wb.norm());
        }
    }

    #[test]
    fn descent_direction_bounds() {
        let p = QuadraticProblem::generate_seeded(10, DiagonalDistribution::PowersOfTen(2), 0.5, 5)
            .unwrap();
        let cfg = ResConfig::new(9);
        let mut solver = ResSolver::new(&p, cfg.clone(), DVector::zeros(10)).unwrap();
        for _ in 0..200 {
            let s = solver.step_detailed().unwrap();
            let g = &s.gradient;
            let gg = g.norm_squared();
            assert!(g.dot(&s.direction) >= cfg.gamma * gg * (1.0 - 1e-9));
            assert!(s.direction.norm() <= (cfg.gamma + 1.0 / cfg.delta) * g.norm() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn stop_predicate_and_initial_stop() {
        let p = quad(&[1.0], &[1.0], 0.2);
        let cfg = ResConfig {
            max_iters: 1000,
            ..ResConfig::new(3)
        };
        let trace = run_res_with(&p, &cfg, p.optimum(), TraceOptions::minimal(), |r| {
            r.rel_dist.unwrap() <= 0.5
        })
        .unwrap();
        assert_eq!(trace.status, RunStatus::Stopped);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let p = quad(&[1.0], &[1.0], 0.0);
        let cfg = SgdConfig {
            batch_size: 1,
            schedule: StepSchedule::constant(5.0).unwrap(),
            max_iters: 10_000,
            seed: 0,
        };
        let err = run_sgd(&p, &cfg, DVector::from_element(1, 1.0)).unwrap_err();
        let trace = err.trace().unwrap();
        assert_eq!(trace.status, RunStatus::Diverged);
        assert!(trace.iterations() > 5);
    }

    #[test]
    fn trace_csv_layout() {
        let p = quad(&[1.0, 2.0], &[1.0, 1.0], 0.3);
        let cfg = ResConfig {
            max_iters: 3,
            ..ResConfig::new(1)
        };
        let trace = run_res(&p, &cfg, DVector::zeros(2)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,functions_processed,eps_t,rel_dist,objective,skipped_update,status"
        );
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0,"));
        assert!(lines[4].ends_with(",completed"));
        assert!(lines[3].ends_with(",running"));
    }
}
