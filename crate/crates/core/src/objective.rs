//! Stochastic objectives `F(w) = E[f(w, θ)]` and the two built-in problem
//! families: randomized diagonal quadratics and a linear SVM on a finite
//! training set.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn invalid(msg: impl Into<String>) -> ObjectiveError {
    ObjectiveError::InvalidArgument(msg.into())
}

static NEXT_BATCH_TOKEN: AtomicU64 = AtomicU64::new(1);

/// An ordered batch of `L >= 1` samples. The batch can be evaluated at any
/// number of iterates; `token` identifies it so callers can check that two
/// gradients were taken on the same draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<S> {
    samples: Vec<S>,
    token: u64,
}

impl<S> SampleBatch<S> {
    pub fn new(samples: Vec<S>) -> Result<Self, ObjectiveError> {
        if samples.is_empty() {
            return Err(invalid("a sample batch needs at least one sample"));
        }
        Ok(Self {
            samples,
            token: NEXT_BATCH_TOKEN.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn token(&self) -> u64 {
        self.token
    }
}

/// Eigenvalue bounds on the instantaneous Hessians `∇²f(w, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub lower: f64,
    pub upper: f64,
    /// Bound on `E‖ŝ‖²`. Informational; never enforced.
    pub grad_second_moment: Option<f64>,
}

impl CurvatureBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, ObjectiveError> {
        if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
            return Err(invalid(format!(
                "curvature bounds need 0 < lower <= upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            lower,
            upper,
            grad_second_moment: None,
        })
    }
}

/// A convex stochastic objective defined through its sample functions.
pub trait StochasticObjective: Sync {
    type Sample: Clone + Send + Sync;

    fn dim(&self) -> usize;

    fn draw_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Sample;

    /// `f(w, θ)` for a single sample.
    fn sample_value(&self, w: &DVector<f64>, sample: &Self::Sample) -> f64;

    /// Adds `scale * ∇f(w, θ)` into `out`.
    fn add_sample_gradient(
        &self,
        w: &DVector<f64>,
        sample: &Self::Sample,
        scale: f64,
        out: &mut DVector<f64>,
    );

    /// The exact average objective `F(w)`, when it can be evaluated.
    fn exact_objective(&self, _w: &DVector<f64>) -> Option<f64> {
        None
    }

    /// The minimizer of `F`, when known in closed form.
    fn optimum(&self) -> Option<DVector<f64>> {
        None
    }

    fn curvature_bounds(&self) -> Option<CurvatureBounds> {
        None
    }

    fn draw_batch<R: Rng + ?Sized>(
        &self,
        size: usize,
        rng: &mut R,
    ) -> Result<SampleBatch<Self::Sample>, ObjectiveError> {
        SampleBatch::new((0..size).map(|_| self.draw_sample(rng)).collect())
    }

    /// `ŝ(w, θ̃) = (1/L) Σ_l ∇f(w, θ_l)`.
    fn stochastic_gradient(
        &self,
        w: &DVector<f64>,
        batch: &SampleBatch<Self::Sample>,
    ) -> Result<DVector<f64>, ObjectiveError> {
        check_dim(self.dim(), w)?;
        let mut out = DVector::zeros(self.dim());
        let scale = 1.0 / batch.len() as f64;
        for sample in batch.samples() {
            self.add_sample_gradient(w, sample, scale, &mut out);
        }
        Ok(out)
    }

    /// `(1/L) Σ_l f(w, θ_l)`.
    fn stochastic_value(
        &self,
        w: &DVector<f64>,
        batch: &SampleBatch<Self::Sample>,
    ) -> Result<f64, ObjectiveError> {
        check_dim(self.dim(), w)?;
        let sum: f64 = batch
            .samples()
            .iter()
            .map(|s| self.sample_value(w, s))
            .sum();
        Ok(sum / batch.len() as f64)
    }
}

pub(crate) fn check_dim(expected: usize, w: &DVector<f64>) -> Result<(), ObjectiveError> {
    if w.len() != expected {
        return Err(ObjectiveError::DimensionMismatch {
            expected,
            found: w.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Quadratic family
// ---------------------------------------------------------------------------

/// How the diagonal of `A` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagonalDistribution {
    /// Uniform over `{1, 10⁻¹, …, 10⁻ξ}`; condition number at most `10^ξ`.
    PowersOfTen(u32),
    /// Uniform on `(0, 1]`.
    Uniform,
}

/// Draws below this are rejected for [`DiagonalDistribution::Uniform`].
pub const MIN_UNIFORM_DIAGONAL: f64 = 1e-12;

/// `f(w, θ) = ½ wᵀ(A + A·diag(θ))w + bᵀw` with `A` diagonal and
/// `θ ~ U[-θ₀, θ₀]ⁿ`, so `F(w) = ½ wᵀAw + bᵀw`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    diag: DVector<f64>,
    b: DVector<f64>,
    theta0: f64,
    seed: Option<u64>,
}

impl QuadraticProblem {
    pub fn new(diag: DVector<f64>, b: DVector<f64>, theta0: f64) -> Result<Self, ObjectiveError> {
        if diag.is_empty() {
            return Err(invalid("quadratic dimension must be at least 1"));
        }
        if diag.len() != b.len() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: diag.len(),
                found: b.len(),
            });
        }
        if let Some(a) = diag.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(invalid(format!(
                "diagonal entries must be positive, got {a}"
            )));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(invalid("b must be finite"));
        }
        if !(0.0..1.0).contains(&theta0) {
            return Err(invalid(format!("theta0 must lie in [0, 1), got {theta0}")));
        }
        Ok(Self {
            diag,
            b,
            theta0,
            seed: None,
        })
    }

    /// Random instance: `b ~ U[0,1]ⁿ` and `a_ii` from `dist`.
    pub fn generate<R: Rng + ?Sized>(
        n: usize,
        dist: DiagonalDistribution,
        theta0: f64,
        rng: &mut R,
    ) -> Result<Self, ObjectiveError> {
        if n == 0 {
            return Err(invalid("quadratic dimension must be at least 1"));
        }
        let diag = DVector::from_iterator(
            n,
            (0..n).map(|_| match dist {
                DiagonalDistribution::PowersOfTen(xi) => {
                    let k = rng.random_range(0..=xi);
                    10f64.powi(-(k as i32))
                }
                DiagonalDistribution::Uniform => loop {
                    // 1 - U[0,1) lies in (0, 1]
                    let a = 1.0 - rng.random::<f64>();
                    if a >= MIN_UNIFORM_DIAGONAL {
                        break a;
                    }
                },
            }),
        );
        let b = DVector::from_iterator(n, (0..n).map(|_| rng.random::<f64>()));
        Self::new(diag, b, theta0)
    }

    /// Same as [`generate`](Self::generate) with a dedicated stream; the seed
    /// is kept in the descriptor.
    pub fn generate_seeded(
        n: usize,
        dist: DiagonalDistribution,
        theta0: f64,
        seed: u64,
    ) -> Result<Self, ObjectiveError> {
        let mut rng = crate::rng::rng_from_seed(seed);
        let mut p = Self::generate(n, dist, theta0, &mut rng)?;
        p.seed = Some(seed);
        Ok(p)
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Solution of `A w = -b`, the stationary point of `F`.
    pub fn optimum(&self) -> DVector<f64> {
        self.b.zip_map(&self.diag, |b, a| -b / a)
    }

    /// `F(w*) = -½ bᵀA⁻¹b`.
    pub fn optimal_value(&self) -> f64 {
        -0.5 * self
            .b
            .zip_fold(&self.diag, 0.0, |acc, b, a| acc + b * b / a)
    }

    pub fn exact_gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>, ObjectiveError> {
        check_dim(self.dim(), w)?;
        Ok(w.component_mul(&self.diag) + &self.b)
    }

    pub fn condition_number(&self) -> f64 {
        self.diag.max() / self.diag.min()
    }

    /// Diagonal of the Hessian of `f(·, θ)`.
    pub fn sample_hessian_diag(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.diag.zip_map(theta, |a, t| a * (1.0 + t))
    }

    pub fn descriptor(&self) -> QuadraticDescriptor {
        QuadraticDescriptor {
            diag: self.diag.iter().copied().collect(),
            b: self.b.iter().copied().collect(),
            theta0: self.theta0,
            seed: self.seed,
        }
    }

    pub fn from_descriptor(d: &QuadraticDescriptor) -> Result<Self, ObjectiveError> {
        let mut p = Self::new(
            DVector::from_column_slice(&d.diag),
            DVector::from_column_slice(&d.b),
            d.theta0,
        )?;
        p.seed = d.seed;
        Ok(p)
    }
}

impl StochasticObjective for QuadraticProblem {
    type Sample = DVector<f64>;

    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn draw_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let t0 = self.theta0;
        if t0 == 0.0 {
            return DVector::zeros(self.dim());
        }
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.random_range(-t0..=t0)),
        )
    }

    fn sample_value(&self, w: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.dim() {
            quad += self.diag[i] * (1.0 + theta[i]) * w[i] * w[i];
        }
        0.5 * quad + self.b.dot(w)
    }

    fn add_sample_gradient(
        &self,
        w: &DVector<f64>,
        theta: &DVector<f64>,
        scale: f64,
        out: &mut DVector<f64>,
    ) {
        for i in 0..self.dim() {
            out[i] += scale * (self.diag[i] * (1.0 + theta[i]) * w[i] + self.b[i]);
        }
    }

    fn exact_objective(&self, w: &DVector<f64>) -> Option<f64> {
        let quad = w.zip_fold(&self.diag, 0.0, |acc, x, a| acc + a * x * x);
        Some(0.5 * quad + self.b.dot(w))
    }

    fn optimum(&self) -> Option<DVector<f64>> {
        Some(QuadraticProblem::optimum(self))
    }

    fn curvature_bounds(&self) -> Option<CurvatureBounds> {
        CurvatureBounds::new(
            (1.0 - self.theta0) * self.diag.min(),
            (1.0 + self.theta0) * self.diag.max(),
        )
        .ok()
    }
}

/// JSON descriptor sufficient to rebuild a [`QuadraticProblem`] exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticDescriptor {
    pub diag: Vec<f64>,
    pub b: Vec<f64>,
    pub theta0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// SVM family
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    SquaredHinge,
    Log,
}

impl LossKind {
    /// Loss as a function of the margin `z = y·xᵀw`.
    pub fn value(self, z: f64) -> f64 {
        match self {
            LossKind::Hinge => (1.0 - z).max(0.0),
            LossKind::SquaredHinge => {
                let h = (1.0 - z).max(0.0);
                h * h
            }
            LossKind::Log => {
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative in `z`. At the hinge kink `z = 1` this is 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            LossKind::Hinge => {
                if z < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::SquaredHinge => {
                if z < 1.0 {
                    -2.0 * (1.0 - z)
                } else {
                    0.0
                }
            }
            LossKind::Log => -1.0 / (1.0 + z.exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::SquaredHinge => "squared_hinge",
            LossKind::Log => "log",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hinge" => Ok(LossKind::Hinge),
            "squared_hinge" | "squared-hinge" => Ok(LossKind::SquaredHinge),
            "log" => Ok(LossKind::Log),
            other => Err(invalid(format!("unknown loss `{other}`"))),
        }
    }
}

/// Labelled feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self, ObjectiveError> {
        if dim == 0 {
            return Err(invalid("feature dimension must be at least 1"));
        }
        if labels.is_empty() {
            return Err(invalid("training set must contain at least one pair"));
        }
        if features.len() != dim * labels.len() {
            return Err(invalid(format!(
                "expected {} feature values for {} pairs of dimension {dim}, got {}",
                dim * labels.len(),
                labels.len(),
                features.len()
            )));
        }
        if let Some(y) = labels.iter().find(|y| **y != 1.0 && **y != -1.0) {
            return Err(invalid(format!("labels must be -1 or +1, got {y}")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }

    fn max_sq_norm(&self) -> f64 {
        self.features
            .chunks_exact(self.dim)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn dot(x: &[f64], w: &DVector<f64>) -> f64 {
    x.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

/// Two-class synthetic set: `size/2` pairs labelled −1 with coordinates
/// `U[-0.8, 0.2]`, then `size/2` labelled +1 with coordinates `U[-0.2, 0.8]`.
pub fn generate_svm_data<R: Rng + ?Sized>(
    dim: usize,
    size: usize,
    rng: &mut R,
) -> Result<TrainingSet, ObjectiveError> {
    if size == 0 || !size.is_multiple_of(2) {
        return Err(invalid(format!(
            "synthetic SVM data needs an even, positive size, got {size}"
        )));
    }
    if dim == 0 {
        return Err(invalid("feature dimension must be at least 1"));
    }
    let half = size / 2;
    let mut features = Vec::with_capacity(size * dim);
    let mut labels = Vec::with_capacity(size);
    for (label, lo) in [(-1.0, -0.8), (1.0, -0.2)] {
        for _ in 0..half {
            for _ in 0..dim {
                features.push(lo + rng.random::<f64>());
            }
            labels.push(label);
        }
    }
    TrainingSet::new(dim, features, labels)
}

/// Fraction of pairs with `sign(wᵀx) = y`. A zero score counts as a miss.
pub fn classify_accuracy(w: &DVector<f64>, set: &TrainingSet) -> Result<f64, ObjectiveError> {
    check_dim(set.dim(), w)?;
    let correct = set
        .iter()
        .filter(|(x, y)| {
            let score = dot(x, w);
            score != 0.0 && score.signum() == *y
        })
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// `F(w) = (λ/2)‖w‖² + (1/N) Σ_i l(y_i xᵢᵀw)`, sampled uniformly with
/// replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmProblem {
    data: TrainingSet,
    lambda: f64,
    loss: LossKind,
}

impl SvmProblem {
    pub fn new(data: TrainingSet, lambda: f64, loss: LossKind) -> Result<Self, ObjectiveError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { data, lambda, loss })
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn margin(&self, w: &DVector<f64>, i: usize) -> f64 {
        self.data.label(i) * dot(self.data.row(i), w)
    }
}

impl StochasticObjective for SvmProblem {
    /// Index into the training set.
    type Sample = usize;

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn draw_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.data.len())
    }

    fn sample_value(&self, w: &DVector<f64>, &i: &usize) -> f64 {
        0.5 * self.lambda * w.norm_squared() + self.loss.value(self.margin(w, i))
    }

    fn add_sample_gradient(
        &self,
        w: &DVector<f64>,
        &i: &usize,
        scale: f64,
        out: &mut DVector<f64>,
    ) {
        let y = self.data.label(i);
        let coef = scale * self.loss.derivative(self.margin(w, i)) * y;
        out.axpy(scale * self.lambda, w, 1.0);
        if coef != 0.0 {
            for (o, x) in out.iter_mut().zip(self.data.row(i)) {
                *o += coef * x;
            }
        }
    }

    /// Full pass over the training set; for reporting only.
    fn exact_objective(&self, w: &DVector<f64>) -> Option<f64> {
        let total: f64 = self
            .data
            .iter()
            .map(|(x, y)| self.loss.value(y * dot(x, w)))
            .sum();
        Some(0.5 * self.lambda * w.norm_squared() + total / self.data.len() as f64)
    }

    fn curvature_bounds(&self) -> Option<CurvatureBounds> {
        let r2 = self.data.max_sq_norm();
        let upper = match self.loss {
            LossKind::Hinge => self.lambda,
            LossKind::SquaredHinge => self.lambda + 2.0 * r2,
            LossKind::Log => self.lambda + 0.25 * r2,
        };
        CurvatureBounds::new(self.lambda, upper).ok()
    }
}
