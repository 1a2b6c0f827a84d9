//! Regularized BFGS curvature estimates.
//!
//! The update keeps the secant condition `B₊ v = r̂` while forcing every
//! eigenvalue of `B₊` above `δ`:
//!
//! ```text
//! r̃  = r̂ − δ v
//! B₊ = B + r̃ r̃ᵀ / (vᵀr̃) − B v vᵀ B / (vᵀ B v) + δ I
//! ```
//!
//! With `δ = 0` this is the classic BFGS update.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Updates with `‖v‖² <= MOVEMENT_EPS` are skipped.
pub const MOVEMENT_EPS: f64 = 1e-24;
/// Updates with `vᵀr̃ <= CURVATURE_EPS · ‖v‖²` are skipped.
pub const CURVATURE_EPS: f64 = 1e-10;
/// Condition-number ceiling for an explicit descent matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurvatureError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("curvature estimate is no longer positive definite ({0})")]
    NotPositiveDefinite(String),
    #[error("curvature estimate is numerically singular (condition estimate {0:.3e})")]
    Singular(f64),
}

/// Why an update left `B` unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoMovement,
    CurvatureNotPositive,
}

/// Result of a curvature update.
#[derive(Debug, Clone, PartialEq)]
pub enum Update {
    Accepted(HessianApprox),
    Skipped(SkipReason),
}

impl Update {
    pub fn accepted(self) -> Option<HessianApprox> {
        match self {
            Update::Accepted(h) => Some(h),
            Update::Skipped(_) => None,
        }
    }
}

/// Variable variation `v`, gradient variation `r̂` and the modified
/// variation `r̃ = r̂ − δv`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationPair {
    pub v: DVector<f64>,
    pub r_hat: DVector<f64>,
    pub r_tilde: DVector<f64>,
}

impl VariationPair {
    pub fn new(v: DVector<f64>, r_hat: DVector<f64>, delta: f64) -> Result<Self, CurvatureError> {
        if v.len() != r_hat.len() {
            return Err(CurvatureError::DimensionMismatch {
                expected: v.len(),
                found: r_hat.len(),
            });
        }
        let r_tilde = &r_hat - &v * delta;
        Ok(Self { v, r_hat, r_tilde })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }
}

/// Symmetric curvature estimate `B` with its regularization constant `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianApprox {
    matrix: DMatrix<f64>,
    delta: f64,
}

impl HessianApprox {
    pub fn new(matrix: DMatrix<f64>, delta: f64) -> Result<Self, CurvatureError> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(CurvatureError::InvalidArgument(format!(
                "curvature estimate must be a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(CurvatureError::InvalidArgument(format!(
                "delta must be nonnegative, got {delta}"
            )));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(CurvatureError::InvalidArgument(
                "curvature estimate must be symmetric".into(),
            ));
        }
        Ok(Self { matrix, delta })
    }

    /// `B₀ = scale · I`; requires `scale > δ`.
    pub fn scaled_identity(dim: usize, scale: f64, delta: f64) -> Result<Self, CurvatureError> {
        if !(scale > delta) {
            return Err(CurvatureError::InvalidArgument(format!(
                "initial scale {scale} must exceed delta {delta}"
            )));
        }
        Self::new(DMatrix::identity(dim, dim) * scale, delta)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn check_pair(&self, pair: &VariationPair) -> Result<(), CurvatureError> {
        if pair.dim() != self.dim() || pair.r_tilde.len() != self.dim() {
            return Err(CurvatureError::DimensionMismatch {
                expected: self.dim(),
                found: pair.dim(),
            });
        }
        Ok(())
    }

    /// Regularized update; see the module docs.
    pub fn regularized_update(&self, pair: &VariationPair) -> Result<Update, CurvatureError> {
        let mut next = self.clone();
        Ok(match next.apply_regularized(pair)? {
            None => Update::Accepted(next),
            Some(reason) => Update::Skipped(reason),
        })
    }

    /// Classic BFGS update `B + r̂r̂ᵀ/(vᵀr̂) − BvvᵀB/(vᵀBv)`. Requires `δ = 0`.
    pub fn classic_update(&self, pair: &VariationPair) -> Result<Update, CurvatureError> {
        let mut next = self.clone();
        Ok(match next.apply_classic(pair)? {
            None => Update::Accepted(next),
            Some(reason) => Update::Skipped(reason),
        })
    }

    /// In-place regularized update. `Ok(Some(_))` means skipped; `B` is
    /// untouched in that case.
    pub fn apply_regularized(
        &mut self,
        pair: &VariationPair,
    ) -> Result<Option<SkipReason>, CurvatureError> {
        self.check_pair(pair)?;
        let v = &pair.v;
        let r = &pair.r_tilde;
        let vv = v.norm_squared();
        if vv <= MOVEMENT_EPS {
            return Ok(Some(SkipReason::NoMovement));
        }
        let vr = v.dot(r);
        if !(vr > CURVATURE_EPS * vv) {
            return Ok(Some(SkipReason::CurvatureNotPositive));
        }
        let bv = &self.matrix * v;
        let vbv = v.dot(&bv);
        if !(vbv > 0.0) {
            return Err(CurvatureError::NotPositiveDefinite(format!(
                "vᵀBv = {vbv:e}"
            )));
        }
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                self.matrix[(i, j)] += r[i] * r[j] / vr - bv[i] * bv[j] / vbv;
            }
        }
        for i in 0..n {
            self.matrix[(i, i)] += self.delta;
        }
        self.symmetrize();
        Ok(None)
    }

    /// In-place classic BFGS update on `(v, r̂)`.
    pub fn apply_classic(
        &mut self,
        pair: &VariationPair,
    ) -> Result<Option<SkipReason>, CurvatureError> {
        if self.delta != 0.0 {
            return Err(CurvatureError::InvalidArgument(format!(
                "classic update requires delta = 0, got {}",
                self.delta
            )));
        }
        self.check_pair(pair)?;
        let v = &pair.v;
        let r = &pair.r_hat;
        let vv = v.norm_squared();
        if vv <= MOVEMENT_EPS {
            return Ok(Some(SkipReason::NoMovement));
        }
        let vr = v.dot(r);
        if !(vr > CURVATURE_EPS * vv) {
            return Ok(Some(SkipReason::CurvatureNotPositive));
        }
        let bv = &self.matrix * v;
        let vbv = v.dot(&bv);
        if !(vbv > 0.0) {
            return Err(CurvatureError::NotPositiveDefinite(format!(
                "vᵀBv = {vbv:e}"
            )));
        }
        self.matrix.ger(1.0 / vr, r, r, 1.0);
        self.matrix.ger(-1.0 / vbv, &bv, &bv, 1.0);
        self.symmetrize();
        Ok(None)
    }

    fn symmetrize(&mut self) {
        let n = self.dim();
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (self.matrix[(i, j)] + self.matrix[(j, i)]);
                self.matrix[(i, j)] = avg;
                self.matrix[(j, i)] = avg;
            }
        }
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>, CurvatureError> {
        Cholesky::new(self.matrix.clone()).ok_or_else(|| {
            CurvatureError::NotPositiveDefinite("Cholesky factorization failed".into())
        })
    }

    /// Whether `B − (δ − tol) I` admits a Cholesky factorization.
    pub fn satisfies_floor(&self, tol: f64) -> bool {
        let shift = self.delta - tol;
        let mut m = self.matrix.clone();
        for i in 0..self.dim() {
            m[(i, i)] -= shift;
        }
        Cholesky::new(m).is_some()
    }

    /// `(B⁻¹ + ΓI) g`, via one Cholesky solve.
    pub fn descent_direction(
        &self,
        gradient: &DVector<f64>,
        gamma: f64,
    ) -> Result<DVector<f64>, CurvatureError> {
        if gradient.len() != self.dim() {
            return Err(CurvatureError::DimensionMismatch {
                expected: self.dim(),
                found: gradient.len(),
            });
        }
        let chol = self.cholesky()?;
        let mut d = chol.solve(gradient);
        if gamma != 0.0 {
            d.axpy(gamma, gradient, 1.0);
        }
        Ok(d)
    }

    /// Explicit `B⁻¹ + ΓI`.
    pub fn descent_matrix(&self, gamma: f64) -> Result<DMatrix<f64>, CurvatureError> {
        if !(gamma >= 0.0) {
            return Err(CurvatureError::InvalidArgument(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        let chol = self.cholesky()?;
        let l = chol.l_dirty();
        let diag = l.diagonal();
        let cond = (diag.max() / diag.min()).powi(2);
        if !(cond <= MAX_CONDITION) {
            return Err(CurvatureError::Singular(cond));
        }
        let mut inv = chol.inverse();
        for i in 0..self.dim() {
            inv[(i, i)] += gamma;
        }
        Ok(inv)
    }
}

/// `(B₊ − δI)⁻¹` through the rank-structured form
/// `v vᵀ/(r̃ᵀv) + (I − v r̃ᵀ/(r̃ᵀv)) B⁻¹ (I − r̃ vᵀ/(r̃ᵀv))`,
/// where `B` is the estimate before the update.
pub fn inverse_of_shifted(
    next: &HessianApprox,
    prev: &HessianApprox,
    pair: &VariationPair,
) -> Result<DMatrix<f64>, CurvatureError> {
    if next.dim() != prev.dim() {
        return Err(CurvatureError::DimensionMismatch {
            expected: prev.dim(),
            found: next.dim(),
        });
    }
    prev.check_pair(pair)?;
    let v = &pair.v;
    let r = &pair.r_tilde;
    let rv = r.dot(v);
    if !(rv > CURVATURE_EPS * v.norm_squared()) || v.norm_squared() <= MOVEMENT_EPS {
        return Err(CurvatureError::InvalidArgument(format!(
            "r̃ᵀv = {rv:e} is below the curvature threshold"
        )));
    }
    let prev_inv = prev.cholesky()?.inverse();
    let n = prev.dim();
    let left = DMatrix::identity(n, n) - v * r.transpose() / rv;
    let mut out = &left * prev_inv * left.transpose();
    out.ger(1.0 / rv, v, v, 1.0);
    Ok(out)
}
