//! Marginal posterior of the covariance parameters with `w` (and, for a
//! flat prior, `β`) integrated out.
//!
//! All log-densities are up to an additive constant that does not depend on θ.

use crate::error::Result;
use crate::kernels::outcome_covariance_into;
use crate::linalg::{chol_owned, dot, sum_log_diag, trsolve, trsolve_vec, LinalgError, Matrix};
use crate::model::{log_prior, SvcModel, Theta};

/// `Z K_θ Zᵀ + τ² I`, the covariance of `y` given `β` and θ.
pub fn outcome_covariance(model: &SvcModel, theta: &Theta) -> Result<Matrix> {
    theta.check_shape(model.parameterization().mode())?;
    let spec = theta.cross_spec(model.correlation())?;
    let mut out = Matrix::zeros(model.n(), model.n());
    outcome_covariance_into(model.distances(), &spec, model.z_cov(), &mut out);
    out.add_to_diagonal(theta.tau_sq);
    Ok(out)
}

/// Covariance of `y` given θ alone: adds `X Σ_β Xᵀ` under a normal prior.
pub fn marginal_covariance(model: &SvcModel, theta: &Theta) -> Result<Matrix> {
    let mut s = outcome_covariance(model, theta)?;
    if let Some(xsx) = model.x_sigma_beta_xt() {
        s.add_assign(xsx)?;
    }
    Ok(s)
}

/// `-Σ log l_ii - ½ uᵀu` with `L = chol(X Σ_β Xᵀ + Z K Zᵀ + τ² I)` and
/// `u = L⁻¹ (y - X μ_β)`.
pub fn log_marginal_normal_beta(model: &SvcModel, theta: &Theta) -> Result<f64> {
    let centered = model
        .centered_y()
        .ok_or_else(|| crate::Error::Invalid("model has a flat beta prior".into()))?;
    let l = chol_owned(marginal_covariance(model, theta)?)?;
    let u = trsolve_vec(&l, centered)?;
    Ok(-sum_log_diag(&l)? - 0.5 * dot(&u, &u))
}

/// Flat-β marginal: `-Σ log w_ii - Σ log l_ii - ½ (vᵀv - b̃ᵀb̃)` where
/// `L = chol(Z K Zᵀ + τ² I)`, `[v : U] = L⁻¹ [y : X]`, `W = chol(UᵀU)`,
/// `b̃ = W⁻¹ Uᵀ v`.
pub fn log_marginal_flat_beta(model: &SvcModel, theta: &Theta) -> Result<f64> {
    let (l_term, w_term, q) = flat_beta_parts(model, theta)?;
    Ok(-w_term - l_term - 0.5 * q)
}

/// `(Σ log l_ii, Σ log w_ii, vᵀv - b̃ᵀb̃)`.
pub(crate) fn flat_beta_parts(model: &SvcModel, theta: &Theta) -> Result<(f64, f64, f64)> {
    let l = chol_owned(outcome_covariance(model, theta)?)?;
    let yx = Matrix::column(model.y()).hcat(model.x())?;
    let vu = trsolve(&l, &yx)?;
    let v = vu.col(0);
    let u = vu.columns(1..vu.cols());
    let w = chol_full_rank(u.gram())?;
    let b = u.t_matvec(v)?;
    let bt = trsolve_vec(&w, &b)?;
    let q = dot(v, v) - dot(&bt, &bt);
    Ok((sum_log_diag(&l)?, sum_log_diag(&w)?, q))
}

/// Cholesky factor that also rejects numerically rank-deficient input,
/// i.e. pivots below `RANK_TOL` relative to the largest diagonal entry.
fn chol_full_rank(m: Matrix) -> Result<crate::linalg::LowerTriangular> {
    let scale = m.diagonal().into_iter().fold(0.0f64, f64::max);
    let l = chol_owned(m)?;
    if let Some(pivot) = l.diagonal().iter().position(|d| d * d <= RANK_TOL * scale) {
        return Err(LinalgError::NotPositiveDefinite { pivot }.into());
    }
    Ok(l)
}

const RANK_TOL: f64 = 1e-12;

/// Marginal likelihood under whichever β prior the model carries.
pub fn log_marginal(model: &SvcModel, theta: &Theta) -> Result<f64> {
    if model.beta_is_flat() {
        log_marginal_flat_beta(model, theta)
    } else {
        log_marginal_normal_beta(model, theta)
    }
}

/// `log p(θ) + log p(y | θ)`; `-∞` outside the prior support or where a
/// covariance factorization breaks down.
pub fn log_target(model: &SvcModel, theta: &Theta) -> f64 {
    let lp = log_prior(theta, model.priors());
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return f64::NEG_INFINITY;
    }
    match log_marginal(model, theta) {
        Ok(v) if v.is_finite() => lp + v,
        _ => f64::NEG_INFINITY,
    }
}

/// Like [`log_target`] but reports why an evaluation failed.
pub fn try_log_target(model: &SvcModel, theta: &Theta) -> Result<f64> {
    let lp = log_prior(theta, model.priors());
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + log_marginal(model, theta)?)
}

/// The marginal posterior on the unconstrained scale, Jacobian included.
#[derive(Debug, Clone, Copy)]
pub struct TransformedTarget<'a> {
    model: &'a SvcModel,
}

impl<'a> TransformedTarget<'a> {
    pub fn new(model: &'a SvcModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &'a SvcModel {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.model.parameterization().dim()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let (theta, lj) = self.model.parameterization().from_unconstrained(z);
        if lj == f64::NEG_INFINITY || lj.is_nan() {
            return f64::NEG_INFINITY;
        }
        let v = log_target(self.model, &theta);
        if v == f64::NEG_INFINITY {
            v
        } else {
            v + lj
        }
    }
}

impl crate::mcmc::LogTarget for TransformedTarget<'_> {
    fn dim(&self) -> usize {
        TransformedTarget::dim(self)
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        TransformedTarget::log_density(self, z)
    }
}

/// Whether a failure means "no density here" rather than a usage error.
pub fn is_numerical_failure(e: &crate::Error) -> bool {
    matches!(
        e,
        crate::Error::Linalg(LinalgError::NotPositiveDefinite { .. } | LinalgError::NonPositiveDiagonal { .. })
    )
}
