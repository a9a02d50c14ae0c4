//! Posterior predictive sampling at new locations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{cross_covariance_from_distances, distance_matrix, outcome_covariance_into, Coordinates, CrossCovarianceSpec};
use crate::likelihood::outcome_covariance;
use crate::linalg::{chol_owned, dot, trsolve, LowerTriangular, Matrix};
use crate::model::{svc_covariates, SvcModel, Theta};
use crate::parallel;
use crate::recover::{draw_rng, NamedDraws, RecoveredSamples};

/// Ridge added once when the joint predictive covariance fails to factor.
pub const JOINT_JITTER: f64 = 1e-8;

/// New sites to predict at.
#[derive(Debug, Clone)]
pub struct PredictionRequest {
    /// `n₀ × p` design on the original covariate scale, columns as in the fit.
    pub x0: Matrix,
    pub coords0: Coordinates,
    pub joint: bool,
    /// Use every `thin`-th recovered draw.
    pub thin: usize,
    /// Add `τ²` to the new-site variances (predict observations rather than the mean surface).
    pub include_nugget: bool,
    pub threads: usize,
    pub seed: u64,
}

impl PredictionRequest {
    pub fn new(x0: Matrix, coords0: Coordinates) -> Self {
        Self { x0, coords0, joint: false, thin: 1, include_nugget: true, threads: 1, seed: 1 }
    }
}

/// Predictive draws, one row per used recovered draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    /// Positions within the recovered samples.
    pub indices: Vec<usize>,
    pub draws: Vec<Vec<f64>>,
}

/// Everything about the new sites that does not depend on the draw.
struct Sites {
    x0: Matrix,
    /// `n₀ × r` space-varying covariates.
    z0: Matrix,
    d_obs_new: Matrix,
    d_new: Option<Matrix>,
}

fn prepare(model: &SvcModel, x0: &Matrix, coords0: &Coordinates, joint: bool) -> Result<Sites> {
    if x0.cols() != model.p() {
        return Err(Error::Invalid(format!("new design has {} columns, fit has {}", x0.cols(), model.p())));
    }
    if x0.rows() != coords0.len() {
        return Err(Error::Invalid(format!("{} design rows for {} new sites", x0.rows(), coords0.len())));
    }
    if coords0.dim() != model.coords().dim() {
        return Err(Error::Invalid(format!(
            "new coordinates have dimension {}, fit has {}",
            coords0.dim(),
            model.coords().dim()
        )));
    }
    let x0 = match model.standardization() {
        Some(st) => Matrix::from_fn(x0.rows(), x0.cols(), |i, j| (x0[(i, j)] - st.centers[j]) / st.scales[j]),
        None => x0.clone(),
    };
    let z0 = svc_covariates(&x0, &model.spec().svc_cols)?;
    let d_obs_new = distance_matrix(model.coords(), coords0)?;
    let d_new = if joint { Some(distance_matrix(coords0, coords0)?) } else { None };
    Ok(Sites { x0, z0, d_obs_new, d_new })
}

/// Conditional moments given one `(θ, β)`: the mean and either the full
/// covariance or only its diagonal.
struct Conditional {
    mean: Vec<f64>,
    cov: Option<Matrix>,
    var: Vec<f64>,
}

fn z_diag_variance(spec: &CrossCovarianceSpec, z0: &Matrix) -> Vec<f64> {
    // same accumulation order as the full outcome covariance diagonal
    let c = z0.matmul(&spec.mixing()).expect("conformable");
    (0..z0.rows())
        .map(|i| {
            let mut v = 0.0;
            for k in 0..spec.r() {
                let cik = c[(i, k)];
                if cik == 0.0 {
                    continue;
                }
                v += c.col(k)[i] * spec.model.eval(0.0, spec.phi[k]) * cik;
            }
            v
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn conditional(
    l: &LowerTriangular,
    resid: &[f64],
    spec: &CrossCovarianceSpec,
    z_obs: &Matrix,
    z0: &Matrix,
    d_obs_new: &Matrix,
    d_new: Option<&Matrix>,
    mean0: Vec<f64>,
    nugget: f64,
) -> Result<Conditional> {
    let n0 = z0.rows();
    let c12 = cross_covariance_from_distances(d_obs_new, spec, z_obs, z0);
    let rhs = Matrix::column(resid).hcat(&c12)?;
    let uv = trsolve(l, &rhs)?;
    let u = uv.col(0);
    let v = uv.columns(1..uv.cols());
    let mut mean = mean0;
    for (m, a) in mean.iter_mut().zip(v.t_matvec(u)?) {
        *m += a;
    }
    match d_new {
        Some(d) => {
            let mut c22 = Matrix::zeros(n0, n0);
            outcome_covariance_into(d, spec, z0, &mut c22);
            c22.add_to_diagonal(nugget);
            let mut cov = c22.sub(&v.gram())?;
            cov.symmetrize();
            let var = cov.diagonal();
            Ok(Conditional { mean, cov: Some(cov), var })
        }
        None => {
            let diag = z_diag_variance(spec, z0);
            let var = (0..n0).map(|i| (diag[i] + nugget) - dot(v.col(i), v.col(i))).collect();
            Ok(Conditional { mean, cov: None, var })
        }
    }
}

/// `(μ_p, Σ_p)` of `y₀ | y, β, θ` at new sites.
pub fn predictive_moments(
    model: &SvcModel,
    theta: &Theta,
    beta: &[f64],
    x0: &Matrix,
    coords0: &Coordinates,
    include_nugget: bool,
) -> Result<(Vec<f64>, Matrix)> {
    let sites = prepare(model, x0, coords0, true)?;
    let c = moments_for(model, theta, beta, &sites, include_nugget)?;
    Ok((c.mean, c.cov.expect("joint moments requested")))
}

/// Point-wise `(μ_p, diag Σ_p)`.
pub fn predictive_marginals(
    model: &SvcModel,
    theta: &Theta,
    beta: &[f64],
    x0: &Matrix,
    coords0: &Coordinates,
    include_nugget: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sites = prepare(model, x0, coords0, false)?;
    let c = moments_for(model, theta, beta, &sites, include_nugget)?;
    Ok((c.mean, c.var))
}

fn moments_for(model: &SvcModel, theta: &Theta, beta: &[f64], sites: &Sites, include_nugget: bool) -> Result<Conditional> {
    if beta.len() != model.p() {
        return Err(Error::Invalid(format!("beta has {} entries, design has {}", beta.len(), model.p())));
    }
    let l = chol_owned(outcome_covariance(model, theta)?)?;
    let xb = model.x().matvec(beta)?;
    let resid: Vec<f64> = model.y().iter().zip(&xb).map(|(y, m)| y - m).collect();
    let spec = theta.cross_spec(model.correlation())?;
    let mean0 = sites.x0.matvec(beta)?;
    let nugget = if include_nugget { theta.tau_sq } else { 0.0 };
    conditional(&l, &resid, &spec, model.z_cov(), &sites.z0, &sites.d_obs_new, sites.d_new.as_ref(), mean0, nugget)
}

fn sample<R: Rng + ?Sized>(c: &Conditional, rng: &mut R) -> Result<Vec<f64>> {
    let n0 = c.mean.len();
    let e: Vec<f64> = (0..n0).map(|_| rng.sample(StandardNormal)).collect();
    match &c.cov {
        Some(cov) => {
            let l = match chol_owned(cov.clone()) {
                Ok(l) => l,
                Err(_) => {
                    let mut j = cov.clone();
                    j.add_to_diagonal(JOINT_JITTER);
                    chol_owned(j)?
                }
            };
            let noise = l.mul_vec(&e);
            Ok(c.mean.iter().zip(noise).map(|(m, z)| m + z).collect())
        }
        None => Ok(c.mean.iter().zip(&c.var).zip(&e).map(|((m, v), z)| m + v.max(0.0).sqrt() * z).collect()),
    }
}

fn used_indices(recovered: &RecoveredSamples, thin: usize) -> Result<Vec<usize>> {
    if recovered.is_empty() {
        return Err(Error::Invalid("no recovered draws; run recovery first".into()));
    }
    if thin == 0 {
        return Err(Error::Invalid("thin must be at least 1".into()));
    }
    Ok((0..recovered.len()).step_by(thin).collect())
}

/// Draws of `y₀` (or the noiseless surface) at new sites, one per used draw.
pub fn predict(model: &SvcModel, recovered: &RecoveredSamples, req: &PredictionRequest) -> Result<PredictiveDraws> {
    let indices = used_indices(recovered, req.thin)?;
    let sites = prepare(model, &req.x0, &req.coords0, req.joint)?;
    let draws = parallel::install(req.threads, || {
        parallel::map_range(0..indices.len(), |k| {
            let idx = indices[k];
            let mut rng = draw_rng(req.seed, k);
            moments_for(model, &recovered.theta[idx], &recovered.beta[idx], &sites, req.include_nugget)
                .and_then(|c| sample(&c, &mut rng))
                .map_err(|e| Error::Draw { index: idx, source: Box::new(e) })
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(PredictiveDraws { indices, draws })
}

/// Draws of each coefficient surface `β̃_j(s₀) = β_j + w_j(s₀)` at new sites.
pub fn predict_coefficients(
    model: &SvcModel,
    recovered: &RecoveredSamples,
    coords0: &Coordinates,
    joint: bool,
    thin: usize,
    threads: usize,
    seed: u64,
) -> Result<Vec<NamedDraws>> {
    let indices = used_indices(recovered, thin)?;
    let (n0, r) = (coords0.len(), model.r());
    let dummy_x = Matrix::zeros(n0, model.p());
    let sites = prepare(model, &dummy_x, coords0, joint)?;
    let per_draw = parallel::install(threads, || {
        parallel::map_range(0..indices.len(), |k| {
            let idx = indices[k];
            let mut rng = draw_rng(seed, k);
            let theta = &recovered.theta[idx];
            let beta = &recovered.beta[idx];
            let mut run = || -> Result<Vec<Vec<f64>>> {
                let l = chol_owned(outcome_covariance(model, theta)?)?;
                let xb = model.x().matvec(beta)?;
                let resid: Vec<f64> = model.y().iter().zip(&xb).map(|(y, m)| y - m).collect();
                let spec = theta.cross_spec(model.correlation())?;
                (0..r)
                    .map(|j| {
                        // unit covariate on process j alone
                        let e_j = Matrix::from_fn(n0, r, |_, c| if c == j { 1.0 } else { 0.0 });
                        let bj = beta[model.spec().svc_cols[j]];
                        let c = conditional(&l, &resid, &spec, model.z_cov(), &e_j, &sites.d_obs_new, sites.d_new.as_ref(), vec![bj; n0], 0.0)?;
                        sample(&c, &mut rng)
                    })
                    .collect()
            };
            run().map_err(|e| Error::Draw { index: idx, source: Box::new(e) })
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(model
        .svc_names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| NamedDraws { name, draws: per_draw.iter().map(|d| d[j].clone()).collect() })
        .collect())
}

/// Fraction of draws strictly above `threshold`, per site.
pub fn exceedance_probability(draws: &[Vec<f64>], threshold: f64) -> Result<Vec<f64>> {
    let first = draws.first().ok_or_else(|| Error::Invalid("no predictive draws".into()))?;
    let m = draws.len() as f64;
    Ok((0..first.len())
        .map(|i| draws.iter().filter(|d| d[i] > threshold).count() as f64 / m)
        .collect())
}
