//! Composition sampling of `β`, `w`, the coefficient surfaces and fitted
//! values from retained draws of θ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::CrossCovarianceSpec;
use crate::likelihood::outcome_covariance;
use crate::linalg::{chol, chol_owned, chol_solve, trsolve, trsolve_t_vec, trsolve_vec, LowerTriangular, Matrix};
use crate::mcmc::ChainSamples;
use crate::model::{SvcModel, Theta};
use crate::parallel;

/// Covariance of the observation noise that `w` is conditioned through.
#[derive(Debug, Clone, Copy)]
pub enum ObsCov<'a> {
    /// `τ² I`.
    Nugget(f64),
    /// Any SPD `n × n` matrix, e.g. `X Σ_β Xᵀ + τ² I`.
    Dense(&'a Matrix),
}

/// `(K⁻¹ + G⁻¹)⁻¹` computed as `G - G (K + G)⁻¹ G` without factoring `K`.
pub fn henderson_covariance(k: &Matrix, g: &Matrix) -> Result<Matrix> {
    let l = chol_owned(k.add(g)?)?;
    let w = trsolve(&l, g)?;
    let mut b = g.sub(&w.gram())?;
    b.symmetrize();
    Ok(b)
}

fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Mean and covariance of `β | θ, y` through the factorization recipe.
pub fn beta_conditional_moments(model: &SvcModel, theta: &Theta) -> Result<(Vec<f64>, Matrix)> {
    let l = chol_owned(outcome_covariance(model, theta)?)?;
    let (b, lb) = beta_system(model, &l)?;
    let mean = trsolve_t_vec(&lb, &trsolve_vec(&lb, &b)?)?;
    let cov = chol_solve(&lb, &Matrix::identity(model.p()))?;
    Ok((mean, cov))
}

/// `b = Σ_β⁻¹ μ_β + Uᵀ v` and `L_B = chol(Σ_β⁻¹ + UᵀU)` with `[v : U] = L⁻¹ [y : X]`.
fn beta_system(model: &SvcModel, l: &LowerTriangular) -> Result<(Vec<f64>, LowerTriangular)> {
    let yx = Matrix::column(model.y()).hcat(model.x())?;
    let vu = trsolve(l, &yx)?;
    let u = vu.columns(1..vu.cols());
    let mut b = u.t_matvec(vu.col(0))?;
    let mut prec = u.gram();
    if let Some((p, pm)) = model.beta_precision() {
        prec.add_assign(p)?;
        for (bi, m) in b.iter_mut().zip(pm) {
            *bi += m;
        }
    }
    Ok((b, chol_owned(prec)?))
}

fn draw_beta_with<R: Rng + ?Sized>(model: &SvcModel, l: &LowerTriangular, rng: &mut R) -> Result<Vec<f64>> {
    let (b, lb) = beta_system(model, l)?;
    let z = standard_normals(model.p(), rng);
    let mut beta = trsolve_t_vec(&lb, &trsolve_vec(&lb, &b)?)?;
    for (bi, e) in beta.iter_mut().zip(trsolve_t_vec(&lb, &z)?) {
        *bi += e;
    }
    Ok(beta)
}

/// One draw from `β | θ, y`.
pub fn draw_beta<R: Rng + ?Sized>(model: &SvcModel, theta: &Theta, rng: &mut R) -> Result<Vec<f64>> {
    let l = chol_owned(outcome_covariance(model, theta)?)?;
    draw_beta_with(model, &l, rng)
}

/// Per-θ quantities shared by the `w` samplers.
struct LatentContext {
    spec: CrossCovarianceSpec,
    /// `c_i = Aᵀ z_i` as rows, `n × r`.
    loadings: Matrix,
    /// Per-process correlation matrices.
    corr: Vec<Matrix>,
}

impl LatentContext {
    fn new(model: &SvcModel, theta: &Theta) -> Result<Self> {
        let spec = theta.cross_spec(model.correlation())?;
        let loadings = model.z_cov().matmul(&spec.mixing())?;
        let d = model.distances();
        let n = d.rows();
        let corr = spec
            .phi
            .iter()
            .map(|&phi| {
                let mut m = Matrix::zeros(n, n);
                parallel::for_each_chunk_mut(m.as_mut_slice(), n.max(1), n * n, |j, col| {
                    for (i, v) in col.iter_mut().enumerate() {
                        *v = spec.model.eval(d[(i, j)], phi);
                    }
                });
                m
            })
            .collect();
        Ok(Self { spec, loadings, corr })
    }

    fn r(&self) -> usize {
        self.spec.r()
    }

    /// `K Zᵀ x` in location-major order.
    fn k_zt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (n, r) = (x.len(), self.r());
        let a = self.spec.mixing();
        let mut u = Vec::with_capacity(r);
        for k in 0..r {
            let t: Vec<f64> = self.loadings.col(k).iter().zip(x).map(|(c, xi)| c * xi).collect();
            u.push(self.corr[k].matvec(&t)?);
        }
        let mut w = vec![0.0; n * r];
        for i in 0..n {
            for row in 0..r {
                w[i * r + row] = (0..=row).map(|k| a[(row, k)] * u[k][i]).sum();
            }
        }
        Ok(w)
    }

    /// Prior draw `w* ~ N(0, K)` from per-process factors.
    fn prior_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let r = self.r();
        let n = self.loadings.rows();
        let a = self.spec.mixing();
        let mut v = Vec::with_capacity(r);
        for k in 0..r {
            let l = chol_with_jitter(&self.corr[k])?;
            v.push(l.mul_vec(&standard_normals(n, rng)));
        }
        let mut w = vec![0.0; n * r];
        for i in 0..n {
            for row in 0..r {
                w[i * r + row] = (0..=row).map(|k| a[(row, k)] * v[k][i]).sum();
            }
        }
        Ok(w)
    }
}

/// Jitter ladder for correlation matrices that are singular to working precision.
const JITTER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

pub(crate) fn chol_with_jitter(m: &Matrix) -> Result<LowerTriangular> {
    let mut last = None;
    for eps in JITTER {
        let mut mm = m.clone();
        mm.add_to_diagonal(eps);
        match chol_owned(mm) {
            Ok(l) => return Ok(l),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("ladder is non-empty").into())
}

/// `Zw` for a location-major `w`.
pub fn z_times_w(z_cov: &Matrix, w: &[f64]) -> Vec<f64> {
    let (n, r) = (z_cov.rows(), z_cov.cols());
    (0..n).map(|i| (0..r).map(|k| z_cov[(i, k)] * w[i * r + k]).sum()).collect()
}

fn obs_chol(obs: ObsCov<'_>, n: usize) -> Result<Option<LowerTriangular>> {
    match obs {
        ObsCov::Nugget(t) => {
            if !(t > 0.0) {
                return Err(Error::Invalid(format!("nugget {t} must be positive")));
            }
            let _ = n;
            Ok(None)
        }
        ObsCov::Dense(m) => Ok(Some(chol(m)?)),
    }
}

/// `Σ_y = Z K Zᵀ + Σ_obs` with only `K` depending on θ.
fn outcome_with_obs(model: &SvcModel, theta: &Theta, obs: ObsCov<'_>) -> Result<Matrix> {
    let mut s = outcome_covariance(model, theta)?;
    s.add_to_diagonal(-theta.tau_sq);
    match obs {
        ObsCov::Nugget(t) => s.add_to_diagonal(t),
        ObsCov::Dense(m) => s.add_assign(m)?,
    }
    Ok(s)
}

/// Posterior mean `K Zᵀ (Z K Zᵀ + Σ_obs)⁻¹ resid` of `w`.
pub fn w_posterior_mean(model: &SvcModel, theta: &Theta, resid: &[f64], obs: ObsCov<'_>) -> Result<Vec<f64>> {
    let ctx = LatentContext::new(model, theta)?;
    let l = chol_owned(outcome_with_obs(model, theta, obs)?)?;
    let alpha = trsolve_t_vec(&l, &trsolve_vec(&l, resid)?)?;
    ctx.k_zt(&alpha)
}

/// Whether `Zᵀ Σ⁻¹ Z` is invertible, so the Henderson form applies.
pub fn henderson_applicable(model: &SvcModel) -> bool {
    model.r() == 1 && model.z_cov().col(0).iter().all(|z| *z != 0.0)
}

/// One draw from `w | resid, θ` where `resid ~ N(Zw, Σ_obs)` and `w ~ N(0, K_θ)`.
///
/// Uses the Henderson form when `Z` has full column rank and otherwise
/// conditions a prior draw on the data.
pub fn draw_w<R: Rng + ?Sized>(
    model: &SvcModel,
    theta: &Theta,
    resid: &[f64],
    obs: ObsCov<'_>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if resid.len() != model.n() {
        return Err(Error::Invalid(format!("{} residuals for {} observations", resid.len(), model.n())));
    }
    if model.r() == 0 {
        return Ok(Vec::new());
    }
    let ctx = LatentContext::new(model, theta)?;
    let l_obs = obs_chol(obs, model.n())?;
    if henderson_applicable(model) {
        if let Ok(w) = draw_w_henderson(model, &ctx, resid, obs, l_obs.as_ref(), rng) {
            return Ok(w);
        }
    }
    let l_y = chol_owned(outcome_with_obs(model, theta, obs)?)?;
    draw_w_conditional(&ctx, model.z_cov(), resid, obs, l_obs.as_ref(), &l_y, rng)
}

fn draw_w_henderson<R: Rng + ?Sized>(
    model: &SvcModel,
    ctx: &LatentContext,
    resid: &[f64],
    obs: ObsCov<'_>,
    l_obs: Option<&LowerTriangular>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let zc = model.z_cov().col(0);
    let n = zc.len();
    let a11 = ctx.spec.mixing()[(0, 0)];
    let k = ctx.corr[0].scale(a11 * a11);
    // b = Zᵀ Σ⁻¹ resid, G = (Zᵀ Σ⁻¹ Z)⁻¹
    let (b, g) = match (obs, l_obs) {
        (ObsCov::Nugget(t), _) => {
            let b: Vec<f64> = zc.iter().zip(resid).map(|(z, y)| z * y / t).collect();
            let g = Matrix::from_diagonal(&zc.iter().map(|z| t / (z * z)).collect::<Vec<_>>());
            (b, g)
        }
        (ObsCov::Dense(_), Some(l)) => {
            let si_r = trsolve_t_vec(l, &trsolve_vec(l, resid)?)?;
            let b: Vec<f64> = zc.iter().zip(&si_r).map(|(z, v)| z * v).collect();
            let u = trsolve(l, &Matrix::from_diagonal(zc))?;
            let g = chol_solve(&chol_owned(u.gram())?, &Matrix::identity(n))?;
            (b, g)
        }
        (ObsCov::Dense(_), None) => unreachable!("dense covariance is always factored"),
    };
    let bcov = henderson_covariance(&k, &g)?;
    let lb = chol(&bcov)?;
    let mut w = bcov.matvec(&b)?;
    for (wi, e) in w.iter_mut().zip(lb.mul_vec(&standard_normals(n, rng))) {
        *wi += e;
    }
    Ok(w)
}

fn draw_w_conditional<R: Rng + ?Sized>(
    ctx: &LatentContext,
    z_cov: &Matrix,
    resid: &[f64],
    obs: ObsCov<'_>,
    l_obs: Option<&LowerTriangular>,
    l_y: &LowerTriangular,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = resid.len();
    let w_star = ctx.prior_draw(rng)?;
    let e = standard_normals(n, rng);
    let e_star = match (obs, l_obs) {
        (ObsCov::Nugget(t), _) => e.iter().map(|v| v * t.sqrt()).collect::<Vec<_>>(),
        (ObsCov::Dense(_), Some(l)) => l.mul_vec(&e),
        (ObsCov::Dense(_), None) => unreachable!("dense covariance is always factored"),
    };
    let zw = z_times_w(z_cov, &w_star);
    let x: Vec<f64> = (0..n).map(|i| resid[i] - zw[i] - e_star[i]).collect();
    let alpha = trsolve_t_vec(l_y, &trsolve_vec(l_y, &x)?)?;
    let mut w = ctx.k_zt(&alpha)?;
    for (wi, ws) in w.iter_mut().zip(&w_star) {
        *wi += ws;
    }
    Ok(w)
}

/// Which chain indices to keep: `start, start + thin, …` (0-based, so
/// `start` leading draws are discarded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoverConfig {
    pub start: usize,
    pub thin: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self { start: 0, thin: 1, threads: 1, seed: 1 }
    }
}

pub fn retained_indices(total: usize, start: usize, thin: usize) -> Result<Vec<usize>> {
    if thin == 0 {
        return Err(Error::Invalid("thin must be at least 1".into()));
    }
    if start >= total {
        return Err(Error::Invalid(format!("start {start} leaves no draws out of {total}")));
    }
    Ok((start..total).step_by(thin).collect())
}

/// Draws for one named coefficient surface or process, `M × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedDraws {
    pub name: String,
    pub draws: Vec<Vec<f64>>,
}

/// Output of composition sampling; every block has one row per retained draw.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredSamples {
    pub indices: Vec<usize>,
    pub theta: Vec<Theta>,
    /// `M × p`, on the scale of the design used in the fit.
    pub beta: Vec<Vec<f64>>,
    /// `M × nr`, location-major.
    pub w: Vec<Vec<f64>>,
    pub fitted: Vec<Vec<f64>>,
    pub x_names: Vec<String>,
    pub svc_cols: Vec<usize>,
}

impl RecoveredSamples {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn r(&self) -> usize {
        self.svc_cols.len()
    }

    pub fn svc_names(&self) -> Vec<String> {
        self.svc_cols.iter().map(|&j| self.x_names[j].clone()).collect()
    }

    /// `w_j` draws per process, keyed by predictor name.
    pub fn w_named(&self) -> Vec<NamedDraws> {
        let r = self.r();
        self.svc_names()
            .into_iter()
            .enumerate()
            .map(|(k, name)| NamedDraws {
                name,
                draws: self.w.iter().map(|w| w.iter().skip(k).step_by(r.max(1)).copied().collect()).collect(),
            })
            .collect()
    }

    /// `β̃_j(s) = β_j + w_j(s)` keyed by predictor name.
    pub fn tilde_beta(&self) -> Result<Vec<NamedDraws>> {
        tilde_beta(&self.beta, &self.w, &self.svc_cols, &self.x_names)
    }

    pub fn tau_sq(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.tau_sq).collect()
    }
}

/// `β̃_j(s_i) = β_j + w_j(s_i)` for each space-varying column.
pub fn tilde_beta(beta: &[Vec<f64>], w: &[Vec<f64>], svc_cols: &[usize], x_names: &[String]) -> Result<Vec<NamedDraws>> {
    if beta.len() != w.len() {
        return Err(Error::Invalid(format!("{} beta draws but {} w draws", beta.len(), w.len())));
    }
    let r = svc_cols.len();
    let mut out: Vec<NamedDraws> = svc_cols
        .iter()
        .map(|&j| NamedDraws { name: x_names.get(j).cloned().unwrap_or_else(|| format!("#{}", j + 1)), draws: Vec::new() })
        .collect();
    for (b, wk) in beta.iter().zip(w) {
        if r > 0 && wk.len() % r != 0 {
            return Err(Error::Invalid(format!("w draw of length {} is not a multiple of r = {r}", wk.len())));
        }
        for (k, &j) in svc_cols.iter().enumerate() {
            let bj = *b.get(j).ok_or_else(|| Error::Invalid(format!("beta draw lacks column {}", j + 1)))?;
            out[k].draws.push(wk.iter().skip(k).step_by(r).map(|v| bj + v).collect());
        }
    }
    Ok(out)
}

/// RNG for retained draw `k`: one stream per draw so results do not depend
/// on how draws are spread across threads.
pub(crate) fn draw_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

/// `(β, w, fitted)` for one θ.
pub fn compose_draw<R: Rng + ?Sized>(model: &SvcModel, theta: &Theta, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let l = chol_owned(outcome_covariance(model, theta)?)?;
    let beta = draw_beta_with(model, &l, rng)?;
    let xb = model.x().matvec(&beta)?;
    let resid: Vec<f64> = model.y().iter().zip(&xb).map(|(y, m)| y - m).collect();
    let w = if model.r() == 0 {
        Vec::new()
    } else {
        let ctx = LatentContext::new(model, theta)?;
        let obs = ObsCov::Nugget(theta.tau_sq);
        let h = if henderson_applicable(model) { draw_w_henderson(model, &ctx, &resid, obs, None, rng).ok() } else { None };
        match h {
            Some(w) => w,
            None => draw_w_conditional(&ctx, model.z_cov(), &resid, obs, None, &l, rng)?,
        }
    };
    let zw = z_times_w(model.z_cov(), &w);
    let fitted = xb.iter().zip(&zw).map(|(a, b)| a + b).collect();
    Ok((beta, w, fitted))
}

/// Composition sampling over the retained part of a chain.
pub fn recover(model: &SvcModel, chain: &ChainSamples, cfg: &RecoverConfig) -> Result<RecoveredSamples> {
    recover_thetas(model, &chain.theta, cfg)
}

pub fn recover_thetas(model: &SvcModel, thetas: &[Theta], cfg: &RecoverConfig) -> Result<RecoveredSamples> {
    let indices = retained_indices(thetas.len(), cfg.start, cfg.thin)?;
    let results = parallel::install(cfg.threads, || {
        parallel::map_range(0..indices.len(), |k| {
            let mut rng = draw_rng(cfg.seed, k);
            compose_draw(model, &thetas[indices[k]], &mut rng)
                .map_err(|e| Error::Draw { index: indices[k], source: Box::new(e) })
        })
    });
    let mut beta = Vec::with_capacity(indices.len());
    let mut w = Vec::with_capacity(indices.len());
    let mut fitted = Vec::with_capacity(indices.len());
    for r in results {
        let (b, wk, f) = r?;
        beta.push(b);
        w.push(wk);
        fitted.push(f);
    }
    Ok(RecoveredSamples {
        theta: indices.iter().map(|&i| thetas[i].clone()).collect(),
        indices,
        beta,
        w,
        fitted,
        x_names: model.spec().x_names.clone(),
        svc_cols: model.spec().svc_cols.clone(),
    })
}
