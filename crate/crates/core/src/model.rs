//! Model specification, design matrices, priors and the map between natural
//! covariance parameters and the unconstrained sampling scale.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::ln_gamma;

use crate::kernels::{distance_matrix, CorrelationModel, Coordinates, CrossCovarianceSpec, KernelError, ProcessScale};
use crate::linalg::{chol, chol_solve, trsolve, LinalgError, Matrix};

/// Name given to an all-ones column.
pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{0}' is constant and cannot be standardized")]
    ConstantColumn(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid parameter value: {0}")]
    InvalidTheta(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// How the cross-covariance of the latent processes is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMode {
    /// `K = A Γ Aᵀ` with lower-triangular `A` and an inverse-Wishart prior on `AAᵀ`.
    Lmc,
    /// `A = diag(σ)` with inverse-gamma priors on each `σ_j²`.
    Independent,
}

impl fmt::Display for CovMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovMode::Lmc => "lmc",
            CovMode::Independent => "independent",
        })
    }
}

impl FromStr for CovMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lmc" | "multivariate" => Ok(CovMode::Lmc),
            "independent" | "diagonal" => Ok(CovMode::Independent),
            other => Err(ModelError::InvalidPrior(format!("unknown covariance mode '{other}'"))),
        }
    }
}

/// Outcome, design, coordinates and the space-varying column selection.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub y: Vec<f64>,
    pub x: Matrix,
    pub x_names: Vec<String>,
    pub coords: Coordinates,
    /// Indices into the columns of `x` whose coefficients vary in space,
    /// in the order the latent processes are stacked.
    pub svc_cols: Vec<usize>,
    pub standardize: bool,
    pub correlation: CorrelationModel,
    pub cov_mode: CovMode,
}

impl ModelSpec {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn r(&self) -> usize {
        self.svc_cols.len()
    }

    pub fn svc_names(&self) -> Vec<String> {
        self.svc_cols.iter().map(|&j| self.x_names[j].clone()).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.y.len();
        if self.x.rows() != n {
            return Err(ModelError::Dimension(format!("X has {} rows for {n} outcomes", self.x.rows())));
        }
        if self.coords.len() != n {
            return Err(ModelError::Dimension(format!("{} coordinates for {n} outcomes", self.coords.len())));
        }
        if self.x_names.len() != self.x.cols() {
            return Err(ModelError::Dimension(format!(
                "{} names for {} design columns",
                self.x_names.len(),
                self.x.cols()
            )));
        }
        for (k, &j) in self.svc_cols.iter().enumerate() {
            if j >= self.x.cols() {
                return Err(ModelError::UnknownColumn(format!("#{}", j + 1)));
            }
            if self.svc_cols[..k].contains(&j) {
                return Err(ModelError::Dimension(format!("column '{}' selected twice", self.x_names[j])));
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) || !self.x.is_finite() {
            return Err(ModelError::Dimension("outcome or design has non-finite values".into()));
        }
        self.correlation.validate()?;
        Ok(())
    }
}

/// Resolve column selectors given as names or 1-based indices.
pub fn resolve_columns<S: AsRef<str>>(names: &[String], selectors: &[S]) -> Result<Vec<usize>, ModelError> {
    selectors
        .iter()
        .map(|s| {
            let s = s.as_ref().trim();
            if let Some(j) = names.iter().position(|n| n == s) {
                return Ok(j);
            }
            match s.parse::<usize>() {
                Ok(k) if k >= 1 && k <= names.len() => Ok(k - 1),
                _ => Err(ModelError::UnknownColumn(s.to_string())),
            }
        })
        .collect()
}

/// `n × r` matrix of the space-varying covariate values, one row per location.
pub fn svc_covariates(x: &Matrix, svc_cols: &[usize]) -> Result<Matrix, ModelError> {
    if let Some(&bad) = svc_cols.iter().find(|&&j| j >= x.cols()) {
        return Err(ModelError::UnknownColumn(format!("#{}", bad + 1)));
    }
    Ok(Matrix::from_fn(x.rows(), svc_cols.len(), |i, k| x[(i, svc_cols[k])]))
}

/// The `n × nr` matrix `Z`: row `i` carries the selected covariates of
/// observation `i` in its own `r`-wide block, so `(Zw)_i = Σ_j x_j(s_i) w_j(s_i)`.
pub fn build_z(x: &Matrix, svc_cols: &[usize]) -> Result<Matrix, ModelError> {
    let zc = svc_covariates(x, svc_cols)?;
    let (n, r) = (x.rows(), svc_cols.len());
    let mut z = Matrix::zeros(n, n * r);
    for i in 0..n {
        for k in 0..r {
            z[(i, i * r + k)] = zc[(i, k)];
        }
    }
    Ok(z)
}

/// Centering and scaling applied to the non-intercept design columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Map coefficients estimated on the standardized design back to the
    /// original covariate scale.
    pub fn beta_to_original(&self, beta: &[f64], intercept: Option<usize>) -> Vec<f64> {
        let mut out: Vec<f64> = beta.iter().zip(&self.scales).map(|(b, s)| b / s).collect();
        if let Some(i0) = intercept {
            let shift: f64 = (0..beta.len())
                .filter(|&j| j != i0)
                .map(|j| beta[j] * self.centers[j] / self.scales[j])
                .sum();
            out[i0] = beta[i0] - shift;
        }
        out
    }
}

fn is_intercept_column(col: &[f64]) -> bool {
    !col.is_empty() && col.iter().all(|&v| v == 1.0)
}

/// Index of the all-ones column, if any.
pub fn intercept_column(x: &Matrix) -> Option<usize> {
    (0..x.cols()).find(|&j| is_intercept_column(x.col(j)))
}

/// Center to mean 0 and scale to sample SD 1 every non-intercept column.
pub fn standardize(x: &Matrix, names: &[String]) -> Result<(Matrix, Standardization), ModelError> {
    let n = x.rows();
    let mut out = x.clone();
    let mut centers = vec![0.0; x.cols()];
    let mut scales = vec![1.0; x.cols()];
    for j in 0..x.cols() {
        let col = x.col(j);
        if is_intercept_column(col) {
            continue;
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0 && sd.is_finite()) {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("#{}", j + 1));
            return Err(ModelError::ConstantColumn(name));
        }
        centers[j] = mean;
        scales[j] = sd;
        for v in out.col_mut(j) {
            *v = (*v - mean) / sd;
        }
    }
    Ok((out, Standardization { centers, scales }))
}

pub fn unstandardize(x_std: &Matrix, st: &Standardization) -> Matrix {
    Matrix::from_fn(x_std.rows(), x_std.cols(), |i, j| x_std[(i, j)] * st.scales[j] + st.centers[j])
}

/// Inverse-gamma with shape `a` and scale `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self, ModelError> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(ModelError::InvalidPrior(format!("IG({shape}, {scale}) needs positive shape and scale")));
        }
        Ok(Self { shape, scale })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }
}

/// Uniform support `(lo, hi)` for a decay parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformPrior {
    pub lo: f64,
    pub hi: f64,
}

impl UniformPrior {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(ModelError::InvalidPrior(format!("Unif({lo}, {hi}) needs lo < hi")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }
}

/// Prior on the process scale.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessPrior {
    /// Inverse-Wishart on `AAᵀ` with `df` degrees of freedom and scale `S`.
    InverseWishart { df: f64, scale: Matrix },
    /// Independent inverse-gamma on each `σ_j²`.
    InverseGamma(Vec<InverseGamma>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaPrior {
    Flat,
    Normal { mean: Vec<f64>, cov: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSet {
    pub tau_sq: InverseGamma,
    pub process: ProcessPrior,
    pub phi: Vec<UniformPrior>,
    pub beta: BetaPrior,
}

impl PriorSet {
    pub fn validate(&self, r: usize, p: usize, mode: CovMode) -> Result<(), ModelError> {
        if self.phi.len() != r {
            return Err(ModelError::InvalidPrior(format!("{} decay priors for {r} processes", self.phi.len())));
        }
        if r > 0 {
            match (&self.process, mode) {
                (ProcessPrior::InverseWishart { df, scale }, CovMode::Lmc) => {
                    if scale.rows() != r || scale.cols() != r {
                        return Err(ModelError::InvalidPrior(format!("IW scale must be {r}x{r}")));
                    }
                    if !(*df >= r as f64) {
                        return Err(ModelError::InvalidPrior(format!("IW degrees of freedom {df} < {r}")));
                    }
                    chol(scale).map_err(|_| ModelError::InvalidPrior("IW scale must be positive definite".into()))?;
                }
                (ProcessPrior::InverseGamma(v), CovMode::Independent) => {
                    if v.len() != r {
                        return Err(ModelError::InvalidPrior(format!("{} IG priors for {r} processes", v.len())));
                    }
                }
                (ProcessPrior::InverseWishart { .. }, CovMode::Independent) => {
                    return Err(ModelError::InvalidPrior("independent processes take IG priors on sigma.sq".into()))
                }
                (ProcessPrior::InverseGamma(_), CovMode::Lmc) => {
                    return Err(ModelError::InvalidPrior("LMC processes take an IW prior on K".into()))
                }
            }
        }
        if let BetaPrior::Normal { mean, cov } = &self.beta {
            if mean.len() != p || cov.rows() != p || cov.cols() != p {
                return Err(ModelError::InvalidPrior(format!("normal beta prior must have dimension {p}")));
            }
            chol(cov).map_err(|_| ModelError::InvalidPrior("beta prior covariance must be positive definite".into()))?;
        }
        Ok(())
    }
}

/// Scale parameters of the latent processes on their natural scale.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessParams {
    /// Lower triangle of `A`, column-major: `(a11, a21, …, ar1, a22, …, arr)`.
    Lmc(Vec<f64>),
    /// Process variances `σ_j²`.
    Independent(Vec<f64>),
}

impl ProcessParams {
    pub fn values(&self) -> &[f64] {
        match self {
            ProcessParams::Lmc(v) | ProcessParams::Independent(v) => v,
        }
    }

    pub fn mode(&self) -> CovMode {
        match self {
            ProcessParams::Lmc(_) => CovMode::Lmc,
            ProcessParams::Independent(_) => CovMode::Independent,
        }
    }
}

/// Covariance parameters `θ = {A or σ², φ, τ²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub process: ProcessParams,
    pub phi: Vec<f64>,
    pub tau_sq: f64,
}

/// Number of packed lower-triangle entries for `r` processes.
pub fn n_lower(r: usize) -> usize {
    r * (r + 1) / 2
}

/// Packed position of `A[i, j]` (`i ≥ j`).
pub fn lower_index(r: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < r);
    j * r - j * j.saturating_sub(1) / 2 + (i - j)
}

pub fn pack_lower(a: &Matrix) -> Vec<f64> {
    let r = a.rows();
    let mut out = Vec::with_capacity(n_lower(r));
    for j in 0..r {
        for i in j..r {
            out.push(a[(i, j)]);
        }
    }
    out
}

pub fn unpack_lower(r: usize, packed: &[f64]) -> Matrix {
    let mut a = Matrix::zeros(r, r);
    let mut k = 0;
    for j in 0..r {
        for i in j..r {
            a[(i, j)] = packed[k];
            k += 1;
        }
    }
    a
}

impl Theta {
    pub fn r(&self) -> usize {
        self.phi.len()
    }

    /// Mixing matrix `A` (diagonal `σ` in independent mode).
    pub fn mixing(&self) -> Matrix {
        match &self.process {
            ProcessParams::Lmc(v) => unpack_lower(self.r(), v),
            ProcessParams::Independent(s2) => {
                Matrix::from_diagonal(&s2.iter().map(|v| v.max(0.0).sqrt()).collect::<Vec<_>>())
            }
        }
    }

    /// Within-location covariance `AAᵀ`.
    pub fn process_covariance(&self) -> Matrix {
        let a = self.mixing();
        let at = a.transpose();
        at.t_matmul(&at).expect("square")
    }

    pub fn cross_spec(&self, model: CorrelationModel) -> Result<CrossCovarianceSpec, KernelError> {
        let scale = match &self.process {
            ProcessParams::Lmc(_) => ProcessScale::Lmc(self.mixing()),
            ProcessParams::Independent(s2) => ProcessScale::Independent(s2.iter().map(|v| v.sqrt()).collect()),
        };
        let spec = CrossCovarianceSpec { scale, phi: self.phi.clone(), model };
        spec.validate()?;
        Ok(spec)
    }

    /// Structural checks: lengths agree with `r`, values finite.
    pub fn check_shape(&self, mode: CovMode) -> Result<(), ModelError> {
        let r = self.r();
        let expect = match mode {
            CovMode::Lmc => n_lower(r),
            CovMode::Independent => r,
        };
        if self.process.mode() != mode && r > 0 {
            return Err(ModelError::InvalidTheta(format!("process parameters are {} but model is {mode}", self.process.mode())));
        }
        if self.process.values().len() != expect {
            return Err(ModelError::InvalidTheta(format!(
                "{} process parameters, expected {expect}",
                self.process.values().len()
            )));
        }
        if !self.tau_sq.is_finite() || self.phi.iter().chain(self.process.values()).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidTheta("non-finite parameter".into()));
        }
        Ok(())
    }
}

fn ln_multivariate_gamma(r: usize, a: f64) -> f64 {
    let rf = r as f64;
    rf * (rf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=r).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// Inverse-Wishart log-density of `Σ = AAᵀ` plus `log |∂(AAᵀ)/∂A|`, evaluated
/// from `A` through triangular solves only.
pub fn inverse_wishart_ln_pdf_of_factor(a: &Matrix, df: f64, scale: &Matrix) -> f64 {
    let r = a.rows();
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let l_a = match crate::linalg::LowerTriangular::new(a.clone()) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };
    let l_s = match chol(scale) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };
    let rf = r as f64;
    let log_det_sigma = 2.0 * diag.iter().map(|d| d.ln()).sum::<f64>();
    let log_det_s = crate::linalg::log_det_from_chol(&l_s).unwrap_or(f64::NAN);
    // tr(S Σ⁻¹) = ‖A⁻¹ L_S‖²_F
    let m = match trsolve(&l_a, l_s.as_matrix()) {
        Ok(m) => m,
        Err(_) => return f64::NEG_INFINITY,
    };
    let trace = m.frobenius_norm().powi(2);
    let density = 0.5 * df * log_det_s
        - 0.5 * df * rf * std::f64::consts::LN_2
        - ln_multivariate_gamma(r, 0.5 * df)
        - 0.5 * (df + rf + 1.0) * log_det_sigma
        - 0.5 * trace;
    let log_jacobian =
        rf * std::f64::consts::LN_2 + diag.iter().enumerate().map(|(i, d)| (rf - i as f64) * d.ln()).sum::<f64>();
    density + log_jacobian
}

/// `log p(θ)`; `-∞` outside the prior support.
pub fn log_prior(theta: &Theta, priors: &PriorSet) -> f64 {
    if theta.phi.len() != priors.phi.len() {
        return f64::NEG_INFINITY;
    }
    let mut lp = priors.tau_sq.ln_pdf(theta.tau_sq);
    for (phi, u) in theta.phi.iter().zip(&priors.phi) {
        if !u.contains(*phi) {
            return f64::NEG_INFINITY;
        }
    }
    if theta.r() == 0 {
        return lp;
    }
    match (&theta.process, &priors.process) {
        (ProcessParams::Lmc(_), ProcessPrior::InverseWishart { df, scale }) => {
            lp += inverse_wishart_ln_pdf_of_factor(&theta.mixing(), *df, scale);
        }
        (ProcessParams::Independent(s2), ProcessPrior::InverseGamma(igs)) => {
            for (v, ig) in s2.iter().zip(igs) {
                lp += ig.ln_pdf(*v);
            }
        }
        _ => return f64::NEG_INFINITY,
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Unconstrained representation of θ and `log |dθ/dz|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedTheta {
    pub z: Vec<f64>,
    pub log_jacobian: f64,
}

/// Layout of θ on the sampling scale: `[φ block, A/σ² block, τ²]`.
///
/// `φ` uses a logit of its position inside the uniform box, variances and
/// the diagonal of `A` use logs, off-diagonal entries of `A` are untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameterization {
    r: usize,
    mode: CovMode,
    phi_bounds: Vec<UniformPrior>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Parameterization {
    pub fn new(r: usize, mode: CovMode, phi_bounds: Vec<UniformPrior>) -> Result<Self, ModelError> {
        if phi_bounds.len() != r {
            return Err(ModelError::InvalidPrior(format!("{} decay bounds for {r} processes", phi_bounds.len())));
        }
        Ok(Self { r, mode, phi_bounds })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn mode(&self) -> CovMode {
        self.mode
    }

    pub fn n_process(&self) -> usize {
        match self.mode {
            CovMode::Lmc => n_lower(self.r),
            CovMode::Independent => self.r,
        }
    }

    pub fn dim(&self) -> usize {
        self.r + self.n_process() + 1
    }

    /// Ranges of the three blocks within `z`.
    pub fn blocks(&self) -> [std::ops::Range<usize>; 3] {
        let a = self.r;
        let b = a + self.n_process();
        [0..a, a..b, b..b + 1]
    }

    fn is_log_process(&self, k: usize) -> bool {
        match self.mode {
            CovMode::Independent => true,
            CovMode::Lmc => {
                // diagonal entries sit at the start of each packed column
                let mut start = 0;
                for j in 0..self.r {
                    if k == start {
                        return true;
                    }
                    start += self.r - j;
                }
                false
            }
        }
    }

    /// Natural-scale θ flattened in sampling order.
    pub fn flatten(&self, theta: &Theta) -> Vec<f64> {
        let mut v = theta.phi.clone();
        v.extend_from_slice(theta.process.values());
        v.push(theta.tau_sq);
        v
    }

    pub fn unflatten(&self, v: &[f64]) -> Result<Theta, ModelError> {
        if v.len() != self.dim() {
            return Err(ModelError::InvalidTheta(format!("{} values, expected {}", v.len(), self.dim())));
        }
        let [pb, kb, tb] = self.blocks();
        let vals = v[kb].to_vec();
        let process = match self.mode {
            CovMode::Lmc => ProcessParams::Lmc(vals),
            CovMode::Independent => ProcessParams::Independent(vals),
        };
        Ok(Theta { process, phi: v[pb].to_vec(), tau_sq: v[tb.start] })
    }

    pub fn to_unconstrained(&self, theta: &Theta) -> TransformedTheta {
        let mut z = Vec::with_capacity(self.dim());
        let mut lj = 0.0;
        for (phi, b) in theta.phi.iter().zip(&self.phi_bounds) {
            let u = (phi - b.lo) / (b.hi - b.lo);
            let zi = (u / (1.0 - u)).ln();
            z.push(zi);
            lj += self.phi_log_jacobian(zi, b);
        }
        for (k, v) in theta.process.values().iter().enumerate() {
            if self.is_log_process(k) {
                let zi = v.ln();
                z.push(zi);
                lj += zi;
            } else {
                z.push(*v);
            }
        }
        let zt = theta.tau_sq.ln();
        z.push(zt);
        lj += zt;
        if lj.is_nan() {
            lj = f64::NEG_INFINITY;
        }
        TransformedTheta { z, log_jacobian: lj }
    }

    fn phi_log_jacobian(&self, z: f64, b: &UniformPrior) -> f64 {
        if !z.is_finite() {
            return f64::NEG_INFINITY;
        }
        (b.hi - b.lo).ln() - softplus(-z) - softplus(z)
    }

    /// Inverse transform; also returns `log |dθ/dz|`.
    pub fn from_unconstrained(&self, z: &[f64]) -> (Theta, f64) {
        debug_assert_eq!(z.len(), self.dim());
        let [pb, kb, tb] = self.blocks();
        let mut lj = 0.0;
        let phi: Vec<f64> = z[pb]
            .iter()
            .zip(&self.phi_bounds)
            .map(|(&zi, b)| {
                lj += self.phi_log_jacobian(zi, b);
                b.lo + (b.hi - b.lo) * sigmoid(zi)
            })
            .collect();
        let vals: Vec<f64> = z[kb]
            .iter()
            .enumerate()
            .map(|(k, &zi)| {
                if self.is_log_process(k) {
                    lj += zi;
                    zi.exp()
                } else {
                    zi
                }
            })
            .collect();
        let zt = z[tb.start];
        lj += zt;
        let process = match self.mode {
            CovMode::Lmc => ProcessParams::Lmc(vals),
            CovMode::Independent => ProcessParams::Independent(vals),
        };
        if lj.is_nan() {
            lj = f64::NEG_INFINITY;
        }
        (Theta { process, phi, tau_sq: zt.exp() }, lj)
    }

    /// Column labels for natural-scale draws, keyed by predictor name.
    pub fn labels(&self, svc_names: &[String]) -> Vec<String> {
        let mut out: Vec<String> = svc_names.iter().map(|n| format!("phi.{n}")).collect();
        match self.mode {
            CovMode::Lmc => {
                for j in 0..self.r {
                    for i in j..self.r {
                        out.push(format!("A[{},{}]", i + 1, j + 1));
                    }
                }
            }
            CovMode::Independent => out.extend(svc_names.iter().map(|n| format!("sigma.sq.{n}"))),
        }
        out.push("tau.sq".into());
        out
    }
}

/// Validated model with every quantity that stays fixed across θ updates.
#[derive(Debug, Clone)]
pub struct SvcModel {
    spec: ModelSpec,
    priors: PriorSet,
    /// Design actually used (standardized when requested).
    x: Matrix,
    standardization: Option<Standardization>,
    /// `n × r` space-varying covariates taken from `x`.
    z_cov: Matrix,
    distances: Matrix,
    param: Parameterization,
    /// `X Σ_β Xᵀ` and `y − Xμ_β` for the normal-β target.
    x_sigma_beta_xt: Option<Matrix>,
    centered_y: Option<Vec<f64>>,
    /// `Σ_β⁻¹` and `Σ_β⁻¹ μ_β`.
    beta_precision: Option<(Matrix, Vec<f64>)>,
}

impl SvcModel {
    pub fn new(spec: ModelSpec, priors: PriorSet) -> Result<Self, ModelError> {
        spec.validate()?;
        priors.validate(spec.r(), spec.p(), spec.cov_mode)?;
        let (x, standardization) = if spec.standardize {
            let (x, st) = standardize(&spec.x, &spec.x_names)?;
            (x, Some(st))
        } else {
            (spec.x.clone(), None)
        };
        let z_cov = svc_covariates(&x, &spec.svc_cols)?;
        let distances = distance_matrix(&spec.coords, &spec.coords)?;
        let param = Parameterization::new(spec.r(), spec.cov_mode, priors.phi.clone())?;
        let (x_sigma_beta_xt, centered_y, beta_precision) = match &priors.beta {
            BetaPrior::Flat => (None, None, None),
            BetaPrior::Normal { mean, cov } => {
                let xs = x.matmul(cov)?;
                let mut xsx = xs.matmul(&x.transpose())?;
                xsx.symmetrize();
                let xm = x.matvec(mean)?;
                let cy: Vec<f64> = spec.y.iter().zip(&xm).map(|(a, b)| a - b).collect();
                let l = chol(cov)?;
                let prec = chol_solve(&l, &Matrix::identity(mean.len()))?;
                let pm = prec.matvec(mean)?;
                (Some(xsx), Some(cy), Some((prec, pm)))
            }
        };
        Ok(Self { spec, priors, x, standardization, z_cov, distances, param, x_sigma_beta_xt, centered_y, beta_precision })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn priors(&self) -> &PriorSet {
        &self.priors
    }

    pub fn y(&self) -> &[f64] {
        &self.spec.y
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn z_cov(&self) -> &Matrix {
        &self.z_cov
    }

    pub fn distances(&self) -> &Matrix {
        &self.distances
    }

    pub fn coords(&self) -> &Coordinates {
        &self.spec.coords
    }

    pub fn correlation(&self) -> CorrelationModel {
        self.spec.correlation
    }

    pub fn parameterization(&self) -> &Parameterization {
        &self.param
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn p(&self) -> usize {
        self.spec.p()
    }

    pub fn r(&self) -> usize {
        self.spec.r()
    }

    pub fn beta_is_flat(&self) -> bool {
        matches!(self.priors.beta, BetaPrior::Flat)
    }

    pub fn x_sigma_beta_xt(&self) -> Option<&Matrix> {
        self.x_sigma_beta_xt.as_ref()
    }

    pub fn centered_y(&self) -> Option<&[f64]> {
        self.centered_y.as_deref()
    }

    pub fn beta_precision(&self) -> Option<(&Matrix, &[f64])> {
        self.beta_precision.as_ref().map(|(m, v)| (m, v.as_slice()))
    }

    pub fn svc_names(&self) -> Vec<String> {
        self.spec.svc_names()
    }

    pub fn labels(&self) -> Vec<String> {
        self.param.labels(&self.svc_names())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn lmc_param(r: usize) -> Parameterization {
        Parameterization::new(r, CovMode::Lmc, vec![UniformPrior::new(1.0, 10.0).unwrap(); r]).unwrap()
    }

    fn sim_priors(r: usize) -> PriorSet {
        PriorSet {
            tau_sq: InverseGamma::new(2.0, 1.0).unwrap(),
            process: ProcessPrior::InverseWishart { df: r as f64, scale: Matrix::identity(r) },
            phi: vec![UniformPrior::new(1.0, 10.0).unwrap(); r],
            beta: BetaPrior::Flat,
        }
    }

    /// Gauss-Jordan inverse and determinant, test-only.
    fn gauss_jordan(m: &Matrix) -> (Matrix, f64) {
        let n = m.rows();
        let mut a = m.clone();
        let mut inv = Matrix::identity(n);
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[(i, c)].abs().partial_cmp(&a[(j, c)].abs()).unwrap()).unwrap();
            if p != c {
                det = -det;
                for k in 0..n {
                    let t = a[(c, k)];
                    a[(c, k)] = a[(p, k)];
                    a[(p, k)] = t;
                    let t = inv[(c, k)];
                    inv[(c, k)] = inv[(p, k)];
                    inv[(p, k)] = t;
                }
            }
            let piv = a[(c, c)];
            det *= piv;
            for k in 0..n {
                a[(c, k)] /= piv;
                inv[(c, k)] /= piv;
            }
            for i in 0..n {
                if i != c {
                    let f = a[(i, c)];
                    for k in 0..n {
                        a[(i, k)] -= f * a[(c, k)];
                        inv[(i, k)] -= f * inv[(c, k)];
                    }
                }
            }
        }
        (inv, det)
    }

    #[test]
    fn z_intercept_only_is_identity() {
        let x = Matrix::from_fn(4, 1, |_, _| 1.0);
        assert_eq!(build_z(&x, &[0]).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn z_block_layout() {
        let x = Matrix::from_rows(&[[1.0, 2.5], [1.0, -0.5]]);
        let z = build_z(&x, &[0, 1]).unwrap();
        assert_eq!(z, Matrix::from_rows(&[[1.0, 2.5, 0.0, 0.0], [0.0, 0.0, 1.0, -0.5]]));
        assert!(matches!(build_z(&x, &[2]), Err(ModelError::UnknownColumn(_))));
    }

    #[test]
    fn z_times_w_expands_svc_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let x = Matrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let w: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zw = build_z(&x, &[0, 1, 2]).unwrap().matvec(&w).unwrap();
        for i in 0..n {
            let (w0, wa, wb) = (w[3 * i], w[3 * i + 1], w[3 * i + 2]);
            let expect = w0 + x[(i, 1)] * wa + x[(i, 2)] * wb;
            assert!((zw[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn resolve_by_name_and_index() {
        let n = names(&[INTERCEPT, "a", "b"]);
        assert_eq!(resolve_columns(&n, &["(Intercept)", "a", "b"]).unwrap(), vec![0, 1, 2]);
        assert_eq!(resolve_columns(&n, &["1", "3"]).unwrap(), vec![0, 2]);
        assert_eq!(resolve_columns(&n, &["c"]), Err(ModelError::UnknownColumn("c".into())));
        assert!(resolve_columns(&n, &["0"]).is_err());
    }

    #[test]
    fn standardize_examples() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]);
        let (xs, st) = standardize(&x, &names(&[INTERCEPT, "a"])).unwrap();
        assert_eq!(xs.col(0), &[1.0, 1.0, 1.0]);
        assert_eq!(xs.col(1), &[-1.0, 0.0, 1.0]);
        assert_eq!(st.centers, vec![0.0, 2.0]);
        assert_eq!(st.scales, vec![1.0, 1.0]);
        let (again, st2) = standardize(&xs, &names(&[INTERCEPT, "a"])).unwrap();
        assert!(again.sub(&xs).unwrap().max_abs() < 1e-15);
        assert!(st2.centers[1].abs() < 1e-15 && (st2.scales[1] - 1.0).abs() < 1e-15);
        let bad = Matrix::from_rows(&[[1.0, 4.0], [1.0, 4.0]]);
        assert_eq!(standardize(&bad, &names(&["int", "c"])), Err(ModelError::ConstantColumn("c".into())));
    }

    #[test]
    fn beta_back_transform() {
        // y = 2 + 3x on the raw scale
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 4.0], [1.0, 7.0]]);
        let (_, st) = standardize(&x, &names(&[INTERCEPT, "x"])).unwrap();
        let beta_std = [2.0 + 3.0 * st.centers[1], 3.0 * st.scales[1]];
        let b = st.beta_to_original(&beta_std, Some(0));
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_gamma_closed_form() {
        let ig = InverseGamma::new(2.0, 1.0).unwrap();
        assert!((ig.ln_pdf(1.0) + 1.0).abs() < 1e-15);
        assert_eq!(ig.ln_pdf(0.0), f64::NEG_INFINITY);
        assert!(InverseGamma::new(0.0, 1.0).is_err());
    }

    #[test]
    fn log_prior_support_and_nugget_only() {
        let priors = PriorSet {
            tau_sq: InverseGamma::new(2.0, 1.0).unwrap(),
            process: ProcessPrior::InverseGamma(vec![]),
            phi: vec![],
            beta: BetaPrior::Flat,
        };
        let theta = Theta { process: ProcessParams::Independent(vec![]), phi: vec![], tau_sq: 1.0 };
        assert!((log_prior(&theta, &priors) + 1.0).abs() < 1e-15);

        let priors = sim_priors(3);
        let mut theta = Theta { process: ProcessParams::Lmc(vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]), phi: vec![6.0; 3], tau_sq: 1.0 };
        assert!(log_prior(&theta, &priors).is_finite());
        theta.phi[1] = 10.5;
        assert_eq!(log_prior(&theta, &priors), f64::NEG_INFINITY);
        theta.phi[1] = 1.0;
        assert_eq!(log_prior(&theta, &priors), f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_part_is_flat_inside_box() {
        let priors = sim_priors(3);
        let a = vec![1.0, -1.0, 0.0, 1.0, 1.0, 0.1];
        let t1 = Theta { process: ProcessParams::Lmc(a.clone()), phi: vec![2.0, 3.0, 4.0], tau_sq: 0.3 };
        let t2 = Theta { process: ProcessParams::Lmc(a), phi: vec![9.0, 1.5, 5.5], tau_sq: 0.3 };
        assert_eq!(log_prior(&t1, &priors), log_prior(&t2, &priors));
    }

    #[test]
    fn inverse_wishart_matches_textbook_density() {
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 1.0, 0.1]]);
        let sigma = a.matmul(&a.transpose()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = Matrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5));
        let mut s_rand = b.gram();
        s_rand.add_to_diagonal(1.0);
        for (df, s) in [(3.0, Matrix::identity(3)), (5.5, s_rand)] {
            let (sigma_inv, det_sigma) = gauss_jordan(&sigma);
            let (_, det_s) = gauss_jordan(&s);
            let tr: f64 = (0..3).map(|i| s.matmul(&sigma_inv).unwrap()[(i, i)]).sum();
            let p = 3.0;
            let lmg = p * (p - 1.0) / 4.0 * std::f64::consts::PI.ln()
                + ln_gamma(df / 2.0)
                + ln_gamma(df / 2.0 - 0.5)
                + ln_gamma(df / 2.0 - 1.0);
            let textbook = df / 2.0 * det_s.ln() - df * p / 2.0 * 2f64.ln() - lmg - (df + p + 1.0) / 2.0 * det_sigma.ln()
                - 0.5 * tr;
            // |J| = 2^r Π a_ii^{r-i+1}
            let jac = (8.0f64 * 1.0f64.powi(3) * 1.0f64.powi(2) * 0.1f64.powi(1)).ln();
            let got = inverse_wishart_ln_pdf_of_factor(&a, df, &s);
            assert!((got - (textbook + jac)).abs() < 1e-10, "{got} vs {}", textbook + jac);
        }
    }

    #[test]
    fn iw_jacobian_by_finite_differences() {
        // log|∂ vech(AAᵀ) / ∂ vech(A)| against a numerical Jacobian determinant.
        let a = Matrix::from_rows(&[[1.3, 0.0, 0.0], [0.4, 0.8, 0.0], [-0.2, 0.5, 0.6]]);
        let packed = pack_lower(&a);
        let f = |v: &[f64]| {
            let m = unpack_lower(3, v);
            pack_lower(&m.matmul(&m.transpose()).unwrap())
        };
        let h = 1e-6;
        let jac = Matrix::from_fn(6, 6, |i, j| {
            let mut up = packed.clone();
            let mut dn = packed.clone();
            up[j] += h;
            dn[j] -= h;
            (f(&up)[i] - f(&dn)[i]) / (2.0 * h)
        });
        let (_, det) = gauss_jordan(&jac);
        let expect = 3.0 * 2f64.ln() + 3.0 * 1.3f64.ln() + 2.0 * 0.8f64.ln() + 0.6f64.ln();
        assert!((det.abs().ln() - expect).abs() < 1e-6);
    }

    #[test]
    fn transform_examples() {
        let p = Parameterization::new(1, CovMode::Independent, vec![UniformPrior::new(1.0, 10.0).unwrap()]).unwrap();
        let theta = Theta { process: ProcessParams::Independent(vec![1.0]), phi: vec![5.5], tau_sq: 1.0 };
        let t = p.to_unconstrained(&theta);
        assert_eq!(t.z, vec![0.0, 0.0, 0.0]);
        assert!((t.log_jacobian - (9.0f64 * 0.25).ln()).abs() < 1e-15);
        let (back, lj) = p.from_unconstrained(&t.z);
        assert_eq!(back, theta);
        assert!((lj - t.log_jacobian).abs() < 1e-15);
    }

    #[test]
    fn boundary_phi_gives_neg_infinite_jacobian() {
        let p = lmc_param(1);
        let theta = Theta { process: ProcessParams::Lmc(vec![1.0]), phi: vec![1.0], tau_sq: 1.0 };
        assert_eq!(p.to_unconstrained(&theta).log_jacobian, f64::NEG_INFINITY);
    }

    #[test]
    fn lmc_labels_and_blocks() {
        let p = lmc_param(3);
        assert_eq!(p.dim(), 10);
        let labels = p.labels(&names(&[INTERCEPT, "a", "b"]));
        assert_eq!(labels[0], "phi.(Intercept)");
        assert_eq!(&labels[3..9], &["A[1,1]", "A[2,1]", "A[3,1]", "A[2,2]", "A[3,2]", "A[3,3]"]);
        assert_eq!(labels[9], "tau.sq");
        let start = Theta { process: ProcessParams::Lmc(vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]), phi: vec![6.0; 3], tau_sq: 1.0 };
        assert_eq!(start.mixing(), Matrix::identity(3));
    }

    #[test]
    fn metropolis_ratio_invariant_under_log_transform() {
        // Target on τ²: IG(2, 1). A random walk on z = log τ² is a log-normal
        // proposal on τ²; the θ-scale Hastings ratio must equal the z-scale ratio.
        let ig = InverseGamma::new(2.0, 1.0).unwrap();
        let s = 0.3f64;
        for &(t0, t1) in &[(0.5, 0.7), (1.2, 0.4), (2.0, 2.5)] {
            let z_ratio = (ig.ln_pdf(t1) + t1.ln()) - (ig.ln_pdf(t0) + t0.ln());
            let lq = |to: f64, from: f64| {
                let d = to.ln() - from.ln();
                -0.5 * d * d / (s * s) - to.ln()
            };
            let theta_ratio = ig.ln_pdf(t1) + lq(t0, t1) - ig.ln_pdf(t0) - lq(t1, t0);
            assert!((z_ratio - theta_ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn model_validation_errors() {
        let coords = Coordinates::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let spec = ModelSpec {
            y: vec![1.0, 2.0, 3.0],
            x: Matrix::from_fn(3, 1, |_, _| 1.0),
            x_names: names(&[INTERCEPT]),
            coords,
            svc_cols: vec![0],
            standardize: false,
            correlation: CorrelationModel::Exponential,
            cov_mode: CovMode::Lmc,
        };
        assert!(SvcModel::new(spec.clone(), sim_priors(1)).is_ok());
        let mut bad = spec.clone();
        bad.svc_cols = vec![0, 0];
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.y.push(1.0);
        assert!(bad.validate().is_err());
        assert!(SvcModel::new(spec.clone(), sim_priors(2)).is_err());
        let mut priors = sim_priors(1);
        priors.process = ProcessPrior::InverseGamma(vec![InverseGamma::new(2.0, 1.0).unwrap()]);
        assert!(SvcModel::new(spec, priors).is_err());
    }

    proptest! {
        #[test]
        fn transform_round_trip(
            r in 1usize..4,
            seed in any::<u64>(),
            lmc in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mode = if lmc { CovMode::Lmc } else { CovMode::Independent };
            let bounds: Vec<UniformPrior> = (0..r).map(|_| {
                let lo = rng.random_range(0.01..2.0);
                UniformPrior::new(lo, lo + rng.random_range(0.5..20.0)).unwrap()
            }).collect();
            let phi = bounds.iter().map(|b| b.lo + (b.hi - b.lo) * rng.random_range(0.05..0.95)).collect();
            let p = Parameterization::new(r, mode, bounds).unwrap();
            let process = match mode {
                CovMode::Lmc => {
                    let mut a = Matrix::from_fn(r, r, |i, j| if i > j { rng.random_range(-2.0..2.0) } else { 0.0 });
                    for i in 0..r { a[(i, i)] = rng.random_range(0.05..3.0); }
                    ProcessParams::Lmc(pack_lower(&a))
                }
                CovMode::Independent => ProcessParams::Independent((0..r).map(|_| rng.random_range(0.01..5.0)).collect()),
            };
            let theta = Theta { process, phi, tau_sq: rng.random_range(0.01..4.0) };
            let t = p.to_unconstrained(&theta);
            let (back, lj) = p.from_unconstrained(&t.z);
            let again = p.to_unconstrained(&back);
            for (a, b) in t.z.iter().zip(&again.z) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            for (a, b) in p.flatten(&theta).iter().zip(p.flatten(&back)) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            prop_assert!((lj - t.log_jacobian).abs() <= 1e-10);
        }

        #[test]
        fn z_is_linear(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x1 = Matrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let x2 = Matrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let w1: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w2: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z1 = build_z(&x1, &[0, 1]).unwrap();
            let z12 = build_z(&x1.add(&x2).unwrap(), &[0, 1]).unwrap();
            let z2 = build_z(&x2, &[0, 1]).unwrap();
            let lhs = z12.matvec(&w1).unwrap();
            let rhs: Vec<f64> = z1.matvec(&w1).unwrap().iter().zip(z2.matvec(&w1).unwrap()).map(|(a, b)| a + b).collect();
            for (a, b) in lhs.iter().zip(&rhs) { prop_assert!((a - b).abs() < 1e-12); }
            let ws: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 2.0 * a - b).collect();
            let lhs = z1.matvec(&ws).unwrap();
            let a1 = z1.matvec(&w1).unwrap();
            let a2 = z1.matvec(&w2).unwrap();
            for i in 0..n { prop_assert!((lhs[i] - (2.0 * a1[i] - a2[i])).abs() < 1e-12); }
        }

        #[test]
        fn standardize_round_trip(seed in any::<u64>(), n in 3usize..30, p in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Matrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-50.0..50.0) });
            let nm: Vec<String> = (0..p).map(|j| format!("c{j}")).collect();
            let (xs, st) = standardize(&x, &nm).unwrap();
            let back = unstandardize(&xs, &st);
            prop_assert!(back.sub(&x).unwrap().max_abs() <= 1e-12 * (1.0 + x.max_abs()));
        }
    }
}
