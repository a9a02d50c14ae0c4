//! Synthetic data from the SVC model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{distance_matrix, CorrelationModel, Coordinates};
use crate::linalg::{chol_owned, Matrix};
use crate::model::{CovMode, ModelSpec, INTERCEPT};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDesign {
    pub n: usize,
    /// Sampling box, one `(lo, hi)` per coordinate dimension.
    pub bounds: Vec<(f64, f64)>,
    /// Coefficients for the intercept followed by the standard-normal predictors.
    pub beta: Vec<f64>,
    pub x_names: Vec<String>,
    /// Design columns with a latent process, in process order.
    pub svc_cols: Vec<usize>,
    /// Lower-triangular mixing matrix; zeros are allowed here.
    pub a: Matrix,
    pub phi: Vec<f64>,
    pub correlation: CorrelationModel,
    pub tau_sq: f64,
    pub seed: u64,
}

/// Intercept plus predictors `a` and `b`, all varying in space; unit square,
/// exponential correlation.
pub fn three_process_design(n: usize, seed: u64) -> SimulationDesign {
    SimulationDesign {
        n,
        bounds: vec![(0.0, 1.0); 2],
        beta: vec![1.0, 10.0, -10.0],
        x_names: vec![INTERCEPT.into(), "a".into(), "b".into()],
        svc_cols: vec![0, 1, 2],
        a: Matrix::from_rows(&[[1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 1.0, 0.1]]),
        phi: vec![4.0, 6.0, 6.0],
        correlation: CorrelationModel::Exponential,
        tau_sq: 0.1,
        seed,
    }
}

impl SimulationDesign {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn r(&self) -> usize {
        self.svc_cols.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, r) = (self.p(), self.r());
        if p == 0 || self.x_names.len() != p {
            return Err(Error::Invalid(format!("{} names for {p} coefficients", self.x_names.len())));
        }
        if self.bounds.is_empty() || self.bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Invalid("sampling box needs lo < hi in every dimension".into()));
        }
        if self.svc_cols.iter().any(|&j| j >= p) {
            return Err(Error::Invalid("space-varying column out of range".into()));
        }
        if self.a.rows() != r || self.a.cols() != r || self.phi.len() != r {
            return Err(Error::Invalid(format!("A and phi must match r = {r}")));
        }
        for j in 0..r {
            for i in 0..j {
                if self.a[(i, j)] != 0.0 {
                    return Err(Error::Invalid("A must be lower triangular".into()));
                }
            }
        }
        if self.phi.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Invalid("decay parameters must be positive".into()));
        }
        if !(self.tau_sq >= 0.0) {
            return Err(Error::Invalid("nugget must be non-negative".into()));
        }
        self.correlation.validate()?;
        Ok(())
    }
}

/// A simulated dataset with the quantities used to generate it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub coords: Coordinates,
    pub x: Matrix,
    pub x_names: Vec<String>,
    pub y: Vec<f64>,
    /// True latent values, location-major (`n r`).
    pub w: Vec<f64>,
    /// True `β_j + w_j(s_i)` per process, `r` vectors of length `n`.
    pub tilde_beta: Vec<Vec<f64>>,
    pub svc_cols: Vec<usize>,
}

impl SimulatedData {
    pub fn model_spec(&self, svc_cols: Vec<usize>, correlation: CorrelationModel, cov_mode: CovMode) -> ModelSpec {
        ModelSpec {
            y: self.y.clone(),
            x: self.x.clone(),
            x_names: self.x_names.clone(),
            coords: self.coords.clone(),
            svc_cols,
            standardize: false,
            correlation,
            cov_mode,
        }
    }
}

/// Draw `w ~ N(0, K)` at `coords`: each process from its own correlation
/// factor, then mixed by `A`.
pub fn simulate_w<R: Rng + ?Sized>(
    coords: &Coordinates,
    a: &Matrix,
    phi: &[f64],
    correlation: CorrelationModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = coords.len();
    let r = phi.len();
    let d = distance_matrix(coords, coords)?;
    let mut v = Vec::with_capacity(r);
    for &ph in phi {
        let corr = Matrix::from_fn(n, n, |i, j| correlation.eval(d[(i, j)], ph));
        let l = chol_owned(corr)?;
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        v.push(l.mul_vec(&e));
    }
    let mut w = vec![0.0; n * r];
    for i in 0..n {
        for row in 0..r {
            w[i * r + row] = (0..=row).map(|k| a[(row, k)] * v[k][i]).sum();
        }
    }
    Ok(w)
}

pub fn simulate(design: &SimulationDesign) -> Result<SimulatedData> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let (n, p, r) = (design.n, design.p(), design.r());
    let dim = design.bounds.len();
    let mut pts = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for &(lo, hi) in &design.bounds {
            pts.push(rng.random_range(lo..hi));
        }
    }
    let coords = Coordinates::new(dim, pts)?;
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let w = if n > 0 { simulate_w(&coords, &design.a, &design.phi, design.correlation, &mut rng)? } else { Vec::new() };
    let tau = design.tau_sq.sqrt();
    let y = (0..n)
        .map(|i| {
            let fixed: f64 = (0..p).map(|j| x[(i, j)] * design.beta[j]).sum();
            let latent: f64 = design.svc_cols.iter().enumerate().map(|(k, &j)| x[(i, j)] * w[i * r + k]).sum();
            let e: f64 = rng.sample(StandardNormal);
            fixed + latent + tau * e
        })
        .collect();
    let tilde_beta = design
        .svc_cols
        .iter()
        .enumerate()
        .map(|(k, &j)| (0..n).map(|i| design.beta[j] + w[i * r + k]).collect())
        .collect();
    Ok(SimulatedData { coords, x, x_names: design.x_names.clone(), y, w, tilde_beta, svc_cols: design.svc_cols.clone() })
}
