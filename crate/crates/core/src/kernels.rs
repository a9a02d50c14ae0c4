//! Spatial correlation functions, distances in any coordinate dimension and
//! the cross-covariance of the multivariate process `w(s)`.
//!
//! The latent vector `w` is stacked by location: entry `i*r + j` is
//! `w_j(s_i)`. Under the linear model of coregionalization
//! `K(s, t) = A Γ(s, t) Aᵀ` with `Γ` diagonal in the per-process
//! correlations; the independent mode is the special case `A = diag(σ)`.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::gamma;

use crate::linalg::Matrix;
use crate::parallel;

/// Correlation level that defines the effective range.
pub const EFFECTIVE_RANGE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("coordinate dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid coordinates: {0}")]
    InvalidCoordinates(String),
    #[error("distance must be non-negative and finite, got {0}")]
    NegativeDistance(f64),
    #[error("decay parameter must be positive and finite, got {0}")]
    InvalidDecay(f64),
    #[error("invalid cross-covariance: {0}")]
    InvalidSpec(String),
    #[error("unknown correlation family '{0}'")]
    UnknownFamily(String),
    #[error("effective range root-finding failed for {0}")]
    RootNotFound(String),
}

/// Isotropic correlation family `ρ(d; φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrelationModel {
    /// `exp(-φd)`
    Exponential,
    /// `exp(-(φd)²)`
    Gaussian,
    /// `1 - 1.5φd + 0.5(φd)³` for `d < 1/φ`, zero beyond.
    Spherical,
    /// `(φd)^ν K_ν(φd) / (2^{ν-1} Γ(ν))` with fixed smoothness `ν`.
    Matern { nu: f64 },
}

impl CorrelationModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::Gaussian => "gaussian",
            Self::Spherical => "spherical",
            Self::Matern { .. } => "matern",
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if let Self::Matern { nu } = self {
            if !(*nu > 0.0 && nu.is_finite()) {
                return Err(KernelError::InvalidSpec(format!("matern smoothness must be positive, got {nu}")));
            }
        }
        Ok(())
    }

    /// Checked evaluation of `ρ(d; φ)`.
    pub fn correlation(&self, d: f64, phi: f64) -> Result<f64, KernelError> {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(KernelError::NegativeDistance(d));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(KernelError::InvalidDecay(phi));
        }
        self.validate()?;
        Ok(self.eval(d, phi))
    }

    /// Unchecked evaluation for hot loops; arguments are validated upstream.
    #[inline]
    pub fn eval(&self, d: f64, phi: f64) -> f64 {
        if d == 0.0 {
            return 1.0;
        }
        let x = phi * d;
        match *self {
            Self::Exponential => (-x).exp(),
            Self::Gaussian => (-x * x).exp(),
            Self::Spherical => {
                if x >= 1.0 {
                    0.0
                } else {
                    1.0 - 1.5 * x + 0.5 * x * x * x
                }
            }
            Self::Matern { nu } => matern(x, nu),
        }
    }

    /// Distance at which the correlation falls to [`EFFECTIVE_RANGE_LEVEL`].
    pub fn effective_range(&self, phi: f64) -> Result<f64, KernelError> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(KernelError::InvalidDecay(phi));
        }
        self.validate()?;
        let level = EFFECTIVE_RANGE_LEVEL;
        match *self {
            Self::Exponential => Ok(-level.ln() / phi),
            Self::Gaussian => Ok((-level.ln()).sqrt() / phi),
            Self::Spherical => {
                // ρ is decreasing on [0, 1/φ] from 1 to 0.
                bisect(|d| self.eval(d, phi) - level, 0.0, 1.0 / phi)
                    .ok_or_else(|| KernelError::RootNotFound(self.name().into()))
            }
            Self::Matern { .. } => {
                let mut hi = 1.0 / phi;
                let mut tries = 0;
                while self.eval(hi, phi) > level {
                    hi *= 2.0;
                    tries += 1;
                    if tries > 200 {
                        return Err(KernelError::RootNotFound(self.name().into()));
                    }
                }
                bisect(|d| self.eval(d, phi) - level, 0.0, hi)
                    .ok_or_else(|| KernelError::RootNotFound(self.name().into()))
            }
        }
    }
}

impl fmt::Display for CorrelationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Matern { nu } => write!(f, "matern(nu={nu})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for CorrelationModel {
    type Err = KernelError;

    /// Parses `exponential`, `gaussian`, `spherical` or `matern:<nu>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "exponential" | "exp" => Ok(Self::Exponential),
            "gaussian" => Ok(Self::Gaussian),
            "spherical" => Ok(Self::Spherical),
            _ => {
                if let Some(nu) = lower.strip_prefix("matern:") {
                    let nu: f64 = nu.parse().map_err(|_| KernelError::UnknownFamily(s.into()))?;
                    let m = Self::Matern { nu };
                    m.validate()?;
                    Ok(m)
                } else {
                    Err(KernelError::UnknownFamily(s.into()))
                }
            }
        }
    }
}

/// Bisection for a sign change of a decreasing function on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1e-300) {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn matern(x: f64, nu: f64) -> f64 {
    // Closed forms for the common half-integer smoothness values.
    if nu == 0.5 {
        return (-x).exp();
    }
    if nu == 1.5 {
        return (1.0 + x) * (-x).exp();
    }
    if nu == 2.5 {
        return (1.0 + x + x * x / 3.0) * (-x).exp();
    }
    if x > 700.0 {
        return 0.0;
    }
    let norm = 2f64.powf(nu - 1.0) * gamma(nu);
    (x.powf(nu) * bessel_k(nu, x) / norm).clamp(0.0, 1.0)
}

/// Modified Bessel function of the second kind via
/// `K_ν(x) = ∫₀^∞ exp(-x cosh t) cosh(νt) dt`, trapezoid rule in `t`.
pub(crate) fn bessel_k(nu: f64, x: f64) -> f64 {
    let h = 0.05;
    let mut sum = 0.5 * (-x).exp();
    let mut k = 1usize;
    loop {
        let t = k as f64 * h;
        let term = (-x * t.cosh() + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
        sum += term;
        if (term < 1e-18 * sum && x * t.cosh() > nu * t) || k > 100_000 {
            break;
        }
        k += 1;
    }
    sum * h
}

/// `n` points of common dimension `k ≥ 1`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    dim: usize,
    points: Vec<f64>,
}

impl Coordinates {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self, KernelError> {
        if dim == 0 {
            return Err(KernelError::InvalidCoordinates("dimension must be at least 1".into()));
        }
        if points.len() % dim != 0 {
            return Err(KernelError::InvalidCoordinates(format!(
                "{} values do not split into points of dimension {dim}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(KernelError::InvalidCoordinates(format!("non-finite value at point {}", i / dim)));
        }
        Ok(Self { dim, points })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, KernelError> {
        let dim = rows.first().map_or(1, |r| r.as_ref().len());
        let mut pts = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(KernelError::DimensionMismatch(dim, r.len()));
            }
            pts.extend_from_slice(r);
        }
        Self::new(dim, pts)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: usize, other: &Coordinates, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(other.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest pairwise distance.
    pub fn max_distance(&self) -> f64 {
        let n = self.len();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.max(self.distance(i, self, j));
            }
        }
        m
    }

    pub fn select(&self, idx: &[usize]) -> Coordinates {
        let mut pts = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            pts.extend_from_slice(self.point(i));
        }
        Coordinates { dim: self.dim, points: pts }
    }
}

/// `n_S × n_T` matrix of Euclidean distances.
pub fn distance_matrix(s: &Coordinates, t: &Coordinates) -> Result<Matrix, KernelError> {
    if s.dim != t.dim {
        return Err(KernelError::DimensionMismatch(s.dim, t.dim));
    }
    let (ns, nt) = (s.len(), t.len());
    let mut d = Matrix::zeros(ns, nt);
    parallel::for_each_chunk_mut(d.as_mut_slice(), ns.max(1), ns * nt * s.dim, |j, col| {
        for (i, v) in col.iter_mut().enumerate() {
            *v = s.distance(i, t, j);
        }
    });
    Ok(d)
}

/// Scale of the latent processes: lower-triangular `A` (LMC) or independent
/// standard deviations `σ`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessScale {
    Lmc(Matrix),
    Independent(Vec<f64>),
}

/// Everything needed to evaluate `K_θ(s, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovarianceSpec {
    pub scale: ProcessScale,
    pub phi: Vec<f64>,
    pub model: CorrelationModel,
}

impl CrossCovarianceSpec {
    pub fn lmc(a: Matrix, phi: Vec<f64>, model: CorrelationModel) -> Result<Self, KernelError> {
        let s = Self { scale: ProcessScale::Lmc(a), phi, model };
        s.validate()?;
        Ok(s)
    }

    pub fn independent(sigma: Vec<f64>, phi: Vec<f64>, model: CorrelationModel) -> Result<Self, KernelError> {
        let s = Self { scale: ProcessScale::Independent(sigma), phi, model };
        s.validate()?;
        Ok(s)
    }

    /// Number of latent processes.
    pub fn r(&self) -> usize {
        self.phi.len()
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let r = self.phi.len();
        self.model.validate()?;
        if let Some(p) = self.phi.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(KernelError::InvalidDecay(*p));
        }
        match &self.scale {
            ProcessScale::Lmc(a) => {
                if a.rows() != r || a.cols() != r {
                    return Err(KernelError::InvalidSpec(format!(
                        "A is {}x{} but there are {r} decay parameters",
                        a.rows(),
                        a.cols()
                    )));
                }
                for j in 0..r {
                    for i in 0..j {
                        if a[(i, j)] != 0.0 {
                            return Err(KernelError::InvalidSpec("A must be lower triangular".into()));
                        }
                    }
                    if !(a[(j, j)] > 0.0) {
                        return Err(KernelError::InvalidSpec(format!("A[{j},{j}] must be positive")));
                    }
                }
                if !a.is_finite() {
                    return Err(KernelError::InvalidSpec("A has non-finite entries".into()));
                }
            }
            ProcessScale::Independent(sigma) => {
                if sigma.len() != r {
                    return Err(KernelError::InvalidSpec(format!(
                        "{} standard deviations for {r} processes",
                        sigma.len()
                    )));
                }
                if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(KernelError::InvalidSpec("σ must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// The mixing matrix `A` (diagonal `σ` in independent mode).
    pub fn mixing(&self) -> Matrix {
        match &self.scale {
            ProcessScale::Lmc(a) => a.clone(),
            ProcessScale::Independent(s) => Matrix::from_diagonal(s),
        }
    }

    /// `K_θ(s, s) = A Aᵀ`.
    pub fn zero_distance_block(&self) -> Matrix {
        let a = self.mixing();
        a.transpose().t_matmul(&a.transpose()).expect("square")
    }

    /// Per-process correlations at distance `d`.
    #[inline]
    fn gammas(&self, d: f64, out: &mut [f64]) {
        for (g, &phi) in out.iter_mut().zip(&self.phi) {
            *g = self.model.eval(d, phi);
        }
    }
}

/// `nr × nr` covariance of the stacked latent vector at `s`.
pub fn build_k(s: &Coordinates, spec: &CrossCovarianceSpec) -> Result<Matrix, KernelError> {
    spec.validate()?;
    let d = distance_matrix(s, s)?;
    Ok(build_k_from_distances(&d, spec))
}

pub(crate) fn build_k_from_distances(d: &Matrix, spec: &CrossCovarianceSpec) -> Matrix {
    let n = d.rows();
    let r = spec.r();
    let a = spec.mixing();
    let nr = n * r;
    let mut k = Matrix::zeros(nr, nr);
    parallel::for_each_chunk_mut(k.as_mut_slice(), nr.max(1), nr * nr * r, |col, out| {
        let (j, b) = (col / r, col % r);
        let mut g = vec![0.0; r];
        for i in 0..n {
            spec.gammas(d[(i, j)], &mut g);
            for a_row in 0..r {
                let mut v = 0.0;
                for (t, gt) in g.iter().enumerate() {
                    v += a[(a_row, t)] * gt * a[(b, t)];
                }
                out[i * r + a_row] = v;
            }
        }
    });
    k.symmetrize();
    k
}

/// `C[i, j] = z_S(i)ᵀ K_θ(s_i, t_j) z_T(j)` where `z_S`, `z_T` hold the
/// `r` space-varying covariates per location (`n_S × r`, `n_T × r`).
pub fn build_cross_k(
    s: &Coordinates,
    t: &Coordinates,
    spec: &CrossCovarianceSpec,
    z_s: &Matrix,
    z_t: &Matrix,
) -> Result<Matrix, KernelError> {
    spec.validate()?;
    if z_s.rows() != s.len() || z_t.rows() != t.len() || z_s.cols() != spec.r() || z_t.cols() != spec.r() {
        return Err(KernelError::InvalidSpec(format!(
            "covariate rows {}x{} / {}x{} do not match {} / {} locations with r = {}",
            z_s.rows(),
            z_s.cols(),
            z_t.rows(),
            z_t.cols(),
            s.len(),
            t.len(),
            spec.r()
        )));
    }
    let d = distance_matrix(s, t)?;
    Ok(cross_covariance_from_distances(&d, spec, z_s, z_t))
}

/// Loadings `c_i = Aᵀ z_i`, so `z_iᵀ A Γ Aᵀ z_j = Σ_k c_ik ρ_k c_jk`.
pub(crate) fn loadings(a: &Matrix, z: &Matrix) -> Matrix {
    // (n × r) · A  gives row i = z_iᵀ A = c_iᵀ
    z.matmul(a).expect("conformable")
}

pub(crate) fn cross_covariance_from_distances(
    d: &Matrix,
    spec: &CrossCovarianceSpec,
    z_s: &Matrix,
    z_t: &Matrix,
) -> Matrix {
    let a = spec.mixing();
    let cs = loadings(&a, z_s);
    let ct = loadings(&a, z_t);
    let (ns, nt, r) = (d.rows(), d.cols(), spec.r());
    let mut out = Matrix::zeros(ns, nt);
    parallel::for_each_chunk_mut(out.as_mut_slice(), ns.max(1), ns * nt * r, |j, col| {
        for k in 0..r {
            let cjk = ct[(j, k)];
            if cjk == 0.0 {
                continue;
            }
            let phi = spec.phi[k];
            let csk = cs.col(k);
            for (i, v) in col.iter_mut().enumerate() {
                *v += csk[i] * spec.model.eval(d[(i, j)], phi) * cjk;
            }
        }
    });
    out
}

/// Symmetric `Z K Zᵀ` on one location set; only the lower triangle is
/// evaluated. Overwrites `out` (n × n).
pub(crate) fn outcome_covariance_into(d: &Matrix, spec: &CrossCovarianceSpec, z: &Matrix, out: &mut Matrix) {
    let a = spec.mixing();
    let c = loadings(&a, z);
    let (n, r) = (d.rows(), spec.r());
    out.resize_zeroed(n, n);
    parallel::for_each_chunk_mut(out.as_mut_slice(), n.max(1), n * n * r / 2, |j, col| {
        let dj = d.col(j);
        for k in 0..r {
            let cjk = c[(j, k)];
            if cjk == 0.0 {
                continue;
            }
            let phi = spec.phi[k];
            let ck = c.col(k);
            for i in j..n {
                col[i] += ck[i] * spec.model.eval(dj[i], phi) * cjk;
            }
        }
    });
    out.mirror_lower();
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mixing_a() -> Matrix {
        Matrix::from_rows(&[[1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 1.0, 0.1]])
    }

    fn random_coords(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Coordinates {
        Coordinates::new(dim, (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Symmetric Jacobi eigenvalue iteration, used as an independent PSD check.
    fn jacobi_eigenvalues(m: &Matrix) -> Vec<f64> {
        let n = m.rows();
        let mut a = m.clone();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        a.diagonal()
    }

    #[test]
    fn distance_examples() {
        let s = Coordinates::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(distance_matrix(&s, &s).unwrap(), Matrix::from_rows(&[[0.0, 5.0], [5.0, 0.0]]));
        let one = Coordinates::from_rows(&[[0.3, 0.7]]).unwrap();
        assert_eq!(distance_matrix(&one, &one).unwrap(), Matrix::zeros(1, 1));
        let line = Coordinates::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let d = distance_matrix(&line, &line).unwrap();
        assert_eq!(d, Matrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs()));
        let three = Coordinates::new(3, vec![0.0; 6]).unwrap();
        assert_eq!(distance_matrix(&s, &three), Err(KernelError::DimensionMismatch(2, 3)));
    }

    #[test]
    fn correlation_examples() {
        let e = CorrelationModel::Exponential;
        for phi in [0.1, 1.0, 37.0] {
            assert_eq!(e.correlation(0.0, phi).unwrap(), 1.0);
        }
        assert!((e.correlation(2f64.ln() / 6.0, 6.0).unwrap() - 0.5).abs() < 1e-15);
        let g = CorrelationModel::Gaussian;
        for &d in &[0.0f64, 0.1, 0.5, 1.3] {
            for &phi in &[0.5, 2.0, 6.0] {
                let direct = (-(phi * d) * (phi * d)).exp();
                assert!((g.correlation(d, phi).unwrap() - direct).abs() < 1e-15);
            }
        }
        assert_eq!(e.correlation(-1.0, 1.0), Err(KernelError::NegativeDistance(-1.0)));
        assert_eq!(e.correlation(1.0, 0.0), Err(KernelError::InvalidDecay(0.0)));
    }

    #[test]
    fn correlation_unit_at_zero_all_families() {
        for m in [
            CorrelationModel::Exponential,
            CorrelationModel::Gaussian,
            CorrelationModel::Spherical,
            CorrelationModel::Matern { nu: 0.8 },
        ] {
            assert_eq!(m.correlation(0.0, 3.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn matern_matches_closed_forms() {
        // The general quadrature path against the half-integer closed forms.
        for &x in &[1e-3f64, 0.05, 0.4, 1.0, 3.0, 9.0] {
            let half = 2f64.powf(-0.5) * gamma(0.5);
            let q = x.powf(0.5) * bessel_k(0.5, x) / half;
            assert!((q - (-x).exp()).abs() < 1e-10, "x={x}: {q}");
            let q = x.powf(1.5) * bessel_k(1.5, x) / (2f64.powf(0.5) * gamma(1.5));
            assert!((q - (1.0 + x) * (-x).exp()).abs() < 1e-10, "x={x}: {q}");
        }
        let m = CorrelationModel::Matern { nu: 1.0 };
        let mut prev = 1.0;
        for k in 1..50 {
            let v = m.eval(k as f64 * 0.05, 2.0);
            assert!(v <= prev && v >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn spherical_support() {
        let s = CorrelationModel::Spherical;
        assert_eq!(s.eval(1.0, 1.0), 0.0);
        assert_eq!(s.eval(2.0, 1.0), 0.0);
        assert!((s.eval(0.5, 1.0) - (1.0 - 0.75 + 0.0625)).abs() < 1e-15);
    }

    #[test]
    fn effective_range_examples() {
        let e = CorrelationModel::Exponential;
        let phi: f64 = 3.0 / (0.001 * 2929.193);
        assert!((phi - 1.024).abs() < 1e-3);
        let range = e.effective_range(phi).unwrap();
        assert!((range - 2.929).abs() / 2.929 < 2e-3, "{range}");
        assert!((e.effective_range(3.0).unwrap() - 1.0).abs() < 2e-3);
        assert!((e.effective_range(6.0).unwrap() - 0.5).abs() < 1e-3);
        for m in [
            CorrelationModel::Gaussian,
            CorrelationModel::Spherical,
            CorrelationModel::Matern { nu: 1.3 },
            CorrelationModel::Matern { nu: 2.5 },
        ] {
            let d = m.effective_range(2.0).unwrap();
            assert!((m.eval(d, 2.0) - EFFECTIVE_RANGE_LEVEL).abs() < 1e-9, "{m}");
        }
    }

    #[test]
    fn family_parsing() {
        assert_eq!("Exponential".parse::<CorrelationModel>().unwrap(), CorrelationModel::Exponential);
        assert_eq!("matern:1.5".parse::<CorrelationModel>().unwrap(), CorrelationModel::Matern { nu: 1.5 });
        assert!("cauchy".parse::<CorrelationModel>().is_err());
        assert!("matern:-1".parse::<CorrelationModel>().is_err());
    }

    #[test]
    fn lmc_zero_distance_block_is_aat() {
        let spec = CrossCovarianceSpec::lmc(mixing_a(), vec![4.0, 6.0, 6.0], CorrelationModel::Exponential).unwrap();
        let expect = Matrix::from_rows(&[[1.0, -1.0, 0.0], [-1.0, 2.0, 1.0], [0.0, 1.0, 1.01]]);
        let one = Coordinates::from_rows(&[[0.2, 0.2]]).unwrap();
        let k = build_k(&one, &spec).unwrap();
        assert!(k.sub(&expect).unwrap().max_abs() < 1e-15);
        assert_eq!(spec.zero_distance_block(), k);
    }

    #[test]
    fn univariate_k_is_correlation_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_coords(6, 2, &mut rng);
        let spec = CrossCovarianceSpec::independent(vec![1.0], vec![3.0], CorrelationModel::Exponential).unwrap();
        let k = build_k(&s, &spec).unwrap();
        let d = distance_matrix(&s, &s).unwrap();
        assert_eq!(k, Matrix::from_fn(6, 6, |i, j| (-3.0 * d[(i, j)]).exp()));
    }

    #[test]
    fn build_k_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_coords(4, 2, &mut rng);
        let a = Matrix::from_rows(&[[1.3, 0.0], [-0.4, 0.7]]);
        let phi = vec![2.0, 5.0];
        let spec = CrossCovarianceSpec::lmc(a.clone(), phi.clone(), CorrelationModel::Exponential).unwrap();
        let k = build_k(&s, &spec).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dx = s.point(i)[0] - s.point(j)[0];
                let dy = s.point(i)[1] - s.point(j)[1];
                let d = (dx * dx + dy * dy).sqrt();
                let gamma = Matrix::from_diagonal(&[(-phi[0] * d).exp(), (-phi[1] * d).exp()]);
                let block = a.matmul(&gamma).unwrap().matmul(&a.transpose()).unwrap();
                for x in 0..2 {
                    for y in 0..2 {
                        assert!((k[(i * 2 + x, j * 2 + y)] - block[(x, y)]).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn build_k_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for model in [CorrelationModel::Exponential, CorrelationModel::Spherical, CorrelationModel::Matern { nu: 1.5 }] {
            let s = random_coords(16, 2, &mut rng);
            let spec = CrossCovarianceSpec::lmc(mixing_a(), vec![4.0, 6.0, 6.0], model).unwrap();
            let k = build_k(&s, &spec).unwrap();
            assert!(k.relative_asymmetry() <= 1e-12);
            let min = jacobi_eigenvalues(&k).into_iter().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-8 * k.frobenius_norm(), "{model}: {min}");
        }
    }

    #[test]
    fn independent_equals_diagonal_lmc() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_coords(7, 3, &mut rng);
        let sigma = vec![0.7, 1.9];
        let phi = vec![1.5, 8.0];
        let ind = CrossCovarianceSpec::independent(sigma.clone(), phi.clone(), CorrelationModel::Gaussian).unwrap();
        let lmc = CrossCovarianceSpec::lmc(Matrix::from_diagonal(&sigma), phi, CorrelationModel::Gaussian).unwrap();
        let diff = build_k(&s, &ind).unwrap().sub(&build_k(&s, &lmc).unwrap()).unwrap();
        assert!(diff.max_abs() <= 1e-12);
    }

    #[test]
    fn exponential_is_monotone() {
        let e = CorrelationModel::Exponential;
        let mut prev = 1.0;
        for k in 0..200 {
            let v = e.eval(k as f64 * 0.01, 4.0);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn cross_k_reduces_to_k_for_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_coords(5, 2, &mut rng);
        let spec = CrossCovarianceSpec::independent(vec![1.4], vec![2.5], CorrelationModel::Exponential).unwrap();
        let ones = Matrix::from_fn(5, 1, |_, _| 1.0);
        let c = build_cross_k(&s, &s, &spec, &ones, &ones).unwrap();
        let k = build_k(&s, &spec).unwrap();
        assert!(c.sub(&k).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn cross_k_single_site_entrywise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_coords(6, 2, &mut rng);
        let t = random_coords(1, 2, &mut rng);
        let zs = Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let zt = Matrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
        let spec = CrossCovarianceSpec::lmc(mixing_a(), vec![4.0, 6.0, 6.0], CorrelationModel::Exponential).unwrap();
        let c = build_cross_k(&s, &t, &spec, &zs, &zt).unwrap();
        assert_eq!((c.rows(), c.cols()), (6, 1));
        let a = mixing_a();
        for i in 0..6 {
            let d = s.distance(i, &t, 0);
            let gamma = Matrix::from_diagonal(&[(-4.0 * d).exp(), (-6.0 * d).exp(), (-6.0 * d).exp()]);
            let block = a.matmul(&gamma).unwrap().matmul(&a.transpose()).unwrap();
            let zi = zs.row(i);
            let left = block.t_matvec(&zi).unwrap();
            let expect: f64 = left.iter().zip(zt.row(0)).map(|(a, b)| a * b).sum();
            assert!((c[(i, 0)] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn cross_k_degenerate_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_coords(4, 2, &mut rng);
        let spec = CrossCovarianceSpec::independent(vec![1e-12], vec![1.0], CorrelationModel::Exponential).unwrap();
        let ones = Matrix::from_fn(4, 1, |_, _| 1.0);
        assert!(build_cross_k(&s, &s, &spec, &ones, &ones).unwrap().max_abs() < 1e-20);
    }

    #[test]
    fn outcome_covariance_matches_cross_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_coords(9, 2, &mut rng);
        let z = Matrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        let spec = CrossCovarianceSpec::lmc(mixing_a(), vec![4.0, 6.0, 6.0], CorrelationModel::Exponential).unwrap();
        let d = distance_matrix(&s, &s).unwrap();
        let mut out = Matrix::default();
        outcome_covariance_into(&d, &spec, &z, &mut out);
        let c = build_cross_k(&s, &s, &spec, &z, &z).unwrap();
        assert!(out.sub(&c).unwrap().max_abs() < 1e-13);
        assert_eq!(out.relative_asymmetry(), 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let upper = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]);
        assert!(CrossCovarianceSpec::lmc(upper, vec![1.0, 1.0], CorrelationModel::Exponential).is_err());
        let neg = Matrix::from_rows(&[[-1.0, 0.0], [0.0, 1.0]]);
        assert!(CrossCovarianceSpec::lmc(neg, vec![1.0, 1.0], CorrelationModel::Exponential).is_err());
        assert!(CrossCovarianceSpec::independent(vec![1.0], vec![1.0, 2.0], CorrelationModel::Exponential).is_err());
    }
}
