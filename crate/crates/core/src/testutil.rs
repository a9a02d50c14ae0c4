//! Dense reference computations and small fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernels::{CorrelationModel, Coordinates};
use crate::linalg::Matrix;
use crate::model::{
    pack_lower, BetaPrior, CovMode, InverseGamma, ModelSpec, PriorSet, ProcessParams, ProcessPrior, SvcModel, Theta,
    UniformPrior, INTERCEPT,
};

/// Gauss-Jordan inverse with partial pivoting, and the determinant.
pub fn gauss_jordan(m: &Matrix) -> (Matrix, f64) {
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
                if f == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[(i, k)] -= f * a[(c, k)];
                    inv[(i, k)] -= f * inv[(c, k)];
                }
            }
        }
    }
    (inv, det)
}

/// Log-determinant via Gauss-Jordan (matrix assumed positive definite).
pub fn log_det(m: &Matrix) -> f64 {
    // scale to keep the running product in range
    let n = m.rows();
    let s = (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64;
    let (_, det) = gauss_jordan(&m.scale(1.0 / s));
    det.ln() + n as f64 * s.ln()
}

pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut m = b.gram();
    m.add_to_diagonal(n as f64 * 0.1 + 0.5);
    m
}

pub struct Fixture {
    pub model: SvcModel,
    pub theta: Theta,
}

/// Random design on the unit square with an intercept and `p - 1` covariates,
/// the first `r` columns varying in space.
pub fn fixture(n: usize, p: usize, r: usize, mode: CovMode, normal_beta: bool, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = Coordinates::new(2, (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let x = Matrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.5..1.5) });
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut x_names = vec![INTERCEPT.to_string()];
    x_names.extend((1..p).map(|j| format!("x{j}")));
    let spec = ModelSpec {
        y,
        x,
        x_names,
        coords,
        svc_cols: (0..r).collect(),
        standardize: false,
        correlation: CorrelationModel::Exponential,
        cov_mode: mode,
    };
    let phi_box = UniformPrior::new(1.0, 10.0).unwrap();
    let process = match mode {
        CovMode::Lmc => ProcessPrior::InverseWishart { df: r as f64, scale: Matrix::identity(r) },
        CovMode::Independent => ProcessPrior::InverseGamma(vec![InverseGamma::new(2.0, 1.0).unwrap(); r]),
    };
    let beta = if normal_beta {
        BetaPrior::Normal { mean: (0..p).map(|j| 0.1 * j as f64).collect(), cov: random_spd(p, &mut rng) }
    } else {
        BetaPrior::Flat
    };
    let priors = PriorSet { tau_sq: InverseGamma::new(2.0, 1.0).unwrap(), process, phi: vec![phi_box; r], beta };
    let phi: Vec<f64> = (0..r).map(|_| rng.random_range(2.0..8.0)).collect();
    let process = match mode {
        CovMode::Lmc => {
            let mut a = Matrix::from_fn(r, r, |i, j| if i > j { rng.random_range(-0.8..0.8) } else { 0.0 });
            for i in 0..r {
                a[(i, i)] = rng.random_range(0.4..1.2);
            }
            ProcessParams::Lmc(pack_lower(&a))
        }
        CovMode::Independent => ProcessParams::Independent((0..r).map(|_| rng.random_range(0.2..1.5)).collect()),
    };
    let theta = Theta { process, phi, tau_sq: rng.random_range(0.05..0.5) };
    Fixture { model: SvcModel::new(spec, priors).unwrap(), theta }
}
