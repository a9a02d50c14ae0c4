//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the numerics can be
//! tested natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use svcgp::kernels::{CorrelationModel, Coordinates};
use svcgp::linalg::Matrix;
use svcgp::model::{
    BetaPrior, CovMode, InverseGamma, ModelSpec, PriorSet, ProcessParams, ProcessPrior, SvcModel, Theta, UniformPrior,
};
use svcgp::predict::predictive_marginals;
use svcgp::simulate::simulate_w;

const MAX_GRID: usize = 40;

fn family(name: &str) -> Result<CorrelationModel, String> {
    let m: CorrelationModel = name.parse().map_err(|e| format!("{e}"))?;
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

/// Cell centres of a `size × size` grid on the unit square, row by row.
pub fn grid_points(size: usize) -> Vec<f64> {
    let h = 1.0 / size as f64;
    (0..size)
        .flat_map(|row| (0..size).flat_map(move |col| [(col as f64 + 0.5) * h, (row as f64 + 0.5) * h]))
        .collect()
}

fn check_grid(size: usize) -> Result<(), String> {
    if (1..=MAX_GRID).contains(&size) {
        Ok(())
    } else {
        Err(format!("grid size must be between 1 and {MAX_GRID}"))
    }
}

/// Correlation at `points` evenly spaced distances in `[0, max_distance]`.
pub fn correlation_curve_impl(name: &str, phi: f64, max_distance: f64, points: usize) -> Result<Vec<f64>, String> {
    positive("phi", phi)?;
    positive("max distance", max_distance)?;
    if points < 2 {
        return Err("need at least two points".into());
    }
    let m = family(name)?;
    let step = max_distance / (points - 1) as f64;
    Ok((0..points).map(|k| m.eval(k as f64 * step, phi)).collect())
}

pub fn effective_range_impl(name: &str, phi: f64) -> Result<f64, String> {
    family(name)?.effective_range(phi).map_err(|e| e.to_string())
}

/// One zero-mean process with variance `sigma_sq` on the grid, row by row.
pub fn simulate_field_impl(name: &str, phi: f64, sigma_sq: f64, size: usize, seed: u64) -> Result<Vec<f64>, String> {
    positive("phi", phi)?;
    positive("sigma.sq", sigma_sq)?;
    check_grid(size)?;
    let m = family(name)?;
    let coords = Coordinates::new(2, grid_points(size)).map_err(|e| e.to_string())?;
    let a = Matrix::from_fn(1, 1, |_, _| sigma_sq.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_w(&coords, &a, &[phi], m, &mut rng).map_err(|e| e.to_string())
}

/// Kriging surface from observations `(x, y, z)`: predictive means for the
/// grid followed by predictive standard deviations, each row by row. The
/// constant mean is the sample mean of `z`.
#[allow(clippy::too_many_arguments)]
pub fn krige_impl(
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    name: &str,
    phi: f64,
    sigma_sq: f64,
    tau_sq: f64,
    size: usize,
) -> Result<Vec<f64>, String> {
    positive("phi", phi)?;
    positive("sigma.sq", sigma_sq)?;
    positive("tau.sq", tau_sq)?;
    check_grid(size)?;
    let n = zs.len();
    if n == 0 || xs.len() != n || ys.len() != n {
        return Err("need matching, non-empty x, y and z arrays".into());
    }
    let m = family(name)?;
    let pts: Vec<f64> = xs.iter().zip(ys).flat_map(|(x, y)| [*x, *y]).collect();
    let spec = ModelSpec {
        y: zs.to_vec(),
        x: Matrix::from_fn(n, 1, |_, _| 1.0),
        x_names: vec![svcgp::model::INTERCEPT.to_string()],
        coords: Coordinates::new(2, pts).map_err(|e| e.to_string())?,
        svc_cols: vec![0],
        standardize: false,
        correlation: m,
        cov_mode: CovMode::Independent,
    };
    let priors = PriorSet {
        tau_sq: InverseGamma { shape: 2.0, scale: 1.0 },
        process: ProcessPrior::InverseGamma(vec![InverseGamma { shape: 2.0, scale: 1.0 }]),
        phi: vec![UniformPrior { lo: phi * 0.5, hi: phi * 2.0 }],
        beta: BetaPrior::Flat,
    };
    let model = SvcModel::new(spec, priors).map_err(|e| e.to_string())?;
    let theta = Theta { process: ProcessParams::Independent(vec![sigma_sq]), phi: vec![phi], tau_sq };
    let beta = [zs.iter().sum::<f64>() / n as f64];
    let g = size * size;
    let coords0 = Coordinates::new(2, grid_points(size)).map_err(|e| e.to_string())?;
    let x0 = Matrix::from_fn(g, 1, |_, _| 1.0);
    let (mean, var) = predictive_marginals(&model, &theta, &beta, &x0, &coords0, false).map_err(|e| e.to_string())?;
    Ok(mean.into_iter().chain(var.into_iter().map(|v| v.max(0.0).sqrt())).collect())
}

fn js(r: Result<Vec<f64>, String>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn correlation_curve(family: &str, phi: f64, max_distance: f64, points: usize) -> Result<Vec<f64>, JsError> {
    js(correlation_curve_impl(family, phi, max_distance, points))
}

#[wasm_bindgen]
pub fn effective_range(family: &str, phi: f64) -> Result<f64, JsError> {
    effective_range_impl(family, phi).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_field(family: &str, phi: f64, sigma_sq: f64, size: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    js(simulate_field_impl(family, phi, sigma_sq, size, seed))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn krige(
    xs: &[f64],
    ys: &[f64],
    zs: &[f64],
    family: &str,
    phi: f64,
    sigma_sq: f64,
    tau_sq: f64,
    size: usize,
) -> Result<Vec<f64>, JsError> {
    js(krige_impl(xs, ys, zs, family, phi, sigma_sq, tau_sq, size))
}
