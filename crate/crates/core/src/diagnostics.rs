//! Model-fit summaries from composition samples: DIC with `pD`, and the
//! posterior predictive loss `D = G + P`.

use crate::error::{Error, Result};
use crate::recover::RecoveredSamples;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub p_d: f64,
    pub dic: f64,
    pub mean_deviance: f64,
    pub plugin_deviance: f64,
    pub g: f64,
    pub p: f64,
    pub d: f64,
}

/// `-2 log N(y | fitted, τ² I) = n log(2πτ²) + ‖y - fitted‖² / τ²`.
pub fn deviance(y: &[f64], fitted: &[f64], tau_sq: f64) -> Result<f64> {
    if !(tau_sq > 0.0) {
        return Err(Error::Invalid(format!("deviance needs a positive nugget, got {tau_sq}")));
    }
    if y.len() != fitted.len() {
        return Err(Error::Invalid(format!("{} outcomes but {} fitted values", y.len(), fitted.len())));
    }
    let rss: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(y.len() as f64 * (2.0 * std::f64::consts::PI * tau_sq).ln() + rss / tau_sq)
}

fn check(y: &[f64], fitted: &[Vec<f64>], tau_sq: &[f64]) -> Result<()> {
    if fitted.is_empty() {
        return Err(Error::Invalid("no posterior draws".into()));
    }
    if fitted.len() != tau_sq.len() {
        return Err(Error::Invalid(format!("{} fitted draws but {} nugget draws", fitted.len(), tau_sq.len())));
    }
    if let Some(f) = fitted.iter().find(|f| f.len() != y.len()) {
        return Err(Error::Invalid(format!("fitted draw of length {} for {} outcomes", f.len(), y.len())));
    }
    Ok(())
}

fn column_means(draws: &[Vec<f64>]) -> Vec<f64> {
    let m = draws.len() as f64;
    let n = draws[0].len();
    (0..n).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / m).collect()
}

/// `(pD, DIC, mean deviance, plug-in deviance)`. The plug-in uses the
/// posterior means of the fitted values and of `τ²`.
pub fn dic(y: &[f64], fitted: &[Vec<f64>], tau_sq: &[f64]) -> Result<(f64, f64, f64, f64)> {
    check(y, fitted, tau_sq)?;
    let m = fitted.len() as f64;
    let mut mean_dev = 0.0;
    for (f, t) in fitted.iter().zip(tau_sq) {
        mean_dev += deviance(y, f, *t)?;
    }
    mean_dev /= m;
    let fbar = column_means(fitted);
    let tbar = tau_sq.iter().sum::<f64>() / m;
    let plug = deviance(y, &fbar, tbar)?;
    let p_d = mean_dev - plug;
    Ok((p_d, mean_dev + p_d, mean_dev, plug))
}

/// `(G, P, D)` with squared-error loss; replicate variance is taken
/// analytically as `Var_k(fitted_i) + mean_k τ²`.
pub fn gpd(y: &[f64], fitted: &[Vec<f64>], tau_sq: &[f64]) -> Result<(f64, f64, f64)> {
    check(y, fitted, tau_sq)?;
    let m = fitted.len() as f64;
    let fbar = column_means(fitted);
    let tbar = tau_sq.iter().sum::<f64>() / m;
    let g: f64 = y.iter().zip(&fbar).map(|(a, b)| (a - b) * (a - b)).sum();
    let p: f64 = (0..y.len())
        .map(|i| fitted.iter().map(|f| (f[i] - fbar[i]) * (f[i] - fbar[i])).sum::<f64>() / m + tbar)
        .sum();
    Ok((g, p, g + p))
}

pub fn fit_diagnostics(y: &[f64], recovered: &RecoveredSamples) -> Result<FitDiagnostics> {
    let tau = recovered.tau_sq();
    let (p_d, dic, mean_deviance, plugin_deviance) = dic(y, &recovered.fitted, &tau)?;
    let (g, p, d) = gpd(y, &recovered.fitted, &tau)?;
    Ok(FitDiagnostics { p_d, dic, mean_deviance, plugin_deviance, g, p, d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn no_posterior_spread_gives_zero_pd() {
        let y = [1.0, 2.0, 3.0];
        let f = vec![vec![1.5, 2.0, 2.0]; 4];
        let (p_d, d, _, plug) = dic(&y, &f, &[0.5; 4]).unwrap();
        assert!(p_d.abs() < 1e-12);
        assert!((d - plug).abs() < 1e-12);
    }

    #[test]
    fn two_draw_hand_instance() {
        let y = [0.0, 1.0, 2.0];
        let f = vec![vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 2.0]];
        let t = [1.0, 2.0];
        let dev1 = 3.0 * (2.0 * PI).ln() + 1.0;
        let dev2 = 3.0 * (4.0 * PI).ln() + 1.0 / 2.0;
        let mean_dev = (dev1 + dev2) / 2.0;
        // plug-in: fitted (0.5, 1, 1.5), τ² 1.5, rss 0.5
        let plug = 3.0 * (3.0 * PI).ln() + 0.5 / 1.5;
        let (p_d, d, md, pl) = dic(&y, &f, &t).unwrap();
        assert!((md - mean_dev).abs() < 1e-12 && (pl - plug).abs() < 1e-12);
        assert!((p_d - (mean_dev - plug)).abs() < 1e-12);
        assert!((d - (2.0 * mean_dev - plug)).abs() < 1e-12);
        let (g, p, dd) = gpd(&y, &f, &t).unwrap();
        assert!((g - 0.5).abs() < 1e-12);
        // Var_k per site: 0.25, 0, 0.25; plus mean τ² 1.5 each
        assert!((p - (0.5 + 4.5)).abs() < 1e-12);
        assert_eq!(dd, g + p);
    }

    #[test]
    fn single_exact_draw() {
        let y = [1.0, -2.0, 0.5, 4.0];
        let (g, p, d) = gpd(&y, &[y.to_vec()], &[1.0]).unwrap();
        assert_eq!((g, p, d), (0.0, 4.0, 4.0));
    }

    #[test]
    fn input_errors() {
        assert!(dic(&[1.0], &[], &[]).is_err());
        assert!(gpd(&[1.0], &[vec![1.0]], &[1.0, 2.0]).is_err());
        assert!(dic(&[1.0], &[vec![1.0]], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn order_invariance_and_signs(seed in any::<u64>(), m in 1usize..20, n in 1usize..15) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let t: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
            let (g, p, d) = gpd(&y, &f, &t).unwrap();
            prop_assert!(g >= 0.0 && p >= 0.0 && d == g + p);
            let mut fr = f.clone();
            let mut tr = t.clone();
            fr.reverse();
            tr.reverse();
            let (g2, p2, _) = gpd(&y, &fr, &tr).unwrap();
            prop_assert!((g - g2).abs() <= 1e-10 * (1.0 + g.abs()));
            prop_assert!((p - p2).abs() <= 1e-10 * (1.0 + p.abs()));
            let (a, b, _, _) = dic(&y, &f, &t).unwrap();
            let (a2, b2, _, _) = dic(&y, &fr, &tr).unwrap();
            prop_assert!((a - a2).abs() <= 1e-9 * (1.0 + a.abs()));
            prop_assert!((b - b2).abs() <= 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn spreading_draws_does_not_lower_p(seed in any::<u64>(), n in 1usize..10) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let centre: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = vec![centre.clone(); 4];
            let (_, p0, _) = gpd(&y, &f, &[1.0; 4]).unwrap();
            let mut noisy = f.clone();
            for (k, d) in noisy.iter_mut().enumerate() {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                for v in d.iter_mut() {
                    *v += s * rng.random_range(0.0..1.0);
                }
            }
            let (_, p1, _) = gpd(&y, &noisy, &[1.0; 4]).unwrap();
            prop_assert!(p1 >= p0);
        }
    }
}
