//! On-disk layout of fit, recovery and prediction outputs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use svcgp::model::{n_lower, pack_lower, CovMode, ProcessParams, SvcModel, Theta};
use svcgp::recover::RecoveredSamples;

use crate::data::{read_table, write_table_file, Table};

pub const CHAIN: &str = "chain.csv";
pub const CHAIN_META: &str = "chain_meta.json";
pub const RECOVER_META: &str = "recover_meta.json";
pub const BETA: &str = "beta.csv";
pub const BETA_ORIGINAL: &str = "beta_original_scale.csv";
pub const THETA_RECOVER: &str = "theta_recover.csv";
pub const W: &str = "w.csv";
pub const TILDE_BETA: &str = "tilde_beta.csv";
pub const FITTED: &str = "fitted.csv";
pub const PRED_DRAWS: &str = "pred_draws.csv";
pub const PRED_SUMMARY: &str = "pred_summary.csv";
pub const PRED_TILDE_BETA: &str = "pred_tilde_beta.csv";
pub const DIAG: &str = "diag.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub n_samples: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub cov_mode: String,
    pub r: usize,
    pub labels: Vec<String>,
    /// Proposal variances at the end of the chain.
    pub final_tuning: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverMeta {
    pub config_hash: String,
    /// SHA-256 of the chain CSV the draws were composed from.
    pub chain_hash: String,
    pub seed: u64,
    pub start: usize,
    pub thin: usize,
    /// 0-based chain rows that were retained.
    pub indices: Vec<usize>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Chain column labels: `K[i,j]` (lower triangle of `AAᵀ`, column-major) or
/// `sigma.sq.<name>`, then `tau.sq`, `phi.<name>`, then the raw `A[i,j]`
/// the sampler moved on.
pub fn chain_labels(mode: CovMode, svc_names: &[String]) -> Vec<String> {
    let r = svc_names.len();
    let mut out = Vec::new();
    match mode {
        CovMode::Lmc => {
            for j in 0..r {
                for i in j..r {
                    out.push(format!("K[{},{}]", i + 1, j + 1));
                }
            }
        }
        CovMode::Independent => out.extend(svc_names.iter().map(|n| format!("sigma.sq.{n}"))),
    }
    out.push("tau.sq".into());
    out.extend(svc_names.iter().map(|n| format!("phi.{n}")));
    if mode == CovMode::Lmc {
        for j in 0..r {
            for i in j..r {
                out.push(format!("A[{},{}]", i + 1, j + 1));
            }
        }
    }
    out
}

pub fn theta_row(theta: &Theta) -> Vec<f64> {
    let mut out = Vec::new();
    match &theta.process {
        ProcessParams::Lmc(a) => {
            out.extend(pack_lower(&theta.process_covariance()));
            out.push(theta.tau_sq);
            out.extend(&theta.phi);
            out.extend(a);
        }
        ProcessParams::Independent(s2) => {
            out.extend(s2);
            out.push(theta.tau_sq);
            out.extend(&theta.phi);
        }
    }
    out
}

pub fn theta_from_row(row: &[f64], mode: CovMode, r: usize) -> Result<Theta> {
    let nk = match mode {
        CovMode::Lmc => n_lower(r),
        CovMode::Independent => r,
    };
    let expect = nk + 1 + r + if mode == CovMode::Lmc { nk } else { 0 };
    if row.len() != expect {
        bail!("chain row has {} values, expected {expect}", row.len());
    }
    let tau_sq = row[nk];
    let phi = row[nk + 1..nk + 1 + r].to_vec();
    let process = match mode {
        CovMode::Lmc => ProcessParams::Lmc(row[nk + 1 + r..].to_vec()),
        CovMode::Independent => ProcessParams::Independent(row[..nk].to_vec()),
    };
    Ok(Theta { process, phi, tau_sq })
}

pub fn write_chain(path: &Path, model: &SvcModel, theta: &[Theta]) -> Result<()> {
    let labels = chain_labels(model.spec().cov_mode, &model.svc_names());
    let rows: Vec<Vec<f64>> = theta.iter().map(theta_row).collect();
    write_table_file(path, &labels, &rows)
}

pub fn read_chain(path: &Path, mode: CovMode, svc_names: &[String]) -> Result<Vec<Theta>> {
    let t = read_table(path)?;
    let labels = chain_labels(mode, svc_names);
    if t.names != labels {
        bail!("{} has columns [{}], expected [{}]", path.display(), t.names.join(", "), labels.join(", "));
    }
    t.rows().iter().map(|row| theta_from_row(row, mode, svc_names.len())).collect()
}

/// Column names `prefix[i]`, 1-based.
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}[{i}]")).collect()
}

/// Per-process columns `prefix.<name>[i]`, process-major.
pub fn per_process(prefix: &str, names: &[String], n: usize) -> Vec<String> {
    names.iter().flat_map(|name| indexed(&format!("{prefix}.{name}"), n)).collect()
}

/// Location-major `w` rearranged process-major to match [`per_process`].
fn w_process_major(w: &[f64], r: usize) -> Vec<f64> {
    let n = if r == 0 { 0 } else { w.len() / r };
    (0..r).flat_map(|j| (0..n).map(move |i| w[i * r + j])).collect()
}

fn w_location_major(v: &[f64], r: usize) -> Vec<f64> {
    let n = if r == 0 { 0 } else { v.len() / r };
    let mut w = vec![0.0; v.len()];
    for j in 0..r {
        for i in 0..n {
            w[i * r + j] = v[j * n + i];
        }
    }
    w
}

pub fn write_recovered(dir: &Path, model: &SvcModel, rec: &RecoveredSamples) -> Result<()> {
    let n = model.n();
    let svc = rec.svc_names();
    let r = svc.len();
    let theta_labels = chain_labels(model.spec().cov_mode, &svc);
    let theta_rows: Vec<Vec<f64>> = rec.theta.iter().map(theta_row).collect();
    write_table_file(&dir.join(THETA_RECOVER), &theta_labels, &theta_rows)?;
    write_table_file(&dir.join(BETA), &rec.x_names, &rec.beta)?;
    if let Some(st) = model.standardization() {
        let i0 = svcgp::model::intercept_column(&model.spec().x);
        let rows: Vec<Vec<f64>> = rec.beta.iter().map(|b| st.beta_to_original(b, i0)).collect();
        write_table_file(&dir.join(BETA_ORIGINAL), &rec.x_names, &rows)?;
    }
    if r > 0 {
        let w_rows: Vec<Vec<f64>> = rec.w.iter().map(|w| w_process_major(w, r)).collect();
        write_table_file(&dir.join(W), &per_process("w", &svc, n), &w_rows)?;
        let tb = rec.tilde_beta()?;
        let tb_rows: Vec<Vec<f64>> =
            (0..rec.len()).map(|k| tb.iter().flat_map(|nd| nd.draws[k].iter().copied()).collect()).collect();
        write_table_file(&dir.join(TILDE_BETA), &per_process("tilde.beta", &svc, n), &tb_rows)?;
    }
    write_table_file(&dir.join(FITTED), &indexed("y.hat", n), &rec.fitted)?;
    Ok(())
}

fn expect_columns(t: &Table, names: &[String], path: &Path) -> Result<()> {
    if t.names != names {
        bail!("{} does not match the fitted model's columns", path.display());
    }
    Ok(())
}

pub fn read_recovered(dir: &Path, model: &SvcModel, meta: &RecoverMeta) -> Result<RecoveredSamples> {
    let n = model.n();
    let svc = model.svc_names();
    let r = svc.len();
    let mode = model.spec().cov_mode;
    let p = dir.join(THETA_RECOVER);
    let t = read_table(&p)?;
    expect_columns(&t, &chain_labels(mode, &svc), &p)?;
    let theta = t.rows().iter().map(|row| theta_from_row(row, mode, r)).collect::<Result<Vec<_>>>()?;
    let p = dir.join(BETA);
    let tb = read_table(&p)?;
    expect_columns(&tb, &model.spec().x_names, &p)?;
    let m = theta.len();
    let w = if r > 0 {
        let p = dir.join(W);
        let tw = read_table(&p)?;
        expect_columns(&tw, &per_process("w", &svc, n), &p)?;
        tw.rows().iter().map(|v| w_location_major(v, r)).collect()
    } else {
        vec![Vec::new(); m]
    };
    let p = dir.join(FITTED);
    let tf = read_table(&p)?;
    expect_columns(&tf, &indexed("y.hat", n), &p)?;
    if [tb.n_rows(), w.len(), tf.n_rows(), meta.indices.len()].iter().any(|&k| k != m) {
        bail!("recovered artifacts in {} have inconsistent draw counts", dir.display());
    }
    Ok(RecoveredSamples {
        indices: meta.indices.clone(),
        theta,
        beta: tb.rows(),
        w,
        fitted: tf.rows(),
        x_names: model.spec().x_names.clone(),
        svc_cols: model.spec().svc_cols.clone(),
    })
}
