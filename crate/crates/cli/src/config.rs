//! Run configuration, read from a TOML file.
//!
//! ```toml
//! [data]
//! path = "sim.csv"
//! outcome = "y"
//! predictors = ["a", "b"]
//! coords = ["x.coords", "y.coords"]
//!
//! [model]
//! svc_cols = ["(Intercept)", "a", "b"]
//! correlation = "exponential"
//!
//! [priors]
//! phi_unif = [[1.0, 10.0], [1.0, 10.0], [1.0, 10.0]]
//! k_iw_df = 3.0
//! tau_sq_ig = [2.0, 1.0]
//!
//! [starting]
//! phi = [6.0, 6.0, 6.0]
//! a = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]
//! tau_sq = 1.0
//!
//! [tuning]
//! phi = [0.1, 0.1, 0.1]
//! a = [0.01, 0.01, 0.01, 0.01, 0.01, 0.01]
//! tau_sq = 0.01
//!
//! [mcmc]
//! n_samples = 10000
//! n_report = 5000
//!
//! [recover]
//! start = 5000
//! thin = 2
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use svcgp::kernels::CorrelationModel;
use svcgp::linalg::Matrix;
use svcgp::mcmc::{AdaptiveSpec, TuningSpec, DEFAULT_REPORT_INTERVAL, DEFAULT_TARGET_RATE};
use svcgp::model::{
    n_lower, BetaPrior, CovMode, InverseGamma, PriorSet, ProcessParams, ProcessPrior, Theta, UniformPrior,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    pub priors: PriorSection,
    pub starting: StartingSection,
    pub tuning: TuningSection,
    pub adaptive: Option<AdaptiveSection>,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub recover: RecoverSection,
    pub predict: Option<PredictSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub outcome: String,
    #[serde(default)]
    pub predictors: Vec<String>,
    pub coords: Vec<String>,
    #[serde(default = "yes")]
    pub intercept: bool,
}

/// A design column given by name or by 1-based position.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    pub fn selector(&self) -> String {
        match self {
            ColumnRef::Index(i) => i.to_string(),
            ColumnRef::Name(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub svc_cols: Vec<ColumnRef>,
    #[serde(default = "exponential")]
    pub correlation: String,
    #[serde(default = "lmc")]
    pub cov_mode: String,
    #[serde(default)]
    pub standardize: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { svc_cols: Vec::new(), correlation: exponential(), cov_mode: lmc(), standardize: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub tau_sq_ig: [f64; 2],
    #[serde(default)]
    pub phi_unif: Vec<[f64; 2]>,
    pub k_iw_df: Option<f64>,
    /// Row-major; identity when omitted.
    pub k_iw_scale: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sigma_sq_ig: Vec<[f64; 2]>,
    pub beta_mean: Option<Vec<f64>>,
    /// Row-major.
    pub beta_cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartingSection {
    #[serde(default)]
    pub phi: Vec<f64>,
    /// Lower triangle of `A`, column-major.
    pub a: Option<Vec<f64>>,
    pub sigma_sq: Option<Vec<f64>>,
    pub tau_sq: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
/// Proposal variances on the unconstrained scale.
pub struct TuningSection {
    #[serde(default)]
    pub phi: Vec<f64>,
    pub a: Option<Vec<f64>>,
    pub sigma_sq: Option<Vec<f64>>,
    pub tau_sq: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSection {
    #[serde(default = "batch_length")]
    pub batch_length: usize,
    #[serde(default = "target_rate")]
    pub target_rate: f64,
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    #[serde(default = "n_samples")]
    pub n_samples: usize,
    #[serde(default = "n_report")]
    pub n_report: usize,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self { n_samples: n_samples(), n_report: n_report(), threads: 1, seed: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverSection {
    #[serde(default)]
    pub start: usize,
    #[serde(default = "one")]
    pub thin: usize,
}

impl Default for RecoverSection {
    fn default() -> Self {
        Self { start: 0, thin: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    /// Prediction sites with the same predictor and coordinate columns as the data.
    pub path: PathBuf,
    #[serde(default)]
    pub joint: bool,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default = "yes")]
    pub include_nugget: bool,
    #[serde(default)]
    pub exceedance: Vec<f64>,
    #[serde(default)]
    pub coefficients: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: out_dir() }
    }
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn exponential() -> String {
    "exponential".into()
}
fn lmc() -> String {
    "lmc".into()
}
fn batch_length() -> usize {
    25
}
fn target_rate() -> f64 {
    DEFAULT_TARGET_RATE
}
fn n_samples() -> usize {
    1000
}
fn n_report() -> usize {
    DEFAULT_REPORT_INTERVAL
}
fn out_dir() -> PathBuf {
    PathBuf::from("svcgp-out")
}

/// A parsed config plus the hash of its text and the directory it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        Ok(Self { config, hash: sha256_hex(text.as_bytes()), base_dir })
    }

    /// Paths in the config are relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.output.dir)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn row_major(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        bail!("{what} must be a square matrix given as rows");
    }
    Ok(Matrix::from_rows(rows))
}

impl RunConfig {
    pub fn correlation(&self) -> Result<CorrelationModel> {
        Ok(self.model.correlation.parse()?)
    }

    pub fn cov_mode(&self) -> Result<CovMode> {
        Ok(self.model.cov_mode.parse()?)
    }

    pub fn priors(&self, r: usize, p: usize) -> Result<PriorSet> {
        let pr = &self.priors;
        let tau_sq = InverseGamma::new(pr.tau_sq_ig[0], pr.tau_sq_ig[1]).context("priors.tau_sq_ig")?;
        if pr.phi_unif.len() != r {
            bail!("priors.phi_unif has {} entries for {r} space-varying columns", pr.phi_unif.len());
        }
        let phi = pr
            .phi_unif
            .iter()
            .map(|b| UniformPrior::new(b[0], b[1]))
            .collect::<Result<Vec<_>, _>>()
            .context("priors.phi_unif")?;
        let process = match self.cov_mode()? {
            CovMode::Lmc => {
                let df = pr.k_iw_df.unwrap_or(r as f64);
                let scale = match &pr.k_iw_scale {
                    Some(s) => row_major(s, "priors.k_iw_scale")?,
                    None => Matrix::identity(r),
                };
                ProcessPrior::InverseWishart { df, scale }
            }
            CovMode::Independent => {
                if pr.sigma_sq_ig.len() != r {
                    bail!("priors.sigma_sq_ig has {} entries for {r} space-varying columns", pr.sigma_sq_ig.len());
                }
                ProcessPrior::InverseGamma(
                    pr.sigma_sq_ig
                        .iter()
                        .map(|v| InverseGamma::new(v[0], v[1]))
                        .collect::<Result<Vec<_>, _>>()
                        .context("priors.sigma_sq_ig")?,
                )
            }
        };
        let beta = match (&pr.beta_mean, &pr.beta_cov) {
            (None, None) => BetaPrior::Flat,
            (Some(mean), Some(cov)) => BetaPrior::Normal { mean: mean.clone(), cov: row_major(cov, "priors.beta_cov")? },
            _ => bail!("priors.beta_mean and priors.beta_cov must be given together"),
        };
        let set = PriorSet { tau_sq, process, phi, beta };
        set.validate(r, p, self.cov_mode()?)?;
        Ok(set)
    }

    pub fn starting(&self, r: usize) -> Result<Theta> {
        let s = &self.starting;
        let process = self.process_block(r, s.a.as_deref(), s.sigma_sq.as_deref(), "starting")?;
        if s.phi.len() != r {
            bail!("starting.phi has {} entries for {r} space-varying columns", s.phi.len());
        }
        Ok(Theta {
            process: match self.cov_mode()? {
                CovMode::Lmc => ProcessParams::Lmc(process),
                CovMode::Independent => ProcessParams::Independent(process),
            },
            phi: s.phi.clone(),
            tau_sq: s.tau_sq,
        })
    }

    pub fn tuning(&self, r: usize) -> Result<TuningSpec> {
        let t = &self.tuning;
        let process = self.process_block(r, t.a.as_deref(), t.sigma_sq.as_deref(), "tuning")?;
        if t.phi.len() != r {
            bail!("tuning.phi has {} entries for {r} space-varying columns", t.phi.len());
        }
        Ok(TuningSpec::from_variance_blocks(&t.phi, &process, t.tau_sq)?)
    }

    fn process_block(&self, r: usize, a: Option<&[f64]>, s2: Option<&[f64]>, section: &str) -> Result<Vec<f64>> {
        if r == 0 {
            return Ok(Vec::new());
        }
        match self.cov_mode()? {
            CovMode::Lmc => {
                let a = a.with_context(|| format!("{section}.a is required for the lmc covariance"))?;
                if a.len() != n_lower(r) {
                    bail!("{section}.a has {} entries, expected r(r+1)/2 = {}", a.len(), n_lower(r));
                }
                Ok(a.to_vec())
            }
            CovMode::Independent => {
                let s = s2.with_context(|| format!("{section}.sigma_sq is required for the independent covariance"))?;
                if s.len() != r {
                    bail!("{section}.sigma_sq has {} entries for {r} space-varying columns", s.len());
                }
                Ok(s.to_vec())
            }
        }
    }

    pub fn adaptive(&self) -> Option<AdaptiveSpec> {
        self.adaptive.as_ref().map(|a| AdaptiveSpec {
            batch_length: a.batch_length,
            target_rate: a.target_rate,
            burn_in: a.burn_in.unwrap_or(self.mcmc.n_samples),
        })
    }
}
