//! Random-walk Metropolis on the unconstrained covariance parameters.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::likelihood::{try_log_target, TransformedTarget};
use crate::model::{log_prior, InverseGamma, PriorSet, ProcessParams, ProcessPrior, SvcModel, Theta};
use crate::parallel;

pub const DEFAULT_TARGET_RATE: f64 = 0.43;
pub const DEFAULT_REPORT_INTERVAL: usize = 1000;

/// A log-density on `R^dim`, possibly `-∞`.
pub trait LogTarget {
    fn dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> LogTarget for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        (self.1)(z)
    }
}

/// Proposal standard deviations on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningSpec {
    sd: Vec<f64>,
}

impl TuningSpec {
    pub fn new(sd: Vec<f64>) -> Result<Self> {
        if let Some(bad) = sd.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("proposal standard deviation {bad} must be positive")));
        }
        Ok(Self { sd })
    }

    /// Per-block values in sampling order: `φ`, then `A` or `σ²`, then `τ²`.
    pub fn from_blocks(phi: &[f64], process: &[f64], tau_sq: f64) -> Result<Self> {
        let mut sd = phi.to_vec();
        sd.extend_from_slice(process);
        sd.push(tau_sq);
        Self::new(sd)
    }

    /// As [`TuningSpec::from_blocks`], from proposal variances.
    pub fn from_variance_blocks(phi: &[f64], process: &[f64], tau_sq: f64) -> Result<Self> {
        let var = Self::from_blocks(phi, process, tau_sq)?;
        Ok(Self { sd: var.sd.iter().map(|v| v.sqrt()).collect() })
    }

    pub fn sd(&self) -> &[f64] {
        &self.sd
    }

    pub fn dim(&self) -> usize {
        self.sd.len()
    }

    fn scaled(&self, factor: f64) -> Self {
        Self { sd: self.sd.iter().map(|s| s * factor).collect() }
    }
}

/// Batch-wise adaptation of the proposal scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveSpec {
    pub batch_length: usize,
    pub target_rate: f64,
    /// Iterations after which the kernel is frozen.
    pub burn_in: usize,
}

impl AdaptiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_length == 0 {
            return Err(Error::Invalid("adaptive batch length must be positive".into()));
        }
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err(Error::Invalid(format!("target acceptance rate {} must be in (0, 1)", self.target_rate)));
        }
        Ok(())
    }
}

/// Scale every SD by `exp(±min(0.01, m^{-1/2}))` after batch `m` (1-based).
pub fn adapt_tuning(batch_rate: f64, tuning: &TuningSpec, target_rate: f64, batch: usize) -> TuningSpec {
    let delta = (0.01f64).min(1.0 / (batch.max(1) as f64).sqrt());
    if batch_rate > target_rate {
        tuning.scaled(delta.exp())
    } else if batch_rate < target_rate {
        tuning.scaled((-delta).exp())
    } else {
        tuning.clone()
    }
}

/// One Metropolis update. Consumes exactly `dim` normals and one uniform.
pub fn rw_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    z: &mut [f64],
    current: &mut f64,
    tuning: &TuningSpec,
    target: &T,
    proposal: &mut [f64],
    rng: &mut R,
) -> bool {
    for ((p, zi), s) in proposal.iter_mut().zip(z.iter()).zip(tuning.sd()) {
        let e: f64 = rng.sample(StandardNormal);
        *p = zi + s * e;
    }
    let u: f64 = rng.random();
    let cand = target.log_density(proposal);
    if cand == f64::NEG_INFINITY || cand.is_nan() {
        return false;
    }
    if u.ln() < cand - *current {
        z.copy_from_slice(proposal);
        *current = cand;
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub n_report: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { n_samples: 1000, n_report: DEFAULT_REPORT_INTERVAL, threads: 1, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalReport {
    /// Iterations completed when the report was made.
    pub sampled: usize,
    pub interval_accepted: usize,
    pub interval_length: usize,
    pub elapsed_secs: f64,
}

impl IntervalReport {
    pub fn interval_rate(&self) -> f64 {
        self.interval_accepted as f64 / self.interval_length.max(1) as f64
    }
}

/// Raw output of [`metropolis`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetropolisRun {
    pub z: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub accepted: Vec<bool>,
    pub reports: Vec<IntervalReport>,
    pub final_tuning: TuningSpec,
}

impl MetropolisRun {
    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.n_accepted() as f64 / self.accepted.len().max(1) as f64
    }

    /// Acceptance over the iterations `from..`.
    pub fn acceptance_rate_from(&self, from: usize) -> f64 {
        let tail = &self.accepted[from.min(self.accepted.len())..];
        tail.iter().filter(|a| **a).count() as f64 / tail.len().max(1) as f64
    }
}

pub const RULE: &str = "-------------------------------------------------";

fn report<W: Write + ?Sized>(out: &mut W, r: &IntervalReport, n_samples: usize, total_accepted: usize) {
    let _ = writeln!(
        out,
        "Sampled: {} of {}, {:.2}%\nReport interval Metrop. Acceptance rate: {:.2}%\nOverall Metrop. Acceptance rate: {:.2}%\n{RULE}",
        r.sampled,
        n_samples,
        100.0 * r.sampled as f64 / n_samples as f64,
        100.0 * r.interval_rate(),
        100.0 * total_accepted as f64 / r.sampled as f64,
    );
}

/// Run a random-walk Metropolis chain from `z0` on any target.
pub fn metropolis<T: LogTarget + ?Sized, W: Write + ?Sized>(
    target: &T,
    z0: &[f64],
    tuning: &TuningSpec,
    adaptive: Option<&AdaptiveSpec>,
    cfg: &ChainConfig,
    out: &mut W,
) -> Result<MetropolisRun> {
    let dim = target.dim();
    if z0.len() != dim || tuning.dim() != dim {
        return Err(Error::Invalid(format!(
            "starting point has {} values and tuning {}, target has {dim}",
            z0.len(),
            tuning.dim()
        )));
    }
    if let Some(a) = adaptive {
        a.validate()?;
    }
    let mut current = target.log_density(z0);
    if !current.is_finite() {
        return Err(Error::Invalid("starting values have no finite target density".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = z0.to_vec();
    let mut proposal = vec![0.0; dim];
    let mut tuning = tuning.clone();
    let mut run = MetropolisRun {
        z: Vec::with_capacity(cfg.n_samples),
        log_density: Vec::with_capacity(cfg.n_samples),
        accepted: Vec::with_capacity(cfg.n_samples),
        reports: Vec::new(),
        final_tuning: tuning.clone(),
    };
    let start = Instant::now();
    let (mut interval_acc, mut interval_len, mut total_acc) = (0usize, 0usize, 0usize);
    let (mut batch_acc, mut batch_len, mut batch_no) = (0usize, 0usize, 0usize);
    for it in 0..cfg.n_samples {
        let acc = rw_step(&mut z, &mut current, &tuning, target, &mut proposal, &mut rng);
        run.z.push(z.clone());
        run.log_density.push(current);
        run.accepted.push(acc);
        interval_acc += acc as usize;
        total_acc += acc as usize;
        interval_len += 1;
        if let Some(a) = adaptive {
            if it < a.burn_in {
                batch_acc += acc as usize;
                batch_len += 1;
                if batch_len == a.batch_length {
                    batch_no += 1;
                    tuning = adapt_tuning(batch_acc as f64 / batch_len as f64, &tuning, a.target_rate, batch_no);
                    batch_acc = 0;
                    batch_len = 0;
                }
            }
        }
        if cfg.n_report > 0 && ((it + 1) % cfg.n_report == 0 || it + 1 == cfg.n_samples) {
            let r = IntervalReport {
                sampled: it + 1,
                interval_accepted: interval_acc,
                interval_length: interval_len,
                elapsed_secs: start.elapsed().as_secs_f64(),
            };
            report(out, &r, cfg.n_samples, total_acc);
            run.reports.push(r);
            interval_acc = 0;
            interval_len = 0;
        }
    }
    run.final_tuning = tuning;
    Ok(run)
}

/// Natural-scale draws of θ and sampler bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub theta: Vec<Theta>,
    pub accepted: Vec<bool>,
    pub reports: Vec<IntervalReport>,
    pub final_tuning: TuningSpec,
    pub seed: u64,
}

impl ChainSamples {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.n_accepted() as f64 / self.accepted.len().max(1) as f64
    }

    pub fn acceptance_rate_from(&self, from: usize) -> f64 {
        let tail = &self.accepted[from.min(self.accepted.len())..];
        tail.iter().filter(|a| **a).count() as f64 / tail.len().max(1) as f64
    }
}

fn ig_block_ok(ig: &InverseGamma, v: f64) -> bool {
    ig.ln_pdf(v).is_finite()
}

/// Name the block of θ that makes the starting target non-finite.
fn diagnose_start(model: &SvcModel, theta: &Theta) -> String {
    let priors: &PriorSet = model.priors();
    if !ig_block_ok(&priors.tau_sq, theta.tau_sq) {
        return format!("tau.sq = {} is outside its prior support", theta.tau_sq);
    }
    let names = model.svc_names();
    for ((phi, u), name) in theta.phi.iter().zip(&priors.phi).zip(&names) {
        if !u.contains(*phi) {
            return format!("phi.{name} = {phi} is outside ({}, {})", u.lo, u.hi);
        }
    }
    match (&theta.process, &priors.process) {
        (ProcessParams::Lmc(_), ProcessPrior::InverseWishart { .. }) => {
            if theta.mixing().diagonal().iter().any(|d| !(*d > 0.0)) {
                return "A must have a positive diagonal".into();
            }
        }
        (ProcessParams::Independent(s2), ProcessPrior::InverseGamma(igs)) => {
            for ((v, ig), name) in s2.iter().zip(igs).zip(&names) {
                if !ig_block_ok(ig, *v) {
                    return format!("sigma.sq.{name} = {v} is outside its prior support");
                }
            }
        }
        _ => {}
    }
    if !log_prior(theta, priors).is_finite() {
        return "process scale has zero prior density".into();
    }
    match try_log_target(model, theta) {
        Err(e) => format!("covariance at the starting values: {e}"),
        Ok(v) => format!("target evaluates to {v}"),
    }
}

/// Sample the marginal posterior of θ for `model`.
pub fn run_chain<W: Write + Send + ?Sized>(
    model: &SvcModel,
    starting: &Theta,
    tuning: &TuningSpec,
    adaptive: Option<&AdaptiveSpec>,
    cfg: &ChainConfig,
    out: &mut W,
) -> Result<ChainSamples> {
    let param = model.parameterization();
    if model.n() < model.r() + 1 {
        return Err(Error::Invalid(format!("need at least r + 1 = {} observations to fit", model.r() + 1)));
    }
    starting.check_shape(param.mode())?;
    if tuning.dim() != param.dim() {
        return Err(Error::Invalid(format!("{} tuning values for {} parameters", tuning.dim(), param.dim())));
    }
    let target = TransformedTarget::new(model);
    let z0 = param.to_unconstrained(starting).z;
    parallel::install(cfg.threads, || {
        if !target.log_density(&z0).is_finite() {
            return Err(Error::Invalid(format!("invalid starting values: {}", diagnose_start(model, starting))));
        }
        let run = metropolis(&target, &z0, tuning, adaptive, cfg, out)?;
        let theta = run.z.iter().map(|z| param.from_unconstrained(z).0).collect();
        Ok(ChainSamples {
            theta,
            accepted: run.accepted,
            reports: run.reports,
            final_tuning: run.final_tuning,
            seed: cfg.seed,
        })
    })
}
