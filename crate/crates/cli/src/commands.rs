//! The subcommands, callable as library functions.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use svcgp::diagnostics::{fit_diagnostics, FitDiagnostics};
use svcgp::likelihood::log_target;
use svcgp::mcmc::{run_chain, ChainConfig, ChainSamples, TuningSpec, RULE};
use svcgp::model::{BetaPrior, CovMode, ProcessPrior, SvcModel};
use svcgp::parallel;
use svcgp::predict::{exceedance_probability, predict as predict_draws, predict_coefficients, PredictionRequest, PredictiveDraws};
use svcgp::recover::{recover_thetas, RecoverConfig, RecoveredSamples};
use svcgp::simulate::{three_process_design, simulate as simulate_data, SimulatedData};

use crate::artifacts::{self, ChainMeta, RecoverMeta};
use crate::config::{sha256_hex, LoadedConfig};
use crate::data::{self, read_table, write_table_file};
use crate::summary::{prob_label, quantiles, PosteriorSummary, DEFAULT_PROBS};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A config with its data loaded and the model built.
pub struct Session {
    pub loaded: LoadedConfig,
    pub model: SvcModel,
    pub threads: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Session {
    pub fn open(config: &Path, ov: &Overrides) -> Result<Self> {
        Self::from_loaded(LoadedConfig::load(config)?, ov)
    }

    pub fn from_loaded(loaded: LoadedConfig, ov: &Overrides) -> Result<Self> {
        let cfg = &loaded.config;
        let table = read_table(&loaded.resolve(&cfg.data.path))?;
        let spec = data::model_spec(cfg, &table)?;
        let priors = cfg.priors(spec.r(), spec.p())?;
        let model = SvcModel::new(spec, priors)?;
        let threads = ov.threads.unwrap_or(cfg.mcmc.threads).max(1);
        let seed = ov.seed.unwrap_or(cfg.mcmc.seed);
        let out_dir = ov.out.clone().unwrap_or_else(|| loaded.out_dir());
        Ok(Self { loaded, model, threads, seed, out_dir })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn chain_meta(&self) -> Result<ChainMeta> {
        let path = self.file(artifacts::CHAIN_META);
        if !path.exists() {
            bail!("no chain in {}: run `svcgp fit` first", self.out_dir.display());
        }
        let meta: ChainMeta = artifacts::read_json(&path)?;
        if meta.config_hash != self.loaded.hash {
            bail!("the config changed since the chain in {} was fit: run `svcgp fit` again", self.out_dir.display());
        }
        Ok(meta)
    }

    fn recover_meta(&self) -> Result<RecoverMeta> {
        let path = self.file(artifacts::RECOVER_META);
        if !path.exists() {
            bail!(
                "no recovered samples in {}: run `svcgp recover` first; composition sampling is required before prediction and diagnostics",
                self.out_dir.display()
            );
        }
        self.chain_meta()?;
        let meta: RecoverMeta = artifacts::read_json(&path)?;
        let chain = std::fs::read(self.file(artifacts::CHAIN))?;
        if meta.chain_hash != sha256_hex(&chain) {
            bail!("the chain changed since recovery: run `svcgp recover` again");
        }
        Ok(meta)
    }

    pub fn load_recovered(&self) -> Result<RecoveredSamples> {
        let meta = self.recover_meta()?;
        artifacts::read_recovered(&self.out_dir, &self.model, &meta)
    }
}

fn fmt_row(v: &[f64], prec: usize) -> String {
    v.iter().map(|x| format!("{x:.prec$}\t")).collect()
}

/// The "General model description" block printed before sampling.
pub fn model_description(s: &Session) -> String {
    let m = &s.model;
    let pr = m.priors();
    let mut o = String::new();
    let bar = "-".repeat(40);
    o.push_str(&format!("{bar}\n\tGeneral model description\n{bar}\n"));
    o.push_str(&format!("Model fit with {} observations.\n\n", m.n()));
    o.push_str(&format!("Number of covariates {}.\n\n", m.p()));
    o.push_str(&format!("Number of space varying covariates {}.\n\n", m.r()));
    o.push_str(&format!("Using the {} spatial correlation model.\n\n", m.correlation()));
    o.push_str(&format!("Number of MCMC samples {}.\n\n", s.loaded.config.mcmc.n_samples));
    o.push_str("Priors and hyperpriors:\n");
    match &pr.beta {
        BetaPrior::Flat => o.push_str("\tbeta flat.\n"),
        BetaPrior::Normal { mean, cov } => {
            o.push_str(&format!("\tbeta normal:\n\tmu: {}\n\tcov:\n", fmt_row(mean, 3)));
            for i in 0..cov.rows() {
                o.push_str(&format!("\t{}\n", fmt_row(&cov.row(i), 3)));
            }
        }
    }
    if m.r() > 0 {
        match &pr.process {
            ProcessPrior::InverseWishart { df, scale } => {
                o.push_str(&format!("\tK IW hyperpriors:\n\tdf: {df:.5}\n\tS:\n"));
                for i in 0..scale.rows() {
                    o.push_str(&format!("\t{}\n", fmt_row(&scale.row(i), 3)));
                }
            }
            ProcessPrior::InverseGamma(igs) => {
                o.push_str(&format!("\tsigma.sq IG hyperpriors shape:\t{}\n", fmt_row(&igs.iter().map(|g| g.shape).collect::<Vec<_>>(), 3)));
                o.push_str(&format!("\tsigma.sq IG hyperpriors scale:\t{}\n", fmt_row(&igs.iter().map(|g| g.scale).collect::<Vec<_>>(), 3)));
            }
        }
        o.push('\n');
        let lo: Vec<f64> = pr.phi.iter().map(|u| u.lo).collect();
        let hi: Vec<f64> = pr.phi.iter().map(|u| u.hi).collect();
        o.push_str(&format!("\tphi Unif lower bound hyperpriors:\t{}\n", fmt_row(&lo, 3)));
        o.push_str(&format!("\tphi Unif upper bound hyperpriors:\t{}\n\n", fmt_row(&hi, 3)));
    }
    o.push_str(&format!(
        "\ttau.sq IG hyperpriors shape={:.5} and scale={:.5}\n\n",
        pr.tau_sq.shape, pr.tau_sq.scale
    ));
    o.push_str(&format!("Posterior sampling is using {} thread(s).\n", s.threads));
    o.push_str(&format!("{RULE}\n\t\tSampling\n{RULE}\n"));
    o
}

/// Run the sampler and write the chain plus its metadata.
pub fn fit<W: Write + Send + ?Sized>(s: &Session, out: &mut W) -> Result<ChainSamples> {
    let cfg = &s.loaded.config;
    let r = s.model.r();
    let starting = cfg.starting(r)?;
    let tuning = cfg.tuning(r)?;
    let adaptive = cfg.adaptive();
    let chain_cfg = ChainConfig { n_samples: cfg.mcmc.n_samples, n_report: cfg.mcmc.n_report, threads: s.threads, seed: s.seed };
    write!(out, "{}", model_description(s))?;
    let chain = run_chain(&s.model, &starting, &tuning, adaptive.as_ref(), &chain_cfg, out)?;
    std::fs::create_dir_all(&s.out_dir).with_context(|| format!("creating {}", s.out_dir.display()))?;
    artifacts::write_chain(&s.file(artifacts::CHAIN), &s.model, &chain.theta)?;
    let meta = ChainMeta {
        config_hash: s.loaded.hash.clone(),
        seed: s.seed,
        threads: s.threads,
        n_samples: chain.len(),
        accepted: chain.n_accepted(),
        acceptance_rate: chain.acceptance_rate(),
        cov_mode: s.model.spec().cov_mode.to_string(),
        r,
        labels: artifacts::chain_labels(s.model.spec().cov_mode, &s.model.svc_names()),
        final_tuning: chain.final_tuning.sd().iter().map(|s| s * s).collect(),
    };
    artifacts::write_json(&s.file(artifacts::CHAIN_META), &meta)?;
    Ok(chain)
}

/// Composition sampling from the stored chain.
pub fn recover(s: &Session) -> Result<RecoveredSamples> {
    s.chain_meta()?;
    let chain_path = s.file(artifacts::CHAIN);
    let thetas = artifacts::read_chain(&chain_path, s.model.spec().cov_mode, &s.model.svc_names())?;
    let rc = &s.loaded.config.recover;
    let rcfg = RecoverConfig { start: rc.start, thin: rc.thin, threads: s.threads, seed: s.seed };
    let rec = recover_thetas(&s.model, &thetas, &rcfg)?;
    artifacts::write_recovered(&s.out_dir, &s.model, &rec)?;
    let meta = RecoverMeta {
        config_hash: s.loaded.hash.clone(),
        chain_hash: sha256_hex(&std::fs::read(&chain_path)?),
        seed: s.seed,
        start: rc.start,
        thin: rc.thin,
        indices: rec.indices.clone(),
    };
    artifacts::write_json(&s.file(artifacts::RECOVER_META), &meta)?;
    Ok(rec)
}

/// Seed offset that keeps prediction streams apart from recovery streams.
const PREDICT_SEED_OFFSET: u64 = 0x5DEE_CE66_D1CE_5EED;

/// Posterior predictive draws at the sites in the `[predict]` table.
pub fn predict(s: &Session) -> Result<PredictiveDraws> {
    let cfg = &s.loaded.config;
    let pc = cfg.predict.as_ref().context("the config has no [predict] section")?;
    let rec = s.load_recovered()?;
    let table = read_table(&s.loaded.resolve(&pc.path))?;
    let (x0, _) = data::design(cfg, &table)?;
    let coords0 = data::coordinates(cfg, &table)?;
    let seed = s.seed.wrapping_add(PREDICT_SEED_OFFSET);
    let req = PredictionRequest {
        x0,
        coords0: coords0.clone(),
        joint: pc.joint,
        thin: pc.thin,
        include_nugget: pc.include_nugget,
        threads: s.threads,
        seed,
    };
    let draws = predict_draws(&s.model, &rec, &req)?;
    let n0 = coords0.len();
    write_table_file(&s.file(artifacts::PRED_DRAWS), &artifacts::indexed("y.pred", n0), &draws.draws)?;

    let mut names = vec!["site".to_string()];
    names.extend(cfg.data.coords.iter().cloned());
    names.push("mean".into());
    names.extend(DEFAULT_PROBS.iter().map(|p| prob_label(*p)));
    names.extend(pc.exceedance.iter().map(|t| format!("exceed.{t}")));
    let exceed: Vec<Vec<f64>> =
        pc.exceedance.iter().map(|t| exceedance_probability(&draws.draws, *t)).collect::<Result<_, _>>()?;
    let m = draws.draws.len() as f64;
    let rows: Vec<Vec<f64>> = (0..n0)
        .map(|i| {
            let col: Vec<f64> = draws.draws.iter().map(|d| d[i]).collect();
            let mut row = vec![(i + 1) as f64];
            row.extend(coords0.point(i));
            row.push(col.iter().sum::<f64>() / m);
            row.extend(quantiles(&col, &DEFAULT_PROBS)?);
            row.extend(exceed.iter().map(|e| e[i]));
            Ok(row)
        })
        .collect::<Result<_>>()?;
    write_table_file(&s.file(artifacts::PRED_SUMMARY), &names, &rows)?;

    if pc.coefficients && s.model.r() > 0 {
        let surfaces = predict_coefficients(&s.model, &rec, &coords0, pc.joint, pc.thin, s.threads, seed)?;
        let rows: Vec<Vec<f64>> = (0..surfaces[0].draws.len())
            .map(|k| surfaces.iter().flat_map(|nd| nd.draws[k].iter().copied()).collect())
            .collect();
        write_table_file(
            &s.file(artifacts::PRED_TILDE_BETA),
            &artifacts::per_process("tilde.beta", &s.model.svc_names(), n0),
            &rows,
        )?;
    }
    Ok(draws)
}

/// Fit diagnostics for one or more recovered fits, written as one row each.
pub fn diag(fits: &[(String, &Session)], out: &Path) -> Result<Vec<(String, FitDiagnostics)>> {
    let mut rows = Vec::new();
    for (label, s) in fits {
        let rec = s.load_recovered()?;
        rows.push((label.clone(), fit_diagnostics(s.model.y(), &rec)?));
    }
    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    w.write_record(["model", "pD", "DIC", "G", "P", "D"])?;
    for (label, d) in &rows {
        let vals = [d.p_d, d.dic, d.g, d.p, d.d].map(|v| v.to_string());
        w.write_record(std::iter::once(label.clone()).chain(vals))?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn render_diag(rows: &[(String, FitDiagnostics)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    let mut o = format!("{:width$} {:>10} {:>10}\n", "", "pD", "DIC");
    for (l, d) in rows {
        o.push_str(&format!("{l:width$} {:>10.2} {:>10.2}\n", d.p_d, d.dic));
    }
    o.push_str(&format!("\n{:width$} {:>10} {:>10} {:>10}\n", "", "G", "P", "D"));
    for (l, d) in rows {
        o.push_str(&format!("{l:width$} {:>10.2} {:>10.2} {:>10.2}\n", d.g, d.p, d.d));
    }
    o
}

/// Simulate the three-process design and write the dataset and its truth.
pub fn simulate(n: usize, seed: u64, path: &Path) -> Result<SimulatedData> {
    let sim = simulate_data(&three_process_design(n, seed))?;
    let mut names: Vec<String> = ["x.coords", "y.coords", "y"].iter().map(|s| s.to_string()).collect();
    names.extend(sim.x_names[1..].iter().cloned());
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = sim.coords.point(i).to_vec();
            row.push(sim.y[i]);
            row.extend((1..sim.x.cols()).map(|j| sim.x[(i, j)]));
            row
        })
        .collect();
    write_table_file(path, &names, &rows)?;
    let truth_names: Vec<String> = sim.x_names.iter().map(|n| format!("w.{n}")).collect();
    let r = sim.svc_cols.len();
    let truth_rows: Vec<Vec<f64>> = (0..n).map(|i| sim.w[i * r..(i + 1) * r].to_vec()).collect();
    write_table_file(&truth_path(path), &truth_names, &truth_rows)?;
    Ok(sim)
}

/// `data.csv` → `data_truth.csv`.
pub fn truth_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_truth.csv"))
}

/// Quantile table for every column of a draws CSV.
pub fn summary(path: &Path, probs: &[f64]) -> Result<PosteriorSummary> {
    let t = read_table(path)?;
    if t.n_rows() == 0 {
        bail!("{} has no draws", path.display());
    }
    PosteriorSummary::new(&t.names, &t.rows(), probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub threads: usize,
    /// Median seconds per marginal-target evaluation.
    pub likelihood_secs: f64,
    /// Seconds for the short chain.
    pub chain_secs: f64,
}

impl BenchRow {
    pub fn speedup(&self, base: &BenchRow) -> f64 {
        base.likelihood_secs / self.likelihood_secs
    }
}

/// Time the marginal target at `n` sites and a short chain, per thread count.
pub fn bench(n: usize, thread_counts: &[usize], reps: usize, chain_len: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let design = three_process_design(n, seed);
    let sim = simulate_data(&design)?;
    let spec = sim.model_spec(design.svc_cols.clone(), design.correlation, CovMode::Lmc);
    let priors = crate::presets::priors(3);
    let model = SvcModel::new(spec, priors)?;
    let truth = crate::presets::true_theta(&design);
    let start = crate::presets::starting();
    let tuning: TuningSpec = crate::presets::tuning();
    let mut out = Vec::new();
    for &t in thread_counts {
        let mut times = parallel::install(t, || {
            (0..reps.max(1))
                .map(|_| {
                    let t0 = Instant::now();
                    std::hint::black_box(log_target(&model, &truth));
                    t0.elapsed().as_secs_f64()
                })
                .collect::<Vec<_>>()
        });
        times.sort_by(f64::total_cmp);
        let cfg = ChainConfig { n_samples: chain_len, n_report: chain_len.max(1), threads: t, seed };
        let t0 = Instant::now();
        run_chain(&model, &start, &tuning, None, &cfg, &mut std::io::sink())?;
        out.push(BenchRow { threads: t, likelihood_secs: times[times.len() / 2], chain_secs: t0.elapsed().as_secs_f64() });
    }
    Ok(out)
}

pub fn render_bench(n: usize, rows: &[BenchRow]) -> String {
    let mut o = format!("n = {n}\nthreads  target_secs  speedup  chain_secs\n");
    if let Some(base) = rows.first() {
        for r in rows {
            o.push_str(&format!("{:>7}  {:>11.4}  {:>7.2}  {:>10.3}\n", r.threads, r.likelihood_secs, r.speedup(base), r.chain_secs));
        }
    }
    o
}
