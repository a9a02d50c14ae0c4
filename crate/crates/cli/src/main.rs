use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use svcgp_cli::commands::{self, Overrides, Session};
use svcgp_cli::summary::DEFAULT_PROBS;

#[derive(Parser)]
#[command(name = "svcgp", version, about = "Spatially varying coefficient regression with Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Threads for likelihood, recovery and prediction.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `[output] dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn session(&self) -> Result<Session> {
        let ov = Overrides { threads: self.threads, seed: self.seed, out: self.out.clone() };
        Session::open(&self.config, &ov)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample the covariance parameters and write chain.csv.
    Fit(Common),
    /// Composition sampling of β, w and fitted values from the chain.
    Recover(Common),
    /// Posterior predictive draws at the sites in `[predict] path`.
    Predict(Common),
    /// DIC and posterior predictive loss for one or more recovered fits.
    Diag {
        /// One or more configs; each becomes a row of the table.
        #[arg(long = "config", short, required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Where to write diag.csv; defaults to the first fit's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a simulated dataset (intercept, a and b varying in space).
    Simulate {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Dataset CSV; the true random effects go next to it in `<stem>_truth.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantile table of every column in a draws CSV.
    Summary {
        input: PathBuf,
        /// Extra probabilities besides 50%, 2.5% and 97.5%.
        #[arg(long, value_delimiter = ',')]
        probs: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        digits: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the marginal target and a short chain across thread counts.
    Bench {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        threads: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 20)]
        chain: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(c) => {
            let s = c.session()?;
            let mut stdout = std::io::stdout();
            let chain = commands::fit(&s, &mut stdout)?;
            println!("Wrote {} draws to {}", chain.len(), s.out_dir.display());
        }
        Command::Recover(c) => {
            let s = c.session()?;
            let rec = commands::recover(&s)?;
            println!("Recovered {} draws into {}", rec.len(), s.out_dir.display());
        }
        Command::Predict(c) => {
            let s = c.session()?;
            let p = commands::predict(&s)?;
            println!("Wrote {} predictive draws to {}", p.draws.len(), s.out_dir.display());
        }
        Command::Diag { configs, threads, out } => {
            let ov = Overrides { threads, ..Default::default() };
            let sessions: Vec<(String, Session)> = configs
                .iter()
                .map(|p| {
                    let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((label, Session::open(p, &ov)?))
                })
                .collect::<Result<_>>()?;
            let path = out.unwrap_or_else(|| sessions[0].1.out_dir.join(svcgp_cli::artifacts::DIAG));
            let fits: Vec<(String, &Session)> = sessions.iter().map(|(l, s)| (l.clone(), s)).collect();
            let rows = commands::diag(&fits, &path)?;
            print!("{}", commands::render_diag(&rows));
        }
        Command::Simulate { n, seed, out } => {
            commands::simulate(n, seed, &out)?;
            println!("Wrote {} and {}", out.display(), commands::truth_path(&out).display());
        }
        Command::Summary { input, probs, digits, out } => {
            let mut all = DEFAULT_PROBS.to_vec();
            all.extend(probs);
            let s = commands::summary(&input, &all)?;
            print!("{}", s.render(digits));
            if let Some(path) = out {
                let rows: Vec<Vec<String>> = s
                    .rows
                    .iter()
                    .map(|(n, q)| std::iter::once(n.clone()).chain(q.iter().map(|v| v.to_string())).collect())
                    .collect();
                let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
                w.write_record(s.header())?;
                for r in rows {
                    w.write_record(r)?;
                }
                w.flush()?;
            }
        }
        Command::Bench { n, threads, reps, chain, seed } => {
            if threads.is_empty() {
                bail!("--threads needs at least one count");
            }
            let rows = commands::bench(n, &threads, reps, chain, seed)?;
            print!("{}", commands::render_bench(n, &rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
