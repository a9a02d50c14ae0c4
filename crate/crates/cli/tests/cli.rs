use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svcgp_cli::commands::{self, Overrides, Session};
use svcgp_cli::config::LoadedConfig;
use svcgp_cli::data::read_table;
use svcgp_cli::presets;

fn svcgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svcgp")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    assert!(!out.status.success());
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sites_csv(path: &Path, n: usize) {
    let mut s = String::from("x.coords,y.coords,a,b\n");
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        s.push_str(&format!("{t},{},{},{}\n", 1.0 - t, (7.0 * t).sin(), (3.0 * t).cos()));
    }
    std::fs::write(path, s).unwrap();
}

/// SVC config for a simulated dataset, with prediction and an output dir.
fn svc_config(dir: &Path, data: &str, n_samples: usize, predict: &str) -> PathBuf {
    let mut text = presets::config_text(data, n_samples, n_samples / 2, 2);
    text.push_str(predict);
    text.push_str("\n[output]\ndir = \"svc-out\"\n");
    let p = dir.join("svc.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn nonspatial_config(dir: &Path, data: &str) -> PathBuf {
    let text = format!(
        r#"[data]
path = "{data}"
outcome = "y"
predictors = ["a", "b"]
coords = ["x.coords", "y.coords"]

[priors]
tau_sq_ig = [2.0, 1.0]

[starting]
tau_sq = 1.0

[tuning]
tau_sq = 0.1

[mcmc]
n_samples = 400

[recover]
start = 200
thin = 2

[output]
dir = "lm-out"
"#
    );
    let p = dir.join("lm.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn end_to_end_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = dir.join("sim.csv");
    ok(&svcgp(&["simulate", "--n", "60", "--seed", "3", "--out", data.to_str().unwrap()]));
    assert!(dir.join("sim_truth.csv").exists());
    sites_csv(&dir.join("sites.csv"), 5);

    let cfg = svc_config(dir, "sim.csv", 300, "\n[predict]\npath = \"sites.csv\"\nexceedance = [0.0]\ncoefficients = true\n");
    let c = cfg.to_str().unwrap();
    let fit = ok(&svcgp(&["fit", "-c", c]));
    assert!(fit.contains("Number of space varying covariates 3."), "{fit}");
    assert!(fit.contains("Posterior sampling is using 1 thread(s)."));
    assert!(fit.contains("Sampled: 150 of 300"), "{fit}");
    ok(&svcgp(&["recover", "-c", c]));
    ok(&svcgp(&["predict", "-c", c]));

    let out = dir.join("svc-out");
    let chain = read_table(&out.join("chain.csv")).unwrap();
    assert_eq!(chain.n_rows(), 300);
    assert!(chain.names.contains(&"tau.sq".to_string()));
    assert_eq!(read_table(&out.join("beta.csv")).unwrap().n_rows(), 75);
    assert_eq!(read_table(&out.join("w.csv")).unwrap().names.len(), 180);
    let pred = read_table(&out.join("pred_draws.csv")).unwrap();
    assert_eq!((pred.n_rows(), pred.names.len()), (75, 5));
    let summary = read_table(&out.join("pred_summary.csv")).unwrap();
    assert!(summary.names.contains(&"exceed.0".to_string()));
    let ex = summary.column("exceed.0").unwrap();
    assert!(ex.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(read_table(&out.join("pred_tilde_beta.csv")).unwrap().names.len(), 15);

    let lm = nonspatial_config(dir, "sim.csv");
    let l = lm.to_str().unwrap();
    let lm_fit = ok(&svcgp(&["fit", "-c", l]));
    assert!(lm_fit.contains("Number of space varying covariates 0."));
    ok(&svcgp(&["recover", "-c", l]));
    assert!(!dir.join("lm-out").join("w.csv").exists());

    let diag_path = dir.join("diag.csv");
    let diag = ok(&svcgp(&["diag", "-c", c, "-c", l, "--out", diag_path.to_str().unwrap()]));
    assert!(diag.contains("DIC") && diag.contains("svc") && diag.contains("lm"), "{diag}");
    let table = std::fs::read_to_string(&diag_path).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "model,pD,DIC,G,P,D");
    assert_eq!(lines.len(), 3);

    let s = ok(&svcgp(&["summary", out.join("beta.csv").to_str().unwrap(), "--probs", "0.1"]));
    assert!(s.contains("2.5%") && s.contains("10%") && s.contains("(Intercept)"), "{s}");
}

#[test]
fn missing_column_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("d.csv"), "x.coords,y.coords,y,a\n0,0,1,2\n1,1,2,3\n").unwrap();
    let cfg = svc_config(dir, "d.csv", 10, "");
    let err = stderr_of(&svcgp(&["fit", "-c", cfg.to_str().unwrap()]));
    assert!(err.contains("'b'"), "{err}");
}

#[test]
fn predict_before_recover_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    commands::simulate(30, 1, &dir.join("sim.csv")).unwrap();
    sites_csv(&dir.join("sites.csv"), 3);
    let cfg = svc_config(dir, "sim.csv", 40, "\n[predict]\npath = \"sites.csv\"\n");
    let c = cfg.to_str().unwrap();
    let err = stderr_of(&svcgp(&["predict", "-c", c]));
    assert!(err.contains("svcgp recover"), "{err}");
    ok(&svcgp(&["fit", "-c", c]));
    let err = stderr_of(&svcgp(&["predict", "-c", c]));
    assert!(err.contains("composition sampling is required"), "{err}");
    let err = stderr_of(&svcgp(&["diag", "-c", c]));
    assert!(err.contains("svcgp recover"), "{err}");
}

#[test]
fn edited_config_invalidates_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    commands::simulate(30, 1, &dir.join("sim.csv")).unwrap();
    let cfg = svc_config(dir, "sim.csv", 20, "");
    let c = cfg.to_str().unwrap();
    ok(&svcgp(&["fit", "-c", c]));
    let text = std::fs::read_to_string(&cfg).unwrap().replace("tau_sq = 1.0", "tau_sq = 0.5");
    std::fs::write(&cfg, text).unwrap();
    let err = stderr_of(&svcgp(&["recover", "-c", c]));
    assert!(err.contains("config changed"), "{err}");
}

#[test]
fn pointwise_prediction_has_one_column_per_site() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    commands::simulate(40, 2, &dir.join("sim.csv")).unwrap();
    sites_csv(&dir.join("sites.csv"), 100);
    let cfg = svc_config(dir, "sim.csv", 20, "\n[predict]\npath = \"sites.csv\"\njoint = false\n");
    let s = Session::open(&cfg, &Overrides::default()).unwrap();
    commands::fit(&s, &mut std::io::sink()).unwrap();
    commands::recover(&s).unwrap();
    let p = commands::predict(&s).unwrap();
    assert_eq!(p.draws.len(), 5);
    assert!(p.draws.iter().all(|d| d.len() == 100));
    let t = read_table(&s.out_dir.join("pred_draws.csv")).unwrap();
    assert_eq!(t.names.len(), 100);
    assert_eq!(t.names[99], "y.pred[100]");
}

#[test]
fn identical_draws_collapse_quantiles() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("d.csv");
    std::fs::write(&p, "theta\n2.5\n2.5\n2.5\n2.5\n").unwrap();
    let s = commands::summary(&p, &[0.5, 0.025, 0.975]).unwrap();
    assert_eq!(s.rows[0].1, vec![2.5, 2.5, 2.5]);
}

#[test]
fn chain_replays_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    commands::simulate(30, 5, &dir.join("sim.csv")).unwrap();
    let text = presets::config_text("sim.csv", 50, 0, 1);
    let run = |out: &str, seed: u64| {
        let loaded = LoadedConfig::from_str(&text, dir.to_path_buf()).unwrap();
        let ov = Overrides { threads: Some(1), seed: Some(seed), out: Some(dir.join(out)) };
        let s = Session::from_loaded(loaded, &ov).unwrap();
        commands::fit(&s, &mut std::io::sink()).unwrap();
        std::fs::read(dir.join(out).join("chain.csv")).unwrap()
    };
    let a = run("a", 4);
    let b = run("b", 4);
    let c = run("c", 5);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bad_config_is_reported_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    std::fs::write(&p, "[data]\npath = \"x.csv\"\noutcome = \"y\"\ncoords = [\"u\"]\ncolour = 1\n").unwrap();
    let err = stderr_of(&svcgp(&["fit", "-c", p.to_str().unwrap()]));
    assert!(err.contains("colour"), "{err}");
}
