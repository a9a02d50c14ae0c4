//! Priors, starting values and tuning for the three-process simulation.

use svcgp::linalg::Matrix;
use svcgp::mcmc::TuningSpec;
use svcgp::model::{pack_lower, BetaPrior, InverseGamma, PriorSet, ProcessParams, ProcessPrior, Theta, UniformPrior};
use svcgp::simulate::SimulationDesign;

/// IW(r, I) on `AAᵀ`, Unif(1, 10) on each `φ`, IG(2, 1) on `τ²`, flat `β`.
pub fn priors(r: usize) -> PriorSet {
    PriorSet {
        tau_sq: InverseGamma { shape: 2.0, scale: 1.0 },
        process: ProcessPrior::InverseWishart { df: r as f64, scale: Matrix::identity(r) },
        phi: vec![UniformPrior { lo: 1.0, hi: 10.0 }; r],
        beta: BetaPrior::Flat,
    }
}

/// `φ = 3/0.5`, `A = I`, `τ² = 1`.
pub fn starting() -> Theta {
    Theta { process: ProcessParams::Lmc(pack_lower(&Matrix::identity(3))), phi: vec![6.0; 3], tau_sq: 1.0 }
}

/// Proposal variances 0.1 for `φ` and 0.01 for `A` and `τ²`.
pub fn tuning() -> TuningSpec {
    TuningSpec::from_variance_blocks(&[0.1; 3], &[0.01; 6], 0.01).expect("positive")
}

pub fn true_theta(d: &SimulationDesign) -> Theta {
    Theta { process: ProcessParams::Lmc(pack_lower(&d.a)), phi: d.phi.clone(), tau_sq: d.tau_sq }
}

/// Config text matching [`priors`], [`starting`] and [`tuning`] for a
/// dataset written by `svcgp simulate`.
pub fn config_text(data: &str, n_samples: usize, start: usize, thin: usize) -> String {
    format!(
        r#"[data]
path = "{data}"
outcome = "y"
predictors = ["a", "b"]
coords = ["x.coords", "y.coords"]

[model]
svc_cols = ["(Intercept)", "a", "b"]
correlation = "exponential"

[priors]
phi_unif = [[1.0, 10.0], [1.0, 10.0], [1.0, 10.0]]
k_iw_df = 3.0
tau_sq_ig = [2.0, 1.0]

[starting]
phi = [6.0, 6.0, 6.0]
a = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]
tau_sq = 1.0

[tuning]
phi = [0.1, 0.1, 0.1]
a = [0.01, 0.01, 0.01, 0.01, 0.01, 0.01]
tau_sq = 0.01

[mcmc]
n_samples = {n_samples}
n_report = {report}

[recover]
start = {start}
thin = {thin}
"#,
        report = (n_samples / 2).max(1)
    )
}
