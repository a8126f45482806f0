//! Federated round orchestration.
//!
//! Three protocols share one round structure (distribute, local training,
//! server aggregation, evaluation):
//!
//! * `fedssp`: only the shared partition (eigenvalue and filter encoders) is
//!   synchronized, by an unweighted average of client deltas. Clients add a
//!   learnable preference vector to pooled features and regularize a
//!   momentum-smoothed feature mean toward the server's consensus mean.
//! * `fedavg`: every parameter whose shape agrees across clients is replaced
//!   by the train-size weighted average.
//! * `local`: no communication.

mod client;
mod experiment;
mod protocol;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamWConfig;
use crate::error::{Error, Result};

pub use client::{evaluate_accuracy, local_train, Client, LocalUpdate, TrainStats};
pub use experiment::{
    prepare_clients, run_experiment, run_seed, summarize, ClientData, ClientOutcome, ExperimentResult, SeedRun, Summary,
};
pub use protocol::{
    aggregate_consensus, aggregate_shared, distribute, fedavg_aggregate, synchronized_names, Federation, MetricsRow,
    RoundMetrics, ServerState,
};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fedssp,
    Fedavg,
    Local,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fedssp => "fedssp",
            Method::Fedavg => "fedavg",
            Method::Local => "local",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedssp" => Ok(Method::Fedssp),
            "fedavg" => Ok(Method::Fedavg),
            "local" => Ok(Method::Local),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected fedssp, fedavg or local)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub method: Method,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Weight of the consensus regularizer.
    pub tau: f64,
    /// Momentum of the running local feature mean.
    pub mu: f64,
    pub optimizer: AdamWConfig,
    pub seeds: Vec<u64>,
    pub split: (f64, f64, f64),
    /// Preference offset and consensus regularizer. Only honoured by fedssp;
    /// the baselines always train plain cross-entropy.
    pub pgpa: bool,
    /// Keep the preference vector at its initial value.
    pub freeze_preference: bool,
    /// Drop the regularizer in the first round, where the consensus is still zero.
    pub skip_pgpa_first_round: bool,
    /// Train clients on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            method: Method::Fedssp,
            rounds: 200,
            local_epochs: 1,
            batch_size: 32,
            tau: 0.5,
            mu: 0.5,
            optimizer: AdamWConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            split: (0.8, 0.1, 0.1),
            pgpa: true,
            freeze_preference: false,
            skip_pgpa_first_round: false,
            parallel: true,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return bad("local_epochs and batch_size must be at least 1".into());
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be a finite value >= 0, got {}", self.tau));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return bad(format!("mu must lie in (0, 1], got {}", self.mu));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return bad("optimizer needs lr >= 0, betas in [0, 1) and eps > 0".into());
        }
        if o.weight_decay < 0.0 {
            return bad(format!("weight_decay must be >= 0, got {}", o.weight_decay));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        Ok(())
    }

    /// Whether the preference/consensus machinery is active.
    pub fn uses_pgpa(&self) -> bool {
        self.method == Method::Fedssp && self.pgpa
    }
}
