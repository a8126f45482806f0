use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::client::Client;
use crate::federation::protocol::{Federation, MetricsRow, RoundMetrics};
use crate::federation::{FedConfig, Method};
use crate::graph::GraphDataset;
use crate::specnet::{prepare_dataset, PreparedGraph, SpecNetConfig};

/// A client's dataset with its spectra computed once and reused across
/// seeds and methods.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub name: String,
    pub dataset: Arc<GraphDataset>,
    pub graphs: Arc<Vec<PreparedGraph>>,
}

pub fn prepare_clients(datasets: Vec<GraphDataset>, max_nodes: usize) -> Result<Vec<ClientData>> {
    datasets
        .into_par_iter()
        .map(|ds| {
            ds.validate()?;
            let graphs = prepare_dataset(&ds, max_nodes)?;
            Ok(ClientData {
                name: ds.name.clone(),
                dataset: Arc::new(ds),
                graphs: Arc::new(graphs),
            })
        })
        .collect()
}

/// Per-client result of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientOutcome {
    pub client: usize,
    pub name: String,
    pub best_round: usize,
    pub best_val_acc: f64,
    pub test_at_best_val: f64,
    pub final_test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub outcomes: Vec<ClientOutcome>,
    /// Final state, for checkpointing.
    pub federation: Federation,
}

/// Fresh clients (ids in input order), `cfg.rounds` rounds. `on_round` sees
/// every round as it completes.
pub fn run_seed(
    clients: &[ClientData],
    model: &SpecNetConfig,
    cfg: &FedConfig,
    seed: u64,
    mut on_round: impl FnMut(&RoundMetrics) -> Result<()>,
) -> Result<SeedRun> {
    let built = clients
        .iter()
        .enumerate()
        .map(|(id, d)| {
            Client::new(
                id,
                &d.name,
                Arc::clone(&d.dataset),
                Arc::clone(&d.graphs),
                model,
                cfg,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fed = Federation::new(cfg.clone(), built, seed)?;
    let mut rows = Vec::with_capacity(cfg.rounds * clients.len());
    for _ in 0..cfg.rounds {
        let metrics = fed.run_round()?;
        on_round(&metrics)?;
        rows.extend(metrics.rows);
    }
    let last = cfg.rounds;
    let outcomes = fed
        .clients
        .iter()
        .map(|c| {
            let (best_round, best_val_acc, test_at_best_val) = c.best_val.unwrap_or((0, 0.0, 0.0));
            let final_test_acc = rows
                .iter()
                .rev()
                .find(|r| r.client == c.id && r.round == last)
                .map_or(0.0, |r| r.test_acc);
            ClientOutcome {
                client: c.id,
                name: c.name.clone(),
                best_round,
                best_val_acc,
                test_at_best_val,
                final_test_acc,
            }
        })
        .collect();
    Ok(SeedRun {
        seed,
        rows,
        outcomes,
        federation: fed,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            count: 0,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Summary {
        mean,
        std: var.sqrt(),
        count: values.len(),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub method: Method,
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    /// Test-at-best-val of one client across seeds.
    pub fn client_summary(&self, client: usize) -> Summary {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.outcomes.iter().find(|o| o.client == client))
            .map(|o| o.test_at_best_val)
            .collect();
        summarize(&v)
    }

    /// Cross-client mean of test-at-best-val per seed, summarized over seeds.
    pub fn overall(&self) -> Summary {
        summarize(&self.seed_means(|o| o.test_at_best_val))
    }

    /// Same as [`overall`](Self::overall) for the last-round test accuracy.
    pub fn overall_final(&self) -> Summary {
        summarize(&self.seed_means(|o| o.final_test_acc))
    }

    fn seed_means(&self, pick: impl Fn(&ClientOutcome) -> f64) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.outcomes.iter().map(&pick).sum::<f64>() / r.outcomes.len().max(1) as f64)
            .collect()
    }
}

/// Runs every seed in `cfg.seeds` in turn.
pub fn run_experiment(clients: &[ClientData], model: &SpecNetConfig, cfg: &FedConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::Config("no clients configured".into()));
    }
    let runs = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(clients, model, cfg, s, |_| Ok(())))
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        method: cfg.method,
        runs,
    })
}
