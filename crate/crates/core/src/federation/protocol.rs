use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Partition, Tensor};
use crate::error::{Error, Result};
use crate::federation::client::{evaluate_accuracy, local_train, Client, LocalUpdate};
use crate::federation::{FedConfig, Method};

/// What the server holds between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Completed rounds.
    pub round: usize,
    /// `θ_g` under fedssp; the synchronized parameter set under fedavg; empty for local.
    pub shared: BTreeMap<String, Tensor>,
    /// Global feature-mean consensus, zero until the first aggregation.
    pub consensus: Vec<f64>,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub client: usize,
    pub train_loss: f64,
    pub ce_loss: f64,
    pub pgpa_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Sorted by client id.
    pub rows: Vec<MetricsRow>,
    /// Not part of the metrics stream, which must stay reproducible.
    pub wall_time_secs: f64,
}

/// Names present in every client with the same shape everywhere, sorted.
pub fn synchronized_names(clients: &[Client]) -> Vec<String> {
    let Some(first) = clients.first() else {
        return Vec::new();
    };
    first
        .params
        .iter()
        .filter(|p| {
            clients[1..].iter().all(|c| {
                c.params
                    .get(&p.name)
                    .is_some_and(|q| q.tensor.shape() == p.tensor.shape())
            })
        })
        .map(|p| p.name.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Overwrites each client's synchronized parameters with the server copy.
/// Only the names in `server.shared` are touched.
pub fn distribute(server: &ServerState, clients: &mut [Client], method: Method) -> Result<()> {
    if method == Method::Local {
        return Ok(());
    }
    for c in clients.iter_mut() {
        for name in server.shared.keys() {
            let p = c
                .params
                .get(name)
                .ok_or_else(|| Error::Protocol(format!("client {} has no parameter {name:?}", c.id)))?;
            if method == Method::Fedssp && p.partition != Partition::Shared {
                return Err(Error::Protocol(format!("{name:?} is not in the shared partition")));
            }
        }
        c.params.assign(&server.shared)?;
    }
    Ok(())
}

/// `θ_g + (1/N) Σ Δ_i`, summed in ascending client id regardless of input order.
pub fn aggregate_shared(
    global: &BTreeMap<String, Tensor>,
    updates: &[(usize, &BTreeMap<String, Tensor>)],
) -> Result<BTreeMap<String, Tensor>> {
    if updates.is_empty() {
        return Err(Error::Protocol("aggregate_shared needs at least one update".into()));
    }
    let mut order: Vec<_> = updates.to_vec();
    order.sort_by_key(|(id, _)| *id);
    let inv = 1.0 / order.len() as f64;
    let mut next = BTreeMap::new();
    for (name, g) in global {
        let mut acc = vec![0.0; g.len()];
        for (id, delta) in &order {
            if delta.len() != global.len() {
                return Err(Error::Protocol(format!(
                    "client {id} sent {} shared tensors, expected {}",
                    delta.len(),
                    global.len()
                )));
            }
            let d = delta
                .get(name)
                .ok_or_else(|| Error::Protocol(format!("client {id} sent no update for {name:?}")))?;
            if d.shape() != g.shape() {
                return Err(Error::Protocol(format!(
                    "client {id} update for {name:?} has shape {:?}, expected {:?}",
                    d.shape(),
                    g.shape()
                )));
            }
            for (a, x) in acc.iter_mut().zip(d.values()) {
                *a += x;
            }
        }
        let values = g.values().iter().zip(&acc).map(|(v, s)| v + s * inv).collect();
        next.insert(name.clone(), Tensor::new(g.shape().to_vec(), values)?);
    }
    Ok(next)
}

/// Entrywise unweighted mean of the client feature means, in ascending id order.
pub fn aggregate_consensus(means: &[(usize, &[f64])]) -> Result<Vec<f64>> {
    let mut order: Vec<_> = means.to_vec();
    order.sort_by_key(|(id, _)| *id);
    let Some((_, first)) = order.first() else {
        return Err(Error::Protocol("aggregate_consensus needs at least one mean".into()));
    };
    let d = first.len();
    let mut acc = vec![0.0; d];
    for (id, m) in &order {
        if m.len() != d {
            return Err(Error::Protocol(format!(
                "client {id} mean has length {}, expected {d}",
                m.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(m.iter()) {
            *a += x;
        }
    }
    let n = order.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Train-count weighted average of `names` over `(id, weight, params)`.
pub fn fedavg_aggregate(
    names: &[String],
    clients: &[(usize, usize, &BTreeMap<String, Tensor>)],
) -> Result<BTreeMap<String, Tensor>> {
    let mut order: Vec<_> = clients.to_vec();
    order.sort_by_key(|(id, _, _)| *id);
    let total: usize = order.iter().map(|(_, w, _)| w).sum();
    if total == 0 {
        return Err(Error::Protocol("fedavg needs at least one training sample".into()));
    }
    let mut out = BTreeMap::new();
    for name in names {
        let mut shape: Option<&[usize]> = None;
        let mut acc: Vec<f64> = Vec::new();
        for (id, w, params) in &order {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Protocol(format!("client {id} has no parameter {name:?}")))?;
            match shape {
                None => {
                    shape = Some(t.shape());
                    acc = vec![0.0; t.len()];
                }
                Some(s) if s != t.shape() => {
                    return Err(Error::Protocol(format!("shape mismatch for {name:?} at client {id}")));
                }
                _ => {}
            }
            let frac = *w as f64 / total as f64;
            for (a, x) in acc.iter_mut().zip(t.values()) {
                *a += frac * x;
            }
        }
        let shape = shape.unwrap_or(&[]).to_vec();
        out.insert(name.clone(), Tensor::new(shape, acc)?);
    }
    Ok(out)
}

/// Server plus clients for one seed.
#[derive(Debug, Clone)]
pub struct Federation {
    pub config: FedConfig,
    pub server: ServerState,
    /// Kept in ascending id order.
    pub clients: Vec<Client>,
    pub seed: u64,
}

impl Federation {
    /// The server copy starts from the lowest-id client's parameters, so the
    /// first distribute makes every client identical on the synchronized set.
    pub fn new(config: FedConfig, mut clients: Vec<Client>, seed: u64) -> Result<Self> {
        config.validate()?;
        if clients.is_empty() {
            return Err(Error::Config("a federation needs at least one client".into()));
        }
        clients.sort_by_key(|c| c.id);
        if clients.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::Config("client ids must be distinct".into()));
        }
        let d = clients[0].model.config.hidden;
        if config.uses_pgpa() && clients.iter().any(|c| c.model.config.hidden != d) {
            return Err(Error::Config(
                "all clients need the same hidden width for the consensus".into(),
            ));
        }
        let shared = match config.method {
            Method::Fedssp => {
                let names = clients[0].params.names(Some(Partition::Shared));
                for c in &clients[1..] {
                    for name in &names {
                        let a = &clients[0].params.require(name)?.tensor;
                        let b = &c.params.require(name)?.tensor;
                        if a.shape() != b.shape() {
                            return Err(Error::Protocol(format!(
                                "shared parameter {name:?} differs in shape between clients {} and {}",
                                clients[0].id, c.id
                            )));
                        }
                    }
                }
                clients[0].shared_snapshot()
            }
            Method::Fedavg => {
                let all = clients[0].params.snapshot(None);
                synchronized_names(&clients)
                    .into_iter()
                    .map(|n| {
                        let t = all[&n].clone();
                        (n, t)
                    })
                    .collect()
            }
            Method::Local => BTreeMap::new(),
        };
        Ok(Self {
            server: ServerState {
                round: 0,
                shared,
                consensus: vec![0.0; d],
            },
            config,
            clients,
            seed,
        })
    }

    pub fn distribute(&mut self) -> Result<()> {
        distribute(&self.server, &mut self.clients, self.config.method)
    }

    /// Trains every client against the current server state. Results come
    /// back in id order whether or not the pool is used.
    pub fn train_clients(&mut self) -> Result<Vec<LocalUpdate>> {
        let round = self.server.round + 1;
        let cfg = &self.config;
        let consensus = &self.server.consensus;
        let empty = BTreeMap::new();
        let global = if cfg.method == Method::Fedssp {
            &self.server.shared
        } else {
            &empty
        };
        let results: Vec<Result<LocalUpdate>> = if cfg.parallel {
            self.clients
                .par_iter_mut()
                .map(|c| local_train(c, consensus, global, cfg, round))
                .collect()
        } else {
            self.clients
                .iter_mut()
                .map(|c| local_train(c, consensus, global, cfg, round))
                .collect()
        };
        results.into_iter().collect()
    }

    pub fn aggregate(&mut self, updates: &[LocalUpdate]) -> Result<()> {
        match self.config.method {
            Method::Fedssp => {
                let deltas: Vec<_> = updates.iter().map(|u| (u.client, &u.delta)).collect();
                self.server.shared = aggregate_shared(&self.server.shared, &deltas)?;
                if self.config.uses_pgpa() {
                    let means: Vec<_> = updates.iter().map(|u| (u.client, u.local_mean.as_slice())).collect();
                    self.server.consensus = aggregate_consensus(&means)?;
                }
            }
            Method::Fedavg => {
                let names: Vec<String> = self.server.shared.keys().cloned().collect();
                let snaps: Vec<_> = self.clients.iter().map(|c| c.params.snapshot(None)).collect();
                let weighted: Vec<_> = self
                    .clients
                    .iter()
                    .zip(&snaps)
                    .map(|(c, s)| (c.id, c.train_size(), s))
                    .collect();
                self.server.shared = fedavg_aggregate(&names, &weighted)?;
            }
            Method::Local => {}
        }
        Ok(())
    }

    /// Validation and test accuracy of each client's current model, `(val, test)`.
    pub fn evaluate(&self) -> Result<Vec<(f64, f64)>> {
        let pref = self.config.uses_pgpa();
        let eval = |c: &Client| -> Result<(f64, f64)> {
            Ok((
                evaluate_accuracy(c, &c.split.val, pref)?,
                evaluate_accuracy(c, &c.split.test, pref)?,
            ))
        };
        let results: Vec<Result<_>> = if self.config.parallel {
            self.clients.par_iter().map(eval).collect()
        } else {
            self.clients.iter().map(eval).collect()
        };
        results.into_iter().collect()
    }

    /// distribute, local training, aggregation, then evaluation of the
    /// locally trained models.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let start = Instant::now();
        self.distribute()?;
        let updates = self.train_clients()?;
        self.aggregate(&updates)?;
        self.server.round += 1;
        let round = self.server.round;
        let accs = self.evaluate()?;
        let mut rows = Vec::with_capacity(self.clients.len());
        for ((c, u), (val, test)) in self.clients.iter_mut().zip(&updates).zip(accs) {
            c.track_validation(round, val, test);
            rows.push(MetricsRow {
                round,
                client: c.id,
                train_loss: u.stats.train_loss,
                ce_loss: u.stats.ce_loss,
                pgpa_loss: u.stats.pgpa_loss,
                val_acc: val,
                test_acc: test,
                seed: self.seed,
            });
        }
        Ok(RoundMetrics {
            round,
            rows,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }
}
