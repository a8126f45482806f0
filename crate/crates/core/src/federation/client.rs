use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adamw_step, AdamWState, ParamRegistry, Partition, Subset, Tape, Tensor};
use crate::error::{Error, Result};
use crate::federation::FedConfig;
use crate::graph::{split_dataset, DatasetSplit, GraphDataset};
use crate::specnet::{init_params, PreparedGraph, SpecNet, SpecNetConfig, PREFERENCE};

/// One participant: its data, personalized model and optimizer.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    pub name: String,
    pub dataset: Arc<GraphDataset>,
    pub graphs: Arc<Vec<PreparedGraph>>,
    pub split: DatasetSplit,
    pub model: SpecNet,
    pub params: ParamRegistry,
    pub optimizer: AdamWState,
    /// Momentum-smoothed mean of pooled features from the last local pass.
    pub local_mean: Vec<f64>,
    rng: ChaCha8Rng,
    pub best_val: Option<(usize, f64, f64)>,
}

impl Client {
    /// Deterministic under `(seed, id)`: ChaCha stream `id` of `seed` drives the
    /// split, the initial weights and batch order.
    pub fn new(
        id: usize,
        name: impl Into<String>,
        dataset: Arc<GraphDataset>,
        graphs: Arc<Vec<PreparedGraph>>,
        base: &SpecNetConfig,
        fed: &FedConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let split = split_dataset(&dataset, fed.split, rng.next_u64())?;
        let model = SpecNet::new(base.for_dataset(&dataset))?;
        let params = init_params(&model.config, &mut rng)?;
        let optimizer = AdamWState::new(fed.optimizer, &params);
        let local_mean = vec![0.0; model.config.hidden];
        Ok(Self {
            id,
            name: name.into(),
            dataset,
            graphs,
            split,
            model,
            params,
            optimizer,
            local_mean,
            rng,
            best_val: None,
        })
    }

    pub fn train_size(&self) -> usize {
        self.split.train.len()
    }

    pub fn shared_snapshot(&self) -> BTreeMap<String, Tensor> {
        self.params.snapshot(Some(Partition::Shared))
    }

    /// Records `val_acc` at `round` if it beats the best seen so far.
    pub fn track_validation(&mut self, round: usize, val_acc: f64, test_acc: f64) {
        if self.best_val.is_none_or(|(_, best, _)| val_acc > best) {
            self.best_val = Some((round, val_acc, test_acc));
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub train_loss: f64,
    pub ce_loss: f64,
    pub pgpa_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client: usize,
    /// `θ_shared after training − θ_g`; empty unless the protocol is fedssp.
    pub delta: BTreeMap<String, Tensor>,
    pub local_mean: Vec<f64>,
    pub stats: TrainStats,
}

/// Local epochs of mini-batch training.
///
/// Per batch the loss is the mean cross-entropy of the adjusted logits plus,
/// with the preference machinery on, `tau * mse(h̄, consensus)` where
/// `h̄ = (1 − mu) h̄_prev + mu · mean(pooled)`. The previous mean and the
/// consensus are constants; at the first batch `h̄_prev` is the batch mean.
pub fn local_train(
    client: &mut Client,
    consensus: &[f64],
    global_shared: &BTreeMap<String, Tensor>,
    cfg: &FedConfig,
    round: usize,
) -> Result<LocalUpdate> {
    let pgpa = cfg.uses_pgpa();
    let tau = if cfg.skip_pgpa_first_round && round <= 1 {
        0.0
    } else {
        cfg.tau
    };
    let subset = if cfg.freeze_preference {
        Subset::AllExcept(vec![PREFERENCE.to_string()])
    } else {
        Subset::All
    };
    let d = client.model.config.hidden;
    if pgpa && consensus.len() != d {
        return Err(Error::Protocol(format!(
            "consensus has length {}, client {} expects {d}",
            consensus.len(),
            client.id
        )));
    }

    let mut totals = TrainStats::default();
    let mut batches = 0usize;
    let mut previous: Option<Vec<f64>> = None;
    let mut order = client.split.train.clone();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut client.rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            // Ascending within a batch fixes the summation order of the batch mean.
            let mut batch = batch.to_vec();
            batch.sort_unstable();
            let mut tape = Tape::new();
            let params = client.model.bind(&mut tape, &client.params)?;
            let mut losses = Vec::with_capacity(batch.len());
            let mut pooled = Vec::with_capacity(batch.len());
            for &gi in &batch {
                let graph = &client.graphs[gi];
                let rec = client.model.forward(&mut tape, &params, graph, pgpa)?;
                losses.push(tape.cross_entropy(rec.logits, graph.label)?);
                pooled.push(rec.pooled);
            }
            let ce_sum = tape.sum(&losses)?;
            let ce = tape.scale(ce_sum, 1.0 / batch.len() as f64)?;

            let (loss, pgpa_value) = if pgpa {
                let stacked = tape.stack_rows(&pooled)?;
                let current = tape.mean_rows(stacked)?;
                let prev = previous.take().unwrap_or_else(|| tape.value(current).to_vec());
                let prev = tape.constant(vec![1, d], prev)?;
                let prev = tape.scale(prev, 1.0 - cfg.mu)?;
                let cur = tape.scale(current, cfg.mu)?;
                let mean = tape.add(prev, cur)?;
                previous = Some(tape.value(mean).to_vec());
                let target = tape.constant(vec![1, d], consensus.to_vec())?;
                let reg = tape.mse(mean, target)?;
                let weighted = tape.scale(reg, tau)?;
                (tape.add(ce, weighted)?, tape.scalar(reg))
            } else {
                (ce, 0.0)
            };

            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "client {} ({}), round {round}, batch {b}: loss is {value}; first bad value at {}",
                    client.id,
                    client.name,
                    tape.first_non_finite().unwrap_or_else(|| "unknown".into())
                )));
            }
            client.params.zero_grad();
            tape.backward(loss, &mut client.params)?;
            if let Some(bad) = client
                .params
                .iter()
                .find(|p| p.tensor.grad().iter().any(|g| !g.is_finite()))
            {
                return Err(Error::Numeric(format!(
                    "client {} ({}), round {round}, batch {b}: non-finite gradient for {}",
                    client.id, client.name, bad.name
                )));
            }
            adamw_step(&mut client.params, &mut client.optimizer, &subset);

            totals.train_loss += value;
            totals.ce_loss += tape.scalar(ce);
            totals.pgpa_loss += pgpa_value;
            batches += 1;
        }
    }
    client.params.zero_grad();
    if let Some(mean) = previous {
        client.local_mean = mean;
    }

    let delta = if global_shared.is_empty() {
        BTreeMap::new()
    } else {
        let mut delta = BTreeMap::new();
        for (name, global) in global_shared {
            let local = &client.params.require(name)?.tensor;
            if local.shape() != global.shape() {
                return Err(Error::Protocol(format!("shared parameter {name:?} changed shape")));
            }
            let diff = local.values().iter().zip(global.values()).map(|(a, b)| a - b).collect();
            delta.insert(name.clone(), Tensor::new(local.shape().to_vec(), diff)?);
        }
        delta
    };

    let n = batches.max(1) as f64;
    Ok(LocalUpdate {
        client: client.id,
        delta,
        local_mean: client.local_mean.clone(),
        stats: TrainStats {
            train_loss: totals.train_loss / n,
            ce_loss: totals.ce_loss / n,
            pgpa_loss: totals.pgpa_loss / n,
        },
    })
}

/// Fraction of `indices` classified correctly.
pub fn evaluate_accuracy(client: &Client, indices: &[usize], use_preference: bool) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Data(format!("client {}: empty evaluation split", client.id)));
    }
    let mut correct = 0usize;
    for &i in indices {
        let g = &client.graphs[i];
        if client.model.predict(&client.params, g, use_preference)? == g.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}
