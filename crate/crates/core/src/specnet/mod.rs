//! Spectral graph network with attention-filtered eigenvalues.
//!
//! Per graph: sinusoidal eigenvalue encoding, a learnable eigenvalue
//! projection, transformer blocks over the eigenvalue tokens, per-head
//! decoding into new eigenvalues, basis reconstruction `U diag(λ_m) Uᵀ`, a
//! per-entry filter encoder over the stacked bases, residual per-channel
//! graph convolutions, mean pooling, the preference offset and a linear
//! classification head.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamRegistry, Partition, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::matrix::Matrix;
use crate::spectral::{graph_spectrum, SpectralDecomposition};

#[cfg(test)]
mod tests;

pub const EIGEN_WEIGHT: &str = "eigen_encoder.weight";
pub const EIGEN_BIAS: &str = "eigen_encoder.bias";
pub const FILTER_W1: &str = "filter_encoder.w1";
pub const FILTER_B1: &str = "filter_encoder.b1";
pub const FILTER_W2: &str = "filter_encoder.w2";
pub const FILTER_B2: &str = "filter_encoder.b2";
pub const DECODER_WEIGHT: &str = "decoder.weight";
pub const DECODER_BIAS: &str = "decoder.bias";
pub const EMBED_WEIGHT: &str = "embed.weight";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";
pub const PREFERENCE: &str = "preference";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => Ok(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecNetConfig {
    pub hidden: usize,
    pub heads: usize,
    pub conv_layers: usize,
    pub blocks: usize,
    pub encoding_base: f64,
    pub eigen_scale: f64,
    pub activation: Activation,
    pub filter_hidden: usize,
    pub max_nodes: usize,
    pub f_in: usize,
    pub num_classes: usize,
}

impl Default for SpecNetConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            heads: 4,
            conv_layers: 2,
            blocks: 1,
            encoding_base: 10000.0,
            eigen_scale: 10000.0,
            activation: Activation::Relu,
            filter_hidden: 32,
            max_nodes: 400,
            f_in: 1,
            num_classes: 2,
        }
    }
}

impl SpecNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return bad(format!("hidden must be even and at least 2, got {}", self.hidden));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.conv_layers == 0 || self.blocks == 0 || self.filter_hidden == 0 {
            return bad("conv_layers, blocks and filter_hidden must be at least 1".into());
        }
        if self.f_in == 0 || self.num_classes < 2 {
            return bad(format!(
                "need f_in >= 1 and num_classes >= 2, got {} and {}",
                self.f_in, self.num_classes
            ));
        }
        if !(self.encoding_base > 0.0 && self.eigen_scale.is_finite()) {
            return bad("encoding_base must be positive and eigen_scale finite".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn for_dataset(&self, dataset: &GraphDataset) -> Self {
        Self {
            f_in: dataset.f_in,
            num_classes: dataset.num_classes,
            ..self.clone()
        }
    }
}

fn attn_name(block: usize, part: &str) -> String {
    format!("attention.{block}.{part}")
}

fn head_name(block: usize, kind: &str, head: usize) -> String {
    format!("attention.{block}.{kind}.{head}")
}

fn conv_name(layer: usize) -> String {
    format!("conv.{layer}.weight")
}

/// Names and shapes of every parameter, in registration order.
pub fn parameter_layout(cfg: &SpecNetConfig) -> Vec<(String, Partition, Vec<usize>)> {
    let (d, m, dh, df) = (cfg.hidden, cfg.heads, cfg.head_dim(), cfg.filter_hidden);
    let mut out = vec![
        (EIGEN_WEIGHT.to_string(), Partition::Shared, vec![d + 1, d]),
        (EIGEN_BIAS.to_string(), Partition::Shared, vec![1, d]),
        (FILTER_W1.to_string(), Partition::Shared, vec![m + 1, df]),
        (FILTER_B1.to_string(), Partition::Shared, vec![1, df]),
        (FILTER_W2.to_string(), Partition::Shared, vec![df, d]),
        (FILTER_B2.to_string(), Partition::Shared, vec![1, d]),
    ];
    for t in 0..cfg.blocks {
        for kind in ["query", "key", "value"] {
            for h in 0..m {
                out.push((head_name(t, kind, h), Partition::Local, vec![d, dh]));
            }
        }
        out.push((attn_name(t, "out.weight"), Partition::Local, vec![d, d]));
        out.push((attn_name(t, "out.bias"), Partition::Local, vec![1, d]));
        out.push((attn_name(t, "norm.gain"), Partition::Local, vec![1, d]));
        out.push((attn_name(t, "norm.bias"), Partition::Local, vec![1, d]));
    }
    out.push((DECODER_WEIGHT.to_string(), Partition::Local, vec![dh, 1]));
    out.push((DECODER_BIAS.to_string(), Partition::Local, vec![1, 1]));
    out.push((EMBED_WEIGHT.to_string(), Partition::Local, vec![cfg.f_in, d]));
    for k in 0..cfg.conv_layers {
        out.push((conv_name(k), Partition::Local, vec![d, d]));
    }
    out.push((HEAD_WEIGHT.to_string(), Partition::Local, vec![d, cfg.num_classes]));
    out.push((HEAD_BIAS.to_string(), Partition::Local, vec![1, cfg.num_classes]));
    out.push((PREFERENCE.to_string(), Partition::Local, vec![1, d]));
    out
}

/// Glorot-uniform weights, zero biases and preference, unit norm gains.
pub fn init_params<R: Rng>(cfg: &SpecNetConfig, rng: &mut R) -> Result<ParamRegistry> {
    cfg.validate()?;
    let mut registry = ParamRegistry::new();
    for (name, partition, shape) in parameter_layout(cfg) {
        let len: usize = shape.iter().product();
        let values = if name.ends_with("norm.gain") {
            vec![1.0; len]
        } else if shape[0] == 1 {
            vec![0.0; len]
        } else {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..len).map(|_| rng.random_range(-limit..limit)).collect()
        };
        registry.insert(name, partition, Tensor::new(shape, values)?)?;
    }
    Ok(registry)
}

/// A graph with its cached spectrum, ready for the network.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub features: Matrix,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Arc<Matrix>,
    pub label: usize,
}

impl PreparedGraph {
    pub fn new(graph: &Graph, decomp: &SpectralDecomposition) -> Self {
        Self {
            features: graph.features.clone(),
            eigenvalues: decomp.eigenvalues.clone(),
            eigenvectors: Arc::new(decomp.eigenvectors.clone()),
            label: graph.label,
        }
    }

    pub fn from_graph(graph: &Graph) -> Result<Self> {
        Ok(Self::new(graph, &graph_spectrum(graph)?))
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Decomposes every graph; graphs above `max_nodes` are rejected.
pub fn prepare_dataset(dataset: &GraphDataset, max_nodes: usize) -> Result<Vec<PreparedGraph>> {
    dataset
        .graphs
        .iter()
        .map(|g| {
            if g.n > max_nodes {
                return Err(Error::Data(format!(
                    "dataset {}: graph {} has {} nodes, above the limit of {max_nodes}",
                    dataset.name, g.id, g.n
                )));
            }
            PreparedGraph::from_graph(g)
        })
        .collect()
}

/// Raw eigenvalue in column 0, then `d` sinusoidal columns: even `q` gives
/// `sin(β λ / c^{q/d})`, odd `q` gives `cos(β λ / c^{(q-1)/d})`.
pub fn encode_eigenvalues(eigenvalues: &[f64], cfg: &SpecNetConfig) -> Matrix {
    let d = cfg.hidden;
    let mut out = Matrix::zeros(eigenvalues.len(), d + 1);
    for (i, &lam) in eigenvalues.iter().enumerate() {
        out[(i, 0)] = lam;
        for q in 0..d {
            let exponent = (q - q % 2) as f64 / d as f64;
            let arg = cfg.eigen_scale * lam / cfg.encoding_base.powf(exponent);
            out[(i, q + 1)] = if q % 2 == 0 { arg.sin() } else { arg.cos() };
        }
    }
    out
}

/// Parameters recorded on one tape, reusable for every graph of a batch.
#[derive(Debug, Clone)]
pub struct BoundParams {
    eigen_weight: Var,
    eigen_bias: Var,
    filter: [Var; 4],
    blocks: Vec<BlockVars>,
    decoder: (Var, Var),
    embed: Var,
    conv: Vec<Var>,
    head: (Var, Var),
    preference: Var,
}

#[derive(Debug, Clone)]
struct BlockVars {
    query: Vec<Var>,
    key: Vec<Var>,
    value: Vec<Var>,
    out_weight: Var,
    out_bias: Var,
    norm_gain: Var,
    norm_bias: Var,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardRecord {
    /// Pooled feature before the preference offset, `1 x d`.
    pub pooled: Var,
    /// `pooled + preference` (or `pooled` itself without the offset).
    pub adjusted: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct SpecNet {
    pub config: SpecNetConfig,
}

impl SpecNet {
    pub fn new(config: SpecNetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn bind(&self, tape: &mut Tape, registry: &ParamRegistry) -> Result<BoundParams> {
        let cfg = &self.config;
        let mut p = |name: &str| tape.param(registry, name);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for t in 0..cfg.blocks {
            let heads = |p: &mut dyn FnMut(&str) -> Result<Var>, kind: &str| {
                (0..cfg.heads)
                    .map(|h| p(&head_name(t, kind, h)))
                    .collect::<Result<Vec<_>>>()
            };
            blocks.push(BlockVars {
                query: heads(&mut p, "query")?,
                key: heads(&mut p, "key")?,
                value: heads(&mut p, "value")?,
                out_weight: p(&attn_name(t, "out.weight"))?,
                out_bias: p(&attn_name(t, "out.bias"))?,
                norm_gain: p(&attn_name(t, "norm.gain"))?,
                norm_bias: p(&attn_name(t, "norm.bias"))?,
            });
        }
        Ok(BoundParams {
            eigen_weight: p(EIGEN_WEIGHT)?,
            eigen_bias: p(EIGEN_BIAS)?,
            filter: [p(FILTER_W1)?, p(FILTER_B1)?, p(FILTER_W2)?, p(FILTER_B2)?],
            blocks,
            decoder: (p(DECODER_WEIGHT)?, p(DECODER_BIAS)?),
            embed: p(EMBED_WEIGHT)?,
            conv: (0..cfg.conv_layers).map(|k| p(&conv_name(k))).collect::<Result<_>>()?,
            head: (p(HEAD_WEIGHT)?, p(HEAD_BIAS)?),
            preference: p(PREFERENCE)?,
        })
    }

    /// Affine map of the encoded eigenvalues, `n x (d+1)` to `n x d`.
    pub fn project_eigen(&self, tape: &mut Tape, params: &BoundParams, encoded: Var) -> Result<Var> {
        let z = tape.matmul(encoded, params.eigen_weight)?;
        tape.add_row(z, params.eigen_bias)
    }

    /// Multi-head self-attention of one block, before the output projection.
    fn attention_heads(&self, tape: &mut Tape, block: &BlockVars, z: Var) -> Result<Vec<Var>> {
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let q = tape.matmul(z, block.query[h])?;
            let k = tape.matmul(z, block.key[h])?;
            let v = tape.matmul(z, block.value[h])?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(weights, v)?);
        }
        Ok(heads)
    }

    /// Transformer blocks over eigenvalue tokens, then the shared-across-heads
    /// decoder on each head's slice. Returns `M` columns of shape `n x 1`.
    pub fn attention_filter(&self, tape: &mut Tape, params: &BoundParams, z: Var) -> Result<Vec<Var>> {
        let mut z = z;
        for block in &params.blocks {
            let heads = self.attention_heads(tape, block, z)?;
            let mut merged = heads[0];
            for &h in &heads[1..] {
                merged = tape.concat_cols(merged, h)?;
            }
            let out = tape.matmul(merged, block.out_weight)?;
            let out = tape.add_row(out, block.out_bias)?;
            let res = tape.add(z, out)?;
            z = tape.layer_norm_rows(res, block.norm_gain, block.norm_bias)?;
        }
        let dh = self.config.head_dim();
        (0..self.config.heads)
            .map(|m| {
                let slice = tape.slice_cols(z, m * dh, dh)?;
                let lam = tape.matmul(slice, params.decoder.0)?;
                let lam = tape.add_row(lam, params.decoder.1)?;
                tape.tanh(lam)
            })
            .collect()
    }

    /// Identity channel followed by `U diag(λ_m) Uᵀ` per filtered spectrum:
    /// an `n x n x (M+1)` stack.
    pub fn build_bases(&self, tape: &mut Tape, eigenvectors: &Arc<Matrix>, filtered: &[Var]) -> Result<Var> {
        let eye = tape.constant_matrix(&Matrix::identity(eigenvectors.rows()));
        let mut channels = vec![eye];
        for &lam in filtered {
            channels.push(tape.spectral_basis(Arc::clone(eigenvectors), lam)?);
        }
        tape.stack_channels(&channels)
    }

    /// Two-layer map applied to the channel vector of every `(i, j)` entry.
    pub fn filter_encode(&self, tape: &mut Tape, params: &BoundParams, bases: Var) -> Result<Var> {
        let shape = tape.shape(bases).to_vec();
        let [n, n2, c] = shape[..] else {
            return Err(Error::Shape(format!("basis stack must be rank 3, got {shape:?}")));
        };
        let [w1, b1, w2, b2] = params.filter;
        let flat = tape.reshape(bases, vec![n * n2, c])?;
        let hid = tape.matmul(flat, w1)?;
        let hid = tape.add_row(hid, b1)?;
        let hid = self.config.activation.apply(tape, hid)?;
        let out = tape.matmul(hid, w2)?;
        let out = tape.add_row(out, b2)?;
        tape.reshape(out, vec![n, n2, self.config.hidden])
    }

    /// One residual layer: `σ((B̂ ⊙_channel X) W) + X`.
    pub fn graph_conv(&self, tape: &mut Tape, x: Var, filters: Var, weight: Var) -> Result<Var> {
        let y = tape.channel_filter(filters, x)?;
        let mixed = tape.matmul(y, weight)?;
        let act = self.config.activation.apply(tape, mixed)?;
        tape.add(act, x)
    }

    /// Node representations after the convolution stack, `n x d`.
    pub fn node_features(&self, tape: &mut Tape, params: &BoundParams, graph: &PreparedGraph) -> Result<Var> {
        let features = tape.constant_matrix(&graph.features);
        let mut x = tape.matmul(features, params.embed)?;

        let encoded = encode_eigenvalues(&graph.eigenvalues, &self.config);
        let encoded = tape.constant_matrix(&encoded);
        let z = self.project_eigen(tape, params, encoded)?;
        let filtered = self.attention_filter(tape, params, z)?;
        let bases = self.build_bases(tape, &graph.eigenvectors, &filtered)?;
        let filters = self.filter_encode(tape, params, bases)?;

        for &w in &params.conv {
            x = self.graph_conv(tape, x, filters, w)?;
        }
        Ok(x)
    }

    /// Full pass for one graph. With `use_preference` false the offset is
    /// skipped entirely and `adjusted == pooled`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        graph: &PreparedGraph,
        use_preference: bool,
    ) -> Result<ForwardRecord> {
        if graph.features.cols() != self.config.f_in {
            return Err(Error::Shape(format!(
                "graph has {} feature columns, model expects {}",
                graph.features.cols(),
                self.config.f_in
            )));
        }
        let x = self.node_features(tape, params, graph)?;
        let pooled = tape.mean_rows(x)?;
        let adjusted = if use_preference {
            tape.add(pooled, params.preference)?
        } else {
            pooled
        };
        let logits = tape.matmul(adjusted, params.head.0)?;
        let logits = tape.add_row(logits, params.head.1)?;
        Ok(ForwardRecord {
            pooled,
            adjusted,
            logits,
        })
    }

    /// Arg-max class of one graph.
    pub fn predict(&self, registry: &ParamRegistry, graph: &PreparedGraph, use_preference: bool) -> Result<usize> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, registry)?;
        let rec = self.forward(&mut tape, &params, graph, use_preference)?;
        let logits = tape.value(rec.logits);
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite logits: {}",
                tape.first_non_finite().unwrap_or_default()
            )));
        }
        Ok(logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &v)| if v > best.1 { (i, v) } else { best },
            )
            .0)
    }
}
