//! Experiment configuration files (TOML).
//!
//! ```toml
//! setting = "smoke"
//! output_dir = "runs/smoke"
//! seeds = [0, 1, 2]
//!
//! [model]
//! hidden = 32
//!
//! [federation]
//! rounds = 50
//! tau = 0.5
//!
//! [[clients]]
//! name = "MUTAG"
//! dir = "data/MUTAG"
//!
//! [[clients]]
//! name = "cycles_vs_stars"
//! synthetic = { families = ["cycles", "stars"], per_class = 25, min_nodes = 6, max_nodes = 16 }
//! ```
//!
//! Relative paths are resolved against the config file's directory. Every
//! omitted field takes its documented default; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::autodiff::AdamWConfig;
use crate::error::{Error, Result};
use crate::federation::{FedConfig, Method};
use crate::graph::{featurize, parse_tudataset, FeaturePolicy, GraphDataset};
use crate::harness::cache;
use crate::harness::synthetic::{generate_synthetic, Family, SyntheticSpec};
use crate::specnet::{Activation, SpecNetConfig};
use crate::spectral::DEFAULT_BINS;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    setting: String,
    output_dir: Option<PathBuf>,
    method: Option<Method>,
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    federation: RawFederation,
    #[serde(default)]
    spectral: RawSpectral,
    clients: Vec<RawClient>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    hidden: usize,
    heads: usize,
    conv_layers: usize,
    blocks: usize,
    encoding_base: f64,
    eigen_scale: f64,
    activation: Activation,
    filter_hidden: usize,
    max_nodes: usize,
}

impl Default for RawModel {
    fn default() -> Self {
        let m = SpecNetConfig::default();
        Self {
            hidden: m.hidden,
            heads: m.heads,
            conv_layers: m.conv_layers,
            blocks: m.blocks,
            encoding_base: m.encoding_base,
            eigen_scale: m.eigen_scale,
            activation: m.activation,
            filter_hidden: m.filter_hidden,
            max_nodes: m.max_nodes,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawFederation {
    rounds: usize,
    local_epochs: usize,
    batch_size: usize,
    tau: f64,
    mu: f64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    split: [f64; 3],
    pgpa: bool,
    freeze_preference: bool,
    skip_pgpa_first_round: bool,
    parallel: bool,
}

impl Default for RawFederation {
    fn default() -> Self {
        let f = FedConfig::default();
        let o = f.optimizer;
        Self {
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            tau: f.tau,
            mu: f.mu,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            split: [f.split.0, f.split.1, f.split.2],
            pgpa: f.pgpa,
            freeze_preference: f.freeze_preference,
            skip_pgpa_first_round: f.skip_pgpa_first_round,
            parallel: f.parallel,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSpectral {
    bins: usize,
}

impl Default for RawSpectral {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    families: Vec<Family>,
    per_class: usize,
    min_nodes: usize,
    max_nodes: usize,
    edge_prob: Option<f64>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClient {
    name: String,
    dir: Option<PathBuf>,
    cached: Option<String>,
    synthetic: Option<RawSynthetic>,
    features: Option<FeaturePolicy>,
}

/// Where a client's graphs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A TUDataset directory holding `<name>_A.txt` and friends.
    Directory(PathBuf),
    /// A dataset previously ingested into the cache.
    Cached(String),
    Synthetic {
        spec: SyntheticSpec,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub name: String,
    pub source: DataSource,
    /// `None` keeps the automatic choice made at ingestion.
    pub features: Option<FeaturePolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setting: String,
    pub output_dir: PathBuf,
    pub clients: Vec<ClientSpec>,
    /// `f_in` and `num_classes` are filled per client from its dataset.
    pub model: SpecNetConfig,
    pub federation: FedConfig,
    pub bins: usize,
}

fn suggest(unknown: &str, expected: &[&str]) -> Option<String> {
    expected
        .iter()
        .map(|e| (strsim::jaro_winkler(unknown, e), *e))
        .filter(|(s, _)| *s > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, e)| e.to_string())
}

/// Pulls the offending key and the expected list out of serde's
/// "unknown field `x`, expected one of `a`, `b`" message.
fn unknown_field_hint(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    let (field, rest) = rest.split_once('`')?;
    let expected: Vec<&str> = rest.split('`').skip(1).step_by(2).collect();
    suggest(field, &expected).map(|s| format!("unknown key `{field}`; did you mean `{s}`?"))
}

fn config_error(file: &str, text: &str, err: toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let message = err.message().trim().to_string();
    let message = unknown_field_hint(&message).unwrap_or(message);
    match line {
        Some(l) => Error::Config(format!("{file}:{l}: {message}")),
        None => Error::Config(format!("{file}: {message}")),
    }
}

fn range(key: &str, ok: bool, detail: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} {detail}")))
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// `file` only labels error messages; `base` anchors relative paths.
    pub fn parse(text: &str, file: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| config_error(file, text, e))?;
        let m = raw.model;
        let f = raw.federation;

        range(
            "model.hidden",
            m.hidden >= 2 && m.hidden.is_multiple_of(2),
            format!("must be even and >= 2, got {}", m.hidden),
        )?;
        range(
            "model.heads",
            m.heads >= 1 && m.hidden.is_multiple_of(m.heads),
            format!("must divide hidden ({}), got {}", m.hidden, m.heads),
        )?;
        range("model.conv_layers", m.conv_layers >= 1, "must be >= 1")?;
        range("model.blocks", m.blocks >= 1, "must be >= 1")?;
        range("model.filter_hidden", m.filter_hidden >= 1, "must be >= 1")?;
        range("model.max_nodes", m.max_nodes >= 1, "must be >= 1")?;
        range(
            "model.encoding_base",
            m.encoding_base > 0.0,
            format!("must be > 0, got {}", m.encoding_base),
        )?;
        range("model.eigen_scale", m.eigen_scale.is_finite(), "must be finite")?;
        range(
            "federation.rounds",
            f.rounds >= 1,
            format!("must be >= 1, got {}", f.rounds),
        )?;
        range("federation.local_epochs", f.local_epochs >= 1, "must be >= 1")?;
        range("federation.batch_size", f.batch_size >= 1, "must be >= 1")?;
        range(
            "federation.tau",
            f.tau >= 0.0 && f.tau.is_finite(),
            format!("must be >= 0, got {}", f.tau),
        )?;
        range(
            "federation.mu",
            f.mu > 0.0 && f.mu <= 1.0,
            format!("must lie in (0, 1], got {}", f.mu),
        )?;
        range(
            "federation.lr",
            f.lr >= 0.0 && f.lr.is_finite(),
            format!("must be >= 0, got {}", f.lr),
        )?;
        range(
            "federation.beta1",
            (0.0..1.0).contains(&f.beta1),
            format!("must lie in [0, 1), got {}", f.beta1),
        )?;
        range(
            "federation.beta2",
            (0.0..1.0).contains(&f.beta2),
            format!("must lie in [0, 1), got {}", f.beta2),
        )?;
        range("federation.eps", f.eps > 0.0, format!("must be > 0, got {}", f.eps))?;
        range(
            "federation.weight_decay",
            f.weight_decay >= 0.0,
            format!("must be >= 0, got {}", f.weight_decay),
        )?;
        let [a, b, c] = f.split;
        range(
            "federation.split",
            a > 0.0 && b > 0.0 && c > 0.0 && (a + b + c - 1.0).abs() < 1e-9,
            format!("must be three positive fractions summing to 1, got {:?}", f.split),
        )?;
        range("spectral.bins", raw.spectral.bins >= 1, "must be >= 1")?;
        if let Some(seeds) = &raw.seeds {
            range("seeds", !seeds.is_empty(), "must list at least one seed")?;
        }
        range("clients", !raw.clients.is_empty(), "must list at least one client")?;
        range(
            "setting",
            !raw.setting.trim().is_empty() && !raw.setting.contains("__"),
            "must be non-empty and must not contain `__`",
        )?;

        let mut clients = Vec::with_capacity(raw.clients.len());
        for (i, c) in raw.clients.into_iter().enumerate() {
            let key = format!("clients[{i}]");
            let source = match (c.dir, c.cached, c.synthetic) {
                (Some(dir), None, None) => {
                    let dir = base.join(dir);
                    if !dir.is_dir() {
                        return Err(Error::Config(format!(
                            "{key}.dir: dataset directory {} does not exist",
                            dir.display()
                        )));
                    }
                    DataSource::Directory(dir)
                }
                (None, Some(name), None) => DataSource::Cached(name),
                (None, None, Some(s)) => {
                    let mut spec = SyntheticSpec::new(&s.families, s.per_class, s.min_nodes, s.max_nodes);
                    if let Some(p) = s.edge_prob {
                        spec.edge_prob = p;
                    }
                    spec.validate()
                        .map_err(|e| Error::Config(format!("{key}.synthetic: {e}")))?;
                    DataSource::Synthetic { spec, seed: s.seed }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "{key} needs exactly one of `dir`, `cached` or `synthetic`"
                    )))
                }
            };
            if clients.iter().any(|x: &ClientSpec| x.name == c.name) {
                return Err(Error::Config(format!("{key}.name {:?} is used twice", c.name)));
            }
            clients.push(ClientSpec {
                name: c.name,
                source,
                features: c.features,
            });
        }

        let model = SpecNetConfig {
            hidden: m.hidden,
            heads: m.heads,
            conv_layers: m.conv_layers,
            blocks: m.blocks,
            encoding_base: m.encoding_base,
            eigen_scale: m.eigen_scale,
            activation: m.activation,
            filter_hidden: m.filter_hidden,
            max_nodes: m.max_nodes,
            ..SpecNetConfig::default()
        };
        let federation = FedConfig {
            method: raw.method.unwrap_or(Method::Fedssp),
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            tau: f.tau,
            mu: f.mu,
            optimizer: AdamWConfig {
                lr: f.lr,
                beta1: f.beta1,
                beta2: f.beta2,
                eps: f.eps,
                weight_decay: f.weight_decay,
            },
            seeds: raw.seeds.unwrap_or_else(|| FedConfig::default().seeds),
            split: (a, b, c),
            pgpa: f.pgpa,
            freeze_preference: f.freeze_preference,
            skip_pgpa_first_round: f.skip_pgpa_first_round,
            parallel: f.parallel,
        };
        federation.validate()?;
        Ok(Self {
            setting: raw.setting,
            output_dir: base.join(raw.output_dir.unwrap_or_else(|| PathBuf::from("output"))),
            clients,
            model,
            federation,
            bins: raw.spectral.bins,
        })
    }

    /// Loads every client's dataset in config order, applying any feature override.
    pub fn load_datasets(&self) -> Result<Vec<GraphDataset>> {
        self.clients.iter().map(load_client).collect()
    }
}

fn load_client(c: &ClientSpec) -> Result<GraphDataset> {
    let mut ds = match &c.source {
        DataSource::Directory(dir) => parse_tudataset(dir, &c.name)?,
        DataSource::Cached(name) => cache::load(name)?,
        DataSource::Synthetic { spec, seed } => generate_synthetic(spec, &c.name, *seed)?,
    };
    ds.name = c.name.clone();
    if let Some(policy) = c.features {
        ds = featurize(&ds, policy)?;
    }
    ds.validate()?;
    Ok(ds)
}
