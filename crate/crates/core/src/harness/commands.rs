//! The operations behind each CLI subcommand.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::autodiff::checkpoint::save_params;
use crate::autodiff::Partition;
use crate::error::{Error, Result};
use crate::federation::{prepare_clients, run_seed, Method, RoundMetrics, SeedRun};
use crate::graph::parse_tudataset;
use crate::harness::cache::{self, DatasetSummary};
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{build_report, manifest_file_name, metrics_file_name, metrics_jsonl, Report, RunManifest};
use crate::harness::stats::{dataset_stats, write_spectral_stats};
use crate::specnet::SpecNetConfig;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// Parses a TUDataset directory and stores a canonical copy in the cache.
pub fn cmd_ingest(dir: &Path, name: &str, cache_root: &Path) -> Result<DatasetSummary> {
    let ds = parse_tudataset(dir, name)?;
    cache::store_in(cache_root, &ds)
}

pub fn cmd_spectral_stats(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<(PathBuf, PathBuf)> {
    let datasets = cfg.load_datasets()?;
    let stats = datasets
        .iter()
        .map(|d| dataset_stats(d, cfg.bins))
        .collect::<Result<Vec<_>>>()?;
    write_spectral_stats(&stats, out_dir.unwrap_or(&cfg.output_dir))
}

#[derive(Debug, Serialize)]
struct CheckpointEntry<'a> {
    client: usize,
    name: &'a str,
    file: String,
    model: &'a SpecNetConfig,
    partitions: Vec<(String, Partition)>,
}

#[derive(Debug, Serialize)]
struct CheckpointManifest<'a> {
    setting: &'a str,
    method: Method,
    seed: u64,
    rounds: usize,
    clients: Vec<CheckpointEntry<'a>>,
}

fn write_checkpoints(dir: &Path, setting: &str, method: Method, run: &SeedRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for c in &run.federation.clients {
        let file = format!("client{}.params", c.id);
        save_params(&c.params, None, dir.join(&file))?;
        entries.push(CheckpointEntry {
            client: c.id,
            name: &c.name,
            file,
            model: &c.model.config,
            partitions: c.params.iter().map(|p| (p.name.clone(), p.partition)).collect(),
        });
    }
    let manifest = CheckpointManifest {
        setting,
        method,
        seed: run.seed,
        rounds: run.federation.server.round,
        clients: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub metrics_dir: PathBuf,
    pub metrics_files: Vec<PathBuf>,
    pub report_path: PathBuf,
    pub report: Report,
}

/// Runs every seed, streaming metrics to
/// `<output>/metrics/<setting>__<method>__seed<k>.jsonl`, then writes final
/// per-client checkpoints under `<output>/checkpoints/` and refreshes
/// `<output>/report.csv` from everything in the metrics directory.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    method: Method,
    seeds: &[u64],
    mut progress: impl FnMut(u64, &RoundMetrics),
) -> Result<TrainOutput> {
    let mut fed = cfg.federation.clone();
    fed.method = method;
    if !seeds.is_empty() {
        fed.seeds = seeds.to_vec();
    }
    fed.validate()?;
    let clients = prepare_clients(cfg.load_datasets()?, cfg.model.max_nodes)?;

    let metrics_dir = cfg.output_dir.join("metrics");
    fs::create_dir_all(&metrics_dir).map_err(|e| Error::io(&metrics_dir, e))?;
    let manifest = RunManifest {
        setting: cfg.setting.clone(),
        method,
        seeds: fed.seeds.clone(),
        rounds: fed.rounds,
        clients: clients.iter().map(|c| c.name.clone()).collect(),
    };
    write_json(&metrics_dir.join(manifest_file_name(&cfg.setting, method)), &manifest)?;

    let mut metrics_files = Vec::new();
    for &seed in &fed.seeds {
        let path = metrics_dir.join(metrics_file_name(&cfg.setting, method, seed));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let run = run_seed(&clients, &cfg.model, &fed, seed, |m| {
            progress(seed, m);
            out.write_all(metrics_jsonl(&m.rows).as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(&path, e))
        })?;
        drop(out);
        let ckpt = cfg
            .output_dir
            .join("checkpoints")
            .join(format!("{}__{method}__seed{seed}", cfg.setting));
        write_checkpoints(&ckpt, &cfg.setting, method, &run)?;
        metrics_files.push(path);
    }

    let report = build_report(&metrics_dir)?;
    let report_path = cfg.output_dir.join("report.csv");
    fs::write(&report_path, report.to_csv()).map_err(|e| Error::io(&report_path, e))?;
    Ok(TrainOutput {
        metrics_dir,
        metrics_files,
        report_path,
        report,
    })
}

pub fn cmd_report(metrics_dir: &Path) -> Result<Report> {
    build_report(metrics_dir)
}
