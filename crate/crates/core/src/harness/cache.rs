//! Local store of ingested datasets.
//!
//! The location comes from `FEDSSP_CACHE_DIR`, falling back to
//! `.fedssp-cache` in the working directory. Each dataset lives in its own
//! subdirectory in canonical TUDataset layout next to a `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{parse_tudataset, write_tudataset, FeaturePolicy, GraphDataset, DEFAULT_DEGREE_CAP};

pub const CACHE_ENV: &str = "FEDSSP_CACHE_DIR";

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".fedssp-cache"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub graphs: usize,
    pub classes: usize,
    pub class_counts: Vec<usize>,
    pub label_values: Vec<i64>,
    pub feature_dim: usize,
    pub features: FeaturePolicy,
    pub max_nodes: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
}

impl DatasetSummary {
    pub fn of(ds: &GraphDataset) -> Self {
        let n = ds.graphs.len().max(1) as f64;
        Self {
            name: ds.name.clone(),
            graphs: ds.graphs.len(),
            classes: ds.num_classes,
            class_counts: ds.class_counts(),
            label_values: ds.label_values.clone(),
            feature_dim: ds.f_in,
            features: FeaturePolicy::auto(ds, DEFAULT_DEGREE_CAP),
            max_nodes: ds.max_nodes(),
            mean_nodes: ds.graphs.iter().map(|g| g.n as f64).sum::<f64>() / n,
            mean_edges: ds.graphs.iter().map(|g| g.edges.len() as f64).sum::<f64>() / n,
        }
    }
}

/// Copies `ds` into `root/<name>/` and returns the summary written beside it.
pub fn store_in(root: &Path, ds: &GraphDataset) -> Result<DatasetSummary> {
    let dir = root.join(&ds.name);
    write_tudataset(ds, &dir)?;
    let summary = DatasetSummary::of(ds);
    let path = dir.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

pub fn load_from(root: &Path, name: &str) -> Result<GraphDataset> {
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "dataset {name:?} is not in the cache at {} (run `fedssp ingest` first)",
            root.display()
        )));
    }
    parse_tudataset(&dir, name)
}

pub fn load(name: &str) -> Result<GraphDataset> {
    load_from(&cache_dir(), name)
}
