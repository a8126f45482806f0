//! Spectral statistics output: a pairwise divergence CSV and a histogram
//! JSON document for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::GraphDataset;
use crate::spectral::{
    bin_edges, dataset_divergence_matrix, graph_spectrum, DivergenceMatrix, DivergenceSource, SpectralStats,
};

pub const SOURCES: [DivergenceSource; 2] = [DivergenceSource::Eigenvalues, DivergenceSource::Connectivity];

pub fn dataset_stats(ds: &GraphDataset, bins: usize) -> Result<SpectralStats> {
    let decomps = ds.graphs.par_iter().map(graph_spectrum).collect::<Result<Vec<_>>>()?;
    SpectralStats::from_decompositions(&ds.name, &decomps, bins)
}

/// `dataset_a,dataset_b,source,jsd` over every ordered pair, sources in
/// [`SOURCES`] order.
pub fn divergence_csv(matrices: &[(DivergenceSource, DivergenceMatrix)]) -> String {
    let mut out = String::from("dataset_a,dataset_b,source,jsd\n");
    for (source, m) in matrices {
        for (i, a) in m.names.iter().enumerate() {
            for (j, b) in m.names.iter().enumerate() {
                let _ = writeln!(out, "{a},{b},{},{:.6}", source.as_str(), m.values[(i, j)]);
            }
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct HistogramDoc<'a> {
    bin_edges: Vec<f64>,
    datasets: Vec<DatasetHistograms<'a>>,
}

#[derive(Debug, Serialize)]
struct DatasetHistograms<'a> {
    name: &'a str,
    eigenvalues: Vec<f64>,
    connectivity: Vec<f64>,
}

pub fn histogram_json(stats: &[SpectralStats]) -> Result<String> {
    let bins = stats.first().map_or(0, |s| s.bins());
    let doc = HistogramDoc {
        bin_edges: bin_edges(bins),
        datasets: stats
            .iter()
            .map(|s| {
                Ok(DatasetHistograms {
                    name: &s.dataset,
                    eigenvalues: s.eigen_hist.clone(),
                    connectivity: s.connectivity_hist()?,
                })
            })
            .collect::<Result<_>>()?,
    };
    serde_json::to_string_pretty(&doc)
        .map(|s| s + "\n")
        .map_err(|e| Error::Data(e.to_string()))
}

/// Writes `spectral_jsd.csv` and `spectral_histograms.json` under `dir`.
pub fn write_spectral_stats(stats: &[SpectralStats], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let matrices = SOURCES
        .iter()
        .map(|&s| dataset_divergence_matrix(stats, s).map(|m| (s, m)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("spectral_jsd.csv");
    fs::write(&csv, divergence_csv(&matrices)).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join("spectral_histograms.json");
    fs::write(&json, histogram_json(stats)?).map_err(|e| Error::io(&json, e))?;
    Ok((csv, json))
}

/// Splits `ds` into its first and second half (by graph order).
pub fn halves(ds: &GraphDataset) -> (GraphDataset, GraphDataset) {
    let mid = ds.graphs.len() / 2;
    let part = |graphs: &[_], tag: &str| GraphDataset {
        name: format!("{}_{tag}", ds.name),
        graphs: graphs.to_vec(),
        ..ds.clone()
    };
    (part(&ds.graphs[..mid], "a"), part(&ds.graphs[mid..], "b"))
}
