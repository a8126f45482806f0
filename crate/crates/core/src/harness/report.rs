//! Metrics files and the aggregated report.
//!
//! Metrics for one run live in `<setting>__<method>__seed<k>.jsonl`, one
//! JSON object per client per round. `<setting>__<method>.run.json` records
//! what was requested, so a report can tell a finished group from one with
//! missing seeds or truncated files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{summarize, Method, MetricsRow, Summary};

pub const REPORT_HEADER: &str = "method,setting,seed,client,best_val_acc,test_at_best_val,final_test_acc";

pub fn metrics_file_name(setting: &str, method: Method, seed: u64) -> String {
    format!("{setting}__{method}__seed{seed}.jsonl")
}

pub fn manifest_file_name(setting: &str, method: Method) -> String {
    format!("{setting}__{method}.run.json")
}

/// Inverse of [`metrics_file_name`].
pub fn parse_metrics_file_name(name: &str) -> Option<(String, Method, u64)> {
    let stem = name.strip_suffix(".jsonl")?;
    let mut parts = stem.split("__");
    let (setting, method, seed) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || setting.is_empty() {
        return None;
    }
    let seed = seed.strip_prefix("seed")?.parse().ok()?;
    Some((setting.to_string(), method.parse().ok()?, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub setting: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub clients: Vec<String>,
}

pub fn metrics_jsonl(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    for r in rows {
        // Plain structs of numbers always serialize.
        out.push_str(&serde_json::to_string(r).expect("metrics row serializes"));
        out.push('\n');
    }
    out
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Per-client outcome of one metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub method: Method,
    pub setting: String,
    pub seed: u64,
    pub client: usize,
    pub best_val_acc: f64,
    pub test_at_best_val: f64,
    pub final_test_acc: f64,
    pub last_round: usize,
}

/// Best validation round (earliest on ties) and last-round test accuracy per client.
pub fn client_records(setting: &str, method: Method, seed: u64, rows: &[MetricsRow]) -> Vec<ClientRecord> {
    let mut by_client: BTreeMap<usize, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_client.entry(r.client).or_default().push(r);
    }
    by_client
        .into_iter()
        .map(|(client, mut rs)| {
            rs.sort_by_key(|r| r.round);
            let mut best = rs[0];
            for r in &rs[1..] {
                if r.val_acc > best.val_acc {
                    best = r;
                }
            }
            let last = rs[rs.len() - 1];
            ClientRecord {
                method,
                setting: setting.to_string(),
                seed,
                client,
                best_val_acc: best.val_acc,
                test_at_best_val: best.test_acc,
                final_test_acc: last.test_acc,
                last_round: last.round,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub method: Method,
    pub setting: String,
    pub seeds: Vec<u64>,
    pub best_val_acc: Summary,
    pub test_at_best_val: Summary,
    pub final_test_acc: Summary,
    /// Why the group is incomplete, if it is.
    pub incomplete: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<ClientRecord>,
    pub groups: Vec<GroupSummary>,
}

fn incompleteness(records: &[&ClientRecord], seeds: &[u64], manifest: Option<&RunManifest>) -> Option<String> {
    if let Some(m) = manifest {
        let missing: Vec<String> = m
            .seeds
            .iter()
            .filter(|s| !seeds.contains(s))
            .map(u64::to_string)
            .collect();
        if !missing.is_empty() {
            return Some(format!("missing seeds {}", missing.join(" ")));
        }
        if records.iter().any(|r| r.last_round < m.rounds) {
            return Some(format!("fewer than {} rounds", m.rounds));
        }
        if seeds
            .iter()
            .any(|s| records.iter().filter(|r| r.seed == *s).count() != m.clients.len())
        {
            return Some("missing clients".into());
        }
        return None;
    }
    let per_seed: BTreeSet<(usize, usize)> = seeds
        .iter()
        .map(|s| {
            let rs: Vec<_> = records.iter().filter(|r| r.seed == *s).collect();
            (rs.len(), rs.iter().map(|r| r.last_round).max().unwrap_or(0))
        })
        .collect();
    (per_seed.len() > 1).then(|| "seed files differ in clients or rounds".into())
}

/// Reads every metrics file in `dir`.
pub fn build_report(dir: &Path) -> Result<Report> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut manifests = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(key) = parse_metrics_file_name(&name) {
            files.push((key, entry.path()));
        } else if name.ends_with(".run.json") {
            let path = entry.path();
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            manifests.insert((m.setting.clone(), m.method), m);
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!("no metrics files (*.jsonl) in {}", dir.display())));
    }
    files.sort();

    let mut records = Vec::new();
    for ((setting, method, seed), path) in &files {
        let rows = read_metrics(path)?;
        if rows.is_empty() {
            return Err(Error::Data(format!("{} holds no metrics", path.display())));
        }
        records.extend(client_records(setting, *method, *seed, &rows));
    }
    records.sort_by(|a, b| (a.method, &a.setting, a.seed, a.client).cmp(&(b.method, &b.setting, b.seed, b.client)));

    let keys: BTreeSet<(Method, String)> = records.iter().map(|r| (r.method, r.setting.clone())).collect();
    let mut groups = Vec::new();
    for (method, setting) in keys {
        let rs: Vec<&ClientRecord> = records
            .iter()
            .filter(|r| r.method == method && r.setting == setting)
            .collect();
        let seeds: Vec<u64> = rs.iter().map(|r| r.seed).collect::<BTreeSet<_>>().into_iter().collect();
        let seed_mean = |pick: fn(&ClientRecord) -> f64| -> Vec<f64> {
            seeds
                .iter()
                .map(|s| {
                    let v: Vec<f64> = rs.iter().filter(|r| r.seed == *s).map(|r| pick(r)).collect();
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect()
        };
        let incomplete = incompleteness(&rs, &seeds, manifests.get(&(setting.clone(), method)));
        groups.push(GroupSummary {
            best_val_acc: summarize(&seed_mean(|r| r.best_val_acc)),
            test_at_best_val: summarize(&seed_mean(|r| r.test_at_best_val)),
            final_test_acc: summarize(&seed_mean(|r| r.final_test_acc)),
            method,
            setting,
            seeds,
            incomplete,
        });
    }
    Ok(Report { records, groups })
}

impl Report {
    /// Per-client rows, then one aggregated row per method and setting.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("# aggregated rows: mean ± population std over seeds of the per-seed cross-client mean\n");
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{:.4}",
                r.method, r.setting, r.seed, r.client, r.best_val_acc, r.test_at_best_val, r.final_test_acc
            );
        }
        for g in &self.groups {
            let seed = match &g.incomplete {
                Some(why) => format!("incomplete ({why})"),
                None => format!("all ({})", g.seeds.len()),
            };
            let _ = writeln!(
                out,
                "{},{},{seed},mean,{},{},{}",
                g.method, g.setting, g.best_val_acc, g.test_at_best_val, g.final_test_acc
            );
        }
        out
    }
}
