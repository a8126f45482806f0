//! Structurally separable toy datasets: one graph family per class.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Cycle `C_n`.
    Cycles,
    /// Star `S_n`: one hub and `n - 1` leaves.
    Stars,
    /// Rectangular lattice with about `n` nodes.
    Grids,
    /// Erdős–Rényi `G(n, p)`.
    RandomEr,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cycles => "cycles",
            Family::Stars => "stars",
            Family::Grids => "grids",
            Family::RandomEr => "random_er",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Family::Cycles, Family::Stars, Family::Grids, Family::RandomEr]
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown graph family {s:?} (cycles, stars, grids, random_er)")))
    }
}

/// Class `i` is drawn from `families[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub families: Vec<Family>,
    pub per_class: usize,
    /// Inclusive node-count range.
    pub min_nodes: usize,
    pub max_nodes: usize,
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
}

fn default_edge_prob() -> f64 {
    0.3
}

impl SyntheticSpec {
    pub fn new(families: &[Family], per_class: usize, min_nodes: usize, max_nodes: usize) -> Self {
        Self {
            families: families.to_vec(),
            per_class,
            min_nodes,
            max_nodes,
            edge_prob: default_edge_prob(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.len() < 2 {
            return Err(Error::Config(
                "synthetic data needs at least 2 families (one per class)".into(),
            ));
        }
        if self.min_nodes < 3 || self.max_nodes < self.min_nodes {
            return Err(Error::Config(format!(
                "synthetic node range [{}, {}] must satisfy 3 <= min <= max",
                self.min_nodes, self.max_nodes
            )));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::Config(format!(
                "edge_prob must lie in [0, 1], got {}",
                self.edge_prob
            )));
        }
        Ok(())
    }

    /// `cycles_vs_stars` style label.
    pub fn default_name(&self) -> String {
        self.families
            .iter()
            .map(|f| f.as_str())
            .collect::<Vec<_>>()
            .join("_vs_")
    }
}

pub fn cycle_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

pub fn star_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (0, i)).collect()
}

pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                e.push((v, v + 1));
            }
            if r + 1 < rows {
                e.push((v, v + cols));
            }
        }
    }
    e
}

pub fn er_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                e.push((u, v));
            }
        }
    }
    e
}

/// Lattice shape whose size falls inside `[lo, hi]`, as square as possible.
fn grid_shape(n: usize, lo: usize, hi: usize) -> (usize, usize) {
    let rows = ((n as f64).sqrt().floor() as usize).max(2);
    let mut cols = ((n as f64 / rows as f64).round() as usize).max(2);
    while rows * cols > hi && cols > 2 {
        cols -= 1;
    }
    while rows * cols < lo {
        cols += 1;
    }
    (rows, cols)
}

fn sample(family: Family, n: usize, spec: &SyntheticSpec, rng: &mut impl Rng) -> (usize, Vec<(usize, usize)>) {
    match family {
        Family::Cycles => (n, cycle_edges(n)),
        Family::Stars => (n, star_edges(n)),
        Family::Grids => {
            let (r, c) = grid_shape(n, spec.min_nodes, spec.max_nodes);
            (r * c, grid_edges(r, c))
        }
        Family::RandomEr => (n, er_edges(n, spec.edge_prob, rng)),
    }
}

/// Deterministic under `seed`. Graphs are interleaved by class and carry a
/// single constant feature.
pub fn generate_synthetic(spec: &SyntheticSpec, name: &str, seed: u64) -> Result<GraphDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.families.len();
    let mut graphs = Vec::with_capacity(k * spec.per_class);
    for i in 0..spec.per_class {
        for (label, &family) in spec.families.iter().enumerate() {
            let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
            let (n, edges) = sample(family, n, spec, &mut rng);
            graphs.push(Graph::from_edges(i * k + label, n, &edges, label)?);
        }
    }
    Ok(GraphDataset {
        name: name.to_string(),
        domain: "synthetic".into(),
        graphs,
        num_classes: k,
        f_in: 1,
        label_values: (0..k as i64).collect(),
    })
}
