//! Graph classification datasets: TUDataset ingestion, node featurization,
//! train/val/test splitting and normalized Laplacians.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default one-hot cap for degree features.
pub const DEFAULT_DEGREE_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub id: usize,
    pub n: usize,
    /// Unordered pairs stored as `(u, v)` with `u < v`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    pub label: usize,
    /// Raw integer node labels, when the source provided them.
    pub node_labels: Option<Vec<i64>>,
    /// Raw continuous node attributes, when the source provided them.
    pub node_attributes: Option<Matrix>,
}

impl Graph {
    /// Builds a graph from arbitrary pairs, dropping self-loops and duplicates.
    pub fn from_edges(id: usize, n: usize, pairs: &[(usize, usize)], label: usize) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::Data(format!(
                    "graph {id}: edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Ok(Self {
            id,
            n,
            edges: set.into_iter().collect(),
            features: Matrix::from_vec(n, 1, vec![1.0; n]),
            label,
            node_labels: None,
            node_attributes: None,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        a
    }

    pub fn num_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut count = self.n;
        for &(u, v) in &self.edges {
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru] = rv;
                count -= 1;
            }
        }
        count
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.n);
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut g = Graph::from_edges(self.id, self.n, &edges, self.label).expect("valid permutation");
        let mut features = Matrix::zeros(self.n, self.features.cols());
        for v in 0..self.n {
            for c in 0..self.features.cols() {
                features[(perm[v], c)] = self.features[(v, c)];
            }
        }
        g.features = features;
        g
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &(u, v) in &self.edges {
            if u >= self.n || v >= self.n {
                return Err(Error::Data(format!("graph {}: endpoint out of range", self.id)));
            }
            if u == v {
                return Err(Error::Data(format!("graph {}: self-loop at {u}", self.id)));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Data(format!("graph {}: duplicate edge ({u}, {v})", self.id)));
            }
        }
        if self.features.rows() != self.n {
            return Err(Error::Data(format!(
                "graph {}: {} feature rows for {} nodes",
                self.id,
                self.features.rows(),
                self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub domain: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub f_in: usize,
    /// Original graph label of each dense class index, ascending.
    pub label_values: Vec<i64>,
}

impl GraphDataset {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Data(format!(
                "dataset {}: needs at least 2 classes, found {}",
                self.name, self.num_classes
            )));
        }
        for g in &self.graphs {
            g.validate()?;
            if g.features.cols() != self.f_in {
                return Err(Error::Data(format!(
                    "dataset {}: graph {} has {} feature columns, expected {}",
                    self.name,
                    g.id,
                    g.features.cols(),
                    self.f_in
                )));
            }
            if g.label >= self.num_classes {
                return Err(Error::Data(format!(
                    "dataset {}: graph {} label {} out of range",
                    self.name, g.id, g.label
                )));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(|g| g.n).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeaturePolicy {
    Attributes,
    NodeLabelsOnehot,
    DegreeOnehot { cap: usize },
    ConstantOne,
}

impl FeaturePolicy {
    /// Attributes when present, else node labels, else capped degree one-hot.
    pub fn auto(dataset: &GraphDataset, degree_cap: usize) -> Self {
        let all = |f: fn(&Graph) -> bool| !dataset.graphs.is_empty() && dataset.graphs.iter().all(f);
        if all(|g| g.node_attributes.is_some()) {
            FeaturePolicy::Attributes
        } else if all(|g| g.node_labels.is_some()) {
            FeaturePolicy::NodeLabelsOnehot
        } else {
            FeaturePolicy::DegreeOnehot { cap: degree_cap }
        }
    }
}

/// Recomputes every graph's feature matrix under `policy`.
pub fn featurize(dataset: &GraphDataset, policy: FeaturePolicy) -> Result<GraphDataset> {
    let mut out = dataset.clone();
    let f_in = match policy {
        FeaturePolicy::Attributes => {
            let mut width = None;
            for g in &mut out.graphs {
                let attrs = g
                    .node_attributes
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("dataset {}: node attributes not available", dataset.name)))?;
                if *width.get_or_insert(attrs.cols()) != attrs.cols() {
                    return Err(Error::Data(format!(
                        "dataset {}: attribute width differs across graphs",
                        dataset.name
                    )));
                }
                g.features = attrs.clone();
            }
            width.unwrap_or(0)
        }
        FeaturePolicy::NodeLabelsOnehot => {
            let mut max_label = 0i64;
            for g in &out.graphs {
                let labels = g
                    .node_labels
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("dataset {}: node labels not available", dataset.name)))?;
                for &l in labels {
                    if l < 0 {
                        return Err(Error::Data(format!(
                            "dataset {}: negative node label {l} cannot be one-hot encoded",
                            dataset.name
                        )));
                    }
                    max_label = max_label.max(l);
                }
            }
            let width = max_label as usize + 1;
            for g in &mut out.graphs {
                let labels = g.node_labels.as_ref().expect("checked above");
                let mut f = Matrix::zeros(g.n, width);
                for (v, &l) in labels.iter().enumerate() {
                    f[(v, l as usize)] = 1.0;
                }
                g.features = f;
            }
            width
        }
        FeaturePolicy::DegreeOnehot { cap } => {
            for g in &mut out.graphs {
                let mut f = Matrix::zeros(g.n, cap + 1);
                for (v, d) in g.degrees().into_iter().enumerate() {
                    f[(v, d.min(cap))] = 1.0;
                }
                g.features = f;
            }
            cap + 1
        }
        FeaturePolicy::ConstantOne => {
            for g in &mut out.graphs {
                g.features = Matrix::from_vec(g.n, 1, vec![1.0; g.n]);
            }
            1
        }
    };
    out.f_in = f_in;
    Ok(out)
}

fn read_lines(dir: &Path, file: &str) -> Result<Vec<String>> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines: Vec<String> = text.split('\n').map(|l| l.trim_end_matches('\r').to_string()).collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if let Some(i) = lines.iter().position(|l| l.trim().is_empty()) {
        return Err(Error::parse(file, i + 1, "empty line"));
    }
    Ok(lines)
}

fn parse_int(file: &str, line: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| Error::parse(file, line, format!("expected an integer, found {:?}", s.trim())))
}

/// Reads `<name>_*.txt` files from `directory`.
///
/// Node features are populated with [`FeaturePolicy::auto`]; call
/// [`featurize`] to pick a different policy.
pub fn parse_tudataset(directory: impl AsRef<Path>, name: &str) -> Result<GraphDataset> {
    let dir = directory.as_ref();
    let a_file = format!("{name}_A.txt");
    let ind_file = format!("{name}_graph_indicator.txt");
    let gl_file = format!("{name}_graph_labels.txt");
    let nl_file = format!("{name}_node_labels.txt");
    let na_file = format!("{name}_node_attributes.txt");

    let indicator: Vec<usize> = read_lines(dir, &ind_file)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let g = parse_int(&ind_file, i + 1, l)?;
            if g < 1 {
                return Err(Error::parse(&ind_file, i + 1, format!("graph id {g} must be >= 1")));
            }
            Ok(g as usize - 1)
        })
        .collect::<Result<_>>()?;
    let num_graphs = indicator.iter().copied().max().map_or(0, |m| m + 1);

    let graph_label_lines = read_lines(dir, &gl_file)?;
    if graph_label_lines.len() < num_graphs {
        return Err(Error::parse(
            &gl_file,
            graph_label_lines.len(),
            format!(
                "indicator references graph {num_graphs} but labels file has {} lines",
                graph_label_lines.len()
            ),
        ));
    }
    if graph_label_lines.len() > num_graphs {
        return Err(Error::parse(
            &gl_file,
            num_graphs + 1,
            format!(
                "labels file has {} lines for {num_graphs} graphs",
                graph_label_lines.len()
            ),
        ));
    }
    let raw_labels: Vec<i64> = graph_label_lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(&gl_file, i + 1, l))
        .collect::<Result<_>>()?;

    // per-graph local ids in ascending global order
    let mut local_id = vec![0usize; indicator.len()];
    let mut sizes = vec![0usize; num_graphs];
    for (k, &g) in indicator.iter().enumerate() {
        local_id[k] = sizes[g];
        sizes[g] += 1;
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::parse(&ind_file, 0, format!("graph {} has no nodes", g + 1)));
    }

    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (i, l) in read_lines(dir, &a_file)?.iter().enumerate() {
        let line = i + 1;
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(&a_file, line, format!("expected \"i, j\", found {l:?}")));
        };
        let endpoint = |s: &str| -> Result<usize> {
            let v = parse_int(&a_file, line, s)?;
            if v < 1 || v as usize > indicator.len() {
                return Err(Error::parse(
                    &a_file,
                    line,
                    format!("node {v} is absent from {ind_file} ({} nodes)", indicator.len()),
                ));
            }
            Ok(v as usize - 1)
        };
        let (u, v) = (endpoint(a)?, endpoint(b)?);
        if indicator[u] != indicator[v] {
            return Err(Error::parse(
                &a_file,
                line,
                format!("edge ({}, {}) joins two different graphs", u + 1, v + 1),
            ));
        }
        edge_lists[indicator[u]].push((local_id[u], local_id[v]));
    }

    let node_labels: Option<Vec<i64>> = if dir.join(&nl_file).exists() {
        let lines = read_lines(dir, &nl_file)?;
        if lines.len() != indicator.len() {
            return Err(Error::parse(
                &nl_file,
                lines.len(),
                format!("expected {} lines, found {}", indicator.len(), lines.len()),
            ));
        }
        Some(
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| parse_int(&nl_file, i + 1, l))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let node_attrs: Option<(usize, Vec<f64>)> = if dir.join(&na_file).exists() {
        let lines = read_lines(dir, &na_file)?;
        if lines.len() != indicator.len() {
            return Err(Error::parse(
                &na_file,
                lines.len(),
                format!("expected {} lines, found {}", indicator.len(), lines.len()),
            ));
        }
        let mut width = None;
        let mut values = Vec::new();
        for (i, l) in lines.iter().enumerate() {
            let row: Vec<f64> = l
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(&na_file, i + 1, format!("expected a real, found {:?}", s.trim())))
                })
                .collect::<Result<_>>()?;
            let w = *width.get_or_insert(row.len());
            if row.len() != w {
                return Err(Error::parse(
                    &na_file,
                    i + 1,
                    format!("ragged row: {} values, expected {w}", row.len()),
                ));
            }
            values.extend(row);
        }
        Some((width.unwrap_or(0), values))
    } else {
        None
    };

    let label_values: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dense: BTreeMap<i64, usize> = label_values.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (k, &g) in indicator.iter().enumerate() {
        members[g].push(k);
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for (gid, nodes) in members.iter().enumerate() {
        let mut g = Graph::from_edges(gid, nodes.len(), &edge_lists[gid], dense[&raw_labels[gid]])?;
        g.node_labels = node_labels.as_ref().map(|nl| nodes.iter().map(|&k| nl[k]).collect());
        g.node_attributes = node_attrs.as_ref().map(|(w, vals)| {
            let mut m = Matrix::zeros(nodes.len(), *w);
            for (v, &k) in nodes.iter().enumerate() {
                for c in 0..*w {
                    m[(v, c)] = vals[k * w + c];
                }
            }
            m
        });
        graphs.push(g);
    }

    let base = GraphDataset {
        name: name.to_string(),
        domain: String::new(),
        graphs,
        num_classes: label_values.len(),
        f_in: 1,
        label_values,
    };
    let policy = FeaturePolicy::auto(&base, DEFAULT_DEGREE_CAP);
    let dataset = featurize(&base, policy)?;
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `dataset` in TUDataset layout. Graph labels are written as their
/// original values; node labels and attributes only when every graph has them.
pub fn write_tudataset(dataset: &GraphDataset, directory: impl AsRef<Path>) -> Result<()> {
    let dir = directory.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = &dataset.name;

    let (mut a, mut ind, mut gl, mut nl, mut na) = (
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    );
    let has_nl = !dataset.graphs.is_empty() && dataset.graphs.iter().all(|g| g.node_labels.is_some());
    let has_na = !dataset.graphs.is_empty() && dataset.graphs.iter().all(|g| g.node_attributes.is_some());
    let mut offset = 0;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for &(u, v) in &g.edges {
            let _ = writeln!(a, "{}, {}", offset + u + 1, offset + v + 1);
            let _ = writeln!(a, "{}, {}", offset + v + 1, offset + u + 1);
        }
        for v in 0..g.n {
            let _ = writeln!(ind, "{}", gi + 1);
            if has_nl {
                let _ = writeln!(nl, "{}", g.node_labels.as_ref().unwrap()[v]);
            }
            if has_na {
                let row = g.node_attributes.as_ref().unwrap().row(v);
                let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(na, "{}", cells.join(", "));
            }
        }
        let _ = writeln!(gl, "{}", dataset.label_values[g.label]);
        offset += g.n;
    }

    let mut files = vec![("A", a), ("graph_indicator", ind), ("graph_labels", gl)];
    if has_nl {
        files.push(("node_labels", nl));
    }
    if has_na {
        files.push(("node_attributes", na));
    }
    for (suffix, body) in files {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic, class-stratified (when every class has at least three
/// graphs) split. Validation and test sizes are `floor(fraction * len)`;
/// the remainder goes to training.
pub fn split_dataset(dataset: &GraphDataset, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!(
            "split fractions must be positive and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let total = dataset.graphs.len();
    if total < 3 {
        return Err(Error::Data(format!(
            "dataset {} has {total} graphs; at least 3 are needed to split",
            dataset.name
        )));
    }
    let n_val = (fv * total as f64 + 1e-9).floor() as usize;
    let n_test = (fs * total as f64 + 1e-9).floor() as usize;
    let n_train = total - n_val - n_test;
    for (what, size) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if size == 0 {
            return Err(Error::Data(format!(
                "empty {what} split for dataset {} ({total} graphs, fractions ({ft}, {fv}, {fs}))",
                dataset.name
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = dataset.class_counts();
    let order: Vec<usize> = if counts.iter().all(|&c| c >= 3) {
        // interleave classes by within-class quantile so every prefix is
        // close to the overall class balance
        let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
        for class in 0..dataset.num_classes {
            let mut members: Vec<usize> = (0..total).filter(|&i| dataset.graphs[i].label == class).collect();
            members.shuffle(&mut rng);
            let k = members.len() as f64;
            for (j, idx) in members.into_iter().enumerate() {
                keyed.push(((j as f64 + 0.5) / k, class, idx));
            }
        }
        let mut class_rank: Vec<usize> = (0..dataset.num_classes).collect();
        class_rank.shuffle(&mut rng);
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(class_rank[a.1].cmp(&class_rank[b.1])));
        keyed.into_iter().map(|(_, _, idx)| idx).collect()
    } else {
        let mut all: Vec<usize> = (0..total).collect();
        all.shuffle(&mut rng);
        all
    };

    let mut val = order[..n_val].to_vec();
    let mut test = order[n_val..n_val + n_test].to_vec();
    let mut train = order[n_val + n_test..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, val, test })
}

/// `I - D^{-1/2} A D^{-1/2}`, with `D^{-1/2}_vv = 0` for isolated nodes.
pub fn normalized_laplacian(graph: &Graph) -> Matrix {
    let n = graph.n;
    let inv_sqrt: Vec<f64> = graph
        .degrees()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let mut l = Matrix::identity(n);
    for &(u, v) in &graph.edges {
        let w = inv_sqrt[u] * inv_sqrt[v];
        l[(u, v)] = -w;
        l[(v, u)] = -w;
    }
    l
}
