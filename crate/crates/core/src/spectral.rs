//! Symmetric eigendecomposition and dataset-level spectral statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalized_laplacian, Graph};
use crate::matrix::Matrix;

pub const DEFAULT_JACOBI_TOL: f64 = 1e-10;
pub const DEFAULT_BINS: usize = 20;
const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix: ascending eigenvalues, eigenvector `i`
/// in column `i` of `eigenvectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `U diag(values) Uᵀ`.
    pub fn reconstruct_with(&self, values: &[f64]) -> Matrix {
        let n = self.len();
        assert_eq!(values.len(), n);
        let u = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += u[(i, k)] * values[k] * u[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(&self.eigenvalues)
    }
}

/// Cyclic Jacobi rotations until the largest off-diagonal magnitude falls
/// below `tol`, followed by an ascending sort. Each eigenvector is signed so
/// that its first entry with magnitude above `1e-12` is positive.
pub fn eigendecompose_symmetric(matrix: &Matrix, tol: f64) -> Result<SpectralDecomposition> {
    let n = matrix.rows();
    if !matrix.is_square() || n == 0 {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a non-empty square matrix, got {}x{}",
            matrix.rows(),
            matrix.cols()
        )));
    }
    if matrix.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite entry in matrix".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 {
                return Err(Error::Data(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    matrix[(i, j)],
                    matrix[(j, i)]
                )));
            }
        }
    }

    let mut a = matrix.clone();
    let mut v = Matrix::identity(n);
    let off_max = |a: &Matrix| {
        let mut m = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.max(a[(i, j)].abs());
            }
        }
        m
    };

    let mut sweeps = 0;
    while off_max(&a) >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let sign = (0..n)
            .map(|k| v[(k, src)])
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, f64::signum);
        for k in 0..n {
            eigenvectors[(k, dst)] = sign * v[(k, src)];
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Decomposition of the graph's normalized Laplacian.
pub fn graph_spectrum(graph: &Graph) -> Result<SpectralDecomposition> {
    eigendecompose_symmetric(&normalized_laplacian(graph), DEFAULT_JACOBI_TOL)
}

/// Second-smallest eigenvalue.
pub fn algebraic_connectivity(decomp: &SpectralDecomposition) -> Result<f64> {
    decomp
        .eigenvalues
        .get(1)
        .copied()
        .ok_or_else(|| Error::Data("algebraic connectivity needs at least 2 nodes".into()))
}

/// Normalized histogram over `[0, 2]` with `bins` uniform bins. Values at or
/// above 2 land in the last bin. An empty input gives all zeros.
pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::Data(format!("histogram needs at least 2 bins, got {bins}")));
    }
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for x in values {
        let idx = ((x / 2.0) * bins as f64).floor();
        let idx = if idx.is_nan() || idx < 0.0 {
            0
        } else {
            (idx as usize).min(bins - 1)
        };
        counts[idx] += 1;
        total += 1;
    }
    if total == 0 {
        return Ok(vec![0.0; bins]);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

/// Pooled histogram of every eigenvalue of every decomposition.
pub fn eigenvalue_histogram(decomps: &[SpectralDecomposition], bins: usize) -> Result<Vec<f64>> {
    histogram(decomps.iter().flat_map(|d| d.eigenvalues.iter().copied()), bins)
}

pub fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| 2.0 * i as f64 / bins as f64).collect()
}

/// Base-2 Jensen–Shannon divergence, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "histograms have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    for h in [p, q] {
        let sum: f64 = h.iter().sum();
        if h.iter().all(|&x| x == 0.0) {
            return Err(Error::Data("cannot compare an all-zero histogram".into()));
        }
        if h.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("histogram is not a distribution (sum {sum})")));
        }
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (2.0 * x / (x + y)).log2())
            .sum()
    };
    let jsd = 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
    Ok(jsd.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralStats {
    pub dataset: String,
    pub connectivities: Vec<f64>,
    pub eigen_hist: Vec<f64>,
}

impl SpectralStats {
    /// Graphs with fewer than two nodes contribute eigenvalues but no
    /// connectivity value.
    pub fn from_decompositions(dataset: &str, decomps: &[SpectralDecomposition], bins: usize) -> Result<Self> {
        Ok(Self {
            dataset: dataset.to_string(),
            connectivities: decomps.iter().filter_map(|d| algebraic_connectivity(d).ok()).collect(),
            eigen_hist: eigenvalue_histogram(decomps, bins)?,
        })
    }

    pub fn bins(&self) -> usize {
        self.eigen_hist.len()
    }

    pub fn connectivity_hist(&self) -> Result<Vec<f64>> {
        histogram(self.connectivities.iter().copied(), self.bins())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceSource {
    Eigenvalues,
    Connectivity,
}

impl DivergenceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceSource::Eigenvalues => "eigenvalues",
            DivergenceSource::Connectivity => "connectivity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceMatrix {
    pub names: Vec<String>,
    pub values: Matrix,
}

/// Pairwise JSD between datasets. A single dataset yields the 1×1 zero matrix.
pub fn dataset_divergence_matrix(stats: &[SpectralStats], source: DivergenceSource) -> Result<DivergenceMatrix> {
    if stats.is_empty() {
        return Err(Error::Data("divergence matrix needs at least one dataset".into()));
    }
    let hists: Vec<Vec<f64>> = stats
        .iter()
        .map(|s| match source {
            DivergenceSource::Eigenvalues => Ok(s.eigen_hist.clone()),
            DivergenceSource::Connectivity => s.connectivity_hist(),
        })
        .collect::<Result<_>>()?;
    let k = stats.len();
    let mut values = Matrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let d = js_divergence(&hists[i], &hists[j])?;
            values[(i, j)] = d;
            values[(j, i)] = d;
        }
    }
    Ok(DivergenceMatrix {
        names: stats.iter().map(|s| s.dataset.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn spectrum(edges: &[(usize, usize)], n: usize) -> Vec<f64> {
        graph_spectrum(&Graph::from_edges(0, n, edges, 0).unwrap())
            .unwrap()
            .eigenvalues
    }

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < tol, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn small_closed_forms() {
        assert_close(&spectrum(&[(0, 1)], 2), &[0.0, 2.0], 1e-12);
        assert_close(&spectrum(&[(0, 1), (1, 2), (0, 2)], 3), &[0.0, 1.5, 1.5], 1e-12);
        assert_close(&spectrum(&[(0, 1), (1, 2)], 3), &[0.0, 1.0, 2.0], 1e-12);
    }

    #[test]
    fn connectivity_values() {
        let k3 = graph_spectrum(&Graph::from_edges(0, 3, &[(0, 1), (1, 2), (0, 2)], 0).unwrap()).unwrap();
        assert!((algebraic_connectivity(&k3).unwrap() - 1.5).abs() < 1e-12);
        let p3 = graph_spectrum(&Graph::from_edges(0, 3, &[(0, 1), (1, 2)], 0).unwrap()).unwrap();
        assert!((algebraic_connectivity(&p3).unwrap() - 1.0).abs() < 1e-12);
        let two = graph_spectrum(&Graph::from_edges(0, 4, &[(0, 1), (2, 3)], 0).unwrap()).unwrap();
        assert!(algebraic_connectivity(&two).unwrap().abs() < 1e-8);
        let one = graph_spectrum(&Graph::from_edges(0, 1, &[], 0).unwrap()).unwrap();
        assert!(algebraic_connectivity(&one).is_err());
    }

    #[test]
    fn sign_convention_and_errors() {
        let d = graph_spectrum(&Graph::from_edges(0, 4, &[(0, 1), (1, 2), (2, 3)], 0).unwrap()).unwrap();
        for c in 0..4 {
            let first = d.eigenvectors.column(c).into_iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(eigendecompose_symmetric(&asym, 1e-10).is_err());
        let nan = Matrix::from_rows(&[vec![f64::NAN]]);
        assert!(eigendecompose_symmetric(&nan, 1e-10).is_err());
    }

    #[test]
    fn histogram_binning_rules() {
        assert_eq!(histogram([0.0, 2.0], 2).unwrap(), vec![0.5, 0.5]);
        let h = histogram([0.0, 1.0, 2.0], 2).unwrap();
        assert_close(&h, &[1.0 / 3.0, 2.0 / 3.0], 1e-15);
        assert_eq!(histogram(std::iter::empty(), 2).unwrap(), vec![0.0, 0.0]);
        assert!(histogram([1.0], 1).is_err());
    }

    // direct evaluation with natural logs, converted to bits
    fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..p.len() {
            let m = 0.5 * (p[i] + q[i]);
            if p[i] > 0.0 {
                total += 0.5 * p[i] * (p[i] / m).ln();
            }
            if q[i] > 0.0 {
                total += 0.5 * q[i] * (q[i] / m).ln();
            }
        }
        total / std::f64::consts::LN_2
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let got = js_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let want = jsd_oracle(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.3113).abs() < 5e-5, "{got}");
        assert!(js_divergence(&[1.0], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[0.0, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn divergence_matrix_cycles_vs_stars() {
        let cycle =
            |n: usize| Graph::from_edges(0, n, &(0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>(), 0).unwrap();
        let star = |n: usize| Graph::from_edges(0, n, &(1..n).map(|i| (0, i)).collect::<Vec<_>>(), 0).unwrap();
        let decomp = |gs: Vec<Graph>| gs.iter().map(|g| graph_spectrum(g).unwrap()).collect::<Vec<_>>();
        let cycles = decomp((6..=10).map(cycle).collect());
        let stars = decomp((6..=10).map(star).collect());
        let stats = vec![
            SpectralStats::from_decompositions("cycles", &cycles, DEFAULT_BINS).unwrap(),
            SpectralStats::from_decompositions("stars", &stars, DEFAULT_BINS).unwrap(),
            SpectralStats::from_decompositions("cycles2", &cycles, DEFAULT_BINS).unwrap(),
        ];
        for source in [DivergenceSource::Eigenvalues, DivergenceSource::Connectivity] {
            let m = dataset_divergence_matrix(&stats, source).unwrap();
            for i in 0..3 {
                assert_eq!(m.values[(i, i)], 0.0);
            }
            assert!(m.values[(0, 1)] > 0.0);
            assert_eq!(m.values[(0, 2)], 0.0);
            assert_eq!(m.values[(0, 1)], m.values[(1, 0)]);
        }
        let single = dataset_divergence_matrix(&stats[..1], DivergenceSource::Eigenvalues).unwrap();
        assert_eq!(single.values.as_slice(), &[0.0]);
    }
}
