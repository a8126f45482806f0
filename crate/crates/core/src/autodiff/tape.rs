//! Reverse-mode differentiation over dense tensors of rank at most three.
//!
//! A [`Tape`] records every primitive evaluated during one forward pass.
//! Parameters enter through [`Tape::param`]; [`Tape::backward`] walks the
//! recording in reverse and adds the resulting gradients into the
//! [`ParamRegistry`], so successive backward calls accumulate until
//! [`ParamRegistry::zero_grad`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::autodiff::tensor::ParamRegistry;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const LAYER_NORM_EPS: f64 = 1e-5;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanAll(Var),
    MeanRows(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    SpectralBasis {
        eigenvectors: Arc<Matrix>,
        values: Var,
    },
    StackChannels(Vec<Var>),
    StackRows(Vec<Var>),
    Sum(Vec<Var>),
    Reshape(Var),
    ChannelFilter {
        bases: Var,
        signal: Var,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

impl Node {
    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            s => (s[0], s[1..].iter().product()),
        }
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let src = &b[p * n..(p + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += x * s;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Data("variable does not belong to this tape".into()));
        }
        Ok(&self.nodes[v.idx])
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.idx].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.idx].value[0]
    }

    pub fn to_matrix(&self, v: Var) -> Matrix {
        let (r, c) = self.nodes[v.idx].rows_cols();
        Matrix::from_vec(r, c, self.nodes[v.idx].value.clone())
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if shape.is_empty() || shape.len() > 3 || shape.iter().product::<usize>() != value.len() {
            return Err(Error::Shape(format!(
                "constant of shape {shape:?} with {} values",
                value.len()
            )));
        }
        Ok(self.push(shape, value, Op::Constant))
    }

    pub fn constant_matrix(&mut self, m: &Matrix) -> Var {
        self.push(vec![m.rows(), m.cols()], m.as_slice().to_vec(), Op::Constant)
    }

    /// Records the current value of a registered parameter.
    pub fn param(&mut self, registry: &ParamRegistry, name: &str) -> Result<Var> {
        let idx = registry
            .position(name)
            .ok_or_else(|| Error::Data(format!("unknown parameter {name:?}")))?;
        let t = &registry.at(idx).tensor;
        Ok(self.push(t.shape().to_vec(), t.values().to_vec(), Op::Param(idx)))
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let node = self.check(v)?;
        match node.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[a.idx].value, &self.nodes[b.idx].value, m, k, n, &mut out);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.check(a)?.shape, &self.check(b)?.shape);
        if sa != sb {
            return Err(Error::Shape(format!("add {sa:?} and {sb:?}")));
        }
        let shape = sa.clone();
        let value = self.nodes[a.idx]
            .value
            .iter()
            .zip(&self.nodes[b.idx].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(shape, value, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "add_row")?;
        let (one, c2) = self.dims2(row, "add_row bias")?;
        if one != 1 || c != c2 {
            return Err(Error::Shape(format!("add_row {r}x{c} with {one}x{c2}")));
        }
        let bias = &self.nodes[row.idx].value;
        let value = self.nodes[a.idx]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bias[i % c])
            .collect();
        Ok(self.push(vec![r, c], value, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let node = self.check(a)?;
        let shape = node.shape.clone();
        let value = node.value.iter().map(|x| c * x).collect();
        Ok(self.push(shape, value, Op::Scale(a, c)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, ca) = self.dims2(a, "concat_cols")?;
        let (r2, cb) = self.dims2(b, "concat_cols")?;
        if r != r2 {
            return Err(Error::Shape(format!("concat_cols {r} rows with {r2} rows")));
        }
        let mut value = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            value.extend_from_slice(&self.nodes[a.idx].value[i * ca..(i + 1) * ca]);
            value.extend_from_slice(&self.nodes[b.idx].value[i * cb..(i + 1) * cb]);
        }
        Ok(self.push(vec![r, ca + cb], value, Op::ConcatCols(a, b)))
    }

    /// Columns `[start, start + width)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if start + width > c || width == 0 {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) of {c} columns",
                start + width
            )));
        }
        let src = &self.nodes[a.idx].value;
        let mut value = Vec::with_capacity(r * width);
        for i in 0..r {
            value.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        Ok(self.push(vec![r, width], value, Op::SliceCols(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let src = &self.nodes[a.idx].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], value, Op::Transpose(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let node = self.check(a)?;
        let shape = node.shape.clone();
        let value = node.value.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        Ok(self.push(shape, value, Op::Relu(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let node = self.check(a)?;
        let shape = node.shape.clone();
        let value = node.value.iter().map(|x| x.tanh()).collect();
        Ok(self.push(shape, value, Op::Tanh(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "softmax_rows")?;
        let src = &self.nodes[a.idx].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                value[i * c + j] = e;
                total += e;
            }
            for j in 0..c {
                value[i * c + j] /= total;
            }
        }
        Ok(self.push(vec![r, c], value, Op::SoftmaxRows(a)))
    }

    /// Per-row standardization followed by an elementwise affine map.
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "layer_norm_rows")?;
        for p in [gain, bias] {
            let (one, c2) = self.dims2(p, "layer_norm_rows affine")?;
            if one != 1 || c2 != c {
                return Err(Error::Shape(format!("layer norm affine {one}x{c2} for {c} columns")));
            }
        }
        let src = &self.nodes[a.idx].value;
        let (g, b) = (&self.nodes[gain.idx].value, &self.nodes[bias.idx].value);
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = s;
            for j in 0..c {
                let xh = (row[j] - mean) * s;
                normalized[i * c + j] = xh;
                value[i * c + j] = g[j] * xh + b[j];
            }
        }
        Ok(self.push(
            vec![r, c],
            value,
            Op::LayerNormRows {
                input: a,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let node = self.check(a)?;
        let m = node.value.iter().sum::<f64>() / node.value.len() as f64;
        Ok(self.push(vec![1, 1], vec![m], Op::MeanAll(a)))
    }

    /// Column means: `r x c` to `1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "mean_rows")?;
        let src = &self.nodes[a.idx].value;
        let mut value = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                value[j] += src[i * c + j];
            }
        }
        value.iter_mut().for_each(|v| *v /= r as f64);
        Ok(self.push(vec![1, c], value, Op::MeanRows(a)))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.check(a)?.shape, &self.check(b)?.shape);
        if sa != sb {
            return Err(Error::Shape(format!("mse {sa:?} and {sb:?}")));
        }
        let (x, y) = (&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        let m = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
        Ok(self.push(vec![1, 1], vec![m], Op::Mse(a, b)))
    }

    /// `-log softmax(logits)[label]` for a `1 x C` logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (one, c) = self.dims2(logits, "cross_entropy")?;
        if one != 1 {
            return Err(Error::Shape(format!("cross_entropy expects one logit row, got {one}")));
        }
        if label >= c {
            return Err(Error::Data(format!("label {label} out of range for {c} classes")));
        }
        let z = &self.nodes[logits.idx].value;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        let probs: Vec<f64> = z.iter().map(|x| (x - lse).exp()).collect();
        let loss = lse - z[label];
        Ok(self.push(vec![1, 1], vec![loss], Op::CrossEntropy { logits, label, probs }))
    }

    /// `U diag(values) Uᵀ` for a fixed orthonormal `U` and an `n x 1` column.
    pub fn spectral_basis(&mut self, eigenvectors: Arc<Matrix>, values: Var) -> Result<Var> {
        let n = eigenvectors.rows();
        let (r, c) = self.dims2(values, "spectral_basis")?;
        if r != n || c != 1 || !eigenvectors.is_square() {
            return Err(Error::Shape(format!("spectral_basis {n}x{n} with {r}x{c} values")));
        }
        let lam = &self.nodes[values.idx].value;
        let u = eigenvectors.as_slice();
        let mut scaled = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                scaled[i * n + k] = u[i * n + k] * lam[k];
            }
        }
        let mut value = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += scaled[i * n + k] * u[j * n + k];
                }
                value[i * n + j] = s;
                value[j * n + i] = s;
            }
        }
        Ok(self.push(vec![n, n], value, Op::SpectralBasis { eigenvectors, values }))
    }

    /// Stacks `C` matrices of shape `n x m` into an `n x m x C` tensor.
    pub fn stack_channels(&mut self, channels: &[Var]) -> Result<Var> {
        let first = *channels
            .first()
            .ok_or_else(|| Error::Shape("stack_channels needs at least one channel".into()))?;
        let (n, m) = self.dims2(first, "stack_channels")?;
        for &ch in channels {
            if self.dims2(ch, "stack_channels")? != (n, m) {
                return Err(Error::Shape("stack_channels shape mismatch".into()));
            }
        }
        let c = channels.len();
        let mut value = vec![0.0; n * m * c];
        for (k, &ch) in channels.iter().enumerate() {
            for (e, &x) in self.nodes[ch.idx].value.iter().enumerate() {
                value[e * c + k] = x;
            }
        }
        Ok(self.push(vec![n, m, c], value, Op::StackChannels(channels.to_vec())))
    }

    /// Stacks `1 x c` rows into an `r x c` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Shape("stack_rows needs at least one row".into()))?;
        let (_, c) = self.dims2(first, "stack_rows")?;
        let mut value = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            if self.dims2(row, "stack_rows")? != (1, c) {
                return Err(Error::Shape("stack_rows expects 1 x c rows".into()));
            }
            value.extend_from_slice(&self.nodes[row.idx].value);
        }
        Ok(self.push(vec![rows.len(), c], value, Op::StackRows(rows.to_vec())))
    }

    /// Elementwise sum of equally shaped values.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let first = *terms.first().ok_or_else(|| Error::Shape("sum of no terms".into()))?;
        let shape = self.check(first)?.shape.clone();
        let mut value = vec![0.0; shape.iter().product()];
        for &t in terms {
            let node = self.check(t)?;
            if node.shape != shape {
                return Err(Error::Shape(format!("sum {:?} and {shape:?}", node.shape)));
            }
            for (v, x) in value.iter_mut().zip(&node.value) {
                *v += x;
            }
        }
        Ok(self.push(shape, value, Op::Sum(terms.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let node = self.check(a)?;
        if shape.is_empty() || shape.len() > 3 || shape.iter().product::<usize>() != node.value.len() {
            return Err(Error::Shape(format!("reshape {:?} to {shape:?}", node.shape)));
        }
        let value = node.value.clone();
        Ok(self.push(shape, value, Op::Reshape(a)))
    }

    /// Per-channel filtering: `out[i, q] = sum_j bases[i, j, q] * signal[j, q]`.
    pub fn channel_filter(&mut self, bases: Var, signal: Var) -> Result<Var> {
        let (n, d) = self.dims2(signal, "channel_filter signal")?;
        let bshape = &self.check(bases)?.shape;
        if bshape.as_slice() != [n, n, d] {
            return Err(Error::Shape(format!(
                "channel_filter bases {bshape:?} for signal {n}x{d}"
            )));
        }
        let (b, x) = (&self.nodes[bases.idx].value, &self.nodes[signal.idx].value);
        let mut value = vec![0.0; n * d];
        for i in 0..n {
            let out = &mut value[i * d..(i + 1) * d];
            for j in 0..n {
                let brow = &b[(i * n + j) * d..(i * n + j + 1) * d];
                let xrow = &x[j * d..(j + 1) * d];
                for q in 0..d {
                    out[q] += brow[q] * xrow[q];
                }
            }
        }
        Ok(self.push(vec![n, d], value, Op::ChannelFilter { bases, signal }))
    }

    /// Sign pattern of every relu input recorded so far; two evaluations with
    /// equal patterns lie on the same linear piece of every relu.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.nodes[a.idx].value.iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    /// Index and description of the first recorded value that is not finite.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|x| !x.is_finite()))
            .map(|(i, n)| format!("node {i} ({}) of shape {:?}", op_name(&n.op), n.shape))
    }

    /// Accumulates `d loss / d param` into the registry for every parameter
    /// recorded on this tape.
    pub fn backward(&self, loss: Var, registry: &mut ParamRegistry) -> Result<()> {
        let node = self.check(loss)?;
        if node.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar of shape {:?}",
                node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.idx).map(|_| None).collect();
        grads[loss.idx] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.idx].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let len_of = |v: Var| self.nodes[v.idx].value.len();
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    let target = registry.at_mut(*p).tensor.grad_mut();
                    if target.len() != g.len() {
                        return Err(Error::Shape("parameter changed shape during the pass".into()));
                    }
                    for (t, x) in target.iter_mut().zip(&g) {
                        *t += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[a.idx].rows_cols();
                    let n = self.nodes[b.idx].rows_cols().1;
                    let av = &self.nodes[a.idx].value;
                    let bv = &self.nodes[b.idx].value;
                    {
                        // dA = dC Bᵀ
                        let ga = acc(&mut grads, *a, m * k);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                                ga[i * k + p] += s;
                            }
                        }
                    }
                    {
                        // dB = Aᵀ dC
                        let gb = acc(&mut grads, *b, k * n);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                let dst = &mut gb[p * n..(p + 1) * n];
                                for (d, y) in dst.iter_mut().zip(grow) {
                                    *d += x * y;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let ga = acc(&mut grads, v, g.len());
                        for (t, x) in ga.iter_mut().zip(&g) {
                            *t += x;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    let c = len_of(*row);
                    let ga = acc(&mut grads, *a, g.len());
                    for (t, x) in ga.iter_mut().zip(&g) {
                        *t += x;
                    }
                    let gr = acc(&mut grads, *row, c);
                    for (i, x) in g.iter().enumerate() {
                        gr[i % c] += x;
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for (t, x) in ga.iter_mut().zip(&g) {
                        *t += c * x;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (r, ca) = self.nodes[a.idx].rows_cols();
                    let cb = self.nodes[b.idx].rows_cols().1;
                    let w = ca + cb;
                    let ga = acc(&mut grads, *a, r * ca);
                    for i in 0..r {
                        for j in 0..ca {
                            ga[i * ca + j] += g[i * w + j];
                        }
                    }
                    let gb = acc(&mut grads, *b, r * cb);
                    for i in 0..r {
                        for j in 0..cb {
                            gb[i * cb + j] += g[i * w + ca + j];
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.nodes[a.idx].rows_cols();
                    let width = node.shape[1];
                    let ga = acc(&mut grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..width {
                            ga[i * c + start + j] += g[i * width + j];
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = self.nodes[a.idx].rows_cols();
                    let ga = acc(&mut grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.idx].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = node.rows_cols();
                    let y = &node.value;
                    let ga = acc(&mut grads, *a, r * c);
                    for i in 0..r {
                        let dot: f64 = (0..c).map(|j| g[i * c + j] * y[i * c + j]).sum();
                        for j in 0..c {
                            ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                        }
                    }
                }
                Op::LayerNormRows {
                    input,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let (r, c) = node.rows_cols();
                    let gv = &self.nodes[gain.idx].value;
                    {
                        let gg = acc(&mut grads, *gain, c);
                        for i in 0..r {
                            for j in 0..c {
                                gg[j] += g[i * c + j] * normalized[i * c + j];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *bias, c);
                        for i in 0..r {
                            for j in 0..c {
                                gb[j] += g[i * c + j];
                            }
                        }
                    }
                    let gx = acc(&mut grads, *input, r * c);
                    for i in 0..r {
                        let dxh: Vec<f64> = (0..c).map(|j| g[i * c + j] * gv[j]).collect();
                        let mean_d = dxh.iter().sum::<f64>() / c as f64;
                        let mean_dx = (0..c).map(|j| dxh[j] * normalized[i * c + j]).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[i * c + j] += inv_std[i] * (dxh[j] - mean_d - normalized[i * c + j] * mean_dx);
                        }
                    }
                }
                Op::MeanAll(a) => {
                    let len = len_of(*a);
                    let ga = acc(&mut grads, *a, len);
                    let s = g[0] / len as f64;
                    ga.iter_mut().for_each(|t| *t += s);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.nodes[a.idx].rows_cols();
                    let ga = acc(&mut grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j] / r as f64;
                        }
                    }
                }
                Op::Mse(a, b) => {
                    let (x, y) = (&self.nodes[a.idx].value, &self.nodes[b.idx].value);
                    let k = 2.0 * g[0] / x.len() as f64;
                    let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| k * (p - q)).collect();
                    let ga = acc(&mut grads, *a, diff.len());
                    for (t, d) in ga.iter_mut().zip(&diff) {
                        *t += d;
                    }
                    let gb = acc(&mut grads, *b, diff.len());
                    for (t, d) in gb.iter_mut().zip(&diff) {
                        *t -= d;
                    }
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let gl = acc(&mut grads, *logits, probs.len());
                    for (j, p) in probs.iter().enumerate() {
                        let target = if j == *label { 1.0 } else { 0.0 };
                        gl[j] += g[0] * (p - target);
                    }
                }
                Op::SpectralBasis { eigenvectors, values } => {
                    // d lambda_k = sum_ij dB_ij U_ik U_jk = (Uᵀ dB U)_kk
                    let n = eigenvectors.rows();
                    let u = eigenvectors.as_slice();
                    let mut gu = vec![0.0; n * n];
                    matmul_into(&g, u, n, n, n, &mut gu);
                    let gv = acc(&mut grads, *values, n);
                    for k in 0..n {
                        let mut s = 0.0;
                        for i in 0..n {
                            s += u[i * n + k] * gu[i * n + k];
                        }
                        gv[k] += s;
                    }
                }
                Op::StackChannels(channels) => {
                    let c = channels.len();
                    for (k, ch) in channels.iter().enumerate() {
                        let len = len_of(*ch);
                        let gc = acc(&mut grads, *ch, len);
                        for e in 0..len {
                            gc[e] += g[e * c + k];
                        }
                    }
                }
                Op::StackRows(rows) => {
                    let c = node.shape[1];
                    for (i, row) in rows.iter().enumerate() {
                        let gr = acc(&mut grads, *row, c);
                        for j in 0..c {
                            gr[j] += g[i * c + j];
                        }
                    }
                }
                Op::Sum(terms) => {
                    for t in terms {
                        let gt = acc(&mut grads, *t, g.len());
                        for (d, x) in gt.iter_mut().zip(&g) {
                            *d += x;
                        }
                    }
                }
                Op::Reshape(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for (t, x) in ga.iter_mut().zip(&g) {
                        *t += x;
                    }
                }
                Op::ChannelFilter { bases, signal } => {
                    let (n, d) = self.nodes[signal.idx].rows_cols();
                    let b = &self.nodes[bases.idx].value;
                    let x = &self.nodes[signal.idx].value;
                    {
                        let gb = acc(&mut grads, *bases, n * n * d);
                        for i in 0..n {
                            let grow = &g[i * d..(i + 1) * d];
                            for j in 0..n {
                                let dst = &mut gb[(i * n + j) * d..(i * n + j + 1) * d];
                                let xrow = &x[j * d..(j + 1) * d];
                                for q in 0..d {
                                    dst[q] += grow[q] * xrow[q];
                                }
                            }
                        }
                    }
                    let gx = acc(&mut grads, *signal, n * d);
                    for i in 0..n {
                        let grow = &g[i * d..(i + 1) * d];
                        for j in 0..n {
                            let brow = &b[(i * n + j) * d..(i * n + j + 1) * d];
                            let dst = &mut gx[j * d..(j + 1) * d];
                            for q in 0..d {
                                dst[q] += brow[q] * grow[q];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::Transpose(_) => "transpose",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::LayerNormRows { .. } => "layer_norm_rows",
        Op::MeanAll(_) => "mean_all",
        Op::MeanRows(_) => "mean_rows",
        Op::Mse(..) => "mse",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::SpectralBasis { .. } => "spectral_basis",
        Op::StackChannels(_) => "stack_channels",
        Op::StackRows(_) => "stack_rows",
        Op::Sum(_) => "sum",
        Op::Reshape(_) => "reshape",
        Op::ChannelFilter { .. } => "channel_filter",
    }
}
