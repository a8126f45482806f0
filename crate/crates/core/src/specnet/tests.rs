use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{checkpoint, gradient_check};
use crate::graph::{featurize, normalized_laplacian, FeaturePolicy};

fn small_config(f_in: usize, num_classes: usize) -> SpecNetConfig {
    SpecNetConfig {
        hidden: 8,
        heads: 2,
        conv_layers: 1,
        blocks: 1,
        f_in,
        num_classes,
        ..SpecNetConfig::default()
    }
}

fn random_registry(cfg: &SpecNetConfig, seed: u64) -> ParamRegistry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = init_params(cfg, &mut rng).unwrap();
    // move biases, gains and the preference off their neutral values
    for p in reg.iter_mut() {
        if p.tensor.shape()[0] == 1 {
            for v in p.tensor.values_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    reg
}

fn graph_with_degree_features(n: usize, edges: &[(usize, usize)]) -> PreparedGraph {
    let g = Graph::from_edges(0, n, edges, 1).unwrap();
    let ds = GraphDataset {
        name: "g".into(),
        domain: String::new(),
        graphs: vec![g],
        num_classes: 2,
        f_in: 1,
        label_values: vec![0, 1],
    };
    let ds = featurize(&ds, FeaturePolicy::DegreeOnehot { cap: 3 }).unwrap();
    PreparedGraph::from_graph(&ds.graphs[0]).unwrap()
}

fn six_node_graph() -> PreparedGraph {
    graph_with_degree_features(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 2), (1, 4)])
}

// ---------------------------------------------------------------------------
// Independent re-evaluation of the network with plain matrices.

fn param(reg: &ParamRegistry, name: &str) -> Matrix {
    let t = &reg.get(name).unwrap().tensor;
    let (r, c) = (t.shape()[0], t.shape()[1..].iter().product());
    Matrix::from_vec(r, c, t.values().to_vec())
}

fn add_bias(m: &Matrix, b: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out[(i, j)] += b[(0, j)];
        }
    }
    out
}

fn map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&x| f(x)).collect())
}

fn oracle_filtered_eigenvalues(cfg: &SpecNetConfig, reg: &ParamRegistry, lam: &[f64]) -> Vec<Vec<f64>> {
    let n = lam.len();
    let (d, dh) = (cfg.hidden, cfg.head_dim());
    let mut enc = Matrix::zeros(n, d + 1);
    for i in 0..n {
        enc[(i, 0)] = lam[i];
        for q in 0..d {
            let p = if q % 2 == 0 { q } else { q - 1 };
            let a = cfg.eigen_scale * lam[i] / cfg.encoding_base.powf(p as f64 / d as f64);
            enc[(i, q + 1)] = if q % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    let mut z = add_bias(&enc.matmul(&param(reg, EIGEN_WEIGHT)), &param(reg, EIGEN_BIAS));
    for t in 0..cfg.blocks {
        let mut merged = Matrix::zeros(n, d);
        for h in 0..cfg.heads {
            let q = z.matmul(&param(reg, &head_name(t, "query", h)));
            let k = z.matmul(&param(reg, &head_name(t, "key", h)));
            let v = z.matmul(&param(reg, &head_name(t, "value", h)));
            let mut s = q.matmul(&k.transpose());
            for i in 0..n {
                let row: Vec<f64> = (0..n).map(|j| s[(i, j)] / (dh as f64).sqrt()).collect();
                let mx = row.iter().cloned().fold(f64::MIN, f64::max);
                let tot: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                for j in 0..n {
                    s[(i, j)] = (row[j] - mx).exp() / tot;
                }
            }
            let o = s.matmul(&v);
            for i in 0..n {
                for c in 0..dh {
                    merged[(i, h * dh + c)] = o[(i, c)];
                }
            }
        }
        let out = add_bias(
            &merged.matmul(&param(reg, &attn_name(t, "out.weight"))),
            &param(reg, &attn_name(t, "out.bias")),
        );
        let (g, b) = (
            param(reg, &attn_name(t, "norm.gain")),
            param(reg, &attn_name(t, "norm.bias")),
        );
        let mut next = Matrix::zeros(n, d);
        for i in 0..n {
            let row: Vec<f64> = (0..d).map(|j| z[(i, j)] + out[(i, j)]).collect();
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            for j in 0..d {
                next[(i, j)] = g[(0, j)] * (row[j] - mean) / (var + 1e-5).sqrt() + b[(0, j)];
            }
        }
        z = next;
    }
    let (wd, bd) = (param(reg, DECODER_WEIGHT), param(reg, DECODER_BIAS));
    (0..cfg.heads)
        .map(|m| {
            (0..n)
                .map(|i| {
                    let s: f64 = (0..dh).map(|c| z[(i, m * dh + c)] * wd[(c, 0)]).sum();
                    (s + bd[(0, 0)]).tanh()
                })
                .collect()
        })
        .collect()
}

/// `B̂[i][j]` as a length-`d` vector.
fn oracle_filters(cfg: &SpecNetConfig, reg: &ParamRegistry, u: &Matrix, filtered: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let n = u.rows();
    let bases: Vec<Matrix> = filtered
        .iter()
        .map(|lam| {
            let mut b = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    b[(i, j)] = (0..n).map(|k| u[(i, k)] * lam[k] * u[(j, k)]).sum();
                }
            }
            b
        })
        .collect();
    let (w1, b1, w2, b2) = (
        param(reg, FILTER_W1),
        param(reg, FILTER_B1),
        param(reg, FILTER_W2),
        param(reg, FILTER_B2),
    );
    let mut out = vec![vec![vec![0.0; cfg.hidden]; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut channel = vec![if i == j { 1.0 } else { 0.0 }];
            channel.extend(bases.iter().map(|b| b[(i, j)]));
            let x = Matrix::from_vec(1, channel.len(), channel);
            let h = map(&add_bias(&x.matmul(&w1), &b1), |v| cfg.activation.eval(v));
            let y = add_bias(&h.matmul(&w2), &b2);
            out[i][j] = y.as_slice().to_vec();
        }
    }
    out
}

fn oracle_conv(cfg: &SpecNetConfig, filters: &[Vec<Vec<f64>>], x: &Matrix, w: &Matrix) -> Matrix {
    let (n, d) = (x.rows(), x.cols());
    let mut y = Matrix::zeros(n, d);
    for i in 0..n {
        for q in 0..d {
            y[(i, q)] = (0..n).map(|j| filters[i][j][q] * x[(j, q)]).sum();
        }
    }
    let act = map(&y.matmul(w), |v| cfg.activation.eval(v));
    Matrix::from_vec(
        n,
        d,
        act.as_slice().iter().zip(x.as_slice()).map(|(a, b)| a + b).collect(),
    )
}

fn oracle_logits(cfg: &SpecNetConfig, reg: &ParamRegistry, g: &PreparedGraph) -> (Vec<f64>, Vec<f64>) {
    let filtered = oracle_filtered_eigenvalues(cfg, reg, &g.eigenvalues);
    let filters = oracle_filters(cfg, reg, &g.eigenvectors, &filtered);
    let mut x = g.features.matmul(&param(reg, EMBED_WEIGHT));
    for k in 0..cfg.conv_layers {
        x = oracle_conv(cfg, &filters, &x, &param(reg, &conv_name(k)));
    }
    let n = x.rows();
    let pooled: Vec<f64> = (0..cfg.hidden)
        .map(|q| (0..n).map(|i| x[(i, q)]).sum::<f64>() / n as f64)
        .collect();
    let pref = param(reg, PREFERENCE);
    let adj = Matrix::from_vec(
        1,
        cfg.hidden,
        pooled.iter().enumerate().map(|(q, h)| h + pref[(0, q)]).collect(),
    );
    let logits = add_bias(&adj.matmul(&param(reg, HEAD_WEIGHT)), &param(reg, HEAD_BIAS));
    (pooled, logits.into_vec())
}

fn assert_all_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{a:?}\nvs\n{b:?}");
    }
}

// ---------------------------------------------------------------------------

#[test]
fn encoding_examples() {
    let cfg = SpecNetConfig {
        hidden: 4,
        ..SpecNetConfig::default()
    };
    let enc = encode_eigenvalues(&[0.0, 2.0, 0.37], &cfg);
    assert_eq!(enc.row(0), &[0.0, 0.0, 1.0, 0.0, 1.0]);
    let want = [2.0, 20000f64.sin(), 20000f64.cos(), 200f64.sin(), 200f64.cos()];
    assert_all_close(enc.row(1), &want, 1e-9);
    assert_eq!(enc[(2, 1)], (10000.0f64 * 0.37).sin());

    let wide = encode_eigenvalues(&[0.0], &SpecNetConfig::default());
    assert_eq!(wide.cols(), 129);
    for q in 0..128 {
        assert_eq!(wide[(0, q + 1)], if q % 2 == 0 { 0.0 } else { 1.0 });
    }
}

#[test]
fn projection_examples() {
    let cfg = small_config(1, 2);
    let net = SpecNet::new(cfg.clone()).unwrap();
    let mut reg = random_registry(&cfg, 1);
    reg.get_mut(EIGEN_WEIGHT).unwrap().tensor.values_mut().fill(0.0);
    let bias: Vec<f64> = reg.get(EIGEN_BIAS).unwrap().tensor.values().to_vec();
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let enc = tape.constant_matrix(&encode_eigenvalues(&[0.0, 0.5, 1.5], &cfg));
    let z = net.project_eigen(&mut tape, &params, enc).unwrap();
    for row in tape.value(z).chunks(8) {
        assert_eq!(row, bias.as_slice());
    }

    // truncated identity keeps the first d encoded columns
    let w = reg.get_mut(EIGEN_WEIGHT).unwrap().tensor.values_mut();
    for i in 0..8 {
        w[i * 8 + i] = 1.0;
    }
    reg.get_mut(EIGEN_BIAS).unwrap().tensor.values_mut().fill(0.0);
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let encoded = encode_eigenvalues(&[0.0, 0.5, 1.5], &cfg);
    let enc = tape.constant_matrix(&encoded);
    let z = net.project_eigen(&mut tape, &params, enc).unwrap();
    for i in 0..3 {
        assert_eq!(&tape.value(z)[i * 8..(i + 1) * 8], &encoded.row(i)[..8]);
    }
}

fn filtered_on_tape(net: &SpecNet, reg: &ParamRegistry, lam: &[f64]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, reg).unwrap();
    let enc = tape.constant_matrix(&encode_eigenvalues(lam, &net.config));
    let z = net.project_eigen(&mut tape, &params, enc).unwrap();
    let out = net.attention_filter(&mut tape, &params, z).unwrap();
    out.iter().map(|&v| tape.value(v).to_vec()).collect()
}

#[test]
fn attention_single_token_uses_value_row() {
    let cfg = small_config(1, 2);
    let net = SpecNet::new(cfg.clone()).unwrap();
    let reg = random_registry(&cfg, 3);
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let z = tape
        .constant(vec![1, 8], vec![0.3, -0.1, 0.7, 0.2, -0.5, 0.9, 0.05, -0.4])
        .unwrap();
    let heads = net.attention_heads(&mut tape, &params.blocks[0], z).unwrap();
    for (h, &out) in heads.iter().enumerate() {
        let v = tape.matmul(z, params.blocks[0].value[h]).unwrap();
        assert_eq!(tape.value(out), tape.value(v));
    }
    let got = filtered_on_tape(&net, &reg, &[0.0]);
    let want = oracle_filtered_eigenvalues(&cfg, &reg, &[0.0]);
    for m in 0..2 {
        assert_all_close(&got[m], &want[m], 1e-12);
    }
}

#[test]
fn attention_matches_oracle_and_is_equivariant() {
    let cfg = SpecNetConfig {
        blocks: 2,
        ..small_config(1, 2)
    };
    let net = SpecNet::new(cfg.clone()).unwrap();
    let reg = random_registry(&cfg, 4);
    let lam = [0.0, 0.8, 1.7];
    let got = filtered_on_tape(&net, &reg, &lam);
    let want = oracle_filtered_eigenvalues(&cfg, &reg, &lam);
    for m in 0..2 {
        assert_all_close(&got[m], &want[m], 1e-12);
    }

    let permuted = filtered_on_tape(&net, &reg, &[1.7, 0.0, 0.8]);
    for m in 0..2 {
        assert_all_close(&permuted[m], &[got[m][2], got[m][0], got[m][1]], 1e-12);
    }
}

fn bases_for(net: &SpecNet, g: &PreparedGraph, lam: &[f64]) -> Vec<Matrix> {
    let mut tape = Tape::new();
    let col = tape.constant(vec![lam.len(), 1], lam.to_vec()).unwrap();
    let stack = net.build_bases(&mut tape, &g.eigenvectors, &[col]).unwrap();
    let n = g.n();
    let v = tape.value(stack);
    (0..2)
        .map(|c| Matrix::from_vec(n, n, (0..n * n).map(|e| v[e * 2 + c]).collect()))
        .collect()
}

#[test]
fn bases_reconstruct_known_operators() {
    let net = SpecNet::new(small_config(4, 2)).unwrap();
    let g = six_node_graph();
    let n = g.n();
    let lap = normalized_laplacian(
        &Graph::from_edges(0, 6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 2), (1, 4)], 0).unwrap(),
    );

    let b = bases_for(&net, &g, &g.eigenvalues);
    assert_eq!(b[0], Matrix::identity(n));
    assert!(b[1].max_abs_diff(&lap) < 1e-8);
    assert!(b[1].max_abs_diff(&b[1].transpose()) < 1e-8);
    assert!(bases_for(&net, &g, &vec![1.0; n])[1].max_abs_diff(&Matrix::identity(n)) < 1e-8);
    assert_eq!(bases_for(&net, &g, &vec![0.0; n])[1], Matrix::zeros(n, n));
}

#[test]
fn filter_encoder_selector_and_bias() {
    let cfg = SpecNetConfig {
        activation: Activation::Identity,
        ..small_config(4, 2)
    };
    let net = SpecNet::new(cfg.clone()).unwrap();
    let g = six_node_graph();
    let n = g.n();
    let mut reg = random_registry(&cfg, 9);
    {
        let w1 = reg.get_mut(FILTER_W1).unwrap().tensor.values_mut();
        w1.fill(0.0);
        w1[32] = 1.0; // row 1 (channel 1), column 0
    }
    reg.get_mut(FILTER_B1).unwrap().tensor.values_mut().fill(0.0);
    {
        let w2 = reg.get_mut(FILTER_W2).unwrap().tensor.values_mut();
        w2.fill(0.0);
        w2[..8].fill(1.0);
    }
    reg.get_mut(FILTER_B2).unwrap().tensor.values_mut().fill(0.0);

    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let lam = tape.constant(vec![n, 1], g.eigenvalues.clone()).unwrap();
    let lam2 = tape.constant(vec![n, 1], vec![0.5; n]).unwrap();
    let stack = net.build_bases(&mut tape, &g.eigenvectors, &[lam, lam2]).unwrap();
    let filters = net.filter_encode(&mut tape, &params, stack).unwrap();
    assert_eq!(tape.shape(filters), &[n, n, 8]);
    let b1 = tape.value(stack).iter().skip(1).step_by(3).copied().collect::<Vec<_>>();
    let out = tape.value(filters);
    for e in 0..n * n {
        for q in 0..8 {
            assert_eq!(out[e * 8 + q], b1[e]);
        }
    }

    for name in [FILTER_W1, FILTER_W2] {
        reg.get_mut(name).unwrap().tensor.values_mut().fill(0.0);
    }
    let bias: Vec<f64> = (0..8).map(|q| q as f64 * 0.1 - 0.3).collect();
    reg.get_mut(FILTER_B2)
        .unwrap()
        .tensor
        .values_mut()
        .copy_from_slice(&bias);
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let lam = tape.constant(vec![n, 1], g.eigenvalues.clone()).unwrap();
    let stack = net.build_bases(&mut tape, &g.eigenvectors, &[lam, lam]).unwrap();
    let filters = net.filter_encode(&mut tape, &params, stack).unwrap();
    for chunk in tape.value(filters).chunks(8) {
        assert_eq!(chunk, bias.as_slice());
    }
}

#[test]
fn graph_conv_reductions_and_oracle() {
    let n = 4;
    let d = 8;
    let x_vals: Vec<f64> = (0..n * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let x_mat = Matrix::from_vec(n, d, x_vals.clone());

    // identity filters, identity mixing, identity activation: 2X
    let cfg = SpecNetConfig {
        activation: Activation::Identity,
        ..small_config(1, 2)
    };
    let net = SpecNet::new(cfg).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant_matrix(&x_mat);
    let mut eye_stack = vec![0.0; n * n * d];
    for i in 0..n {
        for q in 0..d {
            eye_stack[(i * n + i) * d + q] = 1.0;
        }
    }
    let filters = tape.constant(vec![n, n, d], eye_stack).unwrap();
    let w = tape.constant_matrix(&Matrix::identity(d));
    let out = net.graph_conv(&mut tape, x, filters, w).unwrap();
    let doubled: Vec<f64> = x_vals.iter().map(|v| 2.0 * v).collect();
    assert_eq!(tape.value(out), doubled.as_slice());

    // zero mixing with relu keeps X
    let relu_net = SpecNet::new(small_config(1, 2)).unwrap();
    let zero = tape.constant_matrix(&Matrix::zeros(d, d));
    let out = relu_net.graph_conv(&mut tape, x, filters, zero).unwrap();
    assert_eq!(tape.value(out), x_vals.as_slice());

    // random instance vs direct formula
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let fvals: Vec<f64> = (0..n * n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wvals: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let filters = tape.constant(vec![n, n, d], fvals.clone()).unwrap();
    let w = tape.constant(vec![d, d], wvals.clone()).unwrap();
    let out = relu_net.graph_conv(&mut tape, x, filters, w).unwrap();
    let nested: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| fvals[(i * n + j) * d..(i * n + j + 1) * d].to_vec())
                .collect()
        })
        .collect();
    let want = oracle_conv(&relu_net.config, &nested, &x_mat, &Matrix::from_vec(d, d, wvals));
    assert_all_close(tape.value(out), want.as_slice(), 1e-10);
}

#[test]
fn conv_with_raw_spectrum_is_laplacian_convolution() {
    let cfg = small_config(4, 2);
    let net = SpecNet::new(cfg.clone()).unwrap();
    let g = six_node_graph();
    let n = g.n();
    let mut reg = random_registry(&cfg, 21);
    // channel-1 selector through both layers (relu is exact on the
    // positive/negative split: relu(b) - relu(-b) = b)
    {
        let w1 = reg.get_mut(FILTER_W1).unwrap().tensor.values_mut();
        w1.fill(0.0);
        w1[32] = 1.0;
        w1[32 + 1] = -1.0;
    }
    reg.get_mut(FILTER_B1).unwrap().tensor.values_mut().fill(0.0);
    {
        let w2 = reg.get_mut(FILTER_W2).unwrap().tensor.values_mut();
        w2.fill(0.0);
        w2[..8].fill(1.0);
        w2[8..16].fill(-1.0);
    }
    reg.get_mut(FILTER_B2).unwrap().tensor.values_mut().fill(0.0);

    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let lam = tape.constant(vec![n, 1], g.eigenvalues.clone()).unwrap();
    let stack = net.build_bases(&mut tape, &g.eigenvectors, &[lam, lam]).unwrap();
    let filters = net.filter_encode(&mut tape, &params, stack).unwrap();
    let feats = tape.constant_matrix(&g.features);
    let x = tape.matmul(feats, params.embed).unwrap();
    let out = net.graph_conv(&mut tape, x, filters, params.conv[0]).unwrap();

    let lap = normalized_laplacian(
        &Graph::from_edges(0, 6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 2), (1, 4)], 0).unwrap(),
    );
    let xm = tape.to_matrix(x);
    let direct = lap.matmul(&xm).matmul(&param(&reg, &conv_name(0)));
    let want: Vec<f64> = direct
        .as_slice()
        .iter()
        .zip(xm.as_slice())
        .map(|(a, b)| a.max(0.0) + b)
        .collect();
    assert_all_close(tape.value(out), &want, 1e-8);
}

#[test]
fn full_forward_matches_oracle() {
    let cfg = SpecNetConfig {
        conv_layers: 2,
        ..small_config(4, 3)
    };
    let net = SpecNet::new(cfg.clone()).unwrap();
    let reg = random_registry(&cfg, 33);
    let g = six_node_graph();
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let rec = net.forward(&mut tape, &params, &g, true).unwrap();
    let (pooled, logits) = oracle_logits(&cfg, &reg, &g);
    assert_all_close(tape.value(rec.pooled), &pooled, 1e-10);
    assert_all_close(tape.value(rec.logits), &logits, 1e-10);

    let adjusted: Vec<f64> = tape
        .value(rec.pooled)
        .iter()
        .zip(reg.get(PREFERENCE).unwrap().tensor.values())
        .map(|(h, p)| h + p)
        .collect();
    assert_eq!(tape.value(rec.adjusted), adjusted.as_slice());
}

#[test]
fn pooling_and_zero_preference() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![2, 2], vec![1.0, 3.0, 3.0, 1.0]).unwrap();
    let h = tape.mean_rows(x).unwrap();
    assert_eq!(tape.value(h), &[2.0, 2.0]);

    // equal node features stay equal through the network when the graph is
    // vertex-transitive, so the pooled feature equals every node row
    let cfg = small_config(1, 2);
    let net = SpecNet::new(cfg.clone()).unwrap();
    let mut reg = random_registry(&cfg, 2);
    let g = PreparedGraph::from_graph(&Graph::from_edges(0, 2, &[(0, 1)], 0).unwrap()).unwrap();
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let x = net.node_features(&mut tape, &params, &g).unwrap();
    let rows = tape.value(x).to_vec();
    let pooled = tape.mean_rows(x).unwrap();
    assert_all_close(tape.value(pooled), &rows[..8], 1e-12);
    assert_all_close(&rows[..8], &rows[8..], 1e-12);

    reg.get_mut(PREFERENCE).unwrap().tensor.values_mut().fill(0.0);
    let mut tape = Tape::new();
    let params = net.bind(&mut tape, &reg).unwrap();
    let with = net.forward(&mut tape, &params, &g, true).unwrap();
    let without = net.forward(&mut tape, &params, &g, false).unwrap();
    assert_eq!(tape.value(with.adjusted), tape.value(with.pooled));
    assert_eq!(tape.value(with.logits), tape.value(without.logits));
}

#[test]
fn node_relabeling_leaves_pooled_feature_unchanged() {
    let cfg = SpecNetConfig {
        conv_layers: 2,
        ..small_config(4, 2)
    };
    let net = SpecNet::new(cfg.clone()).unwrap();
    let reg = random_registry(&cfg, 8);
    // path graphs have simple normalized-Laplacian spectra
    let path: Vec<(usize, usize)> = (0..6).map(|i| (i, i + 1)).collect();
    let base = Graph::from_edges(0, 7, &path, 0).unwrap();
    let ds = GraphDataset {
        name: "p".into(),
        domain: String::new(),
        graphs: vec![base.clone(), base.permuted(&[3, 6, 0, 5, 1, 4, 2])],
        num_classes: 2,
        f_in: 1,
        label_values: vec![0, 1],
    };
    let ds = featurize(&ds, FeaturePolicy::DegreeOnehot { cap: 3 }).unwrap();
    let pooled: Vec<Vec<f64>> = ds
        .graphs
        .iter()
        .map(|g| {
            let pg = PreparedGraph::from_graph(g).unwrap();
            let mut tape = Tape::new();
            let params = net.bind(&mut tape, &reg).unwrap();
            let rec = net.forward(&mut tape, &params, &pg, true).unwrap();
            tape.value(rec.pooled).to_vec()
        })
        .collect();
    assert_all_close(&pooled[0], &pooled[1], 1e-6);
}

#[test]
fn partition_is_exactly_the_two_encoders() {
    let cfg = SpecNetConfig {
        blocks: 2,
        ..small_config(3, 4)
    };
    let reg = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut shared = reg.names(Some(Partition::Shared));
    shared.sort();
    let mut want = vec![EIGEN_BIAS, EIGEN_WEIGHT, FILTER_B1, FILTER_B2, FILTER_W1, FILTER_W2];
    want.sort();
    assert_eq!(shared, want);
    assert_eq!(reg.names(Some(Partition::Local)).len(), reg.len() - 6);
    assert_eq!(reg.get(PREFERENCE).unwrap().tensor.values(), &[0.0; 8]);
}

#[test]
fn shared_subset_restores_across_dataset_shapes() {
    let a_cfg = small_config(3, 2);
    let b_cfg = small_config(7, 5);
    let a = init_params(&a_cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut b = init_params(&b_cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for name in a.names(Some(Partition::Shared)) {
        assert_eq!(
            a.get(&name).unwrap().tensor.shape(),
            b.get(&name).unwrap().tensor.shape()
        );
    }
    let mut buf = Vec::new();
    checkpoint::write_params(&a, Some(Partition::Shared), &mut buf).unwrap();
    let shared = checkpoint::read_params(buf.as_slice()).unwrap();
    checkpoint::restore_into(&mut b, &shared).unwrap();
    for name in a.names(Some(Partition::Shared)) {
        assert_eq!(
            a.get(&name).unwrap().tensor.values(),
            b.get(&name).unwrap().tensor.values()
        );
    }
    assert_eq!(b.get(EMBED_WEIGHT).unwrap().tensor.shape(), &[7, 8]);
}

fn specnet_loss<'a>(
    net: &'a SpecNet,
    g: &'a PreparedGraph,
) -> impl FnMut(&mut Tape, &ParamRegistry) -> Result<Var> + 'a {
    move |tape, reg| {
        let params = net.bind(tape, reg)?;
        let rec = net.forward(tape, &params, g, true)?;
        tape.cross_entropy(rec.logits, g.label)
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let cfg = small_config(4, 2);
    let net = SpecNet::new(cfg.clone()).unwrap();
    let mut reg = random_registry(&cfg, 5);
    let g = six_node_graph();
    let report = gradient_check(specnet_loss(&net, &g), &mut reg, 1e-4).unwrap();
    for p in &report.params {
        if p.name.starts_with("eigen_encoder") || p.name.starts_with("filter_encoder") {
            assert!(p.compared > 0, "{p:?}");
            assert!(p.max_rel_err < 1e-4, "{p:?}");
        }
    }
}

#[test]
fn config_validation() {
    assert!(SpecNetConfig {
        hidden: 7,
        heads: 7,
        ..SpecNetConfig::default()
    }
    .validate()
    .is_err());
    assert!(SpecNetConfig {
        hidden: 8,
        heads: 3,
        ..SpecNetConfig::default()
    }
    .validate()
    .is_err());
    assert!(SpecNetConfig {
        conv_layers: 0,
        ..SpecNetConfig::default()
    }
    .validate()
    .is_err());
    assert!(SpecNetConfig::default().validate().is_ok());
}

#[test]
fn oversized_graphs_rejected() {
    let g = Graph::from_edges(0, 5, &[(0, 1)], 0).unwrap();
    let ds = GraphDataset {
        name: "big".into(),
        domain: String::new(),
        graphs: vec![g],
        num_classes: 2,
        f_in: 1,
        label_values: vec![0, 1],
    };
    assert!(prepare_dataset(&ds, 4).is_err());
    assert_eq!(prepare_dataset(&ds, 5).unwrap().len(), 1);
}
