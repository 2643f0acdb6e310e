mod common;

use common::*;
use dbp_autodiff::{grad_check, Tape, Tensor};
use dbp_core::encoder::{
    embed_inputs, encode, gcn_layer_forward, gin_layer_forward, readout_mean, shape_mismatches, EncoderConfig,
    EncoderParams, GraphInputs, Layer, LayerKind,
};
use dbp_core::graph::Graph;
use dbp_core::params::{bind, bind_frozen, flatten};
use dbp_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn cfg(kind: LayerKind, layers: usize, hidden: usize, eps: f64) -> EncoderConfig {
    EncoderConfig {
        kind,
        num_layers: layers,
        hidden_dim: hidden,
        gin_eps: eps,
    }
}

fn params(seed: u64, c: &EncoderConfig) -> EncoderParams {
    let mut r = rng(seed);
    let p = EncoderParams::init(&mut r, c, &TINY);
    randomized(&p, &mut r, 0.7)
}

/// Dense `H0` and per-node sums of incident edge embeddings.
fn dense_inputs(g: &Graph, p: &EncoderParams) -> (Mat, Mat) {
    let h = p.node_emb[0].cols();
    let mut h0 = vec![vec![0.0; h]; g.num_nodes];
    for (v, codes) in g.node_attrs.iter().enumerate() {
        for (c, &code) in codes.iter().enumerate() {
            for (k, x) in p.node_emb[c].row_slice(code).iter().enumerate() {
                h0[v][k] += x;
            }
        }
    }
    let mut s = vec![vec![0.0; h]; g.num_nodes];
    if !p.edge_emb.is_empty() {
        for (&(u, v), codes) in g.edges.iter().zip(&g.edge_attrs) {
            for (c, &code) in codes.iter().enumerate() {
                for (k, x) in p.edge_emb[c].row_slice(code).iter().enumerate() {
                    s[u][k] += x;
                    s[v][k] += x;
                }
            }
        }
    }
    (h0, s)
}

fn gin_oracle(g: &Graph, p: &EncoderParams, eps: f64) -> Mat {
    let (mut h, s) = dense_inputs(g, p);
    let n = g.num_nodes;
    let a = adjacency(g);
    let mut m = a.clone();
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] += 1.0 + eps;
    }
    let last = p.layers.len() - 1;
    for (i, layer) in p.layers.iter().enumerate() {
        let Layer::Gin(mlp_p) = layer else { panic!("gin layer expected") };
        h = mlp(mlp_p, &add(&mm(&m, &h), &s));
        if i < last {
            h = relu(&h);
        }
    }
    h
}

fn gcn_oracle(g: &Graph, p: &EncoderParams) -> Mat {
    let (mut h, _) = dense_inputs(g, p);
    let n = g.num_nodes;
    let mut a_hat = adjacency(g);
    for (i, row) in a_hat.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let d: Vec<f64> = a_hat.iter().map(|r| r.iter().sum::<f64>()).collect();
    let norm: Mat = (0..n)
        .map(|i| (0..n).map(|j| a_hat[i][j] / (d[i] * d[j]).sqrt()).collect())
        .collect();
    let last = p.layers.len() - 1;
    for (i, layer) in p.layers.iter().enumerate() {
        let Layer::Gcn(lin) = layer else { panic!("gcn layer expected") };
        h = add_row(&mm(&mm(&norm, &h), &mat(&lin.w)), lin.b.data());
        if i < last {
            h = relu(&h);
        }
    }
    h
}

fn run_encode(g: &Graph, p: &EncoderParams, c: &EncoderConfig) -> Tensor {
    p.encode_values(&GraphInputs::new(g), c).unwrap()
}

#[test]
fn gin_matches_dense_oracle() {
    for seed in 0..10 {
        let c = cfg(LayerKind::Gin, 3, 5, 0.3);
        let p = params(seed, &c);
        let g = random_graph(&mut rng(100 + seed), 6, 0.5, &TINY);
        let z = run_encode(&g, &p, &c);
        assert!(max_diff(&mat(&z), &gin_oracle(&g, &p, 0.3)) < 1e-10, "seed {seed}");
    }
}

#[test]
fn gcn_matches_dense_oracle() {
    for seed in 0..10 {
        let c = cfg(LayerKind::Gcn, 3, 5, 0.0);
        let p = params(seed, &c);
        let g = random_graph(&mut rng(200 + seed), 6, 0.5, &TINY);
        let z = run_encode(&g, &p, &c);
        assert!(max_diff(&mat(&z), &gcn_oracle(&g, &p)) < 1e-10, "seed {seed}");
    }
}

#[test]
fn edgeless_gin_is_a_per_node_mlp() {
    let c = cfg(LayerKind::Gin, 2, 4, 0.0);
    let p = params(3, &c);
    let mut g = random_graph(&mut rng(4), 5, 0.0, &TINY);
    g.edges.clear();
    g.edge_attrs.clear();
    let z = run_encode(&g, &p, &c);
    let (h0, _) = dense_inputs(&g, &p);
    for (v, row) in h0.iter().enumerate() {
        let mut h = vec![row.clone()];
        for (i, layer) in p.layers.iter().enumerate() {
            let Layer::Gin(m) = layer else { unreachable!() };
            h = mlp(m, &h);
            if i == 0 {
                h = relu(&h);
            }
        }
        assert_eq!(z.row_slice(v), h[0].as_slice());
    }
}

#[test]
fn single_gcn_node_with_identity_weight_is_relu() {
    let c = cfg(LayerKind::Gcn, 1, 3, 0.0);
    let mut p = params(0, &c);
    p.layers = vec![Layer::Gcn(dbp_core::params::Linear {
        w: Tensor::identity(3),
        b: Tensor::zeros(1, 3),
    })];
    let g = Graph {
        num_nodes: 1,
        node_attrs: vec![vec![1, 2]],
        edges: vec![],
        edge_attrs: vec![],
        label: 0,
    };
    let inputs = GraphInputs::new(&g);
    let mut tape = Tape::new();
    let b = bind_frozen(&p, &mut tape);
    let (h0, _) = embed_inputs(&mut tape, &inputs, &b).unwrap();
    let Layer::Gcn(lin) = &b.layers[0] else { unreachable!() };
    let out = gcn_layer_forward(&mut tape, h0, &inputs, lin).unwrap();
    let out = tape.relu(out);
    let want = tape.value(h0).map(|v| v.max(0.0));
    assert_eq!(tape.value(out), &want);
}

#[test]
fn embedding_lookup_sums_channels_and_uses_mask_row() {
    let c = cfg(LayerKind::Gin, 1, 3, 0.0);
    let p = params(1, &c);
    let g = Graph {
        num_nodes: 2,
        node_attrs: vec![vec![0, 1], vec![TINY.node_card, TINY.node_card]],
        edges: vec![(0, 1)],
        edge_attrs: vec![vec![TINY.edge_card]],
        label: 0,
    };
    let inputs = GraphInputs::new(&g);
    let mut tape = Tape::new();
    let b = bind_frozen(&p, &mut tape);
    let (h0, e) = embed_inputs(&mut tape, &inputs, &b).unwrap();
    let h0 = tape.value(h0);
    let sum: Vec<f64> = p.node_emb[0].row_slice(0).iter().zip(p.node_emb[1].row_slice(1)).map(|(a, b)| a + b).collect();
    assert_eq!(h0.row_slice(0), sum.as_slice());
    let mask: Vec<f64> = p.node_emb[0]
        .row_slice(TINY.node_card)
        .iter()
        .zip(p.node_emb[1].row_slice(TINY.node_card))
        .map(|(a, b)| a + b)
        .collect();
    assert_eq!(h0.row_slice(1), mask.as_slice());
    assert_eq!(tape.value(e.unwrap()).row_slice(0), p.edge_emb[0].row_slice(TINY.edge_card));
}

#[test]
fn out_of_range_code_is_a_contract_error() {
    let c = cfg(LayerKind::Gin, 1, 3, 0.0);
    let p = params(1, &c);
    let g = Graph {
        num_nodes: 1,
        node_attrs: vec![vec![0, TINY.node_card + 1]],
        edges: vec![],
        edge_attrs: vec![],
        label: 0,
    };
    assert!(matches!(p.encode_values(&GraphInputs::new(&g), &c), Err(Error::Contract(_))));
}

#[test]
fn symmetric_pair_gets_equal_rows() {
    let c = cfg(LayerKind::Gin, 1, 4, 0.0);
    let p = params(2, &c);
    let g = Graph {
        num_nodes: 2,
        node_attrs: vec![vec![1, 1], vec![1, 1]],
        edges: vec![(0, 1)],
        edge_attrs: vec![vec![0]],
        label: 0,
    };
    let inputs = GraphInputs::new(&g);
    let mut tape = Tape::new();
    let b = bind_frozen(&p, &mut tape);
    let (h0, e) = embed_inputs(&mut tape, &inputs, &b).unwrap();
    let Layer::Gin(m) = &b.layers[0] else { unreachable!() };
    let out = gin_layer_forward(&mut tape, h0, &inputs, e, m, 0.0).unwrap();
    let out = tape.value(out);
    assert_eq!(out.row_slice(0), out.row_slice(1));
}

#[test]
fn zero_weights_give_zero_representations() {
    for kind in [LayerKind::Gin, LayerKind::Gcn] {
        let c = cfg(kind, 2, 4, 0.0);
        let p = params(0, &c);
        let zero = randomized(&p, &mut rng(0), 1.0);
        let zero: EncoderParams = dbp_core::params::unflatten(&zero, flatten(&p).iter().map(Tensor::zeros_like).collect());
        let g = random_graph(&mut rng(9), 5, 0.5, &TINY);
        assert!(run_encode(&g, &zero, &c).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn encode_is_deterministic() {
    let c = cfg(LayerKind::Gin, 3, 6, 0.1);
    let p = params(5, &c);
    let g = random_graph(&mut rng(6), 9, 0.4, &TINY);
    assert_eq!(run_encode(&g, &p, &c), run_encode(&g, &p, &c));
}

#[test]
fn readout_examples() {
    let mut tape = Tape::new();
    let one = tape.constant(Tensor::row(&[1.0, -2.0]));
    let r = readout_mean(&mut tape, one).unwrap();
    assert_eq!(tape.value(r).data(), &[1.0, -2.0]);
    let two = tape.constant(Tensor::from_nested(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap());
    let r = readout_mean(&mut tape, two).unwrap();
    assert_eq!(tape.value(r).data(), &[2.0, 4.0]);
    let empty = tape.constant(Tensor::zeros(0, 2));
    assert!(matches!(readout_mean(&mut tape, empty), Err(Error::Contract(_))));
}

#[test]
fn shape_guard_reports_wrong_width() {
    let small = cfg(LayerKind::Gin, 2, 4, 0.0);
    let big = cfg(LayerKind::Gin, 2, 8, 0.0);
    let p = params(0, &small);
    assert!(shape_mismatches(&p, &small, &TINY).is_empty());
    assert!(!shape_mismatches(&p, &big, &TINY).is_empty());
}

#[test]
fn both_layer_kinds_pass_grad_check() {
    for (i, kind) in [LayerKind::Gin, LayerKind::Gcn].into_iter().enumerate() {
        let c = cfg(kind, 2, 3, 0.2);
        let p = params(10 + i as u64, &c);
        let g = random_graph(&mut rng(20 + i as u64), 5, 0.5, &TINY);
        let inputs = GraphInputs::new(&g);
        let flat = flatten(&p);
        let report = grad_check(
            |tape, vars| {
                let b = rebind(&p, vars);
                let z = ad(encode(tape, &inputs, &b, &c))?;
                let zz = tape.mul(z, z)?;
                Ok(tape.sum_all(zz))
            },
            &flat,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{kind:?}: {:?}", report.worst());
    }
}

fn arb_case() -> impl Strategy<Value = (u64, usize, f64, bool)> {
    (any::<u64>(), 1usize..12, 0.0f64..0.9, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_is_permutation_equivariant((seed, n, p, gin) in arb_case()) {
        let kind = if gin { LayerKind::Gin } else { LayerKind::Gcn };
        let c = cfg(kind, 3, 6, 0.25);
        let params = params(seed, &c);
        let mut r = rng(seed ^ 0x5eed);
        let g = random_graph(&mut r, n, p, &TINY);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let z = run_encode(&g, &params, &c);
        let zp = run_encode(&g.permuted(&perm), &params, &c);
        for (v, &pv) in perm.iter().enumerate() {
            for (a, b) in z.row_slice(v).iter().zip(zp.row_slice(pv)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
        let mut tape = Tape::new();
        let b = bind(&params, &mut tape);
        let r1 = encode(&mut tape, &GraphInputs::new(&g), &b, &c).unwrap();
        let r1 = readout_mean(&mut tape, r1).unwrap();
        let r2 = encode(&mut tape, &GraphInputs::new(&g.permuted(&perm)), &b, &c).unwrap();
        let r2 = readout_mean(&mut tape, r2).unwrap();
        prop_assert!(tape.value(r1).max_abs_diff(tape.value(r2)) < 1e-9);
    }
}
