#![allow(dead_code, unused_imports)]

mod oracles;
pub use oracles::*;

use dbp_autodiff::Tensor;
use dbp_core::graph::{Graph, Schema};
use dbp_core::params::{Linear, Mlp, ParamTree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const TINY: Schema = Schema {
    node_channels: 2,
    node_card: 3,
    edge_channels: 1,
    edge_card: 2,
};

/// Erdos-Renyi graph with uniform codes, edges stored `(u, v)` with `u < v`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p: f64, schema: &Schema) -> Graph {
    let node_attrs = (0..n)
        .map(|_| (0..schema.node_channels).map(|_| rng.gen_range(0..schema.node_card)).collect())
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let edge_attrs = edges
        .iter()
        .map(|_| (0..schema.edge_channels).map(|_| rng.gen_range(0..schema.edge_card)).collect())
        .collect();
    Graph {
        num_nodes: n,
        node_attrs,
        edges,
        edge_attrs,
        label: rng.gen_range(0..2),
    }
}

/// Every leaf replaced by uniform values in `[-scale, scale]`, biases included.
pub fn randomized<P: ParamTree<Leaf = Tensor>, R: Rng>(p: &P, rng: &mut R, scale: f64) -> P::With<Tensor> {
    p.try_map("", &mut |_, t: &Tensor| {
        let data = (0..t.numel()).map(|_| rng.gen_range(-scale..scale)).collect();
        Ok::<_, ()>(Tensor::new(t.shape().to_vec(), data).unwrap())
    })
    .unwrap()
}

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let k = b.len();
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..n).map(|j| (0..k).map(|p| row[p] * b[p][j]).sum()).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_row(a: &Mat, r: &[f64]) -> Mat {
    a.iter().map(|x| x.iter().zip(r).map(|(p, q)| p + q).collect()).collect()
}

pub fn relu(a: &Mat) -> Mat {
    a.iter().map(|x| x.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn scale(a: &Mat, s: f64) -> Mat {
    a.iter().map(|x| x.iter().map(|v| v * s).collect()).collect()
}

pub fn linear(l: &Linear, x: &Mat) -> Mat {
    add_row(&mm(x, &mat(&l.w)), l.b.data())
}

pub fn mlp(m: &Mlp, x: &Mat) -> Mat {
    linear(&m.l2, &relu(&linear(&m.l1, x)))
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Dense symmetric adjacency.
pub fn adjacency(g: &Graph) -> Mat {
    let mut a = vec![vec![0.0; g.num_nodes]; g.num_nodes];
    for &(u, v) in &g.edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    a
}

/// Rebuilds `p`'s tree from tape variables in visit order.
pub fn rebind<P: ParamTree<Leaf = Tensor>>(p: &P, vars: &[dbp_autodiff::Var]) -> P::With<dbp_autodiff::Var> {
    let mut it = vars.iter();
    p.try_map("", &mut |_, _| Ok::<_, ()>(*it.next().expect("too few vars")))
        .unwrap()
}

/// Core errors reported through the autodiff error type, for `grad_check` closures.
pub fn ad<T>(r: dbp_core::Result<T>) -> dbp_autodiff::Result<T> {
    r.map_err(|e| dbp_autodiff::Error::Contract(e.to_string()))
}

use dbp_autodiff::{grad_check, GradCheckReport};
use dbp_core::encoder::{EncoderConfig, LayerKind};
use dbp_core::finetune::{finetune_objective, draw_epsilon, FinetuneModel, ReparamScale};
use dbp_core::mask::{mask_graph, MaskedGraph};
use dbp_core::params::flatten;
use dbp_core::pretrain::{pretrain_objective, PretrainModel, Prepared};

pub const GRAD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

fn tiny_cfg(seed: u64) -> EncoderConfig {
    EncoderConfig {
        kind: if seed.is_multiple_of(2) { LayerKind::Gin } else { LayerKind::Gcn },
        num_layers: 2,
        hidden_dim: 4,
        gin_eps: 0.1,
    }
}

/// Two 4-node graphs, each with at least one mask pair, and random parameters.
pub struct PretrainInstance {
    pub items: Vec<(Prepared, MaskedGraph)>,
    pub model: PretrainModel,
    pub cfg: EncoderConfig,
}

pub fn pretrain_instance(seed: u64) -> PretrainInstance {
    let mut r = rng(seed);
    let cfg = tiny_cfg(seed);
    let mut items = Vec::new();
    while items.len() < 2 {
        let g = random_graph(&mut r, 4, 0.6, &TINY);
        let m = mask_graph(&g, &TINY, 0.25, &mut r);
        if !m.mask_pairs.is_empty() {
            items.push((Prepared::new(g), m));
        }
    }
    let model = PretrainModel::init(seed, &cfg, &TINY);
    let model = randomized(&model, &mut r, 0.6);
    PretrainInstance { items, model, cfg }
}

/// Grad-check reports for `[l_con, l_pi, l_pre]`.
pub fn pretrain_reports(inst: &PretrainInstance, alpha: f64) -> [GradCheckReport; 3] {
    let flat = flatten(&inst.model);
    let refs: Vec<(&Prepared, &MaskedGraph)> = inst.items.iter().map(|(p, m)| (p, m)).collect();
    let check = |which: usize| {
        grad_check(
            |tape, vars| {
                let b = rebind(&inst.model, vars);
                let v = ad(pretrain_objective(tape, &refs, &b, &inst.cfg, &TINY, alpha))?;
                Ok([v.l_con, v.l_pi, v.l_pre][which])
            },
            &flat,
            GRAD_EPS,
            GRAD_TOL,
        )
        .unwrap()
    };
    [check(0), check(1), check(2)]
}

pub struct FinetuneInstance {
    pub batch: Vec<Prepared>,
    pub model: FinetuneModel,
    pub epsilon: Tensor,
    pub cfg: EncoderConfig,
    pub scale: ReparamScale,
}

pub fn finetune_instance(seed: u64) -> FinetuneInstance {
    let mut r = rng(seed.wrapping_add(1 << 32));
    let cfg = tiny_cfg(seed);
    let batch: Vec<Prepared> = (0..3)
        .map(|i| {
            let mut g = random_graph(&mut r, 4, 0.5, &TINY);
            g.label = (i % 2) as u8;
            Prepared::new(g)
        })
        .collect();
    let model = FinetuneModel::init(seed, &cfg, &TINY, None);
    let model = randomized(&model, &mut r, 0.6);
    let epsilon = draw_epsilon(&mut r, batch.len(), cfg.hidden_dim);
    let scale = if seed % 3 == 2 { ReparamScale::Var } else { ReparamScale::Std };
    FinetuneInstance {
        batch,
        model,
        epsilon,
        cfg,
        scale,
    }
}

/// Grad-check reports for `[l_cls, l_fi, l_fine]` with the instance's frozen epsilon.
pub fn finetune_reports(inst: &FinetuneInstance, beta: f64) -> [GradCheckReport; 3] {
    let flat = flatten(&inst.model);
    let refs: Vec<&Prepared> = inst.batch.iter().collect();
    let check = |which: usize| {
        grad_check(
            |tape, vars| {
                let b = rebind(&inst.model, vars);
                let v = ad(finetune_objective(tape, &refs, &b, &inst.epsilon, &inst.cfg, beta, inst.scale))?;
                Ok([v.l_cls, v.l_fi, v.l_fine][which])
            },
            &flat,
            GRAD_EPS,
            GRAD_TOL,
        )
        .unwrap()
    };
    [check(0), check(1), check(2)]
}
