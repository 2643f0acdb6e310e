//! GIN / GCN message-passing encoders over categorical attributes.

use std::sync::Arc;

use dbp_autodiff::{Reduce, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, MessageIndex, Schema};
use crate::params::{bind_frozen, named, try_map_tensors, try_map_vec, Linear, Mlp, ParamTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Gin,
    Gcn,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Gin => "gin",
            LayerKind::Gcn => "gcn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gin" => Some(LayerKind::Gin),
            "gcn" => Some(LayerKind::Gcn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub kind: LayerKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub gin_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: LayerKind::Gin,
            num_layers: 3,
            hidden_dim: 32,
            gin_eps: 0.0,
        }
    }
}

impl EncoderConfig {
    /// Five layers of width 300, the large-corpus setting; the default is the small desk-scale one.
    pub fn full_scale() -> Self {
        EncoderConfig {
            num_layers: 5,
            hidden_dim: 300,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T = Tensor> {
    Gin(Mlp<T>),
    Gcn(Linear<T>),
}

impl<T> ParamTree for Layer<T> {
    type Leaf = T;
    type With<U> = Layer<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<Layer<U>, E> {
        Ok(match self {
            Layer::Gin(m) => Layer::Gin(m.try_map(prefix, f)?),
            Layer::Gcn(l) => Layer::Gcn(l.try_map(prefix, f)?),
        })
    }
}

/// Embedding tables have `card + 1` rows; the last is the mask token.
/// GCN encoders carry no edge tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T = Tensor> {
    pub node_emb: Vec<T>,
    pub edge_emb: Vec<T>,
    pub layers: Vec<Layer<T>>,
}

impl<T> ParamTree for EncoderParams<T> {
    type Leaf = T;
    type With<U> = EncoderParams<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<EncoderParams<U>, E> {
        Ok(EncoderParams {
            node_emb: try_map_tensors(&self.node_emb, prefix, "node_emb", f)?,
            edge_emb: try_map_tensors(&self.edge_emb, prefix, "edge_emb", f)?,
            layers: try_map_vec(&self.layers, prefix, "layer", f)?,
        })
    }
}

impl EncoderParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &EncoderConfig, schema: &Schema) -> Self {
        let h = cfg.hidden_dim;
        let node_emb = (0..schema.node_channels)
            .map(|_| crate::params::glorot(rng, schema.node_card + 1, h))
            .collect();
        let edge_emb = match cfg.kind {
            LayerKind::Gin => (0..schema.edge_channels)
                .map(|_| crate::params::glorot(rng, schema.edge_card + 1, h))
                .collect(),
            LayerKind::Gcn => Vec::new(),
        };
        let layers = (0..cfg.num_layers)
            .map(|_| match cfg.kind {
                LayerKind::Gin => Layer::Gin(Mlp::init(rng, h, h, h)),
                LayerKind::Gcn => Layer::Gcn(Linear::init(rng, h, h)),
            })
            .collect();
        EncoderParams {
            node_emb,
            edge_emb,
            layers,
        }
    }

    /// Encoder producing the node representations as plain values.
    pub fn encode_values(&self, inputs: &GraphInputs, cfg: &EncoderConfig) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = bind_frozen(self, &mut tape);
        let z = encode(&mut tape, inputs, &p, cfg)?;
        Ok(tape.value(z).clone())
    }
}

/// Index arrays derived once per graph: attribute codes per channel, the
/// directed message lists, and GCN normalisation weights.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub num_nodes: usize,
    pub node_codes: Vec<Arc<[usize]>>,
    pub edge_codes: Vec<Arc<[usize]>>,
    pub messages: MessageIndex,
    /// Endpoints of each undirected edge, in edge order.
    pub edge_u: Arc<[usize]>,
    pub edge_v: Arc<[usize]>,
    gcn_src: Arc<[usize]>,
    gcn_dst: Arc<[usize]>,
    gcn_coef: Tensor,
}

impl GraphInputs {
    pub fn new(g: &Graph) -> Self {
        let channels = g.node_attrs.first().map_or(0, Vec::len);
        let node_codes = (0..channels)
            .map(|c| g.node_attrs.iter().map(|a| a[c]).collect::<Vec<_>>().into())
            .collect();
        let edge_channels = g.edge_attrs.first().map_or(0, Vec::len);
        let edge_codes = (0..edge_channels)
            .map(|c| g.edge_attrs.iter().map(|a| a[c]).collect::<Vec<_>>().into())
            .collect();
        let messages = MessageIndex::new(g);

        let deg_hat: Vec<f64> = g.degrees().iter().map(|&d| (d + 1) as f64).collect();
        let mut src: Vec<usize> = messages.src.to_vec();
        let mut dst: Vec<usize> = messages.dst.to_vec();
        src.extend(0..g.num_nodes);
        dst.extend(0..g.num_nodes);
        let coef: Vec<f64> = src
            .iter()
            .zip(&dst)
            .map(|(&u, &v)| 1.0 / (deg_hat[u] * deg_hat[v]).sqrt())
            .collect();
        GraphInputs {
            num_nodes: g.num_nodes,
            node_codes,
            edge_codes,
            edge_u: g.edges.iter().map(|e| e.0).collect::<Vec<_>>().into(),
            edge_v: g.edges.iter().map(|e| e.1).collect::<Vec<_>>().into(),
            gcn_coef: Tensor::column(&coef),
            gcn_src: src.into(),
            gcn_dst: dst.into(),
            messages,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edge_u.len()
    }
}

fn lookup_sum(tape: &mut Tape, tables: &[Var], codes: &[Arc<[usize]>], what: &str) -> Result<Option<Var>> {
    if tables.len() != codes.len() {
        return Err(Error::Contract(format!(
            "{} {what} channels but {} embedding tables",
            codes.len(),
            tables.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (c, (&table, idx)) in tables.iter().zip(codes).enumerate() {
        let rows = tape.value(table).rows();
        if let Some(bad) = idx.iter().find(|&&k| k >= rows) {
            return Err(Error::Contract(format!(
                "{what} channel {c}: code {bad} outside table of {rows} rows"
            )));
        }
        let e = tape.gather_rows(table, idx.clone())?;
        acc = Some(match acc {
            None => e,
            Some(a) => tape.add(a, e)?,
        });
    }
    Ok(acc)
}

/// `(H0, edge features)`: per-channel lookups summed. Edge features are
/// `None` when the encoder has no edge tables or the graph has no edges.
pub fn embed_inputs(tape: &mut Tape, inputs: &GraphInputs, p: &EncoderParams<Var>) -> Result<(Var, Option<Var>)> {
    let h0 = lookup_sum(tape, &p.node_emb, &inputs.node_codes, "node")?
        .ok_or_else(|| Error::Contract("graph has no node attribute channels".into()))?;
    let edge = if p.edge_emb.is_empty() || inputs.num_edges() == 0 {
        None
    } else {
        lookup_sum(tape, &p.edge_emb, &inputs.edge_codes, "edge")?
    };
    Ok((h0, edge))
}

/// Sum over incoming messages of `H[src] (+ edge_feat)`, one row per node.
pub fn aggregate(tape: &mut Tape, h: Var, edge_feats: Option<Var>, m: &MessageIndex) -> Result<Var> {
    let mut msg = tape.gather_rows(h, m.src.clone())?;
    if let Some(e) = edge_feats {
        let per_msg = tape.gather_rows(e, m.edge.clone())?;
        msg = tape.add(msg, per_msg)?;
    }
    Ok(tape.scatter_add_rows(msg, m.dst.clone(), m.num_nodes)?)
}

/// `MLP((1 + eps) H[v] + sum_{u in N(v)} (H[u] + e_uv))`, without the outer relu.
pub fn gin_layer_forward(
    tape: &mut Tape,
    h: Var,
    inputs: &GraphInputs,
    edge_feats: Option<Var>,
    mlp: &Mlp<Var>,
    eps: f64,
) -> Result<Var> {
    let agg = aggregate(tape, h, edge_feats, &inputs.messages)?;
    let own = tape.scale(h, 1.0 + eps);
    let pre = tape.add(own, agg)?;
    mlp.forward(tape, pre)
}

/// `D^-1/2 (A + I) D^-1/2 H W + b`, without the outer relu.
pub fn gcn_layer_forward(tape: &mut Tape, h: Var, inputs: &GraphInputs, lin: &Linear<Var>) -> Result<Var> {
    let hw = tape.matmul(h, lin.w)?;
    let msg = tape.gather_rows(hw, inputs.gcn_src.clone())?;
    let coef = tape.constant(inputs.gcn_coef.clone());
    let msg = tape.mul(msg, coef)?;
    let agg = tape.scatter_add_rows(msg, inputs.gcn_dst.clone(), inputs.num_nodes)?;
    Ok(tape.add(agg, lin.b)?)
}

/// Node representations `num_nodes x hidden_dim`; relu between layers, not after the last.
pub fn encode(tape: &mut Tape, inputs: &GraphInputs, p: &EncoderParams<Var>, cfg: &EncoderConfig) -> Result<Var> {
    if p.layers.is_empty() {
        return Err(Error::Contract("encoder has no layers".into()));
    }
    let (mut h, edge) = embed_inputs(tape, inputs, p)?;
    let last = p.layers.len() - 1;
    for (i, layer) in p.layers.iter().enumerate() {
        h = match layer {
            Layer::Gin(mlp) => gin_layer_forward(tape, h, inputs, edge, mlp, cfg.gin_eps)?,
            Layer::Gcn(lin) => gcn_layer_forward(tape, h, inputs, lin)?,
        };
        if i < last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Mean over node rows, `1 x hidden_dim`.
pub fn readout_mean(tape: &mut Tape, z: Var) -> Result<Var> {
    if tape.value(z).rows() == 0 {
        return Err(Error::Contract("readout of an empty graph".into()));
    }
    Ok(tape.mean(z, Reduce::Rows)?)
}

/// Differences between the block names/shapes of `p` and those `cfg` and `schema` imply.
pub fn shape_mismatches(p: &EncoderParams, cfg: &EncoderConfig, schema: &Schema) -> Vec<String> {
    let template = EncoderParams::init(&mut ChaCha8Rng::seed_from_u64(0), cfg, schema);
    let want = named(&template, "encoder");
    let have = named(p, "encoder");
    let mut problems = Vec::new();
    if want.len() != have.len() {
        problems.push(format!("encoder has {} blocks, expected {}", have.len(), want.len()));
    }
    for ((wn, wt), (hn, ht)) in want.iter().zip(&have) {
        if wn != hn || wt.shape() != ht.shape() {
            problems.push(format!("{hn} {:?} (expected {wn} {:?})", ht.shape(), wt.shape()));
        }
    }
    problems
}
