//! Masked-view contrastive pre-training with an attribute reconstruction term.

use std::time::{Duration, Instant};

use dbp_autodiff::{adam_step, AdamConfig, AdamState, Reduce, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::{aggregate, encode, readout_mean, EncoderConfig, EncoderParams, GraphInputs};
use crate::error::{Error, Result};
use crate::evaluation::estimate_epoch_mi;
use crate::graph::{Graph, Schema};
use crate::mask::{mask_graph, MaskedGraph};
use crate::params::{bind, bind_frozen, collect_grads, flatten, join, unflatten, Linear, Mlp, ParamTree};
use crate::rng::{substream, Phase, Stream};

/// Two single-layer GIN decoders sharing the neighbourhood sum. The node
/// head emits `C_n * K_n` logits per node; the edge head emits per-node
/// features `P`, and each edge's logits are `edge_out(P_u + P_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T = Tensor> {
    pub node: Mlp<T>,
    pub edge: Mlp<T>,
    pub edge_out: Linear<T>,
}

impl DecoderParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, hidden: usize, schema: &Schema) -> Self {
        DecoderParams {
            node: Mlp::init(rng, hidden, hidden, schema.node_channels * schema.node_card),
            edge: Mlp::init(rng, hidden, hidden, hidden),
            edge_out: Linear::init(rng, hidden, schema.edge_channels * schema.edge_card),
        }
    }
}

impl<T> ParamTree for DecoderParams<T> {
    type Leaf = T;
    type With<U> = DecoderParams<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<DecoderParams<U>, E> {
        Ok(DecoderParams {
            node: self.node.try_map(&join(prefix, "node"), f)?,
            edge: self.edge.try_map(&join(prefix, "edge"), f)?,
            edge_out: self.edge_out.try_map(&join(prefix, "edge_out"), f)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainModel<T = Tensor> {
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
}

impl<T> ParamTree for PretrainModel<T> {
    type Leaf = T;
    type With<U> = PretrainModel<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<PretrainModel<U>, E> {
        Ok(PretrainModel {
            encoder: self.encoder.try_map(&join(prefix, "encoder"), f)?,
            decoder: self.decoder.try_map(&join(prefix, "decoder"), f)?,
        })
    }
}

impl PretrainModel<Tensor> {
    pub fn init(seed: u64, cfg: &EncoderConfig, schema: &Schema) -> Self {
        let mut rng = substream(seed, Stream::Init, Some(Phase::Pretrain));
        let encoder = EncoderParams::init(&mut rng, cfg, schema);
        let decoder = DecoderParams::init(&mut rng, cfg.hidden_dim, schema);
        PretrainModel { encoder, decoder }
    }
}

/// `sum over (u, v) of -ln s(Z_u . Z_v) - ln s(-Zh_u . Zh_v)`.
pub fn contrastive_loss(tape: &mut Tape, z: Var, z_hat: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Contract("contrastive loss without mask pairs".into()));
    }
    let us: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let vs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let dot = |tape: &mut Tape, m: Var| -> Result<Var> {
        let a = tape.gather_rows(m, us.clone())?;
        let b = tape.gather_rows(m, vs.clone())?;
        let ab = tape.mul(a, b)?;
        Ok(tape.sum(ab, Reduce::Cols))
    };
    let pos = dot(tape, z)?;
    let pos = tape.sigmoid(pos);
    let pos = tape.log(pos);
    let neg = dot(tape, z_hat)?;
    let neg = tape.neg(neg);
    let neg = tape.sigmoid(neg);
    let neg = tape.log(neg);
    let both = tape.add(pos, neg)?;
    let total = tape.sum_all(both);
    Ok(tape.neg(total))
}

/// `(node logits n x C_n K_n, edge logits E x C_e K_e)`.
pub fn decode(tape: &mut Tape, z: Var, inputs: &GraphInputs, dec: &DecoderParams<Var>) -> Result<(Var, Var)> {
    let agg = aggregate(tape, z, None, &inputs.messages)?;
    let pre = tape.add(z, agg)?;
    let node_logits = dec.node.forward(tape, pre)?;
    let p = dec.edge.forward(tape, pre)?;
    let pu = tape.gather_rows(p, inputs.edge_u.clone())?;
    let pv = tape.gather_rows(p, inputs.edge_v.clone())?;
    let pe = tape.add(pu, pv)?;
    let edge_logits = dec.edge_out.forward(tape, pe)?;
    Ok((node_logits, edge_logits))
}

/// Sum over slots of `-ln softmax(block)[target]`, one block of `card`
/// columns per channel.
fn slot_cross_entropy(tape: &mut Tape, logits: Var, targets: &[Vec<usize>], card: usize) -> Result<Var> {
    let rows = targets.len();
    let channels = targets.first().map_or(0, Vec::len);
    let (lr, lc) = tape.value(logits).dims()?;
    if lr != rows || lc != channels * card {
        return Err(Error::Contract(format!(
            "logits [{lr}, {lc}] for {rows} rows x {channels} channels x {card} codes"
        )));
    }
    let mut total: Option<Var> = None;
    for c in 0..channels {
        let block = tape.select_cols(logits, (c * card..(c + 1) * card).collect::<Vec<_>>())?;
        let sm = tape.softmax_rows(block)?;
        let lg = tape.log(sm);
        let mut onehot = Tensor::zeros(rows, card);
        for (r, t) in targets.iter().enumerate() {
            onehot.data_mut()[r * card + t[c]] = 1.0;
        }
        let oh = tape.constant(onehot);
        let picked = tape.mul(lg, oh)?;
        let s = tape.sum_all(picked);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("no attribute channels to reconstruct".into()))?;
    Ok(tape.neg(total))
}

/// Mean CE over node slots and mean CE over edge slots, averaged; the node
/// mean alone when the graph has no edge slots.
pub fn reconstruction_loss(tape: &mut Tape, node_logits: Var, edge_logits: Var, g: &Graph, schema: &Schema) -> Result<Var> {
    let node_total = slot_cross_entropy(tape, node_logits, &g.node_attrs, schema.node_card)?;
    let node_slots = (g.num_nodes * schema.node_channels) as f64;
    let node_mean = tape.scale(node_total, 1.0 / node_slots);
    let edge_slots = g.num_edges() * schema.edge_channels;
    if edge_slots == 0 {
        return Ok(node_mean);
    }
    let edge_total = slot_cross_entropy(tape, edge_logits, &g.edge_attrs, schema.edge_card)?;
    let edge_mean = tape.scale(edge_total, 1.0 / edge_slots as f64);
    let both = tape.add(node_mean, edge_mean)?;
    Ok(tape.scale(both, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLossParts {
    pub l_con: f64,
    pub l_pi: f64,
    pub l_pre: f64,
    pub alpha: f64,
}

/// Batch-mean losses as tape nodes; `l_pre = l_con + alpha * l_pi` on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PretrainVars {
    pub l_con: Var,
    pub l_pi: Var,
    pub l_pre: Var,
}

/// A graph with its precomputed index arrays.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: Graph,
    pub inputs: GraphInputs,
}

impl Prepared {
    pub fn new(graph: Graph) -> Self {
        let inputs = GraphInputs::new(&graph);
        Prepared { graph, inputs }
    }

    pub fn all(graphs: &[Graph]) -> Vec<Prepared> {
        graphs.iter().cloned().map(Prepared::new).collect()
    }
}

/// The pre-training objective over graphs whose masks are already drawn.
/// Every mask must have at least one pair.
pub fn pretrain_objective(
    tape: &mut Tape,
    items: &[(&Prepared, &MaskedGraph)],
    model: &PretrainModel<Var>,
    cfg: &EncoderConfig,
    schema: &Schema,
    alpha: f64,
) -> Result<PretrainVars> {
    if items.is_empty() {
        return Err(Error::Contract("pre-training batch is empty".into()));
    }
    let mut cons = Vec::with_capacity(items.len());
    let mut pis = Vec::with_capacity(items.len());
    for (prep, masked) in items {
        let z = encode(tape, &prep.inputs, &model.encoder, cfg)?;
        let noisy_inputs = GraphInputs::new(&masked.noisy);
        let z_hat = encode(tape, &noisy_inputs, &model.encoder, cfg)?;
        cons.push(contrastive_loss(tape, z, z_hat, &masked.mask_pairs)?);
        let (nl, el) = decode(tape, z, &prep.inputs, &model.decoder)?;
        pis.push(reconstruction_loss(tape, nl, el, &prep.graph, schema)?);
    }
    let con = tape.concat_rows(&cons)?;
    let l_con = tape.mean(con, Reduce::All)?;
    let pi = tape.concat_rows(&pis)?;
    let l_pi = tape.mean(pi, Reduce::All)?;
    let weighted = tape.scale(l_pi, alpha);
    let l_pre = tape.add(l_con, weighted)?;
    Ok(PretrainVars { l_con, l_pi, l_pre })
}

#[derive(Debug, Clone)]
pub struct PretrainStep {
    pub parts: PretrainLossParts,
    /// Canonical flat order of [`PretrainModel`].
    pub grads: Vec<Tensor>,
    pub used: usize,
    pub skipped: usize,
}

/// Masks each graph, skipping (with a warning) those whose masked nodes are
/// all isolated, then evaluates and differentiates the batch objective.
pub fn pretrain_step<R: Rng + ?Sized>(
    batch: &[&Prepared],
    model: &PretrainModel,
    cfg: &EncoderConfig,
    schema: &Schema,
    alpha: f64,
    mask_ratio: f64,
    rng: &mut R,
) -> Result<PretrainStep> {
    if batch.is_empty() {
        return Err(Error::Contract("pre-training batch is empty".into()));
    }
    let masks: Vec<MaskedGraph> = batch
        .iter()
        .map(|p| mask_graph(&p.graph, schema, mask_ratio, rng))
        .collect();
    let items: Vec<(&Prepared, &MaskedGraph)> = batch
        .iter()
        .copied()
        .zip(&masks)
        .filter(|(_, m)| !m.mask_pairs.is_empty())
        .collect();
    let skipped = batch.len() - items.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} graph(s) whose masked nodes have no neighbours");
    }
    if items.is_empty() {
        return Err(Error::Contract("every graph in the batch was skipped".into()));
    }
    let mut tape = Tape::new();
    let bound = bind(model, &mut tape);
    let vars = pretrain_objective(&mut tape, &items, &bound, cfg, schema, alpha)?;
    let grads = tape.backward(vars.l_pre)?;
    Ok(PretrainStep {
        parts: PretrainLossParts {
            l_con: tape.value(vars.l_con).item()?,
            l_pi: tape.value(vars.l_pi).item()?,
            l_pre: tape.value(vars.l_pre).item()?,
            alpha,
        },
        grads: collect_grads(&bound, &tape, &grads),
        used: items.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub alpha: f64,
    pub mask_ratio: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mi_bins: usize,
    /// Estimate MI every this many epochs (and always at the last); 0 disables.
    pub mi_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder: EncoderConfig::default(),
            alpha: 0.1,
            mask_ratio: 0.25,
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            mi_bins: 30,
            mi_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub l_con: f64,
    pub l_pi: f64,
    pub l_pre: f64,
    /// `(I(X;Z), I(Y;Z))` in bits on the training set.
    pub mi: Option<(f64, f64)>,
    pub lr: f64,
    pub skipped: usize,
    pub wall: Duration,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: PretrainModel,
    pub epochs: Vec<PretrainEpoch>,
    pub rng_summary: String,
}

/// Readout rows of every graph under `enc`.
pub fn readouts(enc: &EncoderParams, graphs: &[Prepared], cfg: &EncoderConfig) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let p = bind_frozen(enc, &mut tape);
    let bound = tape.len();
    let mut rows = Vec::with_capacity(graphs.len());
    for g in graphs {
        let z = encode(&mut tape, &g.inputs, &p, cfg)?;
        let r = readout_mean(&mut tape, z)?;
        rows.push(tape.value(r).data().to_vec());
        // keep the working set to one graph
        tape.truncate(bound);
    }
    Ok(rows)
}

pub(crate) fn mi_due(epoch: usize, every: usize, last: usize) -> bool {
    every > 0 && (epoch.is_multiple_of(every) || epoch == last)
}

pub fn run_pretraining(train: &[Graph], schema: &Schema, cfg: &PretrainConfig, seed: u64) -> Result<PretrainOutcome> {
    let model = PretrainModel::init(seed, &cfg.encoder, schema);
    run_pretraining_from(model, train, schema, cfg, seed)
}

/// Shuffled mini-batch Adam from the given starting point.
pub fn run_pretraining_from(
    mut model: PretrainModel,
    train: &[Graph],
    schema: &Schema,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    if train.is_empty() || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Contract("pre-training needs graphs, batch_size >= 1 and epochs >= 1".into()));
    }
    let prepared = Prepared::all(train);
    let mut shuffle_rng = substream(seed, Stream::Shuffle, Some(Phase::Pretrain));
    let mut mask_rng = substream(seed, Stream::Mask, Some(Phase::Pretrain));
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut con, mut pi, mut pre, mut used, mut skipped) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let step = match pretrain_step(&batch, &model, &cfg.encoder, schema, cfg.alpha, cfg.mask_ratio, &mut mask_rng) {
                Ok(s) => s,
                Err(Error::Contract(msg)) if msg.starts_with("every graph") => {
                    log::warn!("epoch {epoch}: batch skipped entirely");
                    skipped += batch.len();
                    continue;
                }
                Err(e) => return Err(e),
            };
            let p = step.parts;
            if !(p.l_pre.is_finite() && p.l_con.is_finite() && p.l_pi.is_finite()) {
                return Err(Error::Numerical(format!(
                    "pre-training epoch {epoch}: l_con={} l_pi={} l_pre={}",
                    p.l_con, p.l_pi, p.l_pre
                )));
            }
            let w = step.used as f64;
            con += p.l_con * w;
            pi += p.l_pi * w;
            pre += p.l_pre * w;
            used += step.used;
            skipped += step.skipped;
            let mut flat = flatten(&model);
            let mut refs: Vec<&mut Tensor> = flat.iter_mut().collect();
            adam_step(&mut refs, &step.grads, &mut state, &adam)?;
            model = unflatten(&model, flat);
        }
        if used == 0 {
            return Err(Error::Contract(format!("pre-training epoch {epoch} used no graphs")));
        }
        let n = used as f64;
        let mi = if mi_due(epoch, cfg.mi_every, cfg.epochs) {
            Some(estimate_epoch_mi(&prepared, &model.encoder, &cfg.encoder, cfg.mi_bins)?)
        } else {
            None
        };
        epochs.push(PretrainEpoch {
            epoch,
            l_con: con / n,
            l_pi: pi / n,
            l_pre: pre / n,
            mi,
            lr: cfg.lr,
            skipped,
            wall: start.elapsed(),
        });
    }
    let rng_summary = crate::rng::summary(
        seed,
        &[(Stream::Mask, &mask_rng), (Stream::Shuffle, &shuffle_rng)],
    );
    Ok(PretrainOutcome {
        model,
        epochs,
        rng_summary,
    })
}
