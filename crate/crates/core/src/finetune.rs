//! Supervised fine-tuning with a Gaussian compression head and KL penalty.

use std::time::{Duration, Instant};

use dbp_autodiff::{adam_step, AdamConfig, AdamState, Reduce, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::{encode, readout_mean, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::evaluation::{information_plane, roc_auc, EvalMetrics};
use crate::graph::{Graph, Schema};
use crate::params::{bind, bind_frozen, collect_grads, flatten, join, unflatten, Linear, Mlp, ParamTree};
use crate::pretrain::{mi_due, Prepared};
use crate::rng::{substream, Phase, Stream};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// How the sampled noise is scaled: `exp(logvar / 2)` or `exp(logvar)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReparamScale {
    #[default]
    Std,
    Var,
}

impl ReparamScale {
    pub fn name(self) -> &'static str {
        match self {
            ReparamScale::Std => "std",
            ReparamScale::Var => "var",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "std" => Some(ReparamScale::Std),
            "var" => Some(ReparamScale::Var),
            _ => None,
        }
    }

    fn exponent(self) -> f64 {
        match self {
            ReparamScale::Std => 0.5,
            ReparamScale::Var => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionParams<T = Tensor> {
    pub mean: Mlp<T>,
    pub logvar: Mlp<T>,
}

impl<T> ParamTree for CompressionParams<T> {
    type Leaf = T;
    type With<U> = CompressionParams<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<CompressionParams<U>, E> {
        Ok(CompressionParams {
            mean: self.mean.try_map(&join(prefix, "mean"), f)?,
            logvar: self.logvar.try_map(&join(prefix, "logvar"), f)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<T = Tensor> {
    pub out: Linear<T>,
}

impl<T> ParamTree for ClassifierParams<T> {
    type Leaf = T;
    type With<U> = ClassifierParams<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<ClassifierParams<U>, E> {
        Ok(ClassifierParams {
            out: self.out.try_map(&join(prefix, "out"), f)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneModel<T = Tensor> {
    pub encoder: EncoderParams<T>,
    pub compression: CompressionParams<T>,
    pub classifier: ClassifierParams<T>,
}

impl<T> ParamTree for FinetuneModel<T> {
    type Leaf = T;
    type With<U> = FinetuneModel<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<FinetuneModel<U>, E> {
        Ok(FinetuneModel {
            encoder: self.encoder.try_map(&join(prefix, "encoder"), f)?,
            compression: self.compression.try_map(&join(prefix, "compression"), f)?,
            classifier: self.classifier.try_map(&join(prefix, "classifier"), f)?,
        })
    }
}

impl FinetuneModel<Tensor> {
    /// Heads are drawn first so runs with and without a transferred encoder
    /// start from the same heads for a given seed.
    pub fn init(seed: u64, cfg: &EncoderConfig, schema: &Schema, encoder: Option<EncoderParams>) -> Self {
        let mut rng = substream(seed, Stream::Init, Some(Phase::Finetune));
        let h = cfg.hidden_dim;
        let compression = CompressionParams {
            mean: Mlp::init(&mut rng, h, h, h),
            logvar: Mlp::init(&mut rng, h, h, h),
        };
        let classifier = ClassifierParams {
            out: Linear::init(&mut rng, h, 1),
        };
        let encoder = encoder.unwrap_or_else(|| EncoderParams::init(&mut rng, cfg, schema));
        FinetuneModel {
            encoder,
            compression,
            classifier,
        }
    }
}

/// Deep copy of the pre-trained encoder.
pub fn transfer_parameters(pretrained: &EncoderParams) -> EncoderParams {
    pretrained.clone()
}

/// `(mu, logvar, z_t)` for a batch of graph representations `B x h`.
pub fn compress(
    tape: &mut Tape,
    z_graph: Var,
    comp: &CompressionParams<Var>,
    epsilon: Var,
    scale: ReparamScale,
) -> Result<(Var, Var, Var)> {
    let mu = comp.mean.forward(tape, z_graph)?;
    let raw = comp.logvar.forward(tape, z_graph)?;
    let logvar = tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
    let half = tape.scale(logvar, scale.exponent());
    let sigma = tape.exp(half);
    let noise = tape.mul(sigma, epsilon)?;
    let z_t = tape.add(mu, noise)?;
    Ok((mu, logvar, z_t))
}

/// `0.5 * sum_d (mu^2 + e^logvar - logvar - 1)`, averaged over rows.
pub fn kl_compression_loss(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let rows = tape.value(mu).rows();
    if rows == 0 {
        return Err(Error::Contract("KL of an empty batch".into()));
    }
    let mu2 = tape.mul(mu, mu)?;
    let ev = tape.exp(logvar);
    let a = tape.add(mu2, ev)?;
    let b = tape.sub(a, logvar)?;
    let s = tape.sum_all(b);
    let numel = tape.value(mu).numel() as f64;
    let ones = tape.constant(Tensor::scalar(numel));
    let s = tape.sub(s, ones)?;
    Ok(tape.scale(s, 0.5 / rows as f64))
}

/// `(logits B x 1, batch-mean BCE)`.
pub fn classification_loss(tape: &mut Tape, z_t: Var, labels: &[u8], clf: &ClassifierParams<Var>) -> Result<(Var, Var)> {
    let logits = clf.out.forward(tape, z_t)?;
    if tape.value(logits).rows() != labels.len() {
        return Err(Error::Contract(format!(
            "{} logits for {} labels",
            tape.value(logits).rows(),
            labels.len()
        )));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let p = tape.sigmoid(logits);
    let lp = tape.log(p);
    let neg_logits = tape.neg(logits);
    let q = tape.sigmoid(neg_logits);
    let lq = tape.log(q);
    let yc = tape.constant(Tensor::column(&y));
    let nyc = tape.constant(Tensor::column(&not_y));
    let a = tape.mul(lp, yc)?;
    let b = tape.mul(lq, nyc)?;
    let ll = tape.add(a, b)?;
    let m = tape.mean(ll, Reduce::All)?;
    Ok((logits, tape.neg(m)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneLossParts {
    pub l_cls: f64,
    pub l_fi: f64,
    pub l_fine: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneVars {
    pub l_cls: Var,
    pub l_fi: Var,
    pub l_fine: Var,
    pub logits: Var,
    pub mu: Var,
}

/// Graph readouts stacked into `B x h`.
pub fn batch_readout(tape: &mut Tape, batch: &[&Prepared], enc: &EncoderParams<Var>, cfg: &EncoderConfig) -> Result<Var> {
    let mut rows = Vec::with_capacity(batch.len());
    for p in batch {
        let z = encode(tape, &p.inputs, enc, cfg)?;
        rows.push(readout_mean(tape, z)?);
    }
    Ok(tape.concat_rows(&rows)?)
}

/// The fine-tuning objective with caller-supplied noise `B x h`.
pub fn finetune_objective(
    tape: &mut Tape,
    batch: &[&Prepared],
    model: &FinetuneModel<Var>,
    epsilon: &Tensor,
    cfg: &EncoderConfig,
    beta: f64,
    scale: ReparamScale,
) -> Result<FinetuneVars> {
    if batch.is_empty() {
        return Err(Error::Contract("fine-tuning batch is empty".into()));
    }
    let zg = batch_readout(tape, batch, &model.encoder, cfg)?;
    let eps = tape.constant(epsilon.clone());
    let (mu, logvar, z_t) = compress(tape, zg, &model.compression, eps, scale)?;
    let l_fi = kl_compression_loss(tape, mu, logvar)?;
    let labels: Vec<u8> = batch.iter().map(|p| p.graph.label).collect();
    let (logits, l_cls) = classification_loss(tape, z_t, &labels, &model.classifier)?;
    let weighted = tape.scale(l_fi, beta);
    let l_fine = tape.add(l_cls, weighted)?;
    Ok(FinetuneVars {
        l_cls,
        l_fi,
        l_fine,
        logits,
        mu,
    })
}

#[derive(Debug, Clone)]
pub struct FinetuneStep {
    pub parts: FinetuneLossParts,
    pub grads: Vec<Tensor>,
}

pub fn draw_epsilon<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_rows(rows, cols, data).expect("epsilon shape")
}

/// One fresh standard-normal draw per graph, then the objective and its gradient.
pub fn finetune_step<R: Rng + ?Sized>(
    batch: &[&Prepared],
    model: &FinetuneModel,
    cfg: &EncoderConfig,
    beta: f64,
    scale: ReparamScale,
    rng: &mut R,
) -> Result<FinetuneStep> {
    let eps = draw_epsilon(rng, batch.len(), cfg.hidden_dim);
    let mut tape = Tape::new();
    let bound = bind(model, &mut tape);
    let vars = finetune_objective(&mut tape, batch, &bound, &eps, cfg, beta, scale)?;
    let grads = tape.backward(vars.l_fine)?;
    Ok(FinetuneStep {
        parts: FinetuneLossParts {
            l_cls: tape.value(vars.l_cls).item()?,
            l_fi: tape.value(vars.l_fi).item()?,
            l_fine: tape.value(vars.l_fine).item()?,
            beta,
        },
        grads: collect_grads(&bound, &tape, &grads),
    })
}

/// Noise-free path: `(logits, mu rows)` per graph.
pub fn evaluate(model: &FinetuneModel, graphs: &[Prepared], cfg: &EncoderConfig) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let p = bind_frozen(model, &mut tape);
    let bound = tape.len();
    let mut logits = Vec::with_capacity(graphs.len());
    let mut mus = Vec::with_capacity(graphs.len());
    for g in graphs {
        let z = encode(&mut tape, &g.inputs, &p.encoder, cfg)?;
        let zg = readout_mean(&mut tape, z)?;
        let mu = p.compression.mean.forward(&mut tape, zg)?;
        let logit = p.classifier.out.forward(&mut tape, mu)?;
        logits.push(tape.value(logit).item()?);
        mus.push(tape.value(mu).data().to_vec());
        // keep the working set to one graph
        tape.truncate(bound);
    }
    Ok((logits, mus))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub encoder: EncoderConfig,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub scheduler_factor: f64,
    pub scheduler_period: usize,
    pub mi_bins: usize,
    pub mi_every: usize,
    pub reparam: ReparamScale,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            encoder: EncoderConfig::default(),
            beta: 0.001,
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            scheduler_factor: 0.3,
            scheduler_period: 30,
            mi_bins: 30,
            mi_every: 1,
            reparam: ReparamScale::Std,
        }
    }
}

impl FinetuneConfig {
    /// Learning rate during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = (epoch.saturating_sub(1) / self.scheduler_period.max(1)) as i32;
        self.lr * self.scheduler_factor.powi(drops)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_fi: f64,
    pub l_fine: f64,
    /// `(I(X;Z), I(Y;Z))` of the noise-free `mu` on the training set.
    pub mi: Option<(f64, f64)>,
    pub metrics: EvalMetrics,
    pub lr: f64,
    pub wall: Duration,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: FinetuneModel,
    pub epochs: Vec<FinetuneEpoch>,
    pub rng_summary: String,
}

pub fn run_finetuning(
    mut model: FinetuneModel,
    train: &[Graph],
    test: &[Graph],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    if train.is_empty() || test.is_empty() || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Contract("fine-tuning needs train and test graphs, batch_size >= 1 and epochs >= 1".into()));
    }
    let train_p = Prepared::all(train);
    let test_p = Prepared::all(test);
    let train_labels: Vec<u8> = train.iter().map(|g| g.label).collect();
    let test_labels: Vec<u8> = test.iter().map(|g| g.label).collect();
    let mut shuffle_rng = substream(seed, Stream::Shuffle, Some(Phase::Finetune));
    let mut eps_rng = substream(seed, Stream::Epsilon, Some(Phase::Finetune));
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        let adam = AdamConfig::with_lr(lr);
        order.shuffle(&mut shuffle_rng);
        let (mut cls, mut fi, mut fine) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_p[i]).collect();
            let step = finetune_step(&batch, &model, &cfg.encoder, cfg.beta, cfg.reparam, &mut eps_rng)?;
            let p = step.parts;
            if !(p.l_fine.is_finite() && p.l_cls.is_finite() && p.l_fi.is_finite()) {
                return Err(Error::Numerical(format!(
                    "fine-tuning epoch {epoch}: l_cls={} l_fi={} l_fine={}",
                    p.l_cls, p.l_fi, p.l_fine
                )));
            }
            let w = batch.len() as f64;
            cls += p.l_cls * w;
            fi += p.l_fi * w;
            fine += p.l_fine * w;
            let mut flat = flatten(&model);
            let mut refs: Vec<&mut Tensor> = flat.iter_mut().collect();
            adam_step(&mut refs, &step.grads, &mut state, &adam)?;
            model = unflatten(&model, flat);
        }
        let n = train_p.len() as f64;
        let (train_scores, mus) = evaluate(&model, &train_p, &cfg.encoder)?;
        let (test_scores, _) = evaluate(&model, &test_p, &cfg.encoder)?;
        let metrics = EvalMetrics::new(roc_auc(&train_scores, &train_labels)?, roc_auc(&test_scores, &test_labels)?);
        let mi = if mi_due(epoch, cfg.mi_every, cfg.epochs) {
            Some(information_plane(&mus, &train_labels, cfg.mi_bins)?)
        } else {
            None
        };
        epochs.push(FinetuneEpoch {
            epoch,
            l_cls: cls / n,
            l_fi: fi / n,
            l_fine: fine / n,
            mi,
            metrics,
            lr,
            wall: start.elapsed(),
        });
    }
    let rng_summary = crate::rng::summary(
        seed,
        &[(Stream::Epsilon, &eps_rng), (Stream::Shuffle, &shuffle_rng)],
    );
    Ok(FinetuneOutcome {
        model,
        epochs,
        rng_summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheduler_steps_every_period() {
        let cfg = FinetuneConfig::default();
        assert_eq!(cfg.lr_at(1), 1e-3);
        assert_eq!(cfg.lr_at(30), 1e-3);
        assert_eq!(cfg.lr_at(31), 1e-3 * 0.3);
        assert_eq!(cfg.lr_at(61), 1e-3 * 0.3 * 0.3);
    }
}
