//! Flat `key=value` experiment configuration.

use std::fmt::Write as _;

use crate::dataset::DatasetSpec;
use crate::encoder::{EncoderConfig, LayerKind};
use crate::error::{Error, Result};
use crate::finetune::{FinetuneConfig, ReparamScale};
use crate::graph::Schema;
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub split: (f64, f64, f64),
    pub encoder: EncoderConfig,
    pub alpha: f64,
    pub beta: f64,
    pub mask_ratio: f64,
    pub lr: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub scheduler_factor: f64,
    pub scheduler_period: usize,
    pub mi_bins: usize,
    pub mi_every: usize,
    pub reparam_scale: ReparamScale,
    /// Fill the `wall_ms` metrics column; off by default so CSVs stay byte-reproducible.
    pub record_wall_time: bool,
    pub sweep_alphas: Vec<f64>,
    pub sweep_betas: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetSpec::default(),
            split: (0.8, 0.1, 0.1),
            encoder: EncoderConfig::default(),
            alpha: 0.1,
            beta: 0.001,
            mask_ratio: 0.25,
            lr: 1e-3,
            epochs_pretrain: 100,
            epochs_finetune: 100,
            batch_size: 32,
            scheduler_factor: 0.3,
            scheduler_period: 30,
            mi_bins: 30,
            mi_every: 1,
            reparam_scale: ReparamScale::Std,
            record_wall_time: false,
            sweep_alphas: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            sweep_betas: vec![0.001],
            sweep_seeds: (0..5).collect(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return Err(Error::config(key, "must be finite"));
    }
    Ok(x)
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(key, s))
        .collect()
}

fn join_list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {} is not key=value", i + 1)))?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.dataset;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "n_graphs" => d.n_graphs = parse_num(key, v)?,
            "nodes_min" => d.nodes_min = parse_num(key, v)?,
            "nodes_max" => d.nodes_max = parse_num(key, v)?,
            "edge_density" => d.edge_density = parse_f64(key, v)?,
            "node_channels" => d.schema.node_channels = parse_num(key, v)?,
            "node_card" => d.schema.node_card = parse_num(key, v)?,
            "edge_channels" => d.schema.edge_channels = parse_num(key, v)?,
            "edge_card" => d.schema.edge_card = parse_num(key, v)?,
            "motif_size" => d.motif.size = parse_num(key, v)?,
            "motif_channel" => d.motif.channel = parse_num(key, v)?,
            "motif_code" => d.motif.code = parse_num(key, v)?,
            "positive_fraction" => d.positive_fraction = parse_f64(key, v)?,
            "split_train" => self.split.0 = parse_f64(key, v)?,
            "split_valid" => self.split.1 = parse_f64(key, v)?,
            "split_test" => self.split.2 = parse_f64(key, v)?,
            "layer_kind" => {
                self.encoder.kind = LayerKind::parse(v).ok_or_else(|| Error::config(key, format!("`{v}` is not gin or gcn")))?
            }
            "num_layers" => self.encoder.num_layers = parse_num(key, v)?,
            "hidden_dim" => self.encoder.hidden_dim = parse_num(key, v)?,
            "gin_eps" => self.encoder.gin_eps = parse_f64(key, v)?,
            "alpha" => self.alpha = parse_f64(key, v)?,
            "beta" => self.beta = parse_f64(key, v)?,
            "mask_ratio" => self.mask_ratio = parse_f64(key, v)?,
            "lr" => self.lr = parse_f64(key, v)?,
            "epochs_pretrain" => self.epochs_pretrain = parse_num(key, v)?,
            "epochs_finetune" => self.epochs_finetune = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "scheduler_factor" => self.scheduler_factor = parse_f64(key, v)?,
            "scheduler_period" => self.scheduler_period = parse_num(key, v)?,
            "mi_bins" => self.mi_bins = parse_num(key, v)?,
            "mi_every" => self.mi_every = parse_num(key, v)?,
            "reparam_scale" => {
                self.reparam_scale =
                    ReparamScale::parse(v).ok_or_else(|| Error::config(key, format!("`{v}` is not std or var")))?
            }
            "record_wall_time" => self.record_wall_time = parse_num(key, v)?,
            "sweep_alphas" => self.sweep_alphas = parse_list(key, v, parse_f64)?,
            "sweep_betas" => self.sweep_betas = parse_list(key, v, parse_f64)?,
            "sweep_seeds" => self.sweep_seeds = parse_list(key, v, parse_num)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset
            .validate()
            .map_err(|(k, m)| Error::config(k, m))?;
        let (a, b, c) = self.split;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::config("split_train", "split fractions must be positive and sum to 1"));
        }
        let checks: [(&str, bool, &str); 13] = [
            ("num_layers", self.encoder.num_layers >= 1, "must be >= 1"),
            ("hidden_dim", self.encoder.hidden_dim >= 1, "must be >= 1"),
            ("alpha", self.alpha >= 0.0, "must be >= 0"),
            ("beta", self.beta >= 0.0, "must be >= 0"),
            ("mask_ratio", (0.0..=1.0).contains(&self.mask_ratio), "must lie in [0, 1]"),
            ("lr", self.lr >= 0.0, "must be >= 0"),
            ("epochs_pretrain", self.epochs_pretrain >= 1, "must be >= 1"),
            ("epochs_finetune", self.epochs_finetune >= 1, "must be >= 1"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("scheduler_factor", self.scheduler_factor > 0.0, "must be > 0"),
            ("scheduler_period", self.scheduler_period >= 1, "must be >= 1"),
            ("mi_bins", self.mi_bins >= 2, "must be >= 2"),
            ("sweep_alphas", self.sweep_alphas.iter().all(|&x| x >= 0.0), "entries must be >= 0"),
        ];
        for (key, ok, msg) in checks {
            if !ok {
                return Err(Error::config(key, msg));
            }
        }
        if self.sweep_betas.iter().any(|&x| x < 0.0) {
            return Err(Error::config("sweep_betas", "entries must be >= 0"));
        }
        Ok(())
    }

    /// Every key, one per line; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let s = &d.schema;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("n_graphs", d.n_graphs.to_string());
        kv("nodes_min", d.nodes_min.to_string());
        kv("nodes_max", d.nodes_max.to_string());
        kv("edge_density", d.edge_density.to_string());
        kv("node_channels", s.node_channels.to_string());
        kv("node_card", s.node_card.to_string());
        kv("edge_channels", s.edge_channels.to_string());
        kv("edge_card", s.edge_card.to_string());
        kv("motif_size", d.motif.size.to_string());
        kv("motif_channel", d.motif.channel.to_string());
        kv("motif_code", d.motif.code.to_string());
        kv("positive_fraction", d.positive_fraction.to_string());
        kv("split_train", self.split.0.to_string());
        kv("split_valid", self.split.1.to_string());
        kv("split_test", self.split.2.to_string());
        kv("layer_kind", self.encoder.kind.name().to_string());
        kv("num_layers", self.encoder.num_layers.to_string());
        kv("hidden_dim", self.encoder.hidden_dim.to_string());
        kv("gin_eps", self.encoder.gin_eps.to_string());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("mask_ratio", self.mask_ratio.to_string());
        kv("lr", self.lr.to_string());
        kv("epochs_pretrain", self.epochs_pretrain.to_string());
        kv("epochs_finetune", self.epochs_finetune.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("scheduler_factor", self.scheduler_factor.to_string());
        kv("scheduler_period", self.scheduler_period.to_string());
        kv("mi_bins", self.mi_bins.to_string());
        kv("mi_every", self.mi_every.to_string());
        kv("reparam_scale", self.reparam_scale.name().to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        kv("sweep_alphas", join_list(&self.sweep_alphas));
        kv("sweep_betas", join_list(&self.sweep_betas));
        kv("sweep_seeds", join_list(&self.sweep_seeds));
        out
    }

    pub fn schema(&self) -> Schema {
        self.dataset.schema
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            encoder: self.encoder,
            alpha: self.alpha,
            mask_ratio: self.mask_ratio,
            lr: self.lr,
            epochs: self.epochs_pretrain,
            batch_size: self.batch_size,
            mi_bins: self.mi_bins,
            mi_every: self.mi_every,
        }
    }

    pub fn finetune(&self) -> FinetuneConfig {
        FinetuneConfig {
            encoder: self.encoder,
            beta: self.beta,
            lr: self.lr,
            epochs: self.epochs_finetune,
            batch_size: self.batch_size,
            scheduler_factor: self.scheduler_factor,
            scheduler_period: self.scheduler_period,
            mi_bins: self.mi_bins,
            mi_every: self.mi_every,
            reparam: self.reparam_scale,
        }
    }

    /// Names of the fields that fix encoder parameter shapes and that differ.
    pub fn encoder_differences(&self, other: &ExperimentConfig) -> Vec<String> {
        let (a, b) = (&self.encoder, &other.encoder);
        let (sa, sb) = (&self.dataset.schema, &other.dataset.schema);
        let mut diffs = Vec::new();
        let mut cmp = |name: &str, x: String, y: String| {
            if x != y {
                diffs.push(format!("{name} ({x} vs {y})"));
            }
        };
        cmp("layer_kind", a.kind.name().into(), b.kind.name().into());
        cmp("num_layers", a.num_layers.to_string(), b.num_layers.to_string());
        cmp("hidden_dim", a.hidden_dim.to_string(), b.hidden_dim.to_string());
        cmp("gin_eps", a.gin_eps.to_string(), b.gin_eps.to_string());
        cmp("node_channels", sa.node_channels.to_string(), sb.node_channels.to_string());
        cmp("node_card", sa.node_card.to_string(), sb.node_card.to_string());
        cmp("edge_channels", sa.edge_channels.to_string(), sb.edge_channels.to_string());
        cmp("edge_card", sa.edge_card.to_string(), sb.edge_card.to_string());
        diffs
    }
}
