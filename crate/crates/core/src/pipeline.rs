//! generate → pretrain → finetune → report, plus the α × β sweep.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset::{
    generate_synthetic_dataset, load_dataset, load_split, save_dataset, save_split, split_dataset, Dataset, Split,
};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::finetune::{run_finetuning, transfer_parameters, FinetuneModel, FinetuneOutcome};
use crate::graph::Graph;
use crate::metrics::{load_metrics, save_metrics, MetricsRow, SCHEMA_LINE};
use crate::params::named;
use crate::pretrain::{run_pretraining, PretrainOutcome};
use crate::rng::Phase;

/// Split manifest path stored next to a dataset file.
pub fn split_path_for(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".split");
    PathBuf::from(s)
}

/// Default metrics path next to a checkpoint.
pub fn metrics_path_for(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".metrics.csv");
    PathBuf::from(s)
}

pub fn make_data(cfg: &ExperimentConfig) -> Result<(Dataset, Split)> {
    let ds = generate_synthetic_dataset(&cfg.dataset, cfg.seed)?;
    let split = split_dataset(&ds, cfg.split, cfg.seed)?;
    Ok((ds, split))
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(Dataset, Split)> {
    let (ds, split) = make_data(cfg)?;
    save_dataset(&ds, out)?;
    save_split(&split, &split_path_for(out))?;
    log::info!(
        "wrote {} graphs to {} (split {}/{}/{})",
        ds.graphs.len(),
        out.display(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok((ds, split))
}

/// Loads a dataset and its manifest; the dataset schema must equal the config's.
pub fn load_data(cfg: &ExperimentConfig, data: &Path) -> Result<(Dataset, Split)> {
    let ds = load_dataset(data)?;
    let (a, b) = (&ds.schema, &cfg.dataset.schema);
    for (key, x, y) in [
        ("node_channels", a.node_channels, b.node_channels),
        ("node_card", a.node_card, b.node_card),
        ("edge_channels", a.edge_channels, b.edge_channels),
        ("edge_card", a.edge_card, b.edge_card),
    ] {
        if x != y {
            return Err(Error::config(key, format!("dataset has {x}, config has {y}")));
        }
    }
    let split = load_split(&split_path_for(data), ds.graphs.len())?;
    Ok((ds, split))
}

fn owned(ds: &Dataset, part: &[usize]) -> Vec<Graph> {
    part.iter().map(|&i| ds.graphs[i].clone()).collect()
}

pub fn pretrain_on(cfg: &ExperimentConfig, ds: &Dataset, split: &Split) -> Result<PretrainOutcome> {
    run_pretraining(&owned(ds, &split.train), &ds.schema, &cfg.pretrain(), cfg.seed)
}

/// Fine-tunes from `encoder`, or from a fresh random encoder when `None`.
pub fn finetune_on(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &Split,
    encoder: Option<&EncoderParams>,
) -> Result<FinetuneOutcome> {
    let model = FinetuneModel::init(cfg.seed, &cfg.encoder, &ds.schema, encoder.map(transfer_parameters));
    run_finetuning(model, &owned(ds, &split.train), &owned(ds, &split.test), &cfg.finetune(), cfg.seed)
}

pub fn pretrain_rows(out: &PretrainOutcome, cfg: &ExperimentConfig) -> Vec<MetricsRow> {
    out.epochs.iter().map(|e| MetricsRow::from_pretrain(e, cfg.record_wall_time)).collect()
}

pub fn finetune_rows(out: &FinetuneOutcome, cfg: &ExperimentConfig) -> Vec<MetricsRow> {
    out.epochs.iter().map(|e| MetricsRow::from_finetune(e, cfg.record_wall_time)).collect()
}

pub fn cmd_pretrain(cfg: &ExperimentConfig, data: &Path, ckpt_out: &Path, metrics_out: &Path) -> Result<PretrainOutcome> {
    let (ds, split) = load_data(cfg, data)?;
    let out = pretrain_on(cfg, &ds, &split)?;
    save_metrics(&pretrain_rows(&out, cfg), metrics_out)?;
    let ckpt = Checkpoint::new(Phase::Pretrain, named(&out.model, ""), cfg, out.rng_summary.clone())?;
    save_checkpoint(&ckpt, ckpt_out)?;
    Ok(out)
}

pub fn cmd_finetune(
    cfg: &ExperimentConfig,
    data: &Path,
    ckpt_in: Option<&Path>,
    ckpt_out: &Path,
    metrics_out: &Path,
) -> Result<FinetuneOutcome> {
    let (ds, split) = load_data(cfg, data)?;
    let encoder = ckpt_in
        .map(|p| load_checkpoint(p)?.pretrained_encoder(cfg))
        .transpose()?;
    let out = finetune_on(cfg, &ds, &split, encoder.as_ref())?;
    save_metrics(&finetune_rows(&out, cfg), metrics_out)?;
    let ckpt = Checkpoint::new(Phase::Finetune, named(&out.model, ""), cfg, out.rng_summary.clone())?;
    save_checkpoint(&ckpt, ckpt_out)?;
    Ok(out)
}

/// Final-epoch values of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub test_auc: f64,
    pub gen_gap: f64,
    pub mi_xz_bits: Option<f64>,
    pub mi_yz_bits: Option<f64>,
}

impl CellResult {
    pub fn from_outcome(out: &FinetuneOutcome) -> Option<Self> {
        let last = out.epochs.last()?;
        Some(CellResult {
            test_auc: last.metrics.test_auc,
            gen_gap: last.metrics.generalization_gap,
            mi_xz_bits: last.mi.map(|m| m.0),
            mi_yz_bits: last.mi.map(|m| m.1),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub result: std::result::Result<CellResult, String>,
}

pub const SWEEP_SCHEMA_LINE: &str = "#schema=dbp-sweep-v1";
pub const SWEEP_AGG_SCHEMA_LINE: &str = "#schema=dbp-sweep-agg-v1";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_SCHEMA_LINE}\nalpha,beta,seed,status,test_auc,gen_gap,mi_xz_bits,mi_yz_bits\n");
    for r in rows {
        match &r.result {
            Ok(c) => writeln!(
                out,
                "{},{},{},ok,{},{},{},{}",
                r.alpha,
                r.beta,
                r.seed,
                c.test_auc,
                c.gen_gap,
                cell(c.mi_xz_bits),
                cell(c.mi_yz_bits)
            ),
            Err(msg) => writeln!(
                out,
                "{},{},{},error: {},,,,",
                r.alpha,
                r.beta,
                r.seed,
                msg.replace([',', '\n'], ";")
            ),
        }
        .unwrap();
    }
    out
}

/// `(mean, sample std)`; std is 0 for a single value.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// One row per `(alpha, beta)` in first-seen order: counts and mean, std of each final value.
pub fn format_sweep_aggregate(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{SWEEP_AGG_SCHEMA_LINE}\nalpha,beta,n_ok,n_failed,test_auc_mean,test_auc_std,gen_gap_mean,gen_gap_std,mi_xz_mean,mi_xz_std,mi_yz_mean,mi_yz_std\n"
    );
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(a, b)| a.to_bits() == r.alpha.to_bits() && b.to_bits() == r.beta.to_bits()) {
            keys.push((r.alpha, r.beta));
        }
    }
    for (a, b) in keys {
        let group: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.alpha.to_bits() == a.to_bits() && r.beta.to_bits() == b.to_bits())
            .collect();
        let ok: Vec<&CellResult> = group.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let col = |f: &dyn Fn(&CellResult) -> Option<f64>| {
            let xs: Vec<f64> = ok.iter().filter_map(|c| f(c)).collect();
            match mean_std(&xs) {
                Some((m, s)) => format!("{m},{s}"),
                None => ",".into(),
            }
        };
        writeln!(
            out,
            "{a},{b},{},{},{},{},{},{}",
            ok.len(),
            group.len() - ok.len(),
            col(&|c| Some(c.test_auc)),
            col(&|c| Some(c.gen_gap)),
            col(&|c| c.mi_xz_bits),
            col(&|c| c.mi_yz_bits)
        )
        .unwrap();
    }
    out
}

fn cell_name(alpha: f64, beta: f64, seed: u64) -> String {
    format!("a{alpha}_b{beta}_s{seed}")
}

/// Runs every `(alpha, beta, seed)` cell, alpha-major, then beta, then seed.
/// Pre-training is shared by cells with equal `(alpha, seed)`. A failing cell
/// is recorded and the sweep continues. With `out_dir`, per-run metrics CSVs
/// and the summary files are written there.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &Split,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if cfg.sweep_alphas.is_empty() || cfg.sweep_betas.is_empty() || cfg.sweep_seeds.is_empty() {
        return Err(Error::config("sweep_alphas", "sweep grid and seed list must be nonempty"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut cache: HashMap<(u64, u64), std::result::Result<EncoderParams, String>> = HashMap::new();
    let mut rows = Vec::new();
    for &alpha in &cfg.sweep_alphas {
        for &beta in &cfg.sweep_betas {
            for &seed in &cfg.sweep_seeds {
                let mut c = cfg.clone();
                c.alpha = alpha;
                c.beta = beta;
                c.seed = seed;
                let pre = cache.entry((alpha.to_bits(), seed)).or_insert_with(|| {
                    let out = pretrain_on(&c, ds, split).map_err(|e| e.to_string())?;
                    if let Some(dir) = out_dir {
                        let path = dir.join(format!("pretrain_a{alpha}_s{seed}.csv"));
                        save_metrics(&pretrain_rows(&out, &c), &path).map_err(|e| e.to_string())?;
                    }
                    Ok(out.model.encoder)
                });
                let result = match pre {
                    Err(msg) => Err(format!("pretrain: {msg}")),
                    Ok(enc) => finetune_on(&c, ds, split, Some(enc))
                        .and_then(|out| {
                            if let Some(dir) = out_dir {
                                let path = dir.join(format!("finetune_{}.csv", cell_name(alpha, beta, seed)));
                                save_metrics(&finetune_rows(&out, &c), &path)?;
                            }
                            CellResult::from_outcome(&out).ok_or_else(|| Error::Contract("no epochs".into()))
                        })
                        .map_err(|e| e.to_string()),
                };
                if let Err(msg) = &result {
                    log::warn!("sweep cell {} failed: {msg}", cell_name(alpha, beta, seed));
                }
                rows.push(SweepRow {
                    alpha,
                    beta,
                    seed,
                    result,
                });
            }
        }
    }
    if let Some(dir) = out_dir {
        for (name, text) in [
            ("sweep_summary.csv", format_sweep(&rows)),
            ("sweep_aggregate.csv", format_sweep_aggregate(&rows)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(rows)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, data: &Path, out_dir: &Path) -> Result<Vec<SweepRow>> {
    let (ds, split) = load_data(cfg, data)?;
    run_sweep(cfg, &ds, &split, Some(out_dir))
}

/// Trace and sweep extracts from every metrics CSV and sweep aggregate in `input_dir`:
/// `mi_trace.csv` (MI trace), `auc_trace.csv` (train/test AUC per fine-tuning epoch),
/// `gap_trace.csv` (generalization gap per epoch) and `sweep_auc.csv` (mean test AUC per cell).
pub fn cmd_report(input_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(input_dir)
        .map_err(|e| Error::io(input_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut mi = String::from("run,phase,epoch,mi_xz_bits,mi_yz_bits\n");
    let mut auc = String::from("run,epoch,train_auc,test_auc\n");
    let mut gap = String::from("run,epoch,gen_gap\n");
    let mut sweep = String::from("alpha,beta,n_ok,test_auc_mean,test_auc_std\n");
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let run = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let first = text.lines().next().unwrap_or("");
        if first == SCHEMA_LINE {
            for r in load_metrics(path)? {
                if r.mi_xz_bits.is_some() || r.mi_yz_bits.is_some() {
                    writeln!(mi, "{run},{},{},{},{}", r.phase.tag(), r.epoch, cell(r.mi_xz_bits), cell(r.mi_yz_bits)).unwrap();
                }
                if r.phase == Phase::Finetune {
                    writeln!(auc, "{run},{},{},{}", r.epoch, cell(r.train_auc), cell(r.test_auc)).unwrap();
                    writeln!(gap, "{run},{},{}", r.epoch, cell(r.gen_gap)).unwrap();
                }
            }
        } else if first == SWEEP_AGG_SCHEMA_LINE {
            for line in text.lines().skip(2).filter(|l| !l.is_empty()) {
                let c: Vec<&str> = line.split(',').collect();
                if c.len() < 6 {
                    return Err(Error::Format(format!("{}: short aggregate row", path.display())));
                }
                writeln!(sweep, "{},{},{},{},{}", c[0], c[1], c[2], c[4], c[5]).unwrap();
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, body) in [("mi_trace.csv", mi), ("auc_trace.csv", auc), ("gap_trace.csv", gap), ("sweep_auc.csv", sweep)] {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}
