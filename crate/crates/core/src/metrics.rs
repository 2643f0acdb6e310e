//! Versioned per-epoch metrics CSV. Absent values are empty cells.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::finetune::FinetuneEpoch;
use crate::pretrain::PretrainEpoch;
use crate::rng::Phase;

pub const SCHEMA_LINE: &str = "#schema=dbp-metrics-v1";
pub const COLUMNS: [&str; 14] = [
    "epoch",
    "phase",
    "loss_total",
    "loss_con",
    "loss_pi",
    "loss_cls",
    "loss_fi",
    "mi_xz_bits",
    "mi_yz_bits",
    "train_auc",
    "test_auc",
    "gen_gap",
    "lr",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_total: Option<f64>,
    pub loss_con: Option<f64>,
    pub loss_pi: Option<f64>,
    pub loss_cls: Option<f64>,
    pub loss_fi: Option<f64>,
    pub mi_xz_bits: Option<f64>,
    pub mi_yz_bits: Option<f64>,
    pub train_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub gen_gap: Option<f64>,
    pub lr: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl MetricsRow {
    pub fn empty(epoch: usize, phase: Phase) -> Self {
        MetricsRow {
            epoch,
            phase,
            loss_total: None,
            loss_con: None,
            loss_pi: None,
            loss_cls: None,
            loss_fi: None,
            mi_xz_bits: None,
            mi_yz_bits: None,
            train_auc: None,
            test_auc: None,
            gen_gap: None,
            lr: None,
            wall_ms: None,
        }
    }

    pub fn from_pretrain(e: &PretrainEpoch, with_wall: bool) -> Self {
        MetricsRow {
            loss_total: Some(e.l_pre),
            loss_con: Some(e.l_con),
            loss_pi: Some(e.l_pi),
            mi_xz_bits: e.mi.map(|m| m.0),
            mi_yz_bits: e.mi.map(|m| m.1),
            lr: Some(e.lr),
            wall_ms: with_wall.then_some(e.wall.as_secs_f64() * 1e3),
            ..MetricsRow::empty(e.epoch, Phase::Pretrain)
        }
    }

    pub fn from_finetune(e: &FinetuneEpoch, with_wall: bool) -> Self {
        MetricsRow {
            loss_total: Some(e.l_fine),
            loss_cls: Some(e.l_cls),
            loss_fi: Some(e.l_fi),
            mi_xz_bits: e.mi.map(|m| m.0),
            mi_yz_bits: e.mi.map(|m| m.1),
            train_auc: Some(e.metrics.train_auc),
            test_auc: Some(e.metrics.test_auc),
            gen_gap: Some(e.metrics.generalization_gap),
            lr: Some(e.lr),
            wall_ms: with_wall.then_some(e.wall.as_secs_f64() * 1e3),
            ..MetricsRow::empty(e.epoch, Phase::Finetune)
        }
    }

    fn values(&self) -> [Option<f64>; 12] {
        [
            self.loss_total,
            self.loss_con,
            self.loss_pi,
            self.loss_cls,
            self.loss_fi,
            self.mi_xz_bits,
            self.mi_yz_bits,
            self.train_auc,
            self.test_auc,
            self.gen_gap,
            self.lr,
            self.wall_ms,
        ]
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("{},{}", self.epoch, self.phase.tag());
        for v in self.values() {
            s.push(',');
            if let Some(x) = v {
                write!(s, "{x}").unwrap();
            }
        }
        s
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != COLUMNS.len() {
            return Err(Error::parse(line_no, format!("expected {} cells, got {}", COLUMNS.len(), cells.len())));
        }
        let epoch = cells[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad epoch `{}`", cells[0])))?;
        let phase = Phase::from_tag(cells[1]).ok_or_else(|| Error::parse(line_no, format!("bad phase `{}`", cells[1])))?;
        let mut v = [None; 12];
        for (slot, (cell, col)) in v.iter_mut().zip(cells[2..].iter().zip(&COLUMNS[2..])) {
            if !cell.is_empty() {
                *slot = Some(
                    cell.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("bad {col} `{cell}`")))?,
                );
            }
        }
        Ok(MetricsRow {
            epoch,
            phase,
            loss_total: v[0],
            loss_con: v[1],
            loss_pi: v[2],
            loss_cls: v[3],
            loss_fi: v[4],
            mi_xz_bits: v[5],
            mi_yz_bits: v[6],
            train_auc: v[7],
            test_auc: v[8],
            gen_gap: v[9],
            lr: v[10],
            wall_ms: v[11],
        })
    }
}

pub fn format_metrics(rows: &[MetricsRow]) -> String {
    let mut out = format!("{SCHEMA_LINE}\n{}\n", COLUMNS.join(","));
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SCHEMA_LINE) {
        return Err(Error::parse(1, format!("expected `{SCHEMA_LINE}`")));
    }
    if lines.next() != Some(COLUMNS.join(",").as_str()) {
        return Err(Error::parse(2, "unexpected column header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| MetricsRow::parse_line(l, i + 3))
        .collect()
}

pub fn save_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    std::fs::write(path, format_metrics(rows)).map_err(|e| Error::io(path, e))
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}
