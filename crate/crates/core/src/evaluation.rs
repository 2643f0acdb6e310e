//! Plug-in mutual information over binned representations, exact ROC-AUC,
//! and the generalization gap.

use std::collections::HashMap;

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::pretrain::{readouts, Prepared};
use crate::rng::Phase;

/// Co-occurrence counts of two discrete variables, rows indexing the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointCounts {
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl JointCounts {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged joint count matrix".into()));
        }
        let total = counts.iter().flatten().sum();
        Ok(JointCounts { counts, total })
    }

    /// Joint of two code sequences of equal length.
    pub fn from_codes(xs: &[usize], ys: &[usize]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Contract(format!("{} x codes vs {} y codes", xs.len(), ys.len())));
        }
        let nx = xs.iter().max().map_or(0, |m| m + 1);
        let ny = ys.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; ny]; nx];
        for (&x, &y) in xs.iter().zip(ys) {
            counts[x][y] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn transposed(&self) -> Self {
        let cols = self.counts.first().map_or(0, Vec::len);
        let counts = (0..cols)
            .map(|j| self.counts.iter().map(|r| r[j]).collect())
            .collect();
        JointCounts {
            counts,
            total: self.total,
        }
    }
}

/// `I(X;Y)` in bits from the empirical joint.
pub fn mutual_information_discrete(c: &JointCounts) -> Result<f64> {
    if c.total == 0 {
        return Err(Error::Contract("mutual information of an all-zero joint".into()));
    }
    let n = c.total as f64;
    let cols = c.counts.first().map_or(0, Vec::len);
    let row_sums: Vec<f64> = c.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| c.counts.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let mut mi = 0.0;
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &cij) in row.iter().enumerate() {
            if cij > 0 {
                let cij = cij as f64;
                // p_ij / (p_i p_j) = c_ij N / (r_i k_j)
                mi += (cij / n) * (cij * n / (row_sums[i] * col_sums[j])).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Per-coordinate uniform binning over the observed range, interned to dense
/// codes in order of first appearance. The top edge of each range is closed.
pub fn discretize_activations<R: AsRef<[f64]>>(rows: &[R], n_bins: usize) -> Result<Vec<usize>> {
    if n_bins < 2 {
        return Err(Error::Contract(format!("n_bins = {n_bins}, need at least 2")));
    }
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let dim = first.as_ref().len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for r in rows {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(Error::Contract("rows of unequal width".into()));
        }
        for (d, &v) in r.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite activation {v}")));
            }
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    let mut intern: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut codes = Vec::with_capacity(rows.len());
    for r in rows {
        let key: Vec<u32> = r
            .as_ref()
            .iter()
            .enumerate()
            .map(|(d, &v)| bin_index(v, lo[d], hi[d], n_bins) as u32)
            .collect();
        let next = intern.len();
        codes.push(*intern.entry(key).or_insert(next));
    }
    Ok(codes)
}

pub fn bin_index(v: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    // multiply before dividing so values on an interior edge land in the upper bin
    let b = ((v - lo) * n_bins as f64 / (hi - lo)).floor();
    (b.max(0.0) as usize).min(n_bins - 1)
}

/// `(I(X;Z), I(Y;Z))` with `X` the sample index and `Z` the binned rows.
pub fn information_plane<R: AsRef<[f64]>>(rows: &[R], labels: &[u8], n_bins: usize) -> Result<(f64, f64)> {
    if rows.is_empty() {
        return Err(Error::Contract("information plane of an empty set".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::Contract(format!("{} rows for {} labels", rows.len(), labels.len())));
    }
    let z = discretize_activations(rows, n_bins)?;
    let x: Vec<usize> = (0..rows.len()).collect();
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let ixz = mutual_information_discrete(&JointCounts::from_codes(&x, &z)?)?;
    let iyz = mutual_information_discrete(&JointCounts::from_codes(&y, &z)?)?;
    Ok((ixz, iyz))
}

/// Information plane of the encoder's mean readouts over `graphs`.
pub fn estimate_epoch_mi(graphs: &[Prepared], enc: &EncoderParams, cfg: &EncoderConfig, n_bins: usize) -> Result<(f64, f64)> {
    let rows = readouts(enc, graphs, cfg)?;
    let labels: Vec<u8> = graphs.iter().map(|g| g.graph.label).collect();
    information_plane(&rows, &labels, n_bins)
}

/// Probability that a random positive outscores a random negative, ties half,
/// via midranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract("roc_auc needs both labels present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn generalization_gap(train_auc: f64, test_auc: f64) -> f64 {
    train_auc - test_auc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiRecord {
    pub epoch: usize,
    pub ixz_bits: f64,
    pub iyz_bits: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiTrace {
    records: Vec<MiRecord>,
}

impl MiTrace {
    pub fn push(&mut self, rec: MiRecord) -> Result<()> {
        if let Some(prev) = self.records.iter().rev().find(|r| r.phase == rec.phase) {
            if rec.epoch <= prev.epoch {
                return Err(Error::Contract(format!(
                    "MI epoch {} after {} in one phase",
                    rec.epoch, prev.epoch
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[MiRecord] {
        &self.records
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub train_auc: f64,
    pub test_auc: f64,
    pub generalization_gap: f64,
}

impl EvalMetrics {
    pub fn new(train_auc: f64, test_auc: f64) -> Self {
        EvalMetrics {
            train_auc,
            test_auc,
            generalization_gap: generalization_gap(train_auc, test_auc),
        }
    }
}
