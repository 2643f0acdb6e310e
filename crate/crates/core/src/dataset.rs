//! Synthetic planted-motif benchmark, stratified splitting and the text formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Schema};
use crate::rng::{substream, Stream};

const MAX_REJECTIONS: usize = 10_000;

/// A clique of `size` nodes whose channel-`channel` code is `code`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Motif {
    pub size: usize,
    pub channel: usize,
    pub code: usize,
}

impl Default for Motif {
    fn default() -> Self {
        Motif {
            size: 3,
            channel: 0,
            code: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_graphs: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub edge_density: f64,
    pub schema: Schema,
    pub motif: Motif,
    pub positive_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_graphs: 400,
            nodes_min: 8,
            nodes_max: 16,
            edge_density: 0.3,
            schema: Schema {
                node_channels: 2,
                node_card: 4,
                edge_channels: 1,
                edge_card: 3,
            },
            motif: Motif::default(),
            positive_fraction: 0.5,
        }
    }
}

impl DatasetSpec {
    /// Returns the name of the first offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let s = &self.schema;
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(("positive_fraction", "must lie in (0, 1)".into()));
        }
        if self.nodes_min == 0 || self.nodes_min > self.nodes_max {
            return Err(("nodes_min", "need 1 <= nodes_min <= nodes_max".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return Err(("edge_density", "must lie in [0, 1]".into()));
        }
        if s.node_channels == 0 || s.node_card == 0 {
            return Err(("node_channels", "need at least one channel and one code".into()));
        }
        if s.edge_card == 0 {
            return Err(("edge_card", "must be >= 1".into()));
        }
        if self.motif.size < 2 || self.motif.size > self.nodes_min {
            return Err(("motif_size", "need 2 <= motif_size <= nodes_min".into()));
        }
        if self.motif.channel >= s.node_channels || self.motif.code >= s.node_card {
            return Err(("motif_code", "motif channel/code outside the schema".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema: Schema,
    pub graphs: Vec<Graph>,
}

/// Whether `g` contains the motif, by backtracking over candidate nodes.
pub fn contains_motif(g: &Graph, motif: &Motif) -> bool {
    let adj = g.neighbors();
    let candidates: Vec<usize> = (0..g.num_nodes)
        .filter(|&v| g.node_attrs[v][motif.channel] == motif.code && adj[v].len() + 1 >= motif.size)
        .collect();
    let mut clique = Vec::with_capacity(motif.size);
    extend_clique(&adj, &candidates, 0, motif.size, &mut clique)
}

fn extend_clique(adj: &[Vec<usize>], cand: &[usize], start: usize, k: usize, clique: &mut Vec<usize>) -> bool {
    if clique.len() == k {
        return true;
    }
    for i in start..cand.len() {
        let v = cand[i];
        if clique.iter().all(|&u| adj[u].binary_search(&v).is_ok()) {
            clique.push(v);
            if extend_clique(adj, cand, i + 1, k, clique) {
                return true;
            }
            clique.pop();
        }
    }
    false
}

fn random_graph(spec: &DatasetSpec, rng: &mut ChaCha8Rng, label: u8) -> Graph {
    let s = &spec.schema;
    let n = rng.gen_range(spec.nodes_min..=spec.nodes_max);
    let node_attrs = (0..n)
        .map(|_| (0..s.node_channels).map(|_| rng.gen_range(0..s.node_card)).collect())
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(spec.edge_density) {
                edges.push((u, v));
            }
        }
    }
    let edge_attrs = edges
        .iter()
        .map(|_| (0..s.edge_channels).map(|_| rng.gen_range(0..s.edge_card)).collect())
        .collect();
    Graph {
        num_nodes: n,
        node_attrs,
        edges,
        edge_attrs,
        label,
    }
}

fn plant_motif(g: &mut Graph, spec: &DatasetSpec, rng: &mut ChaCha8Rng) {
    let m = spec.motif;
    let mut nodes = index::sample(rng, g.num_nodes, m.size).into_vec();
    nodes.sort_unstable();
    for &v in &nodes {
        g.node_attrs[v][m.channel] = m.code;
    }
    for (i, &u) in nodes.iter().enumerate() {
        for &v in &nodes[i + 1..] {
            if !g.edges.contains(&(u, v)) {
                g.edges.push((u, v));
                g.edge_attrs.push(
                    (0..spec.schema.edge_channels)
                        .map(|_| rng.gen_range(0..spec.schema.edge_card))
                        .collect(),
                );
            }
        }
    }
    let mut paired: Vec<_> = g.edges.iter().copied().zip(g.edge_attrs.drain(..)).collect();
    paired.sort_by_key(|(e, _)| *e);
    (g.edges, g.edge_attrs) = paired.into_iter().unzip();
}

/// `n_graphs` graphs, `round(n_graphs * positive_fraction)` of them positive,
/// in a seeded random order.
pub fn generate_synthetic_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()
        .map_err(|(k, m)| Error::config(k, m))?;
    let mut rng = substream(seed, Stream::Data, None);
    let n_pos = (spec.n_graphs as f64 * spec.positive_fraction + 0.5).floor() as usize;
    let mut labels: Vec<u8> = (0..spec.n_graphs).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);

    let mut graphs = Vec::with_capacity(spec.n_graphs);
    for (i, &label) in labels.iter().enumerate() {
        let g = if label == 1 {
            let mut g = random_graph(spec, &mut rng, 1);
            plant_motif(&mut g, spec, &mut rng);
            g
        } else {
            let mut attempts = 0;
            loop {
                let g = random_graph(spec, &mut rng, 0);
                if !contains_motif(&g, &spec.motif) {
                    break g;
                }
                attempts += 1;
                if attempts >= MAX_REJECTIONS {
                    return Err(Error::Generation(format!(
                        "graph {i}: {MAX_REJECTIONS} negatives in a row contained the motif"
                    )));
                }
            }
        };
        graphs.push(g);
    }
    Ok(Dataset {
        schema: spec.schema,
        graphs,
    })
}

/// Index lists into a dataset, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn select<'a>(&self, ds: &'a Dataset, part: &[usize]) -> Vec<&'a Graph> {
        part.iter().map(|&i| &ds.graphs[i]).collect()
    }
}

/// Per-label quotas `round(count * fraction)` for train and valid; test takes the rest.
pub fn split_dataset(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut rng = substream(seed, Stream::Split, None);
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..ds.graphs.len())
            .filter(|&i| ds.graphs[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = ((n * ft + 0.5).floor() as usize).min(idx.len());
        let n_valid = ((n * fv + 0.5).floor() as usize).min(idx.len() - n_train);
        split.train.extend_from_slice(&idx[..n_train]);
        split.valid.extend_from_slice(&idx[n_train..n_train + n_valid]);
        split.test.extend_from_slice(&idx[n_train + n_valid..]);
    }
    for (name, part) in [("train", &mut split.train), ("valid", &mut split.valid), ("test", &mut split.test)] {
        part.sort_unstable();
        for label in [0u8, 1] {
            if !part.iter().any(|&i| ds.graphs[i].label == label) {
                return Err(Error::Split(format!("{name} split has no graph with label {label}")));
            }
        }
    }
    Ok(split)
}

const DATASET_MAGIC: &str = "DBPGRAPHS v1";
const SPLIT_MAGIC: &str = "DBPSPLIT v1";

pub fn format_dataset(ds: &Dataset) -> String {
    let s = &ds.schema;
    let mut out = format!(
        "{DATASET_MAGIC} C_n={} K_n={} C_e={} K_e={}\n",
        s.node_channels, s.node_card, s.edge_channels, s.edge_card
    );
    for g in &ds.graphs {
        write!(out, "g {} {} |", g.num_nodes, g.label).unwrap();
        for codes in &g.node_attrs {
            for c in codes {
                write!(out, " {c}").unwrap();
            }
        }
        out.push_str(" |");
        for (&(u, v), codes) in g.edges.iter().zip(&g.edge_attrs) {
            write!(out, " {u} {v}").unwrap();
            for c in codes {
                write!(out, " {c}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> Result<Schema> {
    let rest = line
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| Error::parse(1, format!("expected header `{DATASET_MAGIC} ...`")))?;
    let mut vals = [None; 4];
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("malformed header field `{tok}`")))?;
        let slot = match k {
            "C_n" => 0,
            "K_n" => 1,
            "C_e" => 2,
            "K_e" => 3,
            _ => return Err(Error::parse(1, format!("unknown header field `{k}`"))),
        };
        vals[slot] = Some(
            v.parse::<usize>()
                .map_err(|_| Error::parse(1, format!("bad value for {k}: `{v}`")))?,
        );
    }
    match vals {
        [Some(a), Some(b), Some(c), Some(d)] => Ok(Schema {
            node_channels: a,
            node_card: b,
            edge_channels: c,
            edge_card: d,
        }),
        _ => Err(Error::parse(1, "header must set C_n, K_n, C_e and K_e")),
    }
}

fn parse_ints(section: &str, line: usize) -> Result<Vec<usize>> {
    section
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(line, format!("`{t}` is not a nonnegative integer")))
        })
        .collect()
}

fn parse_graph(text: &str, schema: &Schema, line: usize) -> Result<Graph> {
    let sections: Vec<&str> = text.split('|').collect();
    if sections.len() != 3 {
        return Err(Error::parse(line, "expected three `|`-separated sections"));
    }
    let head: Vec<&str> = sections[0].split_whitespace().collect();
    if head.len() != 3 || head[0] != "g" {
        return Err(Error::parse(line, "record must start with `g <num_nodes> <label>`"));
    }
    let n: usize = head[1]
        .parse()
        .map_err(|_| Error::parse(line, format!("bad node count `{}`", head[1])))?;
    let label: u8 = head[2]
        .parse()
        .map_err(|_| Error::parse(line, format!("bad label `{}`", head[2])))?;

    let node_flat = parse_ints(sections[1], line)?;
    if node_flat.len() != n * schema.node_channels {
        return Err(Error::parse(
            line,
            format!("{} node codes for {n} nodes x {} channels", node_flat.len(), schema.node_channels),
        ));
    }
    let node_attrs = node_flat
        .chunks(schema.node_channels.max(1))
        .map(<[usize]>::to_vec)
        .take(n)
        .collect();

    let edge_flat = parse_ints(sections[2], line)?;
    let stride = 2 + schema.edge_channels;
    if edge_flat.len() % stride != 0 {
        return Err(Error::parse(line, format!("edge section length not a multiple of {stride}")));
    }
    let (mut edges, mut edge_attrs) = (Vec::new(), Vec::new());
    for chunk in edge_flat.chunks(stride) {
        edges.push((chunk[0], chunk[1]));
        edge_attrs.push(chunk[2..].to_vec());
    }
    let g = Graph {
        num_nodes: n,
        node_attrs,
        edges,
        edge_attrs,
        label,
    };
    g.validate(schema, false).map_err(|e| match e {
        Error::Contract(m) => Error::parse(line, m),
        other => other,
    })?;
    Ok(g)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let schema = parse_header(header)?;
    let mut graphs = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(parse_graph(line, &schema, i + 2)?);
    }
    Ok(Dataset { schema, graphs })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, format_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn format_split(split: &Split) -> String {
    let mut out = format!("{SPLIT_MAGIC}\n");
    for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        out.push_str(name);
        for i in part {
            write!(out, " {i}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_split(text: &str, n_graphs: usize) -> Result<Split> {
    let mut lines = text.lines();
    if lines.next() != Some(SPLIT_MAGIC) {
        return Err(Error::parse(1, format!("expected header `{SPLIT_MAGIC}`")));
    }
    let mut parts: [Option<Vec<usize>>; 3] = [None, None, None];
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let (name, rest) = line.split_once(' ').unwrap_or((line, ""));
        let slot = match name {
            "train" => 0,
            "valid" => 1,
            "test" => 2,
            "" => continue,
            other => return Err(Error::parse(lineno, format!("unknown split `{other}`"))),
        };
        let idx = parse_ints(rest, lineno)?;
        if let Some(&bad) = idx.iter().find(|&&j| j >= n_graphs) {
            return Err(Error::parse(lineno, format!("index {bad} out of range for {n_graphs} graphs")));
        }
        parts[slot] = Some(idx);
    }
    let [Some(train), Some(valid), Some(test)] = parts else {
        return Err(Error::parse(0, "split manifest must list train, valid and test"));
    };
    let mut seen = vec![false; n_graphs];
    for &i in train.iter().chain(&valid).chain(&test) {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::parse(0, format!("index {i} listed twice")));
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::parse(0, format!("index {missing} missing from the manifest")));
    }
    Ok(Split { train, valid, test })
}

pub fn save_split(split: &Split, path: &Path) -> Result<()> {
    fs::write(path, format_split(split)).map_err(|e| Error::io(path, e))
}

pub fn load_split(path: &Path, n_graphs: usize) -> Result<Split> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, n_graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quota_and_sizes() {
        let spec = DatasetSpec {
            n_graphs: 200,
            ..DatasetSpec::default()
        };
        let ds = generate_synthetic_dataset(&spec, 3).unwrap();
        assert_eq!(ds.graphs.len(), 200);
        assert_eq!(ds.graphs.iter().filter(|g| g.label == 1).count(), 100);
        for g in &ds.graphs {
            assert!((spec.nodes_min..=spec.nodes_max).contains(&g.num_nodes));
            g.validate(&ds.schema, false).unwrap();
            assert_eq!(contains_motif(g, &spec.motif), g.label == 1);
        }
    }

    #[test]
    fn empty_dataset_round_trip() {
        let ds = Dataset {
            schema: DatasetSpec::default().schema,
            graphs: Vec::new(),
        };
        let text = format_dataset(&ds);
        assert_eq!(text.lines().count(), 1);
        assert_eq!(parse_dataset(&text).unwrap(), ds);
    }

    #[test]
    fn corrupted_code_is_a_parse_error() {
        let text = "DBPGRAPHS v1 C_n=1 K_n=2 C_e=1 K_e=2\ng 2 0 | 0 1 | 0 1 1\ng 2 1 | 0 5 | 0 1 0\n";
        match parse_dataset(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn balanced_split_quotas() {
        let spec = DatasetSpec {
            n_graphs: 200,
            ..DatasetSpec::default()
        };
        let ds = generate_synthetic_dataset(&spec, 1).unwrap();
        let s = split_dataset(&ds, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (160, 20, 20));
        let pos = |p: &[usize]| p.iter().filter(|&&i| ds.graphs[i].label == 1).count();
        assert_eq!((pos(&s.train), pos(&s.valid), pos(&s.test)), (80, 10, 10));
    }

    #[test]
    fn degenerate_split_rejected() {
        let spec = DatasetSpec {
            n_graphs: 10,
            ..DatasetSpec::default()
        };
        let ds = generate_synthetic_dataset(&spec, 1).unwrap();
        let e = 1e-3;
        assert!(matches!(
            split_dataset(&ds, (1.0 - 2.0 * e, e, e), 0),
            Err(Error::Split(_))
        ));
    }
}
