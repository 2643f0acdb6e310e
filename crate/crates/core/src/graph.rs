use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Channel counts and code cardinalities shared by every graph in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub node_channels: usize,
    pub node_card: usize,
    pub edge_channels: usize,
    pub edge_card: usize,
}

impl Schema {
    /// Reserved node code used by masking; embedding tables have one row more.
    pub fn node_mask_code(&self) -> usize {
        self.node_card
    }

    pub fn edge_mask_code(&self) -> usize {
        self.edge_card
    }
}

/// Undirected graph with categorical node and edge attributes.
///
/// An edge appears once in `edges`; `edge_attrs[i]` belongs to `edges[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub num_nodes: usize,
    pub node_attrs: Vec<Vec<usize>>,
    pub edges: Vec<(usize, usize)>,
    pub edge_attrs: Vec<Vec<usize>>,
    pub label: u8,
}

impl Graph {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Checks topology and that codes lie in `[0, card]` when `allow_mask`,
    /// `[0, card)` otherwise.
    pub fn validate(&self, schema: &Schema, allow_mask: bool) -> Result<()> {
        let slack = usize::from(allow_mask);
        if self.num_nodes == 0 {
            return Err(Error::Contract("graph has no nodes".into()));
        }
        if self.label > 1 {
            return Err(Error::Contract(format!("label {} is not binary", self.label)));
        }
        if self.node_attrs.len() != self.num_nodes {
            return Err(Error::Contract(format!(
                "{} attribute rows for {} nodes",
                self.node_attrs.len(),
                self.num_nodes
            )));
        }
        for (v, codes) in self.node_attrs.iter().enumerate() {
            check_codes(codes, schema.node_channels, schema.node_card + slack)
                .map_err(|m| Error::Contract(format!("node {v}: {m}")))?;
        }
        if self.edge_attrs.len() != self.edges.len() {
            return Err(Error::Contract(format!(
                "{} edge attribute rows for {} edges",
                self.edge_attrs.len(),
                self.edges.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            if u == v {
                return Err(Error::Contract(format!("edge {i} is a self-loop on {u}")));
            }
            if u >= self.num_nodes || v >= self.num_nodes {
                return Err(Error::Contract(format!(
                    "edge {i} ({u}, {v}) out of range for {} nodes",
                    self.num_nodes
                )));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Contract(format!("edge {i} ({u}, {v}) is duplicated")));
            }
            check_codes(&self.edge_attrs[i], schema.edge_channels, schema.edge_card + slack)
                .map_err(|m| Error::Contract(format!("edge {i}: {m}")))?;
        }
        Ok(())
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Same graph with node `v` renamed to `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let mut node_attrs = vec![Vec::new(); self.num_nodes];
        for (v, codes) in self.node_attrs.iter().enumerate() {
            node_attrs[perm[v]] = codes.clone();
        }
        Graph {
            num_nodes: self.num_nodes,
            node_attrs,
            edges: self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect(),
            edge_attrs: self.edge_attrs.clone(),
            label: self.label,
        }
    }
}

fn check_codes(codes: &[usize], channels: usize, bound: usize) -> std::result::Result<(), String> {
    if codes.len() != channels {
        return Err(format!("{} codes for {channels} channels", codes.len()));
    }
    if let Some(c) = codes.iter().find(|&&c| c >= bound) {
        return Err(format!("code {c} exceeds cardinality {bound}"));
    }
    Ok(())
}

/// Directed message lists for one graph: each undirected edge yields two
/// messages, `src[k] -> dst[k]`, carrying the attributes of `edge[k]`.
#[derive(Debug, Clone)]
pub struct MessageIndex {
    pub num_nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub edge: Arc<[usize]>,
}

impl MessageIndex {
    pub fn new(g: &Graph) -> Self {
        let m = 2 * g.edges.len();
        let (mut src, mut dst, mut edge) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
        for (i, &(u, v)) in g.edges.iter().enumerate() {
            src.extend([u, v]);
            dst.extend([v, u]);
            edge.extend([i, i]);
        }
        MessageIndex {
            num_nodes: g.num_nodes,
            src: src.into(),
            dst: dst.into(),
            edge: edge.into(),
        }
    }
}
