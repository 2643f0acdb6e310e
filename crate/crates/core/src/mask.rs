use rand::seq::index;
use rand::Rng;

use crate::graph::{Graph, Schema};

/// A graph with some node attributes, and the attributes of their incident
/// edges, replaced by the schema's mask codes. Topology is untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedGraph {
    pub noisy: Graph,
    pub masked_nodes: Vec<usize>,
    pub masked_edges: Vec<usize>,
    /// `(masked u, neighbour v)`, sorted.
    pub mask_pairs: Vec<(usize, usize)>,
}

/// `max(1, floor(ratio * n + 0.5))` for positive ratios, capped at `n`; zero for ratio 0.
pub fn masked_count(node_ratio: f64, num_nodes: usize) -> usize {
    if node_ratio <= 0.0 {
        return 0;
    }
    let m = (node_ratio * num_nodes as f64 + 0.5).floor() as usize;
    m.clamp(1, num_nodes)
}

pub fn mask_graph<R: Rng + ?Sized>(g: &Graph, schema: &Schema, node_ratio: f64, rng: &mut R) -> MaskedGraph {
    let m = masked_count(node_ratio, g.num_nodes);
    let mut masked_nodes = index::sample(rng, g.num_nodes, m).into_vec();
    masked_nodes.sort_unstable();

    let mut noisy = g.clone();
    let mut is_masked = vec![false; g.num_nodes];
    for &v in &masked_nodes {
        is_masked[v] = true;
        noisy.node_attrs[v].fill(schema.node_mask_code());
    }
    let mut masked_edges = Vec::new();
    let mut mask_pairs = Vec::new();
    for (i, &(u, v)) in g.edges.iter().enumerate() {
        if is_masked[u] || is_masked[v] {
            masked_edges.push(i);
            noisy.edge_attrs[i].fill(schema.edge_mask_code());
        }
        if is_masked[u] {
            mask_pairs.push((u, v));
        }
        if is_masked[v] {
            mask_pairs.push((v, u));
        }
    }
    mask_pairs.sort_unstable();
    MaskedGraph {
        noisy,
        masked_nodes,
        masked_edges,
        mask_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn star() -> (Graph, Schema) {
        let g = Graph {
            num_nodes: 8,
            node_attrs: vec![vec![0]; 8],
            edges: vec![(0, 1), (0, 2), (0, 3)],
            edge_attrs: vec![vec![0]; 3],
            label: 0,
        };
        let schema = Schema {
            node_channels: 1,
            node_card: 2,
            edge_channels: 1,
            edge_card: 2,
        };
        (g, schema)
    }

    #[test]
    fn zero_ratio_is_identity() {
        let (g, s) = star();
        let m = mask_graph(&g, &s, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m.noisy, g);
        assert!(m.masked_nodes.is_empty() && m.masked_edges.is_empty() && m.mask_pairs.is_empty());
    }

    #[test]
    fn quarter_of_eight_is_two() {
        assert_eq!(masked_count(0.25, 8), 2);
        assert_eq!(masked_count(0.01, 8), 1);
        assert_eq!(masked_count(1.0, 8), 8);
    }

    #[test]
    fn hub_contributes_one_pair_per_neighbour() {
        let (g, s) = star();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        loop {
            let m = mask_graph(&g, &s, 0.1, &mut rng);
            if m.masked_nodes == [0] {
                assert_eq!(m.mask_pairs, vec![(0, 1), (0, 2), (0, 3)]);
                assert_eq!(m.masked_edges, vec![0, 1, 2]);
                assert!(m.noisy.edge_attrs.iter().all(|c| c[0] == 2));
                break;
            }
        }
    }
}
