use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EdgeKind, NodeKind, VisitGraph};

/// Which edge families take part in message passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSwitches {
    /// `Before`/`Overlap` edges.
    pub use_temporal_edges: bool,
    /// Semantic-type nodes with their `IsA`/`Semantic` edges.
    pub use_kg_subgraph: bool,
}

impl Default for GraphSwitches {
    fn default() -> Self {
        Self {
            use_temporal_edges: true,
            use_kg_subgraph: true,
        }
    }
}

impl GraphSwitches {
    pub fn validate(&self) -> Result<()> {
        if !self.use_temporal_edges && !self.use_kg_subgraph {
            return Err(Error::config(
                "at least one of temporal edges or the knowledge subgraph must be enabled",
            ));
        }
        Ok(())
    }
}

/// Undirected neighbor lists over the retained nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    /// Positions (in the source graph) of the retained nodes.
    pub kept: Vec<usize>,
    /// `neighbors[i]` lists positions into `kept`, sorted and deduplicated.
    pub neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Filter nodes and edges per `switches` and symmetrize what remains.
pub fn build_adjacency_raw(
    kinds: &[NodeKind],
    edges: &[(usize, usize, EdgeKind)],
    switches: GraphSwitches,
) -> Result<Adjacency> {
    switches.validate()?;
    let keep_node = |k: NodeKind| switches.use_kg_subgraph || k != NodeKind::SemanticType;
    let mut slot = vec![usize::MAX; kinds.len()];
    let mut kept = Vec::new();
    for (i, k) in kinds.iter().enumerate() {
        if keep_node(*k) {
            slot[i] = kept.len();
            kept.push(i);
        }
    }
    let mut neighbors = vec![Vec::new(); kept.len()];
    for &(s, t, kind) in edges {
        let wanted = if kind.is_temporal() {
            switches.use_temporal_edges
        } else {
            switches.use_kg_subgraph
        };
        if !wanted || s == t || slot[s] == usize::MAX || slot[t] == usize::MAX {
            continue;
        }
        neighbors[slot[s]].push(slot[t]);
        neighbors[slot[t]].push(slot[s]);
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    Ok(Adjacency { kept, neighbors })
}

pub fn build_adjacency(graph: &VisitGraph, switches: GraphSwitches) -> Result<Adjacency> {
    let index = graph.node_index();
    let kinds: Vec<NodeKind> = graph.nodes.iter().map(|n| n.kind).collect();
    let edges: Vec<_> = graph
        .edges
        .iter()
        .filter_map(|e| Some((*index.get(e.src.as_str())?, *index.get(e.tgt.as_str())?, e.kind)))
        .collect();
    build_adjacency_raw(&kinds, &edges, switches)
}
