//! Greedy, confidence-ordered timegraph reduction.
//!
//! Candidates are inserted from most to least confident. `Overlap` edges
//! merge nodes into equivalence classes (union-find); `Before` edges order
//! classes. An edge is kept only if the `Before` order over classes stays
//! acyclic and no `Before` edge falls inside a single class.

use serde::{Deserialize, Serialize};

use super::TemporalRelation;

/// A relation candidate whose endpoints have been mapped to node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedCandidate {
    pub src: usize,
    pub tgt: usize,
    pub relation: TemporalRelation,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LiftedRelation {
    Before,
    Overlap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedEdge {
    pub src: usize,
    pub tgt: usize,
    pub relation: LiftedRelation,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// The edge would close a `Before` cycle.
    Cycle,
    /// A `Before` edge between two nodes already known to overlap.
    BeforeWithinOverlap,
    /// An `Overlap` edge between nodes already ordered by `Before`.
    OverlapContradictsOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub src: String,
    pub tgt: String,
    #[serde(skip)]
    pub src_index: usize,
    #[serde(skip)]
    pub tgt_index: usize,
    pub relation: LiftedRelation,
    pub confidence: f64,
    pub reason: RejectReason,
}

/// Outcome for one non-self-loop candidate, in processing order.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Position of the candidate in the input list.
    pub input_index: usize,
    pub src: usize,
    pub tgt: usize,
    pub relation: LiftedRelation,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReducedEdges {
    /// Kept edges, deduplicated, `After` already flipped. `Overlap` is
    /// reported once per unordered pair; callers store it symmetrically.
    pub edges: Vec<ReducedEdge>,
    pub rejected: Vec<Rejection>,
    pub decisions: Vec<Decision>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // lower root wins, keeps results independent of call order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

struct Order {
    classes: UnionFind,
    before: Vec<(usize, usize)>,
}

impl Order {
    /// Is class `to` reachable from class `from` along kept `Before` edges?
    fn reaches(&mut self, from: usize, to: usize, n: usize) -> bool {
        let mut adj = vec![Vec::new(); n];
        for i in 0..self.before.len() {
            let (a, b) = self.before[i];
            let (ca, cb) = (self.classes.find(a), self.classes.find(b));
            adj[ca].push(cb);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![from];
        while let Some(c) = stack.pop() {
            if c == to {
                return true;
            }
            if std::mem::replace(&mut seen[c], true) {
                continue;
            }
            stack.extend(adj[c].iter().copied().filter(|&d| !seen[d]));
        }
        false
    }
}

/// Reduce lifted candidates over `n_nodes` nodes into a consistent edge set.
///
/// Self-loops are discarded before anything else. `After(a, b)` is rewritten
/// as `Before(b, a)`. Candidates are processed by descending confidence with
/// a stable tie-break on input order.
pub fn reduce_timegraph(candidates: &[LiftedCandidate], n_nodes: usize) -> ReducedEdges {
    let mut queue: Vec<(usize, usize, usize, LiftedRelation, f64)> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.src != c.tgt)
        .map(|(i, c)| match c.relation {
            TemporalRelation::Before => (i, c.src, c.tgt, LiftedRelation::Before, c.confidence),
            TemporalRelation::After => (i, c.tgt, c.src, LiftedRelation::Before, c.confidence),
            TemporalRelation::Overlap => (i, c.src, c.tgt, LiftedRelation::Overlap, c.confidence),
        })
        .collect();
    queue.sort_by(|a, b| b.4.total_cmp(&a.4));

    let mut order = Order {
        classes: UnionFind::new(n_nodes),
        before: Vec::new(),
    };
    let mut out = ReducedEdges::default();
    let mut seen_edges: std::collections::HashSet<(usize, usize, LiftedRelation)> =
        Default::default();

    for (input_index, src, tgt, relation, confidence) in queue {
        let cs = order.classes.find(src);
        let ct = order.classes.find(tgt);
        let verdict = match relation {
            LiftedRelation::Before => {
                if cs == ct {
                    Err(RejectReason::BeforeWithinOverlap)
                } else if order.reaches(ct, cs, n_nodes) {
                    Err(RejectReason::Cycle)
                } else {
                    Ok(())
                }
            }
            LiftedRelation::Overlap => {
                if cs != ct
                    && (order.reaches(cs, ct, n_nodes) || order.reaches(ct, cs, n_nodes))
                {
                    Err(RejectReason::OverlapContradictsOrder)
                } else {
                    Ok(())
                }
            }
        };
        out.decisions.push(Decision {
            input_index,
            src,
            tgt,
            relation,
            accepted: verdict.is_ok(),
        });
        match verdict {
            Ok(()) => {
                let key = match relation {
                    LiftedRelation::Before => (src, tgt, relation),
                    LiftedRelation::Overlap => (src.min(tgt), src.max(tgt), relation),
                };
                match relation {
                    LiftedRelation::Before => order.before.push((src, tgt)),
                    LiftedRelation::Overlap => order.classes.union(src, tgt),
                }
                if seen_edges.insert(key) {
                    out.edges.push(ReducedEdge {
                        src,
                        tgt,
                        relation,
                        confidence,
                    });
                }
            }
            Err(reason) => {
                log::debug!(
                    "dropping {:?} {}->{} (conf {:.3}): {:?}",
                    relation,
                    src,
                    tgt,
                    confidence,
                    reason
                );
                out.rejected.push(Rejection {
                    src: src.to_string(),
                    tgt: tgt.to_string(),
                    src_index: src,
                    tgt_index: tgt,
                    relation,
                    confidence,
                    reason,
                });
            }
        }
    }
    out
}
