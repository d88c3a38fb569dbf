//! Node feature assembly: contextual token embeddings (first and last token
//! of each span), span-width embeddings, and knowledge-base concept vectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{EdgeKind, EntityMention, GraphNode, NodeKind, NoteExtraction, VisitGraph};
use crate::knowledge::KnowledgeBase;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"TGEMB001";
pub const DEFAULT_D_TOK: usize = 64;
pub const DEFAULT_D_WIDTH: usize = 16;
pub const DEFAULT_WIDTH_BOUNDS: [usize; 7] = [1, 2, 3, 4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Precomputed,
    HashFallback,
}

/// Per-note token embeddings, indexed by token position.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub d_tok: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub provenance: Provenance,
}

impl EmbeddingStore {
    pub fn token(&self, index: usize) -> Result<&[f64]> {
        self.rows
            .get(&index)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no embedding for token {index}")))
    }

    /// Binary layout: 8-byte magic, u32 d_tok, u32 n_tokens (little endian),
    /// then `n_tokens x d_tok` row-major f32. Absent rows are written as zeros.
    pub fn write(&self, path: &Path) -> Result<()> {
        let n_tokens = self.rows.keys().next_back().map_or(0, |k| k + 1);
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::with_capacity(16 + n_tokens * self.d_tok * 4);
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&(self.d_tok as u32).to_le_bytes());
        buf.extend_from_slice(&(n_tokens as u32).to_le_bytes());
        let zeros = vec![0.0; self.d_tok];
        for i in 0..n_tokens {
            let row = self.rows.get(&i).unwrap_or(&zeros);
            for v in row {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
            return Err(Error::invalid("not an embedding store (bad magic)"));
        }
        let d_tok = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n_tokens = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != n_tokens * d_tok * 4 {
            return Err(Error::invalid(format!(
                "embedding store body is {} bytes, expected {}",
                body.len(),
                n_tokens * d_tok * 4
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let rows = (0..n_tokens)
            .map(|i| (i, values[i * d_tok..(i + 1) * d_tok].to_vec()))
            .collect();
        Ok(Self {
            d_tok,
            rows,
            provenance: Provenance::Precomputed,
        })
    }
}

/// Deterministic unit-norm vector for a token string. The digest of
/// (seed, token) seeds a ChaCha stream, so the result is platform independent.
pub fn hash_token_vector(token: &str, d_tok: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    loop {
        let v: Vec<f64> = (0..d_tok).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Lowercase with every ASCII digit mapped to `0`, so numbers and dates of
/// the same shape share a vector.
pub fn token_shape(word: &str) -> String {
    word.chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect::<String>()
        .to_lowercase()
}

/// Split a mention's text across its token positions. Extra positions reuse
/// the last word; extra words are ignored.
fn span_tokens(m: &EntityMention) -> Vec<(usize, String)> {
    let words: Vec<String> = m.text.split_whitespace().map(token_shape).collect();
    (m.start..=m.end)
        .enumerate()
        .map(|(j, pos)| {
            let w = words
                .get(j)
                .or_else(|| words.last())
                .cloned()
                .unwrap_or_default();
            (pos, w)
        })
        .collect()
}

/// Stand-in store when no precomputed embeddings exist: every token covered
/// by a mention gets the hash vector of its [`token_shape`].
pub fn hash_fallback_store(note: &NoteExtraction, d_tok: usize, seed: u64) -> EmbeddingStore {
    let mut rows = BTreeMap::new();
    for m in &note.mentions {
        for (pos, word) in span_tokens(m) {
            rows.entry(pos)
                .or_insert_with(|| hash_token_vector(&word, d_tok, seed));
        }
    }
    EmbeddingStore {
        d_tok,
        rows,
        provenance: Provenance::HashFallback,
    }
}

/// Learnable span-width embeddings over width buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthEmbeddingTable {
    pub bounds: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
}

impl WidthEmbeddingTable {
    pub fn new(bounds: Vec<usize>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if bounds.is_empty() || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("width bounds must be non-empty and strictly increasing"));
        }
        if vectors.len() != bounds.len() {
            return Err(Error::config("one width vector per bucket required"));
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::config("width vectors differ in dimension"));
        }
        Ok(Self { bounds, vectors })
    }

    /// Small seeded Gaussian initialization.
    pub fn seeded(bounds: Vec<usize>, d_w: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5749_4454_4853);
        let vectors = bounds
            .iter()
            .map(|_| (0..d_w).map(|_| rng.gen_range(-0.1..0.1)).collect())
            .collect();
        Self::new(bounds, vectors)
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn n_buckets(&self) -> usize {
        self.bounds.len()
    }

    /// First bucket whose upper bound covers `width`; overflow goes to the last.
    pub fn bucket(&self, width: usize) -> usize {
        self.bounds
            .iter()
            .position(|&b| width <= b)
            .unwrap_or(self.bounds.len() - 1)
    }
}

/// `[first token ; last token ; width vector]`, length `2*d_tok + d_w`.
pub fn mention_embedding(
    mention: &EntityMention,
    store: &EmbeddingStore,
    widths: &WidthEmbeddingTable,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * store.d_tok + widths.dim());
    out.extend_from_slice(store.token(mention.start)?);
    out.extend_from_slice(store.token(mention.end)?);
    out.extend_from_slice(&widths.vectors[widths.bucket(mention.width())]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSwitches {
    pub use_text: bool,
    pub use_kg: bool,
}

impl Default for FeatureSwitches {
    fn default() -> Self {
        Self {
            use_text: true,
            use_kg: true,
        }
    }
}

/// Node inputs with the width slot kept as bucket weights so the width
/// table can stay learnable downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInputs {
    /// `2*d_tok`: mean first-token and last-token vectors.
    pub text: Vec<f64>,
    /// `n_buckets`: mean one-hot width bucket over mentions.
    pub width_mix: Vec<f64>,
    /// `d_kg`: concept vector or zeros.
    pub kg: Vec<f64>,
}

impl NodeInputs {
    /// Materialize `[text ; width_mix * table ; kg]`.
    pub fn assemble(&self, widths: &WidthEmbeddingTable) -> Vec<f64> {
        let mut out = self.text.clone();
        let mut w = vec![0.0; widths.dim()];
        for (b, weight) in self.width_mix.iter().enumerate() {
            if *weight != 0.0 {
                for (acc, v) in w.iter_mut().zip(&widths.vectors[b]) {
                    *acc += weight * v;
                }
            }
        }
        out.extend(w);
        out.extend_from_slice(&self.kg);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub node_id: String,
    pub vector: Vec<f64>,
}

/// Everything needed to build node inputs for one note.
pub struct FeatureContext<'a> {
    pub note: &'a NoteExtraction,
    pub store: &'a EmbeddingStore,
    pub widths: &'a WidthEmbeddingTable,
    pub kb: &'a KnowledgeBase,
    pub switches: FeatureSwitches,
    /// Seed for hashing semantic-type labels (they have no note tokens).
    pub label_seed: u64,
}

impl FeatureContext<'_> {
    fn label_embedding(&self, label: &str) -> Vec<f64> {
        let d = self.store.d_tok;
        let words: Vec<String> = label.split_whitespace().map(str::to_lowercase).collect();
        let mut mean = vec![0.0; d];
        if words.is_empty() {
            return mean;
        }
        for w in &words {
            for (acc, v) in mean.iter_mut().zip(hash_token_vector(w, d, self.label_seed)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|x| *x /= words.len() as f64);
        mean
    }

    pub fn node_inputs(&self, node: &GraphNode) -> Result<NodeInputs> {
        let d_tok = self.store.d_tok;
        let d_kg = self.kb.vector_dim();
        let mut text = vec![0.0; 2 * d_tok];
        let mut width_mix = vec![0.0; self.widths.n_buckets()];
        match node.kind {
            NodeKind::Entity | NodeKind::Timex => {
                if node.mentions.is_empty() {
                    return Err(Error::invalid(format!("node {} has no mentions", node.id)));
                }
                let inv = 1.0 / node.mentions.len() as f64;
                for id in &node.mentions {
                    let m = self.note.mention(id).ok_or_else(|| {
                        Error::invalid(format!("node {} references unknown mention {id}", node.id))
                    })?;
                    let first = self.store.token(m.start)?;
                    let last = self.store.token(m.end)?;
                    for i in 0..d_tok {
                        text[i] += inv * first[i];
                        text[d_tok + i] += inv * last[i];
                    }
                    width_mix[self.widths.bucket(m.width())] += inv;
                }
            }
            NodeKind::SemanticType => {
                let label = node.label.as_deref().unwrap_or_default();
                let mean = self.label_embedding(label);
                text[..d_tok].copy_from_slice(&mean);
                text[d_tok..].copy_from_slice(&mean);
            }
        }
        if !self.switches.use_text {
            text.iter_mut().for_each(|x| *x = 0.0);
            width_mix.iter_mut().for_each(|x| *x = 0.0);
        }
        let kg = match (&node.concept, self.switches.use_kg) {
            (Some(c), true) => self
                .kb
                .vector(c)
                .map_or_else(|| vec![0.0; d_kg], <[f64]>::to_vec),
            _ => vec![0.0; d_kg],
        };
        Ok(NodeInputs { text, width_mix, kg })
    }

    pub fn node_feature(&self, node: &GraphNode) -> Result<NodeFeatures> {
        Ok(NodeFeatures {
            node_id: node.id.clone(),
            vector: self.node_inputs(node)?.assemble(self.widths),
        })
    }
}

/// Numeric view of one visit graph, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitFeatures {
    pub note_id: String,
    pub visit_index: usize,
    pub kinds: Vec<NodeKind>,
    pub text: Array2<f64>,
    pub width_mix: Array2<f64>,
    pub kg: Array2<f64>,
    /// Directed edges by node position, as stored in the graph.
    pub edges: Vec<(usize, usize, EdgeKind)>,
}

impl VisitFeatures {
    pub fn n_nodes(&self) -> usize {
        self.kinds.len()
    }
}

pub fn featurize_visit(graph: &VisitGraph, ctx: &FeatureContext) -> Result<VisitFeatures> {
    let n = graph.nodes.len();
    let d_text = 2 * ctx.store.d_tok;
    let nb = ctx.widths.n_buckets();
    let d_kg = ctx.kb.vector_dim();
    let mut text = Array2::zeros((n, d_text));
    let mut width_mix = Array2::zeros((n, nb));
    let mut kg = Array2::zeros((n, d_kg));
    for (i, node) in graph.nodes.iter().enumerate() {
        let inp = ctx.node_inputs(node)?;
        text.row_mut(i).assign(&ndarray::aview1(&inp.text));
        width_mix.row_mut(i).assign(&ndarray::aview1(&inp.width_mix));
        kg.row_mut(i).assign(&ndarray::aview1(&inp.kg));
    }
    let index = graph.node_index();
    let edges = graph
        .edges
        .iter()
        .map(|e| {
            let s = index.get(e.src.as_str()).copied();
            let t = index.get(e.tgt.as_str()).copied();
            match (s, t) {
                (Some(s), Some(t)) => Ok((s, t, e.kind)),
                _ => Err(Error::invalid(format!(
                    "graph {}: edge {}->{} has a missing endpoint",
                    graph.note_id, e.src, e.tgt
                ))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(VisitFeatures {
        note_id: graph.note_id.clone(),
        visit_index: graph.visit_index,
        kinds: graph.nodes.iter().map(|n| n.kind).collect(),
        text,
        width_mix,
        kg,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::EntityClass;

    fn mention(id: &str, start: usize, end: usize, text: &str) -> EntityMention {
        EntityMention {
            id: id.into(),
            start,
            end,
            text: text.into(),
            class: EntityClass::Problem,
        }
    }

    fn note() -> NoteExtraction {
        NoteExtraction {
            note_id: "n".into(),
            visit_date: None,
            note_type: String::new(),
            mentions: vec![
                mention("m1", 0, 0, "diabetes"),
                mention("m2", 2, 4, "high blood sugar"),
                mention("m3", 6, 6, "Diabetes"),
            ],
            relations: vec![],
            dct: None,
        }
    }

    fn kb() -> KnowledgeBase {
        KnowledgeBase::from_json(
            r#"{"concepts": {"C1": {"name": "diabetes", "types": ["T047"]}},
                "type_labels": {"T047": "Disease or Syndrome"},
                "vectors": {"C1": [0.5, -0.5, 1.0]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn hash_vectors_are_deterministic_unit_norm() {
        let store = hash_fallback_store(&note(), 8, 3);
        assert_eq!(store.token(0).unwrap(), store.token(6).unwrap());
        for row in store.rows.values() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_ne!(hash_token_vector("x", 8, 1), hash_token_vector("x", 8, 2));
        assert_eq!(hash_token_vector("x", 8, 1), hash_token_vector("x", 8, 1));
    }

    #[test]
    fn width_buckets() {
        let t = WidthEmbeddingTable::seeded(vec![1, 2, 4, 8], 2, 0).unwrap();
        assert_eq!(t.bucket(1), 0);
        assert_eq!(t.bucket(3), 2);
        assert_eq!(t.bucket(100), 3);
        assert!(WidthEmbeddingTable::seeded(vec![2, 2], 2, 0).is_err());
    }

    #[test]
    fn mention_embedding_layout() {
        let n = note();
        let store = hash_fallback_store(&n, 4, 0);
        let widths = WidthEmbeddingTable::seeded(vec![1, 2, 4, 8], 2, 0).unwrap();
        let single = mention_embedding(&n.mentions[0], &store, &widths).unwrap();
        assert_eq!(single.len(), 10);
        assert_eq!(single[..4], single[4..8]);
        assert_eq!(single[8..], widths.vectors[0][..]);
        let wide = mention_embedding(&n.mentions[1], &store, &widths).unwrap();
        assert_eq!(wide[8..], widths.vectors[2][..]);
        let missing = mention("x", 50, 50, "zz");
        assert!(mention_embedding(&missing, &store, &widths).is_err());
    }

    #[test]
    fn node_mean_and_ablations() {
        let n = note();
        let store = hash_fallback_store(&n, 4, 0);
        let widths = WidthEmbeddingTable::seeded(vec![1, 2, 4, 8], 2, 0).unwrap();
        let kb = kb();
        let mut ctx = FeatureContext {
            note: &n,
            store: &store,
            widths: &widths,
            kb: &kb,
            switches: FeatureSwitches::default(),
            label_seed: 0,
        };
        let node = GraphNode {
            id: "x".into(),
            kind: NodeKind::Entity,
            mentions: vec!["m1".into(), "m2".into()],
            concept: Some("C1".into()),
            date: None,
            label: None,
        };
        let e1 = mention_embedding(&n.mentions[0], &store, &widths).unwrap();
        let e2 = mention_embedding(&n.mentions[1], &store, &widths).unwrap();
        let f = ctx.node_feature(&node).unwrap();
        assert_eq!(f.vector.len(), 2 * 4 + 2 + 3);
        for i in 0..10 {
            assert!((f.vector[i] - (e1[i] + e2[i]) / 2.0).abs() < 1e-12);
        }
        assert_eq!(f.vector[10..], [0.5, -0.5, 1.0]);

        let unlinked = GraphNode {
            concept: None,
            ..node.clone()
        };
        assert_eq!(ctx.node_feature(&unlinked).unwrap().vector[10..], [0.0; 3]);

        ctx.switches = FeatureSwitches {
            use_text: false,
            use_kg: true,
        };
        let v = ctx.node_feature(&node).unwrap().vector;
        assert!(v[..10].iter().all(|x| *x == 0.0));
        assert_eq!(v[10..], [0.5, -0.5, 1.0]);

        ctx.switches = FeatureSwitches {
            use_text: true,
            use_kg: false,
        };
        assert!(ctx.node_feature(&node).unwrap().vector[10..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn semantic_type_node_uses_label_and_zero_width() {
        let n = note();
        let store = hash_fallback_store(&n, 4, 0);
        let widths = WidthEmbeddingTable::seeded(vec![1, 2], 2, 0).unwrap();
        let kb = kb();
        let ctx = FeatureContext {
            note: &n,
            store: &store,
            widths: &widths,
            kb: &kb,
            switches: FeatureSwitches::default(),
            label_seed: 9,
        };
        let node = GraphNode {
            id: "type:T047".into(),
            kind: NodeKind::SemanticType,
            mentions: vec![],
            concept: Some("T047".into()),
            date: None,
            label: Some("Disease or Syndrome".into()),
        };
        let v = ctx.node_feature(&node).unwrap().vector;
        assert_eq!(v.len(), 13);
        assert_eq!(v[..4], v[4..8]);
        assert!(v[8..10].iter().all(|x| *x == 0.0));
        // no concept vector for T047 in this KB
        assert!(v[10..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn store_file_round_trip() {
        let n = note();
        let store = hash_fallback_store(&n, 4, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.emb");
        store.write(&path).unwrap();
        let back = EmbeddingStore::read(&path).unwrap();
        assert_eq!(back.d_tok, 4);
        assert_eq!(back.provenance, Provenance::Precomputed);
        for (k, row) in &store.rows {
            for (a, b) in row.iter().zip(back.token(*k).unwrap()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(EmbeddingStore::from_bytes(b"garbage").is_err());
    }
}
