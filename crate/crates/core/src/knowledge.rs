//! Local knowledge base: concepts, semantic types, the semantic network and
//! concept vectors, plus graph augmentation with semantic-type nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    ConceptLinks, EdgeKind, EntityClass, GraphEdge, GraphNode, NodeKind, NoteExtraction, VisitGraph,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRelation(pub String, pub String, pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub concepts: BTreeMap<String, Concept>,
    pub type_labels: BTreeMap<String, String>,
    #[serde(default)]
    pub semantic_relations: Vec<SemanticRelation>,
    #[serde(default)]
    pub vectors: BTreeMap<String, Vec<f64>>,
}

const TOY_KB: &str = include_str!("../data/toy_kb.json");
const TOY_LEXICON: &str = include_str!("../data/toy_lexicon.tsv");

impl KnowledgeBase {
    pub fn from_json(text: &str) -> Result<Self> {
        let kb: KnowledgeBase =
            serde_json::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("kb serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// The small bundled vocabulary used by tests and the synthetic cohort.
    pub fn toy() -> Self {
        Self::from_json(TOY_KB).expect("bundled knowledge base is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (cui, c) in &self.concepts {
            for t in &c.types {
                if !self.type_labels.contains_key(t) {
                    return Err(Error::invalid(format!(
                        "concept {cui} has unknown semantic type {t}"
                    )));
                }
            }
        }
        for SemanticRelation(a, label, b) in &self.semantic_relations {
            for t in [a, b] {
                if !self.type_labels.contains_key(t) {
                    return Err(Error::invalid(format!(
                        "semantic relation {a} {label} {b} references unknown type {t}"
                    )));
                }
            }
        }
        let mut dims = self.vectors.values().map(Vec::len);
        if let Some(d) = dims.next() {
            if dims.any(|x| x != d) {
                return Err(Error::invalid("concept vectors differ in dimension"));
            }
        }
        Ok(())
    }

    /// Dimension of concept vectors (0 when the KB carries none).
    pub fn vector_dim(&self) -> usize {
        self.vectors.values().next().map_or(0, Vec::len)
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }
}

/// Lowercased surface string -> concept id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, concept: &str) {
        self.entries
            .insert(surface.trim().to_lowercase(), concept.to_string());
    }

    pub fn get(&self, surface: &str) -> Option<&str> {
        self.entries
            .get(&surface.trim().to_lowercase())
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Parse `surface<TAB>concept` lines. Blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, cui) = line.split_once('\t').ok_or_else(|| {
                Error::invalid(format!("lexicon line {}: expected surface<TAB>concept", i + 1))
            })?;
            lex.insert(surface, cui.trim());
        }
        Ok(lex)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(s, c)| format!("{s}\t{c}\n"))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text).map_err(|e| e.in_file(path))
    }

    pub fn toy() -> Self {
        Self::from_tsv(TOY_LEXICON).expect("bundled lexicon is valid")
    }
}

/// Entity classes eligible for concept linking. Other classes are too noisy
/// to normalize and stay unlinked.
pub fn is_linkable(class: EntityClass) -> bool {
    matches!(
        class,
        EntityClass::Problem | EntityClass::Treatment | EntityClass::Test | EntityClass::ClinicalDepartment
    )
}

pub fn link_concepts(note: &NoteExtraction, kb: &KnowledgeBase, lexicon: &Lexicon) -> Result<ConceptLinks> {
    let mut links = ConceptLinks::new();
    for m in note.mentions.iter().filter(|m| is_linkable(m.class)) {
        if let Some(cui) = lexicon.get(&m.text) {
            if !kb.concepts.contains_key(cui) {
                return Err(Error::invalid(format!(
                    "lexicon maps {:?} to {cui}, which is not in the knowledge base",
                    m.text
                )));
            }
            links.insert(m.id.clone(), cui.to_string());
        }
    }
    Ok(links)
}

fn type_node_id(type_id: &str) -> String {
    format!("type:{type_id}")
}

/// Add one `SemanticType` node per distinct type among linked entity nodes,
/// `IsA` edges from entities to their types, and `Semantic` edges between
/// type nodes for every relation in the semantic network. Idempotent.
pub fn augment_graph(graph: &VisitGraph, kb: &KnowledgeBase) -> VisitGraph {
    let mut out = graph.clone();
    let mut types: BTreeSet<&str> = BTreeSet::new();
    let mut isa: Vec<(String, String)> = Vec::new();
    for node in graph.nodes.iter().filter(|n| n.kind != NodeKind::SemanticType) {
        let Some(concept) = node.concept.as_deref().and_then(|c| kb.concepts.get(c)) else {
            continue;
        };
        for t in &concept.types {
            types.insert(t);
            isa.push((node.id.clone(), type_node_id(t)));
        }
    }
    let present: BTreeSet<String> = out.nodes.iter().map(|n| n.id.clone()).collect();
    for t in &types {
        let id = type_node_id(t);
        if !present.contains(&id) {
            out.nodes.push(GraphNode {
                id,
                kind: NodeKind::SemanticType,
                mentions: vec![],
                concept: Some(t.to_string()),
                date: None,
                label: kb.type_labels.get(*t).cloned(),
            });
        }
    }
    let push = |out: &mut VisitGraph, e: GraphEdge| {
        if !out
            .edges
            .iter()
            .any(|x| x.src == e.src && x.tgt == e.tgt && x.kind == e.kind && x.label == e.label)
        {
            out.edges.push(e);
        }
    };
    for (src, tgt) in isa {
        push(
            &mut out,
            GraphEdge {
                src,
                tgt,
                kind: EdgeKind::IsA,
                conf: 1.0,
                label: None,
            },
        );
    }
    for SemanticRelation(a, label, b) in &kb.semantic_relations {
        if types.contains(a.as_str()) && types.contains(b.as_str()) && a != b {
            push(
                &mut out,
                GraphEdge {
                    src: type_node_id(a),
                    tgt: type_node_id(b),
                    kind: EdgeKind::Semantic,
                    conf: 1.0,
                    label: Some(label.clone()),
                },
            );
        }
    }
    out
}

/// Undo [`augment_graph`]: drop semantic-type nodes and knowledge edges.
pub fn strip_augmentation(graph: &VisitGraph) -> VisitGraph {
    let mut out = graph.clone();
    out.nodes.retain(|n| n.kind != NodeKind::SemanticType);
    out.edges.retain(|e| e.kind.is_temporal());
    out
}
