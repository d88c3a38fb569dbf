//! Per-note extraction intake and reduction into per-visit temporal graphs.
//!
//! The extractor writes one JSON file per note containing entity and
//! time-expression mentions plus pairwise temporal relation candidates.
//! This module validates those files, normalizes date mentions, clusters
//! mentions into graph nodes and reduces the relation candidates into a
//! consistent `Before`/`Overlap` graph.

mod cluster;
mod dates;
mod timegraph;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cluster::{cluster_mentions, ConceptLinks};
pub use dates::{normalize_date, normalize_note_dates, DateLocale};
pub use timegraph::{
    reduce_timegraph, Decision, LiftedCandidate, LiftedRelation, ReducedEdges, RejectReason,
    Rejection,
};

pub type MentionId = String;
pub type NodeId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityClass {
    Problem,
    Test,
    Treatment,
    ClinicalDepartment,
    ClinicalOccurrence,
    Evidential,
    Date,
    Time,
    Duration,
    Frequency,
}

impl EntityClass {
    /// Time expressions become `Timex` nodes; everything else is an event.
    pub fn is_timex(self) -> bool {
        matches!(
            self,
            EntityClass::Date | EntityClass::Time | EntityClass::Duration | EntityClass::Frequency
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub id: MentionId,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub class: EntityClass,
}

impl EntityMention {
    /// Number of tokens covered by the (inclusive) span.
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemporalRelation {
    #[serde(alias = "BEFORE", alias = "before")]
    Before,
    #[serde(alias = "AFTER", alias = "after")]
    After,
    #[serde(alias = "OVERLAP", alias = "overlap")]
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRelationCandidate {
    pub src: MentionId,
    pub tgt: MentionId,
    pub rel: TemporalRelation,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteExtraction {
    pub note_id: String,
    pub visit_date: Option<NaiveDate>,
    #[serde(default)]
    pub note_type: String,
    pub mentions: Vec<EntityMention>,
    #[serde(default)]
    pub relations: Vec<TemporalRelationCandidate>,
    /// Mention id of the document-creation-time anchor, if the extractor found one.
    #[serde(default)]
    pub dct: Option<MentionId>,
}

impl NoteExtraction {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for m in &self.mentions {
            if m.start > m.end {
                return Err(Error::invalid(format!(
                    "note {}: mention {} has start {} > end {}",
                    self.note_id, m.id, m.start, m.end
                )));
            }
            if !ids.insert(m.id.as_str()) {
                return Err(Error::invalid(format!(
                    "note {}: duplicate mention id {}",
                    self.note_id, m.id
                )));
            }
        }
        for r in &self.relations {
            for end in [&r.src, &r.tgt] {
                if !ids.contains(end.as_str()) {
                    return Err(Error::invalid(format!(
                        "note {}: relation references unknown mention {}",
                        self.note_id, end
                    )));
                }
            }
            if r.src == r.tgt {
                return Err(Error::invalid(format!(
                    "note {}: relation from {} to itself",
                    self.note_id, r.src
                )));
            }
            if !(0.0..=1.0).contains(&r.conf) {
                return Err(Error::invalid(format!(
                    "note {}: relation {}->{} confidence {} outside [0,1]",
                    self.note_id, r.src, r.tgt, r.conf
                )));
            }
        }
        if let Some(d) = &self.dct {
            if !ids.contains(d.as_str()) {
                return Err(Error::invalid(format!(
                    "note {}: dct references unknown mention {}",
                    self.note_id, d
                )));
            }
        }
        Ok(())
    }

    pub fn mention(&self, id: &str) -> Option<&EntityMention> {
        self.mentions.iter().find(|m| m.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let note: NoteExtraction =
            serde_json::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        note.validate()?;
        Ok(note)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("note serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Load every `*.json` note in a directory, sorted by file name.
pub fn load_note_dir(dir: &Path) -> Result<Vec<NoteExtraction>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| NoteExtraction::load(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Entity,
    Timex,
    SemanticType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub mentions: Vec<MentionId>,
    /// Concept id for linked entities; semantic type id for `SemanticType` nodes.
    #[serde(default)]
    pub concept: Option<String>,
    #[serde(default)]
    pub date: Option<NaiveDate>,
    /// Preferred label, set for `SemanticType` nodes.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Before,
    Overlap,
    IsA,
    Semantic,
}

impl EdgeKind {
    pub fn is_temporal(self) -> bool {
        matches!(self, EdgeKind::Before | EdgeKind::Overlap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: NodeId,
    pub tgt: NodeId,
    pub kind: EdgeKind,
    pub conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitGraph {
    pub note_id: String,
    pub visit_index: usize,
    pub visit_date: Option<NaiveDate>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    /// Relation candidates dropped during reduction, kept for auditing.
    #[serde(default)]
    pub rejected: Vec<Rejection>,
}

impl VisitGraph {
    pub fn node_index(&self) -> BTreeMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect()
    }

    pub fn has_edge(&self, src: &str, tgt: &str, kind: EdgeKind) -> bool {
        self.edges
            .iter()
            .any(|e| e.src == src && e.tgt == tgt && e.kind == kind)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("graph serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Order notes by visit date, ties by note id. Undated notes keep their
/// input (file) sequence and are placed after dated ones.
pub fn order_notes(notes: &mut [NoteExtraction]) {
    notes.sort_by(|a, b| match (a.visit_date, b.visit_date) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.note_id.cmp(&b.note_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
}

pub const DEFAULT_MAX_NOTES: usize = 5;

/// Keep the last `max_notes` notes of an ordered patient record.
pub fn truncate_visits<T: Clone>(notes: &[T], max_notes: usize) -> Result<Vec<T>> {
    if notes.is_empty() {
        return Err(Error::invalid("patient record has no notes"));
    }
    let start = notes.len().saturating_sub(max_notes);
    Ok(notes[start..].to_vec())
}

/// Full per-note reduction: date normalization, clustering, relation lifting
/// and timegraph reduction. Knowledge augmentation is applied separately.
pub fn build_visit_graph(
    note: &NoteExtraction,
    links: &ConceptLinks,
    locale: DateLocale,
    visit_index: usize,
) -> Result<VisitGraph> {
    note.validate()?;
    let dates = normalize_note_dates(note, locale);
    let nodes = cluster_mentions(note, links, &dates)?;
    let mut node_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        for m in &n.mentions {
            node_of.insert(m.as_str(), i);
        }
    }
    let lifted: Vec<LiftedCandidate> = note
        .relations
        .iter()
        .map(|r| LiftedCandidate {
            src: node_of[r.src.as_str()],
            tgt: node_of[r.tgt.as_str()],
            relation: r.rel,
            confidence: r.conf,
        })
        .collect();
    let reduced = reduce_timegraph(&lifted, nodes.len());
    let mut edges = Vec::new();
    for e in &reduced.edges {
        let (kind, both) = match e.relation {
            LiftedRelation::Before => (EdgeKind::Before, false),
            LiftedRelation::Overlap => (EdgeKind::Overlap, true),
        };
        edges.push(GraphEdge {
            src: nodes[e.src].id.clone(),
            tgt: nodes[e.tgt].id.clone(),
            kind,
            conf: e.confidence,
            label: None,
        });
        if both {
            edges.push(GraphEdge {
                src: nodes[e.tgt].id.clone(),
                tgt: nodes[e.src].id.clone(),
                kind,
                conf: e.confidence,
                label: None,
            });
        }
    }
    let rejected = reduced
        .rejected
        .iter()
        .map(|r| Rejection {
            src: nodes[r.src_index].id.clone(),
            tgt: nodes[r.tgt_index].id.clone(),
            ..r.clone()
        })
        .collect();
    Ok(VisitGraph {
        note_id: note.note_id.clone(),
        visit_index,
        visit_date: note.visit_date,
        nodes,
        edges,
        rejected,
    })
}
