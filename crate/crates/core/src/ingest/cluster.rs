use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;

use super::{EntityClass, GraphNode, MentionId, NodeKind, NoteExtraction};
use crate::error::{Error, Result};

/// mention id -> concept id, for mentions that were linked.
pub type ConceptLinks = BTreeMap<MentionId, String>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum ClusterKey {
    Concept(String),
    Date(NaiveDate),
    Single(MentionId),
}

/// Merge mentions into graph nodes.
///
/// Mentions linked to the same concept become one node, `Date` mentions that
/// normalize to the same day become one node, everything else is a singleton.
/// Node order follows the first mention of each cluster.
pub fn cluster_mentions(
    note: &NoteExtraction,
    links: &ConceptLinks,
    dates: &BTreeMap<MentionId, NaiveDate>,
) -> Result<Vec<GraphNode>> {
    for id in links.keys() {
        if note.mention(id).is_none() {
            return Err(Error::invalid(format!(
                "note {}: link table references unknown mention {}",
                note.note_id, id
            )));
        }
    }
    let mut slot: HashMap<ClusterKey, usize> = HashMap::new();
    let mut nodes: Vec<GraphNode> = Vec::new();
    for m in &note.mentions {
        let key = if let Some(c) = links.get(&m.id) {
            ClusterKey::Concept(c.clone())
        } else if let (EntityClass::Date, Some(d)) = (m.class, dates.get(&m.id)) {
            ClusterKey::Date(*d)
        } else {
            ClusterKey::Single(m.id.clone())
        };
        match slot.get(&key) {
            Some(&i) => nodes[i].mentions.push(m.id.clone()),
            None => {
                slot.insert(key.clone(), nodes.len());
                nodes.push(GraphNode {
                    id: format!("n{}", nodes.len()),
                    kind: if m.class.is_timex() {
                        NodeKind::Timex
                    } else {
                        NodeKind::Entity
                    },
                    mentions: vec![m.id.clone()],
                    concept: match &key {
                        ClusterKey::Concept(c) => Some(c.clone()),
                        _ => None,
                    },
                    date: match &key {
                        ClusterKey::Date(d) => Some(*d),
                        _ => None,
                    },
                    label: None,
                });
            }
        }
    }
    Ok(nodes)
}
