use serde::{Deserialize, Serialize};

use super::PredictionEntry;
use crate::error::{Error, Result};

/// Split entries carrying `attribute` into (Z = group, Z != group).
fn split<'a>(
    entries: &'a [PredictionEntry],
    attribute: &str,
    group: &str,
) -> (Vec<&'a PredictionEntry>, Vec<&'a PredictionEntry>) {
    entries
        .iter()
        .filter(|e| e.groups.contains_key(attribute))
        .partition(|e| e.groups[attribute] == group)
}

fn positive_rate(side: &[&PredictionEntry]) -> f64 {
    side.iter().filter(|e| e.y_pred == 1).count() as f64 / side.len() as f64
}

/// Demographic parity difference: `P(ŷ=1 | Z=z) - P(ŷ=1 | Z≠z)`.
pub fn dpd(entries: &[PredictionEntry], attribute: &str, group: &str) -> Result<f64> {
    let (inside, outside) = split(entries, attribute, group);
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::undefined(format!(
            "{attribute}={group}: both the group and its complement must be non-empty"
        )));
    }
    Ok(positive_rate(&inside) - positive_rate(&outside))
}

/// Equal opportunity difference: `TPR(Z=z) - TPR(Z≠z)`.
pub fn eod(entries: &[PredictionEntry], attribute: &str, group: &str) -> Result<f64> {
    let (inside, outside) = split(entries, attribute, group);
    let inside: Vec<_> = inside.into_iter().filter(|e| e.y_true == 1).collect();
    let outside: Vec<_> = outside.into_iter().filter(|e| e.y_true == 1).collect();
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::undefined(format!(
            "{attribute}={group}: both sides need at least one positive case"
        )));
    }
    Ok(positive_rate(&inside) - positive_rate(&outside))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub attribute: String,
    pub group: String,
    pub n: usize,
    pub positive_rate: f64,
    pub dpd: Option<f64>,
    pub eod: Option<f64>,
}

pub fn fairness_table(entries: &[PredictionEntry], attribute: &str) -> Vec<FairnessRow> {
    let mut groups: Vec<&str> = entries
        .iter()
        .filter_map(|e| e.groups.get(attribute).map(String::as_str))
        .collect();
    groups.sort_unstable();
    groups.dedup();
    groups
        .into_iter()
        .map(|g| {
            let (inside, _) = split(entries, attribute, g);
            FairnessRow {
                attribute: attribute.to_string(),
                group: g.to_string(),
                n: inside.len(),
                positive_rate: positive_rate(&inside),
                dpd: dpd(entries, attribute, g).ok(),
                eod: eod(entries, attribute, g).ok(),
            }
        })
        .collect()
}
