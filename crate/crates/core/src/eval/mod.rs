//! Evaluation over prediction sets: discrimination and classification
//! metrics, group fairness gaps, prediction-horizon curves and paired
//! bootstrap significance.

mod bootstrap;
mod fairness;
mod horizon;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bootstrap::{bootstrap_compare, percentile, DEFAULT_REPLICATES, significance_stars, BootstrapResult, Metric};
pub use fairness::{dpd, eod, fairness_table, FairnessRow};
pub use horizon::{horizon_curve, HorizonCurve, HorizonRow, DEFAULT_WINDOW_DAYS};
pub use metrics::{classification_metrics, roc_auc, roc_auc_scores, ClassScores, ClassificationReport};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub patient_id: String,
    /// 1 = T2D, 0 = NoD
    pub y_true: u8,
    pub score: f64,
    pub y_pred: u8,
    #[serde(default)]
    pub groups: BTreeMap<String, String>,
    #[serde(default)]
    pub horizon_days: Option<i64>,
}

impl PredictionEntry {
    pub fn new(patient_id: impl Into<String>, y_true: u8, score: f64, threshold: f64) -> Self {
        Self {
            patient_id: patient_id.into(),
            y_true,
            score,
            y_pred: u8::from(score >= threshold),
            groups: BTreeMap::new(),
            horizon_days: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub threshold: f64,
    pub entries: Vec<PredictionEntry>,
}

const FIXED_COLUMNS: [&str; 5] = ["patient_id", "y_true", "score", "y_pred", "horizon_days"];

impl PredictionSet {
    pub fn new(entries: Vec<PredictionEntry>, threshold: f64) -> Self {
        Self { threshold, entries }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if e.y_true > 1 || e.y_pred > 1 {
                return Err(Error::invalid(format!("{}: labels must be 0 or 1", e.patient_id)));
            }
            if !(0.0..=1.0).contains(&e.score) {
                return Err(Error::invalid(format!(
                    "{}: score {} outside [0,1]",
                    e.patient_id, e.score
                )));
            }
            if !ids.insert(e.patient_id.as_str()) {
                return Err(Error::invalid(format!("duplicate patient {}", e.patient_id)));
            }
            if e.horizon_days.is_some_and(|h| h < 0) {
                return Err(Error::invalid(format!("{}: negative horizon", e.patient_id)));
            }
        }
        Ok(())
    }

    /// Re-derive hard labels from scores at a new threshold.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| PredictionEntry {
                y_pred: u8::from(e.score >= threshold),
                ..e.clone()
            })
            .collect();
        Self { threshold, entries }
    }

    pub fn group_columns(&self) -> Vec<String> {
        let cols: BTreeSet<&String> = self.entries.iter().flat_map(|e| e.groups.keys()).collect();
        cols.into_iter().cloned().collect()
    }

    /// CSV with columns `patient_id,y_true,score,y_pred,<groups...>,horizon_days`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let groups = self.group_columns();
        let mut header = vec!["patient_id", "y_true", "score", "y_pred"];
        header.extend(groups.iter().map(String::as_str));
        header.push("horizon_days");
        w.write_record(&header).map_err(|e| Error::parse(path, e))?;
        for e in &self.entries {
            let mut rec = vec![
                e.patient_id.clone(),
                e.y_true.to_string(),
                format!("{}", e.score),
                e.y_pred.to_string(),
            ];
            rec.extend(groups.iter().map(|g| e.groups.get(g).cloned().unwrap_or_default()));
            rec.push(e.horizon_days.map(|h| h.to_string()).unwrap_or_default());
            w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a predictions CSV. `y_pred` and `horizon_days` are optional;
    /// every other extra column is a group attribute.
    pub fn read_csv(path: &Path, threshold: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::parse(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (Some(id_col), Some(y_col), Some(s_col)) = (col("patient_id"), col("y_true"), col("score"))
        else {
            return Err(Error::parse(path, "missing patient_id, y_true or score column"));
        };
        let pred_col = col("y_pred");
        let hz_col = col("horizon_days");
        let group_cols: Vec<(usize, &String)> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| !FIXED_COLUMNS.contains(&h.as_str()))
            .collect();
        let mut entries = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            let bad = |field: &str| Error::parse(path, format!("row {}: bad {field}", line + 2));
            let score: f64 = rec[s_col].trim().parse().map_err(|_| bad("score"))?;
            let y_true: u8 = rec[y_col].trim().parse().map_err(|_| bad("y_true"))?;
            let mut e = PredictionEntry::new(rec[id_col].to_string(), y_true, score, threshold);
            if let Some(c) = pred_col {
                if !rec[c].trim().is_empty() {
                    e.y_pred = rec[c].trim().parse().map_err(|_| bad("y_pred"))?;
                }
            }
            if let Some(c) = hz_col {
                if !rec[c].trim().is_empty() {
                    e.horizon_days = Some(rec[c].trim().parse().map_err(|_| bad("horizon_days"))?);
                }
            }
            for (c, name) in &group_cols {
                if !rec[*c].is_empty() {
                    e.groups.insert((*name).clone(), rec[*c].to_string());
                }
            }
            entries.push(e);
        }
        let set = Self { threshold, entries };
        set.validate().map_err(|e| e.in_file(path))?;
        Ok(set)
    }
}

/// Headline metrics for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub classification: ClassificationReport,
    #[serde(default)]
    pub fairness: Vec<FairnessRow>,
}

pub fn evaluate(set: &PredictionSet) -> Result<EvalReport> {
    set.validate()?;
    let mut fairness = Vec::new();
    for attr in set.group_columns() {
        fairness.extend(fairness_table(&set.entries, &attr));
    }
    Ok(EvalReport {
        n: set.entries.len(),
        threshold: set.threshold,
        auc: roc_auc(&set.entries).ok(),
        classification: classification_metrics(&set.entries),
        fairness,
    })
}
