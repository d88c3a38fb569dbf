//! Cohort curation: pre-diagnosis note filtering, note quality filters,
//! propensity scores on demographics, greedy 1:1 matching and covariate
//! balance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BUFFER_DAYS: i64 = 3;
pub const DEFAULT_MIN_WORDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    T2D,
    NoD,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        u8::from(self == Label::T2D)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: f64,
    pub gender: String,
    pub race: String,
    #[serde(default)]
    pub ethnicity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub date: Option<NaiveDate>,
    pub note_id: String,
    pub word_count: usize,
    #[serde(default)]
    pub note_type: Option<String>,
    #[serde(default)]
    pub author: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub demographics: Demographics,
    pub label: Label,
    #[serde(default)]
    pub diagnosis_date: Option<NaiveDate>,
    #[serde(default)]
    pub adjusted_diagnosis_date: Option<NaiveDate>,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Adjusted diagnosis date when present, else the coded one.
    pub fn effective_date(&self) -> Option<NaiveDate> {
        self.adjusted_diagnosis_date.or(self.diagnosis_date)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.patient_id;
        if self.label == Label::T2D && self.diagnosis_date.is_none() {
            return Err(Error::invalid(format!("{id}: T2D record without a diagnosis date")));
        }
        if let (Some(adj), Some(dx)) = (self.adjusted_diagnosis_date, self.diagnosis_date) {
            if adj > dx {
                return Err(Error::invalid(format!("{id}: adjusted diagnosis date is after the coded one")));
            }
        }
        if !(self.demographics.age.is_finite() && self.demographics.age >= 0.0) {
            return Err(Error::invalid(format!("{id}: age must be a non-negative number")));
        }
        let mut seen = BTreeSet::new();
        for v in &self.visits {
            if !seen.insert(v.note_id.as_str()) {
                return Err(Error::invalid(format!("{id}: duplicate note {}", v.note_id)));
            }
        }
        Ok(())
    }

    /// Days from the last dated visit to the effective diagnosis date.
    pub fn horizon_days(&self) -> Option<i64> {
        let eff = self.effective_date()?;
        let last = self.visits.iter().filter_map(|v| v.date).max()?;
        Some((eff - last).num_days())
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<PatientRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatientRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?;
        rec.validate().map_err(|e| e.in_file(path))?;
        if !ids.insert(rec.patient_id.clone()) {
            return Err(Error::parse(path, format!("duplicate patient {}", rec.patient_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_manifest(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Keep only T2D notes dated strictly before `effective - buffer_days`.
/// Undated notes cannot be placed relative to the diagnosis and are dropped.
/// Returns `None` when nothing survives. Control records pass through.
pub fn filter_leakage(record: &PatientRecord, buffer_days: i64) -> Result<Option<PatientRecord>> {
    if record.label == Label::NoD {
        return Ok(Some(record.clone()));
    }
    let eff = record
        .effective_date()
        .ok_or_else(|| Error::invalid(format!("{}: no diagnosis date", record.patient_id)))?;
    let cutoff = eff - Duration::days(buffer_days);
    let visits: Vec<Visit> = record
        .visits
        .iter()
        .filter(|v| v.date.is_some_and(|d| d < cutoff))
        .cloned()
        .collect();
    if visits.is_empty() {
        log::info!("{}: no notes before {cutoff}, record removed", record.patient_id);
        return Ok(None);
    }
    Ok(Some(PatientRecord {
        visits,
        ..record.clone()
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteQualityFilter {
    pub min_words: usize,
    /// `None` accepts every note type.
    pub note_types: Option<BTreeSet<String>>,
    pub authors: Option<BTreeSet<String>>,
}

impl Default for NoteQualityFilter {
    fn default() -> Self {
        Self {
            min_words: DEFAULT_MIN_WORDS,
            note_types: None,
            authors: None,
        }
    }
}

impl NoteQualityFilter {
    pub fn accepts(&self, v: &Visit) -> bool {
        let allowed = |list: &Option<BTreeSet<String>>, value: &Option<String>| match list {
            None => true,
            Some(set) => value.as_ref().is_some_and(|x| set.contains(x)),
        };
        v.word_count >= self.min_words && allowed(&self.note_types, &v.note_type) && allowed(&self.authors, &v.author)
    }
}

pub fn filter_note_quality(record: &PatientRecord, filter: &NoteQualityFilter) -> PatientRecord {
    PatientRecord {
        visits: record.visits.iter().filter(|v| filter.accepts(v)).cloned().collect(),
        ..record.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Age,
    Gender,
    Race,
    Ethnicity,
}

impl Covariate {
    pub const ALL: [Covariate; 4] = [Covariate::Age, Covariate::Gender, Covariate::Race, Covariate::Ethnicity];

    fn category(self, d: &Demographics) -> Option<String> {
        match self {
            Covariate::Age => None,
            Covariate::Gender => Some(d.gender.clone()),
            Covariate::Race => Some(d.race.clone()),
            Covariate::Ethnicity => Some(d.ethnicity.clone().unwrap_or_else(|| "unknown".into())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::Gender => "gender",
            Covariate::Race => "race",
            Covariate::Ethnicity => "ethnicity",
        }
    }
}

/// Demographics encoded as standardized age and one-hot category columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn encode_covariates(records: &[PatientRecord], covariates: &[Covariate]) -> CovariateMatrix {
    let n = records.len();
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for &c in covariates {
        if c == Covariate::Age {
            let ages: Vec<f64> = records.iter().map(|r| r.demographics.age).collect();
            let mean = ages.iter().sum::<f64>() / n.max(1) as f64;
            let var = ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            names.push("age".to_string());
            columns.push(ages.iter().map(|a| (a - mean) / sd).collect());
            continue;
        }
        let levels: BTreeSet<String> = records.iter().filter_map(|r| c.category(&r.demographics)).collect();
        for level in levels {
            names.push(format!("{}={level}", c.name()));
            columns.push(
                records
                    .iter()
                    .map(|r| f64::from(c.category(&r.demographics).as_deref() == Some(level.as_str())))
                    .collect(),
            );
        }
    }
    let rows = (0..n).map(|i| columns.iter().map(|col| col[i]).collect()).collect();
    CovariateMatrix { names, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PropensityModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        let z = self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        crate::model::tensor::sigmoid(z)
    }
}

/// Logistic regression by full-batch gradient descent on the mean log-loss,
/// step `4 / max‖x‖²` (inverse of the curvature bound), from zero weights.
pub fn fit_logistic(x: &[Vec<f64>], y: &[u8], config: PropensityConfig) -> Result<PropensityModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("design matrix and labels must be non-empty and aligned"));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::invalid("propensity model needs both cohorts"));
    }
    let d = x[0].len();
    let n = x.len() as f64;
    let max_sq = x.iter().map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    let step = 4.0 / max_sq;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &label) in x.iter().zip(y) {
            let z = b + w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
            let r = crate::model::tensor::sigmoid(z) - f64::from(label);
            gb += r;
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        let norm = ((gb * gb + gw.iter().map(|g| g * g).sum::<f64>()).sqrt()) / n;
        if norm < config.tolerance {
            converged = true;
            break;
        }
        b -= step * gb / n;
        for (a, g) in w.iter_mut().zip(&gw) {
            *a -= step * g / n;
        }
        iterations += 1;
    }
    Ok(PropensityModel {
        names: Vec::new(),
        weights: w,
        bias: b,
        iterations,
        converged,
    })
}

/// Propensity of being a T2D patient given the chosen demographics.
pub fn fit_propensity(
    records: &[PatientRecord],
    covariates: &[Covariate],
    config: PropensityConfig,
) -> Result<(PropensityModel, BTreeMap<String, f64>)> {
    let m = encode_covariates(records, covariates);
    let y: Vec<u8> = records.iter().map(|r| r.label.as_u8()).collect();
    let mut model = fit_logistic(&m.rows, &y, config)?;
    model.names = m.names;
    if !model.converged {
        log::warn!("propensity fit stopped after {} iterations without converging", model.iterations);
    }
    let scores = records
        .iter()
        .zip(&m.rows)
        .map(|(r, x)| (r.patient_id.clone(), model.score(x)))
        .collect();
    Ok((model, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOrder {
    #[default]
    Input,
    DescendingScore,
}

/// Greedy nearest-neighbour matching without replacement. Returns
/// `(treated index, control index)` pairs; ties go to the lower control
/// index and treated patients beyond the control supply stay unmatched.
pub fn greedy_match(treated: &[f64], controls: &[f64], order: MatchOrder) -> Vec<(usize, usize)> {
    let mut sequence: Vec<usize> = (0..treated.len()).collect();
    if order == MatchOrder::DescendingScore {
        sequence.sort_by(|&a, &b| treated[b].total_cmp(&treated[a]).then(a.cmp(&b)));
    }
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::with_capacity(treated.len().min(controls.len()));
    for t in sequence {
        let best = controls
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .min_by(|(ja, a), (jb, b)| {
                (treated[t] - **a)
                    .abs()
                    .total_cmp(&(treated[t] - **b).abs())
                    .then(ja.cmp(jb))
            })
            .map(|(j, _)| j);
        match best {
            Some(j) => {
                used[j] = true;
                pairs.push((t, j));
            }
            None => log::info!("treated #{t} left unmatched: controls exhausted"),
        }
    }
    pairs
}

/// `(mean_t - mean_c) / sqrt((s_t² + s_c²) / 2)` with sample variances.
/// Zero pooled variance gives 0 for equal means and ±∞ otherwise.
pub fn smd(treated: &[f64], controls: &[f64]) -> f64 {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var)
    };
    let (mt, vt) = stats(treated);
    let (mc, vc) = stats(controls);
    let diff = mt - mc;
    let pooled = ((vt + vc) / 2.0).sqrt();
    if pooled == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    } else {
        diff / pooled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub smd_before: f64,
    pub smd_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<(String, String)>,
    pub propensity: BTreeMap<String, f64>,
    pub balance: Vec<BalanceRow>,
}

impl MatchResult {
    pub fn matched_ids(&self) -> BTreeSet<String> {
        self.pairs.iter().flat_map(|(t, c)| [t.clone(), c.clone()]).collect()
    }
}

/// SMD for every encoded covariate column, all treated vs all controls and
/// matched treated vs matched controls.
pub fn covariate_balance(
    records: &[PatientRecord],
    pairs: &[(String, String)],
    covariates: &[Covariate],
) -> Result<Vec<BalanceRow>> {
    let m = encode_covariates(records, covariates);
    let index: BTreeMap<&str, usize> =
        records.iter().enumerate().map(|(i, r)| (r.patient_id.as_str(), i)).collect();
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("matched patient {id} not in the cohort")))
    };
    let mut mt = Vec::new();
    let mut mc = Vec::new();
    for (t, c) in pairs {
        mt.push(lookup(t)?);
        mc.push(lookup(c)?);
    }
    let all_t: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == Label::T2D).collect();
    let all_c: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == Label::NoD).collect();
    let col = |rows: &[usize], k: usize| -> Vec<f64> { rows.iter().map(|&i| m.rows[i][k]).collect() };
    Ok(m.names
        .iter()
        .enumerate()
        .map(|(k, name)| BalanceRow {
            covariate: name.clone(),
            smd_before: smd(&col(&all_t, k), &col(&all_c, k)),
            smd_after: if pairs.is_empty() {
                f64::NAN
            } else {
                smd(&col(&mt, k), &col(&mc, k))
            },
        })
        .collect())
}

/// Fit propensity on `records`, then greedily match treated to controls.
pub fn match_cohort(
    records: &[PatientRecord],
    covariates: &[Covariate],
    order: MatchOrder,
    config: PropensityConfig,
) -> Result<MatchResult> {
    let (_, propensity) = fit_propensity(records, covariates, config)?;
    let treated: Vec<&PatientRecord> = records.iter().filter(|r| r.label == Label::T2D).collect();
    let controls: Vec<&PatientRecord> = records.iter().filter(|r| r.label == Label::NoD).collect();
    let ts: Vec<f64> = treated.iter().map(|r| propensity[&r.patient_id]).collect();
    let cs: Vec<f64> = controls.iter().map(|r| propensity[&r.patient_id]).collect();
    let pairs: Vec<(String, String)> = greedy_match(&ts, &cs, order)
        .into_iter()
        .map(|(t, c)| (treated[t].patient_id.clone(), controls[c].patient_id.clone()))
        .collect();
    let balance = covariate_balance(records, &pairs, covariates)?;
    Ok(MatchResult {
        pairs,
        propensity,
        balance,
    })
}

pub fn write_balance_csv(path: &Path, rows: &[BalanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(["covariate", "smd_before", "smd_after"])
        .map_err(|e| Error::parse(path, e))?;
    for r in rows {
        w.write_record([r.covariate.clone(), format!("{:.6}", r.smd_before), format!("{:.6}", r.smd_after)])
            .map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
