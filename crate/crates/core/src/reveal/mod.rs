//! Verifier-aided labeling: a reasoner samples N labeled reasoning paths,
//! a verifier scores each, and the label is the majority among the top-k
//! most confident paths.

mod backend;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{PredictionEntry, PredictionSet};

pub use backend::{
    request_key, Backend, PathPayload, ReasonRequest, ReasonResponse, Recorder, ReplayEntry, VerifyRequest,
    VerifyResponse,
};

pub const DEFAULT_N: usize = 10;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub path_id: usize,
    pub prediction: bool,
    #[serde(default)]
    pub explanation: String,
    #[serde(default)]
    pub l_true: Option<f64>,
    #[serde(default)]
    pub l_false: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierJudgment {
    pub path_id: usize,
    pub confidence: f64,
}

/// `p_correct / (p_correct + p_incorrect)`.
pub fn normalize_confidence(p_correct: f64, p_incorrect: f64) -> Result<f64> {
    if !(p_correct >= 0.0 && p_incorrect >= 0.0) || !(p_correct + p_incorrect).is_finite() {
        return Err(Error::invalid("token probabilities must be finite and non-negative"));
    }
    if p_correct + p_incorrect == 0.0 {
        return Err(Error::invalid("token probabilities are both zero"));
    }
    Ok(p_correct / (p_correct + p_incorrect))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: bool,
    /// Winning paths within the top k, highest confidence first.
    pub supporters: Vec<usize>,
    /// Mean confidence of the supporters.
    pub confidence: f64,
}

impl Aggregate {
    /// Probability-like T2D score: the winning side's mean confidence for a
    /// positive label, its complement for a negative one.
    pub fn score(&self) -> f64 {
        if self.label {
            self.confidence
        } else {
            1.0 - self.confidence
        }
    }
}

/// Majority vote over the `k` most confident paths (ties on confidence go
/// to the lower path id). An even split goes to the side with the larger
/// summed confidence, then to the side of the top-ranked path.
pub fn aggregate(paths: &[ReasoningPath], judgments: &[VerifierJudgment], k: usize) -> Result<Aggregate> {
    if k == 0 || k > paths.len() {
        return Err(Error::config(format!("k = {k} must lie in 1..={}", paths.len())));
    }
    if judgments.len() != paths.len() {
        return Err(Error::invalid("every path needs exactly one judgment"));
    }
    let label_of: BTreeMap<usize, bool> = paths.iter().map(|p| (p.path_id, p.prediction)).collect();
    if label_of.len() != paths.len() {
        return Err(Error::invalid("duplicate path ids"));
    }
    let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(judgments.len());
    let mut seen = BTreeSet::new();
    for j in judgments {
        if !(0.0..=1.0).contains(&j.confidence) {
            return Err(Error::invalid(format!("path {}: confidence outside [0,1]", j.path_id)));
        }
        if !label_of.contains_key(&j.path_id) || !seen.insert(j.path_id) {
            return Err(Error::invalid(format!("judgment for unknown or repeated path {}", j.path_id)));
        }
        ranked.push((j.path_id, j.confidence));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let top = &ranked[..k];
    let label_of = &label_of;
    let side = |label: bool| top.iter().filter(move |(id, _)| label_of[id] == label);
    let (n_true, n_false) = (side(true).count(), side(false).count());
    let label = match n_true.cmp(&n_false) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            let s_true: f64 = side(true).map(|(_, c)| c).sum();
            let s_false: f64 = side(false).map(|(_, c)| c).sum();
            match s_true.total_cmp(&s_false) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => label_of[&top[0].0],
            }
        }
    };
    let supporters: Vec<(usize, f64)> = side(label).copied().collect();
    let confidence = supporters.iter().map(|(_, c)| c).sum::<f64>() / supporters.len() as f64;
    Ok(Aggregate {
        label,
        supporters: supporters.into_iter().map(|(id, _)| id).collect(),
        confidence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealCase {
    pub case_id: String,
    pub documents: Vec<String>,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    /// Reference label (1 = T2D) when known.
    #[serde(default)]
    pub y_true: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealConfig {
    pub n_samples: usize,
    pub k: usize,
}

impl Default for RevealConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_N,
            k: DEFAULT_K,
        }
    }
}

impl RevealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n_samples {
            return Err(Error::config(format!("k = {} must lie in 1..={}", self.k, self.n_samples)));
        }
        Ok(())
    }
}

/// Everything observed for one case, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub case_id: String,
    pub paths: Vec<ReasoningPath>,
    pub judgments: Vec<VerifierJudgment>,
    pub outcome: Option<Aggregate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealRun {
    pub audit: Vec<AuditRecord>,
}

impl RevealRun {
    pub fn failed(&self) -> usize {
        self.audit.iter().filter(|a| a.error.is_some()).count()
    }

    /// Successful cases with a reference label, as prediction rows.
    pub fn predictions(&self, cases: &[RevealCase]) -> PredictionSet {
        let truth: BTreeMap<&str, Option<u8>> = cases.iter().map(|c| (c.case_id.as_str(), c.y_true)).collect();
        let entries = self
            .audit
            .iter()
            .filter_map(|a| {
                let out = a.outcome.as_ref()?;
                let y = truth.get(a.case_id.as_str()).copied().flatten()?;
                let mut e = PredictionEntry::new(a.case_id.clone(), y, out.score(), 0.5);
                e.y_pred = u8::from(out.label);
                Some(e)
            })
            .collect();
        PredictionSet::new(entries, 0.5)
    }

    pub fn write_audit(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for a in &self.audit {
            let line = serde_json::to_string(a).expect("audit serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn run_case(case: &RevealCase, reasoner: &Backend, verifier: &Backend, config: RevealConfig, audit: &mut AuditRecord) -> Result<Aggregate> {
    let response = reasoner.reason(&ReasonRequest {
        case_id: case.case_id.clone(),
        documents: case.documents.clone(),
        demographics: case.demographics.clone(),
        n_samples: config.n_samples,
    })?;
    audit.paths = response
        .paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| ReasoningPath {
            path_id: i,
            prediction: p.prediction,
            explanation: p.explanation,
            l_true: p.l_true,
            l_false: p.l_false,
        })
        .collect();
    if audit.paths.len() < config.k {
        return Err(Error::Backend(format!(
            "reasoner returned {} paths, fewer than k = {}",
            audit.paths.len(),
            config.k
        )));
    }
    for p in audit.paths.clone() {
        let v = verifier.verify(&VerifyRequest {
            case_id: case.case_id.clone(),
            documents: case.documents.clone(),
            path: PathPayload {
                prediction: p.prediction,
                explanation: p.explanation.clone(),
                l_true: p.l_true,
                l_false: p.l_false,
            },
        })?;
        audit.judgments.push(VerifierJudgment {
            path_id: p.path_id,
            confidence: v.confidence()?,
        });
    }
    aggregate(&audit.paths, &audit.judgments, config.k)
}

/// Generate, verify and aggregate each case. A failing case is recorded in
/// the audit log and the run moves on.
pub fn run_reveal(cases: &[RevealCase], reasoner: &Backend, verifier: &Backend, config: RevealConfig) -> Result<RevealRun> {
    config.validate()?;
    let mut audit = Vec::with_capacity(cases.len());
    for case in cases {
        let mut record = AuditRecord {
            case_id: case.case_id.clone(),
            paths: Vec::new(),
            judgments: Vec::new(),
            outcome: None,
            error: None,
        };
        match run_case(case, reasoner, verifier, config, &mut record) {
            Ok(a) => record.outcome = Some(a),
            Err(e) => {
                log::warn!("case {}: {e}", case.case_id);
                record.error = Some(e.to_string());
            }
        }
        audit.push(record);
    }
    Ok(RevealRun { audit })
}

pub fn load_cases(path: &Path) -> Result<Vec<RevealCase>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}
