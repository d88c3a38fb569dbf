use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, roc_auc};
use super::PredictionEntry;
use crate::error::{Error, Result};

pub const DEFAULT_REPLICATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    MacroF1,
    T2dPrecision,
    T2dRecall,
    NodPrecision,
    NodRecall,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Auc,
        Metric::MacroF1,
        Metric::T2dPrecision,
        Metric::T2dRecall,
        Metric::NodPrecision,
        Metric::NodRecall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::MacroF1 => "macro_f1",
            Metric::T2dPrecision => "t2d_precision",
            Metric::T2dRecall => "t2d_recall",
            Metric::NodPrecision => "nod_precision",
            Metric::NodRecall => "nod_recall",
        }
    }

    pub fn compute(self, entries: &[PredictionEntry]) -> Result<f64> {
        if self == Metric::Auc {
            return roc_auc(entries);
        }
        let r = classification_metrics(entries);
        Ok(match self {
            Metric::Auc => unreachable!(),
            Metric::MacroF1 => r.macro_f1,
            Metric::T2dPrecision => r.t2d.precision,
            Metric::T2dRecall => r.t2d.recall,
            Metric::NodPrecision => r.nod.precision,
            Metric::NodRecall => r.nod.recall,
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub metric: Metric,
    /// Difference on the full sample, A minus B.
    pub observed_diff: f64,
    pub mean_diff: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub replicates: usize,
    /// Replicates where the metric was defined for both sets.
    pub valid_replicates: usize,
}

impl BootstrapResult {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_value)
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Linear-interpolation percentile of already sorted values, `q` in [0,100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Paired bootstrap of `metric(A) - metric(B)`, resampling patients jointly.
pub fn bootstrap_compare(
    a: &[PredictionEntry],
    b: &[PredictionEntry],
    metric: Metric,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if replicates == 0 {
        return Err(Error::invalid("replicates must be positive"));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty prediction set"));
    }
    let b_index: HashMap<&str, usize> =
        b.iter().enumerate().map(|(i, e)| (e.patient_id.as_str(), i)).collect();
    if a.len() != b.len() || b_index.len() != b.len() {
        return Err(Error::invalid("prediction sets cover different patients"));
    }
    let b_aligned: Vec<&PredictionEntry> = a
        .iter()
        .map(|e| {
            b_index
                .get(e.patient_id.as_str())
                .map(|&i| &b[i])
                .ok_or_else(|| Error::invalid(format!("{} missing from second set", e.patient_id)))
        })
        .collect::<Result<_>>()?;
    let b_aligned: Vec<PredictionEntry> = b_aligned.into_iter().cloned().collect();
    let observed_diff = metric.compute(a)? - metric.compute(&b_aligned)?;

    let n = a.len();
    let mut diffs = Vec::with_capacity(replicates);
    let mut sample_a = Vec::with_capacity(n);
    let mut sample_b = Vec::with_capacity(n);
    for r in 0..replicates {
        let mut rng = replicate_rng(seed, r);
        sample_a.clear();
        sample_b.clear();
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sample_a.push(a[i].clone());
            sample_b.push(b_aligned[i].clone());
        }
        if let (Ok(ma), Ok(mb)) = (metric.compute(&sample_a), metric.compute(&sample_b)) {
            diffs.push(ma - mb);
        }
    }
    if diffs.is_empty() {
        return Err(Error::undefined(format!("{metric} undefined on every replicate")));
    }
    let k = diffs.len() as f64;
    let mean_diff = diffs.iter().sum::<f64>() / k;
    let sd = if diffs.len() > 1 {
        (diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let at_most_zero = diffs.iter().filter(|&&d| d <= 0.0).count() as f64 / k;
    let at_least_zero = diffs.iter().filter(|&&d| d >= 0.0).count() as f64 / k;
    let p_value = (2.0 * at_most_zero.min(at_least_zero)).clamp(2.0 / replicates as f64, 1.0);
    let mut sorted = diffs;
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        metric,
        observed_diff,
        mean_diff,
        sd,
        ci_low: percentile(&sorted, 2.5),
        ci_high: percentile(&sorted, 97.5),
        p_value,
        replicates,
        valid_replicates: sorted.len(),
    })
}
