use serde::{Deserialize, Serialize};

use super::bootstrap::percentile;
use super::metrics::roc_auc_scores;
use super::PredictionEntry;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_DAYS: i64 = 91;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub window: usize,
    pub lower_days: i64,
    /// `None` for the tail bucket holding horizons beyond the 95th percentile.
    pub upper_days: Option<i64>,
    pub n_t2d: usize,
    pub n_controls: usize,
    pub auc: Option<f64>,
    pub t2d_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCurve {
    pub window_days: i64,
    pub p95_days: f64,
    pub rows: Vec<HorizonRow>,
}

/// Bucket T2D cases by prediction horizon and score each bucket against
/// every control. Horizons at or below the 95th percentile fall into
/// `floor(h / window_days)`; larger ones share one trailing bucket.
pub fn horizon_curve(entries: &[PredictionEntry], window_days: i64) -> Result<HorizonCurve> {
    if window_days <= 0 {
        return Err(Error::invalid("window_days must be positive"));
    }
    let cases: Vec<&PredictionEntry> = entries.iter().filter(|e| e.y_true == 1).collect();
    let controls: Vec<&PredictionEntry> = entries.iter().filter(|e| e.y_true == 0).collect();
    let mut horizons = Vec::with_capacity(cases.len());
    for c in &cases {
        let h = c
            .horizon_days
            .ok_or_else(|| Error::invalid(format!("{}: T2D case without horizon", c.patient_id)))?;
        if h < 0 {
            return Err(Error::invalid(format!("{}: negative horizon", c.patient_id)));
        }
        horizons.push(h);
    }
    if horizons.is_empty() {
        return Err(Error::undefined("no T2D cases to bucket"));
    }
    let sorted: Vec<f64> = {
        let mut v: Vec<f64> = horizons.iter().map(|&h| h as f64).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let p95 = percentile(&sorted, 95.0);
    let regular_max = horizons
        .iter()
        .filter(|&&h| h as f64 <= p95)
        .map(|&h| (h / window_days) as usize)
        .max()
        .unwrap_or(0);
    let tail = regular_max + 1;
    let bucket_of = |h: i64| {
        if h as f64 > p95 {
            tail
        } else {
            (h / window_days) as usize
        }
    };
    let has_tail = horizons.iter().any(|&h| h as f64 > p95);
    let n_buckets = if has_tail { tail + 1 } else { tail };

    let control_scores: Vec<f64> = controls.iter().map(|e| e.score).collect();
    let rows = (0..n_buckets)
        .map(|w| {
            let members: Vec<&&PredictionEntry> = cases
                .iter()
                .zip(&horizons)
                .filter(|(_, &h)| bucket_of(h) == w)
                .map(|(c, _)| c)
                .collect();
            let mut scores: Vec<f64> = members.iter().map(|e| e.score).collect();
            let mut labels = vec![1u8; scores.len()];
            scores.extend(&control_scores);
            labels.extend(std::iter::repeat(0).take(control_scores.len()));
            let recall = (!members.is_empty()).then(|| {
                members.iter().filter(|e| e.y_pred == 1).count() as f64 / members.len() as f64
            });
            let is_tail = has_tail && w == tail;
            HorizonRow {
                window: w,
                lower_days: if is_tail {
                    p95.floor() as i64 + 1
                } else {
                    w as i64 * window_days
                },
                upper_days: (!is_tail).then(|| (w as i64 + 1) * window_days - 1),
                n_t2d: members.len(),
                n_controls: control_scores.len(),
                auc: roc_auc_scores(&scores, &labels).ok(),
                t2d_recall: recall,
            }
        })
        .collect();
    Ok(HorizonCurve {
        window_days,
        p95_days: p95,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: usize, h: i64, score: f64) -> PredictionEntry {
        let mut e = PredictionEntry::new(format!("t{id}"), 1, score, 0.5);
        e.horizon_days = Some(h);
        e
    }

    fn control(id: usize, score: f64) -> PredictionEntry {
        PredictionEntry::new(format!("c{id}"), 0, score, 0.5)
    }

    #[test]
    fn bucket_assignment_and_tail() {
        // 20 horizons 0,10,..,190 plus one far outlier
        let mut e: Vec<_> = (0..20).map(|i| case(i, i as i64 * 10, 0.9)).collect();
        e.push(case(99, 5000, 0.9));
        e.push(control(0, 0.1));
        let curve = horizon_curve(&e, 91).unwrap();
        // p95 of 21 sorted values: position 19 -> 190
        assert_eq!(curve.p95_days, 190.0);
        let counts: Vec<usize> = curve.rows.iter().map(|r| r.n_t2d).collect();
        // [0,90] -> 10 cases, [91,181] -> 9, [182,190] -> 1, tail -> 1
        assert_eq!(counts, [10, 9, 1, 1]);
        assert_eq!(curve.rows[3].upper_days, None);
        assert_eq!(curve.rows[3].auc, Some(1.0));
        let total: usize = counts.iter().sum();
        assert_eq!(total, 21);
    }

    #[test]
    fn no_tail_when_all_below_p95() {
        let e = vec![case(0, 30, 0.8), case(1, 30, 0.2), control(0, 0.5)];
        let curve = horizon_curve(&e, 91).unwrap();
        assert_eq!(curve.rows.len(), 1);
        assert_eq!(curve.rows[0].auc, Some(0.5));
        assert_eq!(curve.rows[0].t2d_recall, Some(0.5));
    }

    #[test]
    fn missing_horizon_is_invalid() {
        let e = vec![PredictionEntry::new("t", 1, 0.5, 0.5), control(0, 0.1)];
        assert!(matches!(horizon_curve(&e, 91), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn empty_bucket_has_no_auc() {
        let mut e: Vec<_> = (1..6).map(|i| case(i, 200, 0.9)).collect();
        e.push(case(0, 0, 0.9));
        e.push(control(0, 0.1));
        let curve = horizon_curve(&e, 91).unwrap();
        assert!(curve.rows.iter().any(|r| r.n_t2d == 0 && r.auc.is_none()));
    }
}
