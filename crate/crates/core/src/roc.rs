//! ROC curves and AUC for cross-validated binary classifiers, with the
//! threshold-wise bias correction of FPR and TPR.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bias::{estimate_from_draws, BiasEstimate, ReplicateDraws};
use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Points of the default threshold grid.
pub const DEFAULT_GRID_POINTS: usize = 101;

/// `points` equispaced thresholds on [0, 1].
pub fn threshold_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points).map(|k| k as f64 / (points - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr_c: Option<Vec<f64>>,
    pub tpr_c: Option<Vec<f64>>,
    pub n0: usize,
    pub n1: usize,
    pub auc: f64,
    pub auc_c: Option<f64>,
}

/// Summary written next to the curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub n0: usize,
    pub n1: usize,
    pub auc: f64,
    pub auc_c: Option<f64>,
}

/// Trapezoid area over points sorted by x, ties broken by threshold
/// descending.
fn trapezoid(x: &[f64], y: &[f64], zeta: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(zeta[b].total_cmp(&zeta[a])));
    idx.windows(2)
        .map(|w| (x[w[1]] - x[w[0]]) * (y[w[1]] + y[w[0]]) / 2.0)
        .sum()
}

/// Empirical ROC curve: FPR(ζ) = (1/n0) Σ (1 − y_i) 1[score_i > ζ], TPR
/// likewise over the positives.
pub fn roc_curve(y: &[f64], scores: &[f64], thresholds: &[f64]) -> Result<RocCurve> {
    if y.len() != scores.len() {
        return Err(Error::InvalidArgument("labels and scores differ in length".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("at least one threshold is required".into()));
    }
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("label {v} is not 0 or 1")));
    }
    let n1 = y.iter().filter(|&&v| v == 1.0).count();
    let n0 = y.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidArgument("both classes must be present".into()));
    }
    let mut fpr = Vec::with_capacity(thresholds.len());
    let mut tpr = Vec::with_capacity(thresholds.len());
    for &z in thresholds {
        let (mut fp, mut tp) = (0usize, 0usize);
        for (&yi, &s) in y.iter().zip(scores) {
            if s > z {
                if yi == 1.0 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        fpr.push(fp as f64 / n0 as f64);
        tpr.push(tp as f64 / n1 as f64);
    }
    let auc = trapezoid(&fpr, &tpr, thresholds);
    Ok(RocCurve {
        thresholds: thresholds.to_vec(),
        fpr,
        tpr,
        fpr_c: None,
        tpr_c: None,
        n0,
        n1,
        auc,
        auc_c: None,
    })
}

/// Estimates of w_cv^PR(ζ) for each threshold from one set of bootstrap
/// draws, using the thresholded prediction 1[g(η) > ζ] in place of L2.
pub fn wcv_pr(draws: &ReplicateDraws, thresholds: &[f64]) -> Result<Vec<BiasEstimate>> {
    if draws.y.iter().any(|y| y.iter().any(|&v| v != 0.0 && v != 1.0)) {
        return Err(Error::Unsupported("threshold corrections need binary responses".into()));
    }
    let link = draws.link;
    thresholds
        .iter()
        .map(|&z| estimate_from_draws(draws, None, |eta| Ok((link.mean(eta) > z) as u8 as f64)))
        .collect()
}

/// Corrected curve: FPR_c = FPR + (n/n0) w, TPR_c = TPR − (n/n1) w, both
/// clipped to [0, 1].
pub fn correct_roc(curve: &RocCurve, w_pr: &[f64]) -> Result<RocCurve> {
    if w_pr.len() != curve.thresholds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} corrections for {} thresholds",
            w_pr.len(),
            curve.thresholds.len()
        )));
    }
    let n = (curve.n0 + curve.n1) as f64;
    let a0 = n / curve.n0 as f64;
    let a1 = n / curve.n1 as f64;
    let fpr_c: Vec<f64> = curve.fpr.iter().zip(w_pr).map(|(f, w)| (f + a0 * w).clamp(0.0, 1.0)).collect();
    let tpr_c: Vec<f64> = curve.tpr.iter().zip(w_pr).map(|(t, w)| (t - a1 * w).clamp(0.0, 1.0)).collect();
    let auc_c = trapezoid(&fpr_c, &tpr_c, &curve.thresholds);
    Ok(RocCurve {
        fpr_c: Some(fpr_c),
        tpr_c: Some(tpr_c),
        auc_c: Some(auc_c),
        ..curve.clone()
    })
}

impl RocCurve {
    pub fn summary(&self) -> RocSummary {
        RocSummary {
            n0: self.n0,
            n1: self.n1,
            auc: self.auc,
            auc_c: self.auc_c,
        }
    }

    /// CSV with columns `zeta, fpr, tpr, fpr_c, tpr_c`; corrected columns are
    /// empty when absent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["zeta", "fpr", "tpr", "fpr_c", "tpr_c"]).map_err(io)?;
        let opt = |v: &Option<Vec<f64>>, l: usize| v.as_ref().map_or(String::new(), |v| fmt_f64(v[l]));
        for l in 0..self.thresholds.len() {
            out.write_record([
                fmt_f64(self.thresholds[l]),
                fmt_f64(self.fpr[l]),
                fmt_f64(self.tpr[l]),
                opt(&self.fpr_c, l),
                opt(&self.tpr_c, l),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_counts() {
        let c = roc_curve(&[0.0, 1.0], &[0.2, 0.8], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(c.fpr, vec![1.0, 0.0, 0.0]);
        assert_eq!(c.tpr, vec![1.0, 1.0, 0.0]);
        assert_eq!(c.auc, 1.0);
    }

    #[test]
    fn constant_scores_give_the_diagonal() {
        let c = roc_curve(&[0.0, 1.0, 0.0, 1.0], &[0.5; 4], &threshold_grid(DEFAULT_GRID_POINTS)).unwrap();
        assert_eq!(c.auc, 0.5);
    }

    #[test]
    fn exact_trapezoids() {
        assert_eq!(trapezoid(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0], &[2.0, 1.0, 0.0]), 1.0);
        assert_eq!(trapezoid(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]), 0.5);
    }

    #[test]
    fn errors() {
        assert!(roc_curve(&[1.0, 1.0], &[0.1, 0.2], &[0.5]).is_err());
        let c = roc_curve(&[0.0, 1.0], &[0.2, 0.8], &[0.5]).unwrap();
        assert!(correct_roc(&c, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn csv_columns() {
        let c = roc_curve(&[0.0, 1.0], &[0.2, 0.8], &[0.5]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("zeta,fpr,tpr,fpr_c,tpr_c\n"));
        assert!(s.trim_end().ends_with(",,"));
    }

    proptest! {
        #[test]
        fn zero_correction_is_identity(
            data in prop::collection::vec((0u8..2, 0.0f64..1.0), 2..40),
        ) {
            let mut y: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            y[0] = 0.0;
            y[1] = 1.0;
            let s: Vec<f64> = data.iter().map(|d| d.1).collect();
            let grid = threshold_grid(21);
            let c = roc_curve(&y, &s, &grid).unwrap();
            for w in c.fpr.windows(2).chain(c.tpr.windows(2)) {
                prop_assert!(w[1] <= w[0]);
            }
            let cc = correct_roc(&c, &vec![0.0; grid.len()]).unwrap();
            prop_assert_eq!(cc.fpr_c.as_ref().unwrap(), &c.fpr);
            prop_assert_eq!(cc.tpr_c.as_ref().unwrap(), &c.tpr);
            prop_assert_eq!(cc.auc_c.unwrap(), c.auc);
        }

        #[test]
        fn corrections_stay_in_unit_interval(
            w in prop::collection::vec(-2.0f64..2.0, 11),
        ) {
            let y = [0.0, 1.0, 1.0, 0.0, 1.0];
            let s = [0.1, 0.9, 0.4, 0.6, 0.7];
            let c = roc_curve(&y, &s, &threshold_grid(11)).unwrap();
            let cc = correct_roc(&c, &w).unwrap();
            let (fc, tc) = (cc.fpr_c.unwrap(), cc.tpr_c.unwrap());
            for v in fc.iter().chain(tc.iter()) {
                prop_assert!((0.0..=1.0).contains(v));
            }
            for l in 0..11 {
                if w[l] > 0.0 {
                    prop_assert!(fc[l] >= c.fpr[l] && tc[l] <= c.tpr[l]);
                }
            }
        }
    }
}
