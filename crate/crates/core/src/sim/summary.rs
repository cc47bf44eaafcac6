use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics};

use super::experiment::{ExperimentReport, ExperimentRow};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::mean_sd;
use crate::model::Loss;

/// Location and spread of one statistic over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    /// t-based 95% interval for the mean.
    pub ci95: [f64; 2],
    /// Mean of (statistic − GenErr) and its standard error.
    pub bias: Option<f64>,
    pub bias_se: Option<f64>,
}

fn t975(n: usize) -> f64 {
    if n < 2 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

impl StatSummary {
    pub fn of(values: &[f64], reference: Option<&[f64]>) -> Self {
        let n = values.len();
        let (mean, sd) = mean_sd(values);
        let se = sd / (n as f64).sqrt();
        let h = t975(n) * se;
        let (bias, bias_se) = match reference {
            Some(r) => {
                let d: Vec<f64> = values.iter().zip(r).map(|(a, b)| a - b).collect();
                let (m, s) = mean_sd(&d);
                (Some(m), Some(s / (n as f64).sqrt()))
            }
            None => (None, None),
        };
        Self {
            n,
            mean,
            sd,
            se,
            ci95: [mean - h, mean + h],
            bias,
            bias_se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub model: usize,
    pub loss: Loss,
    /// Keyed by statistic name (`cv`, `cv_c_tilde`, `gen_err`, ...).
    pub stats: BTreeMap<String, StatSummary>,
}

/// Ranking of the candidate models by mean statistic, compared with the
/// ranking by mean GenErr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingSummary {
    pub loss: Loss,
    /// Models sorted by mean GenErr, best first.
    pub gen_err: Vec<usize>,
    pub orders: BTreeMap<String, Vec<usize>>,
    pub agrees: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocGroupSummary {
    pub model: usize,
    pub auc: StatSummary,
    pub auc_c: Option<StatSummary>,
    pub auc_oracle: Option<StatSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub reps: usize,
    pub successful: usize,
    pub failed: usize,
    pub groups: Vec<GroupSummary>,
    pub orderings: Vec<OrderingSummary>,
    pub roc: Vec<RocGroupSummary>,
    #[serde(skip)]
    pub histograms: Vec<Histogram>,
}

/// Freedman–Diaconis histogram of one statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub statistic: String,
    pub model: usize,
    pub loss: Option<Loss>,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

const MAX_BINS: usize = 1000;

/// Bin width 2·IQR·n^(−1/3); a constant sample gives one bin, and a zero
/// IQR with a non-zero range falls back to ⌈√n⌉ bins.
pub fn histogram(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        return (vec![lo, hi], vec![v.len()]);
    }
    let iqr = Data::new(v.clone()).interquartile_range();
    let bins = if iqr > 0.0 {
        let width = 2.0 * iqr / (v.len() as f64).cbrt();
        ((range / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        ((v.len() as f64).sqrt().ceil() as usize).max(1)
    };
    let width = range / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for x in v {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    (edges, counts)
}

type Getter = fn(&ExperimentRow) -> Option<f64>;

const STATS: [(&str, Getter); 9] = [
    ("cv", |r| Some(r.cv)),
    ("w_hat", |r| r.w_hat),
    ("w_tilde", |r| r.w_tilde),
    ("w_canonical", |r| r.w_canonical),
    ("cv_c_hat", |r| r.cv_c_hat),
    ("cv_c_tilde", |r| r.cv_c_tilde),
    ("cv_c_canonical", |r| r.cv_c_canonical),
    ("gen_err", |r| Some(r.gen_err)),
    ("gen_err_minus_cv", |r| Some(r.gen_err - r.cv)),
];

/// Statistics compared against GenErr.
const ESTIMATES_OF_GEN_ERR: [&str; 4] = ["cv", "cv_c_hat", "cv_c_tilde", "cv_c_canonical"];

fn rank(models: &[usize], means: &BTreeMap<usize, f64>) -> Vec<usize> {
    let mut m = models.to_vec();
    m.sort_by(|a, b| means[a].total_cmp(&means[b]));
    m
}

pub fn summarize(report: &ExperimentReport) -> Result<ExperimentSummary> {
    let successful = report.successful_reps();
    if successful < 2 {
        return Err(Error::InvalidArgument(format!(
            "summaries need at least 2 successful repetitions, got {successful}"
        )));
    }
    let models = report.config.models();
    let losses = &report.config.losses;
    let mut groups = Vec::new();
    let mut histograms = Vec::new();
    for &model in &models {
        for &loss in losses {
            let rows: Vec<&ExperimentRow> =
                report.rows.iter().filter(|r| r.model == model && r.loss == loss).collect();
            let gen: Vec<f64> = rows.iter().map(|r| r.gen_err).collect();
            let mut stats = BTreeMap::new();
            for (name, get) in STATS {
                let vals: Option<Vec<f64>> = rows.iter().map(|r| get(r)).collect();
                let Some(vals) = vals else { continue };
                let reference = ESTIMATES_OF_GEN_ERR.contains(&name).then_some(gen.as_slice());
                stats.insert(name.to_string(), StatSummary::of(&vals, reference));
                let (edges, counts) = histogram(&vals);
                histograms.push(Histogram {
                    statistic: name.to_string(),
                    model,
                    loss: Some(loss),
                    edges,
                    counts,
                });
            }
            groups.push(GroupSummary { model, loss, stats });
        }
    }

    let mut orderings = Vec::new();
    if models.len() > 1 {
        for &loss in losses {
            let mean_of = |name: &str| -> Option<BTreeMap<usize, f64>> {
                models
                    .iter()
                    .map(|&m| {
                        let g = groups.iter().find(|g| g.model == m && g.loss == loss)?;
                        Some((m, g.stats.get(name)?.mean))
                    })
                    .collect()
            };
            let gen_err = rank(&models, &mean_of("gen_err").expect("gen_err is always present"));
            let mut orders = BTreeMap::new();
            let mut agrees = BTreeMap::new();
            for name in ESTIMATES_OF_GEN_ERR {
                if let Some(means) = mean_of(name) {
                    let o = rank(&models, &means);
                    agrees.insert(name.to_string(), o == gen_err);
                    orders.insert(name.to_string(), o);
                }
            }
            orderings.push(OrderingSummary {
                loss,
                gen_err,
                orders,
                agrees,
            });
        }
    }

    let mut roc = Vec::new();
    for &model in &models {
        let rows: Vec<_> = report.roc_rows.iter().filter(|r| r.model == model).collect();
        if rows.len() < 2 {
            continue;
        }
        let auc: Vec<f64> = rows.iter().map(|r| r.auc).collect();
        let auc_c: Option<Vec<f64>> = rows.iter().map(|r| r.auc_c).collect();
        let oracle: Option<Vec<f64>> = rows.iter().map(|r| r.auc_oracle).collect();
        for (name, vals) in [("auc", Some(&auc)), ("auc_c", auc_c.as_ref()), ("auc_oracle", oracle.as_ref())] {
            if let Some(v) = vals {
                let (edges, counts) = histogram(v);
                histograms.push(Histogram {
                    statistic: name.to_string(),
                    model,
                    loss: None,
                    edges,
                    counts,
                });
            }
        }
        roc.push(RocGroupSummary {
            model,
            auc: StatSummary::of(&auc, oracle.as_deref()),
            auc_c: auc_c.as_ref().map(|v| StatSummary::of(v, oracle.as_deref())),
            auc_oracle: oracle.as_ref().map(|v| StatSummary::of(v, None)),
        });
    }

    Ok(ExperimentSummary {
        reps: report.config.sim.reps,
        successful,
        failed: report.failures.len(),
        groups,
        orderings,
        roc,
        histograms,
    })
}

impl ExperimentSummary {
    pub fn group(&self, model: usize, loss: Loss) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.model == model && g.loss == loss)
    }

    /// Histogram CSV for one statistic: `model, loss, bin_lo, bin_hi, count`.
    pub fn write_histogram_csv<W: Write>(&self, statistic: &str, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["model", "loss", "bin_lo", "bin_hi", "count"]).map_err(io)?;
        for h in self.histograms.iter().filter(|h| h.statistic == statistic) {
            let loss = h.loss.map(|l| l.name()).unwrap_or("");
            for (k, c) in h.counts.iter().enumerate() {
                out.write_record([
                    h.model.to_string(),
                    loss.to_string(),
                    fmt_f64(h.edges[k]),
                    fmt_f64(h.edges[k + 1]),
                    c.to_string(),
                ])
                .map_err(io)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Names of the statistics with histograms, in first-seen order.
    pub fn histogram_statistics(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for h in &self.histograms {
            if !out.contains(&h.statistic) {
                out.push(h.statistic.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ExperimentConfig, ExperimentRow};

    #[test]
    fn two_values() {
        let s = StatSummary::of(&[0.0, 2.0], None);
        assert_eq!(s.mean, 1.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.se - 1.0).abs() < 1e-15);
        // t quantile with one degree of freedom.
        assert!((s.ci95[1] - 1.0 - 12.706204736).abs() < 1e-6);
    }

    #[test]
    fn constant_data_gives_one_bin() {
        let (e, c) = histogram(&[3.0; 10]);
        assert_eq!(e, vec![3.0, 3.0]);
        assert_eq!(c, vec![10]);
        assert_eq!(StatSummary::of(&[3.0; 10], None).sd, 0.0);
    }

    #[test]
    fn histogram_counts_everything() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let (e, c) = histogram(&v);
        assert_eq!(c.iter().sum::<usize>(), 200);
        assert_eq!(e.len(), c.len() + 1);
        assert!(c.len() > 1);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
    }

    fn row(rep: usize, model: usize, cv: f64, w: f64, gen_err: f64) -> ExperimentRow {
        ExperimentRow {
            rep,
            model,
            loss: Loss::CrossEntropy,
            cv,
            w_hat: None,
            w_tilde: Some(w),
            w_canonical: None,
            cv_c_hat: None,
            cv_c_tilde: Some(cv + w),
            cv_c_canonical: None,
            mc_se_hat: None,
            mc_se_tilde: Some(0.0),
            gen_err,
            degenerate: false,
        }
    }

    #[test]
    fn orderings_and_bias() {
        let mut cfg = ExperimentConfig {
            losses: vec![Loss::CrossEntropy],
            feature_subsets: vec![1, 2],
            ..Default::default()
        };
        cfg.sim.reps = 2;
        let report = ExperimentReport {
            config: cfg,
            // Model 2 looks better under CV but is worse after correction.
            rows: vec![
                row(0, 1, 0.50, 0.05, 0.56),
                row(0, 2, 0.45, 0.20, 0.66),
                row(1, 1, 0.52, 0.05, 0.56),
                row(1, 2, 0.47, 0.20, 0.64),
            ],
            roc_rows: Vec::new(),
            failures: Vec::new(),
        };
        let s = summarize(&report).unwrap();
        let o = &s.orderings[0];
        assert_eq!(o.gen_err, vec![1, 2]);
        assert!(!o.agrees["cv"]);
        assert!(o.agrees["cv_c_tilde"]);
        let g = s.group(1, Loss::CrossEntropy).unwrap();
        assert!((g.stats["cv"].bias.unwrap() + 0.05).abs() < 1e-12);
        assert!(!g.stats.contains_key("cv_c_hat"));
        let mut buf = Vec::new();
        s.write_histogram_csv("cv", &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("model,loss,bin_lo,bin_hi,count\n1,cross_entropy,"));
    }
}
