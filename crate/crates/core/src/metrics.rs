//! Evaluation metrics, the historical-average baseline and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::Range;

use serde::Serialize;

use crate::data::DemandTensor;
use crate::error::{Error, Result};
use crate::model::ForecastBundle;

/// Perturbation guarding the KL log-ratio against zero division.
pub const KL_EPS: f64 = 1e-5;

/// Label recorded alongside F1 values.
pub const F1_AVERAGING: &str = "weighted";

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Contract("metrics need at least one entry".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean prediction interval width.
pub fn mpiw(lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_lengths(lower.len(), upper.len())?;
    let mut sum = 0.0;
    for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
        if u < l {
            return Err(Error::Contract(format!("interval {i}: upper {u} < lower {l}")));
        }
        sum += u - l;
    }
    Ok(sum / lower.len() as f64)
}

/// `mean(x̂ · ln((x̂ + ε) / (x + ε)))` on point values.
pub fn kl_divergence(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let mut sum = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        if !(p >= 0.0 && t >= 0.0) {
            return Err(Error::Domain(format!("KL needs non-negative values, got {p} / {t}")));
        }
        sum += p * ((p + KL_EPS) / (t + KL_EPS)).ln();
    }
    Ok(sum / pred.len() as f64)
}

/// Fraction of ground-truth zeros predicted as exactly zero; `None` when the
/// truth has no zeros.
pub fn true_zero_rate(pred: &[i64], truth: &[i64]) -> Result<Option<f64>> {
    check_lengths(pred.len(), truth.len())?;
    let (mut zeros, mut hits) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        if t == 0 {
            zeros += 1;
            hits += usize::from(p == 0);
        }
    }
    Ok((zeros > 0).then(|| hits as f64 / zeros as f64))
}

/// Multi-class F1 treating each integer value as a label, averaged over
/// classes weighted by their support in `truth`.
pub fn f1_score(pred: &[i64], truth: &[i64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    // label -> (true positives, predicted count, support)
    let mut stats: BTreeMap<i64, (usize, usize, usize)> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        stats.entry(p).or_default().1 += 1;
        let e = stats.entry(t).or_default();
        e.2 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    let mut total = 0.0;
    for &(tp, predicted, support) in stats.values() {
        if support == 0 || tp == 0 {
            continue;
        }
        let precision = tp as f64 / predicted as f64;
        let recall = tp as f64 / support as f64;
        total += support as f64 * 2.0 * precision * recall / (precision + recall);
    }
    Ok(total / truth.len() as f64)
}

/// `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

pub fn round_all(xs: &[f64]) -> Vec<i64> {
    xs.iter().map(|&x| round_half_up(x)).collect()
}

/// The evaluation summary, one field per reported column.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mae_mean: f64,
    pub mae_median: f64,
    /// `None` for point-only predictors.
    pub mpiw: Option<f64>,
    pub kl_mean: f64,
    pub kl_median: f64,
    /// `None` when the ground truth has no zeros.
    pub true_zero_rate_mean: Option<f64>,
    pub true_zero_rate_median: Option<f64>,
    pub f1_mean: f64,
    pub f1_median: f64,
}

fn clip(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| x.max(0.0)).collect()
}

impl MetricsReport {
    /// Scores mean- and median-based point predictions plus intervals.
    /// Points are rounded half-up for the discrete metrics and clipped at zero
    /// for KL.
    pub fn from_predictions(
        mean: &[f64],
        median: &[f64],
        interval: Option<(&[f64], &[f64])>,
        truth: &[f64],
    ) -> Result<Self> {
        let truth_int = round_all(truth);
        let mean_int = round_all(mean);
        let median_int = round_all(median);
        Ok(Self {
            mae_mean: mae(mean, truth)?,
            mae_median: mae(median, truth)?,
            mpiw: interval.map(|(l, u)| mpiw(l, u)).transpose()?,
            kl_mean: kl_divergence(&clip(mean), truth)?,
            kl_median: kl_divergence(&clip(median), truth)?,
            true_zero_rate_mean: true_zero_rate(&mean_int, &truth_int)?,
            true_zero_rate_median: true_zero_rate(&median_int, &truth_int)?,
            f1_mean: f1_score(&mean_int, &truth_int)?,
            f1_median: f1_score(&median_int, &truth_int)?,
        })
    }

    pub fn from_bundle(bundle: &ForecastBundle, truth: &[f64]) -> Result<Self> {
        Self::from_predictions(
            &bundle.mean,
            &bundle.median,
            Some((&bundle.lower, &bundle.upper)),
            truth,
        )
    }

    /// Point-only predictor: mean and median coincide, MPIW is absent.
    pub fn from_points(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Self::from_predictions(pred, pred, None, truth)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned text table.
    pub fn to_table(&self, label: &str) -> String {
        fn cell(x: Option<f64>) -> String {
            x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
        }
        let rows = [
            ("mae", Some(self.mae_mean), Some(self.mae_median)),
            ("mpiw", self.mpiw, self.mpiw),
            ("kl", Some(self.kl_mean), Some(self.kl_median)),
            ("true_zero_rate", self.true_zero_rate_mean, self.true_zero_rate_median),
            ("f1", Some(self.f1_mean), Some(self.f1_median)),
        ];
        let mut s = String::new();
        let _ = writeln!(s, "{label}");
        let _ = writeln!(s, "{:<16}{:>12}{:>12}", "metric", "mean", "median");
        for (name, a, b) in rows {
            let _ = writeln!(s, "{name:<16}{:>12}{:>12}", cell(a), cell(b));
        }
        let _ = writeln!(s, "f1 averaging: {F1_AVERAGING} by class support");
        s
    }
}

/// Per-slot node means over a training span.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalAverage {
    slots_per_day: usize,
    /// `means[node][slot]`, `None` for slots never observed.
    means: Vec<Vec<Option<f64>>>,
    global: Vec<f64>,
}

impl HistoricalAverage {
    /// `series[node][i]` observed at daily slot `slots[i]`.
    pub fn from_series(series: &[Vec<f64>], slots: &[usize], slots_per_day: usize) -> Result<Self> {
        if slots.len() < slots_per_day {
            return Err(Error::Data(format!(
                "historical average needs a full day ({slots_per_day} windows), got {}",
                slots.len()
            )));
        }
        let mut means = Vec::with_capacity(series.len());
        let mut global = Vec::with_capacity(series.len());
        for row in series {
            check_lengths(row.len(), slots.len())?;
            let mut sum = vec![0.0; slots_per_day];
            let mut count = vec![0usize; slots_per_day];
            for (&x, &s) in row.iter().zip(slots) {
                sum[s] += x;
                count[s] += 1;
            }
            means.push(
                sum.iter()
                    .zip(&count)
                    .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                    .collect(),
            );
            global.push(row.iter().sum::<f64>() / row.len() as f64);
        }
        Ok(Self {
            slots_per_day,
            means,
            global,
        })
    }

    /// Fits on windows `range` of `demand`.
    pub fn fit(demand: &DemandTensor, range: Range<usize>) -> Result<Self> {
        let series: Vec<Vec<f64>> = (0..demand.num_nodes())
            .map(|n| demand.series(n)[range.clone()].iter().map(|&c| f64::from(c)).collect())
            .collect();
        let slots: Vec<usize> = range.map(|t| demand.slot_of(t)).collect();
        Self::from_series(&series, &slots, demand.slots_per_day())
    }

    pub fn predict(&self, node: usize, slot: usize) -> f64 {
        self.means[node][slot % self.slots_per_day].unwrap_or(self.global[node])
    }

    /// Predictions in the `[N×V×k]` layout of [`crate::model::Forecaster::predict_windows`].
    pub fn predict_windows(
        &self,
        demand: &DemandTensor,
        starts: &[usize],
        t_window: usize,
        horizon: usize,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(starts.len() * demand.num_nodes() * horizon);
        for &s in starts {
            for node in 0..demand.num_nodes() {
                for step in 0..horizon {
                    out.push(self.predict(node, demand.slot_of(s + t_window + step)));
                }
            }
        }
        out
    }
}

/// Ground-truth mean demand and interval width of one O-D pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeUncertainty {
    pub node_id: usize,
    pub mean_demand: f64,
    pub mpiw: f64,
}

/// One record per node of a `[N×V×k]` bundle.
pub fn per_node_uncertainty(bundle: &ForecastBundle, truth: &[f64]) -> Result<Vec<NodeUncertainty>> {
    check_lengths(bundle.len(), truth.len())?;
    let (v, k) = match bundle.shape.as_slice() {
        [_, v, k] => (*v, *k),
        other => return Err(Error::Contract(format!("expected [N×V×k] bundle, got {other:?}"))),
    };
    let mut demand = vec![0.0; v];
    let mut width = vec![0.0; v];
    for (i, &t) in truth.iter().enumerate() {
        let node = (i / k) % v;
        demand[node] += t;
        width[node] += bundle.upper[i] - bundle.lower[i];
    }
    let per = (truth.len() / v) as f64;
    Ok((0..v)
        .map(|node| NodeUncertainty {
            node_id: node,
            mean_demand: demand[node] / per,
            mpiw: width[node] / per,
        })
        .collect())
}

pub fn write_per_node_csv<W: Write>(mut w: W, records: &[NodeUncertainty]) -> std::io::Result<()> {
    writeln!(w, "node_id,mean_demand,mpiw")?;
    for r in records {
        writeln!(w, "{},{},{}", r.node_id, r.mean_demand, r.mpiw)?;
    }
    Ok(())
}
