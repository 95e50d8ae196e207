//! Classification metrics over per-sample class distributions: accuracy,
//! balanced accuracy, macro-F1, one-vs-rest ROC-AUC, expected calibration
//! error, and decision-curve net benefit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub label: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

impl EvalRecord {
    /// Prediction is the first maximal class.
    pub fn new(label: usize, probs: Vec<f64>) -> Self {
        let predicted = argmax(&probs);
        EvalRecord {
            label,
            predicted,
            probs,
        }
    }

    pub fn confidence(&self) -> f64 {
        self.probs[self.predicted]
    }

    pub fn is_correct(&self) -> bool {
        self.label == self.predicted
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn n_classes(records: &[EvalRecord]) -> usize {
    records
        .iter()
        .map(|r| r.probs.len().max(r.label + 1).max(r.predicted + 1))
        .max()
        .unwrap_or(0)
}

pub fn accuracy(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64
}

struct Confusion {
    tp: Vec<usize>,
    fp: Vec<usize>,
    support: Vec<usize>,
}

fn confusion(records: &[EvalRecord]) -> Confusion {
    let k = n_classes(records);
    let mut c = Confusion {
        tp: vec![0; k],
        fp: vec![0; k],
        support: vec![0; k],
    };
    for r in records {
        c.support[r.label] += 1;
        if r.is_correct() {
            c.tp[r.label] += 1;
        } else {
            c.fp[r.predicted] += 1;
        }
    }
    c
}

/// Mean per-class recall over classes present in the labels.
pub fn balanced_accuracy(records: &[EvalRecord]) -> f64 {
    let c = confusion(records);
    let recalls: Vec<f64> = (0..c.support.len())
        .filter(|&k| c.support[k] > 0)
        .map(|k| c.tp[k] as f64 / c.support[k] as f64)
        .collect();
    mean(&recalls)
}

/// Mean per-class F1 over classes present in the labels; a class with an
/// empty denominator scores 0.
pub fn macro_f1(records: &[EvalRecord]) -> f64 {
    let c = confusion(records);
    let f1s: Vec<f64> = (0..c.support.len())
        .filter(|&k| c.support[k] > 0)
        .map(|k| {
            let fn_ = c.support[k] - c.tp[k];
            let denom = 2 * c.tp[k] + c.fp[k] + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * c.tp[k] as f64 / denom as f64
            }
        })
        .collect();
    mean(&f1s)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Binary AUC by the rank statistic with midranks for ties; `None` when one
/// side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += midrank * order[i..=j].iter().filter(|&&s| positive[s]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Points `(fpr, tpr)` of the empirical ROC, one per distinct score, from
/// `(0,0)` to `(1,1)`.
pub fn binary_roc_points(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push((fp / n_neg, tp / n_pos));
    }
    points
}

fn interpolate_tpr(points: &[(f64, f64)], x: f64) -> f64 {
    let mut lo = 0;
    while lo + 1 < points.len() && points[lo + 1].0 <= x {
        lo += 1;
    }
    match points.get(lo + 1) {
        Some(&(x1, y1)) if x1 > points[lo].0 => {
            let (x0, y0) = points[lo];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
        _ => points[lo].1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    /// Mean of the defined per-class AUCs.
    pub macro_auc: f64,
    /// `None` for classes lacking positives or negatives.
    pub per_class: Vec<Option<f64>>,
    /// Class-averaged ROC on a uniform false-positive-rate grid.
    pub curve: Vec<(f64, f64)>,
}

/// One-vs-rest ROC per class, scored by that class's probability, then
/// macro-averaged.
pub fn roc_auc_macro(records: &[EvalRecord]) -> RocReport {
    let k = n_classes(records);
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mut per_class = Vec::with_capacity(k);
    let mut curves = Vec::new();
    for c in 0..k {
        let scores: Vec<f64> = records.iter().map(|r| r.probs.get(c).copied().unwrap_or(0.0)).collect();
        let positive: Vec<bool> = records.iter().map(|r| r.label == c).collect();
        let auc = binary_auc(&scores, &positive);
        if auc.is_some() {
            curves.push(binary_roc_points(&scores, &positive));
        }
        per_class.push(auc);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let curve = if curves.is_empty() {
        Vec::new()
    } else {
        grid.iter()
            .map(|&x| {
                let tpr = curves.iter().map(|pts| interpolate_tpr(pts, x)).sum::<f64>() / curves.len() as f64;
                (x, tpr)
            })
            .collect()
    };
    RocReport {
        macro_auc: mean(&defined),
        per_class,
        curve,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean max-probability in the bin (0 when empty).
    pub confidence: f64,
    /// Fraction correct in the bin (0 when empty).
    pub accuracy: f64,
}

impl ReliabilityBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<ReliabilityBin>,
}

fn bin_lower(b: usize, n: usize) -> f64 {
    b as f64 / n as f64
}

/// Bin `b` covers `(b/n, (b+1)/n]`; bin 0 also takes 0.
fn bin_index(conf: f64, n: usize) -> usize {
    let mut b = ((conf * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    while b > 0 && conf <= bin_lower(b, n) {
        b -= 1;
    }
    while b + 1 < n && conf > bin_lower(b + 1, n) {
        b += 1;
    }
    b
}

/// Expected calibration error over equal-width confidence bins:
/// `Σ_b (n_b / n) |acc_b − conf_b|`.
pub fn ece(records: &[EvalRecord], n_bins: usize) -> Result<(f64, ReliabilityBins)> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins", "must be >= 1"));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for r in records {
        let c = r.confidence();
        let b = bin_index(c, n_bins);
        count[b] += 1;
        conf_sum[b] += c;
        correct[b] += usize::from(r.is_correct());
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (confidence, accuracy) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                let m = count[b] as f64;
                (conf_sum[b] / m, correct[b] as f64 / m)
            };
            if count[b] > 0 {
                total += count[b] as f64 / n * (accuracy - confidence).abs();
            }
            ReliabilityBin {
                lower: bin_lower(b, n_bins),
                upper: bin_lower(b + 1, n_bins),
                count: count[b],
                confidence,
                accuracy,
            }
        })
        .collect();
    Ok((total, ReliabilityBins { bins }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionCurve {
    pub thresholds: Vec<f64>,
    /// Class-averaged net benefit per threshold.
    pub net_benefit: Vec<f64>,
    /// `per_class[c][i]` at `thresholds[i]`.
    pub per_class: Vec<Vec<f64>>,
}

/// 0.00, 0.01, …, 0.99.
pub fn default_dca_thresholds() -> Vec<f64> {
    (0..100).map(|i| i as f64 / 100.0).collect()
}

/// One-vs-rest net benefit `TP/n − (FP/n)·t/(1−t)`, flagging a sample positive
/// for class `c` when `p_c ≥ t`, averaged over classes.
pub fn dca_net_benefit(records: &[EvalRecord], thresholds: &[f64]) -> Result<DecisionCurve> {
    if let Some(&t) = thresholds.iter().find(|&&t| !(0.0..1.0).contains(&t)) {
        return Err(Error::invalid("threshold", format!("{t} outside [0, 1)")));
    }
    if records.is_empty() {
        return Err(Error::Empty("records for decision curve"));
    }
    let k = n_classes(records);
    let n = records.len() as f64;
    let per_class: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            thresholds
                .iter()
                .map(|&t| {
                    let (mut tp, mut fp) = (0usize, 0usize);
                    for r in records {
                        if r.probs.get(c).copied().unwrap_or(0.0) >= t {
                            if r.label == c {
                                tp += 1;
                            } else {
                                fp += 1;
                            }
                        }
                    }
                    tp as f64 / n - fp as f64 / n * (t / (1.0 - t))
                })
                .collect()
        })
        .collect();
    let net_benefit = (0..thresholds.len())
        .map(|i| per_class.iter().map(|v| v[i]).sum::<f64>() / k as f64)
        .collect();
    Ok(DecisionCurve {
        thresholds: thresholds.to_vec(),
        net_benefit,
        per_class,
    })
}

pub fn roc_csv(report: &RocReport) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in &report.curve {
        writeln!(s, "{x},{y}").expect("write to string");
    }
    s
}

pub fn reliability_csv(bins: &ReliabilityBins) -> String {
    let mut s = String::from("bin_center,confidence,accuracy,count\n");
    for b in &bins.bins {
        writeln!(s, "{},{},{},{}", b.center(), b.confidence, b.accuracy, b.count).expect("write to string");
    }
    s
}

pub fn dca_csv(curve: &DecisionCurve) -> String {
    let mut s = String::from("threshold,net_benefit\n");
    for (t, nb) in curve.thresholds.iter().zip(&curve.net_benefit) {
        writeln!(s, "{t},{nb}").expect("write to string");
    }
    s
}

/// The headline numbers for one evaluated split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: f64,
    pub bacc: f64,
    pub macro_f1: f64,
    pub auc: f64,
    pub ece: f64,
}

impl MetricSummary {
    pub fn compute(records: &[EvalRecord], ece_bins: usize) -> Result<Self> {
        Ok(MetricSummary {
            acc: accuracy(records),
            bacc: balanced_accuracy(records),
            macro_f1: macro_f1(records),
            auc: roc_auc_macro(records).macro_auc,
            ece: ece(records, ece_bins)?.0,
        })
    }
}
