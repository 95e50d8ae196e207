//! Brute-force reference implementations of every metric.

use fedadapt::metrics::{
    accuracy, balanced_accuracy, dca_net_benefit, default_dca_thresholds, ece, macro_f1, roc_auc_macro, EvalRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-9;

pub fn oracle_accuracy(rs: &[EvalRecord]) -> f64 {
    let mut hit = 0.0;
    for r in rs {
        if r.label == r.predicted {
            hit += 1.0;
        }
    }
    hit / rs.len() as f64
}

fn classes_present(rs: &[EvalRecord], k: usize) -> Vec<usize> {
    (0..k).filter(|&c| rs.iter().any(|r| r.label == c)).collect()
}

pub fn oracle_bacc(rs: &[EvalRecord], k: usize) -> f64 {
    let present = classes_present(rs, k);
    let mut total = 0.0;
    for &c in &present {
        let of_c: Vec<&EvalRecord> = rs.iter().filter(|r| r.label == c).collect();
        let hit = of_c.iter().filter(|r| r.predicted == c).count();
        total += hit as f64 / of_c.len() as f64;
    }
    total / present.len() as f64
}

pub fn oracle_macro_f1(rs: &[EvalRecord], k: usize) -> f64 {
    let present = classes_present(rs, k);
    let mut total = 0.0;
    for &c in &present {
        let predicted_c = rs.iter().filter(|r| r.predicted == c).count() as f64;
        let actual_c = rs.iter().filter(|r| r.label == c).count() as f64;
        let both = rs.iter().filter(|r| r.label == c && r.predicted == c).count() as f64;
        let precision = if predicted_c > 0.0 { both / predicted_c } else { 0.0 };
        let recall = both / actual_c;
        total += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    total / present.len() as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counted half, averaged over classes that have both.
pub fn oracle_macro_auc(rs: &[EvalRecord], k: usize) -> f64 {
    let mut aucs = Vec::new();
    for c in 0..k {
        let pos: Vec<f64> = rs.iter().filter(|r| r.label == c).map(|r| r.probs[c]).collect();
        let neg: Vec<f64> = rs.iter().filter(|r| r.label != c).map(|r| r.probs[c]).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        aucs.push(wins / (pos.len() * neg.len()) as f64);
    }
    aucs.iter().sum::<f64>() / aucs.len() as f64
}

pub fn oracle_ece(rs: &[EvalRecord], n_bins: usize) -> f64 {
    let conf = |r: &EvalRecord| r.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let members: Vec<&EvalRecord> = rs
            .iter()
            .filter(|r| {
                let c = conf(r);
                (c > lo && c <= hi) || (b == 0 && c == 0.0)
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let avg_conf = members.iter().map(|r| conf(r)).sum::<f64>() / m;
        let avg_acc = members.iter().filter(|r| r.label == r.predicted).count() as f64 / m;
        total += m / rs.len() as f64 * (avg_acc - avg_conf).abs();
    }
    total
}

pub fn oracle_net_benefit(rs: &[EvalRecord], k: usize, t: f64) -> f64 {
    let n = rs.len() as f64;
    let mut total = 0.0;
    for c in 0..k {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for r in rs {
            if r.probs[c] >= t {
                if r.label == c {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        total += tp / n - fp / n * t / (1.0 - t);
    }
    total / k as f64
}

/// A random instance with up to 50 samples and 5 classes. Probabilities are
/// sometimes quantized so ties and bin edges occur.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<EvalRecord>, usize) {
    let k = rng.random_range(2..=5);
    let n = rng.random_range(2..=50);
    let quantize = rng.random_bool(0.5);
    let records = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k)
                .map(|_| {
                    let v: f64 = rng.random_range(0.0..1.0);
                    if quantize {
                        (v * 4.0).round() / 4.0 + 0.25
                    } else {
                        v
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / s).collect();
            EvalRecord::new(rng.random_range(0..k), probs)
        })
        .collect();
    (records, k)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OracleErrors {
    pub accuracy: f64,
    pub bacc: f64,
    pub macro_f1: f64,
    pub auc: f64,
    pub ece: f64,
    pub dca: f64,
}

impl OracleErrors {
    pub fn max(&self) -> f64 {
        [self.accuracy, self.bacc, self.macro_f1, self.auc, self.ece, self.dca]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Max absolute deviation of each metric from its oracle over `instances`
/// random instances.
pub fn compare(instances: usize, seed: u64) -> OracleErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = OracleErrors::default();
    let thresholds = default_dca_thresholds();
    for _ in 0..instances {
        let (rs, k) = random_instance(&mut rng);
        e.accuracy = e.accuracy.max((accuracy(&rs) - oracle_accuracy(&rs)).abs());
        e.bacc = e.bacc.max((balanced_accuracy(&rs) - oracle_bacc(&rs, k)).abs());
        e.macro_f1 = e.macro_f1.max((macro_f1(&rs) - oracle_macro_f1(&rs, k)).abs());
        if rs.iter().any(|r| r.label != rs[0].label) {
            e.auc = e
                .auc
                .max((roc_auc_macro(&rs).macro_auc - oracle_macro_auc(&rs, k)).abs());
        }
        for bins in [1, 10, 15] {
            e.ece = e.ece.max((ece(&rs, bins).unwrap().0 - oracle_ece(&rs, bins)).abs());
        }
        let curve = dca_net_benefit(&rs, &thresholds).unwrap();
        for (&t, &nb) in thresholds.iter().zip(&curve.net_benefit) {
            e.dca = e.dca.max((nb - oracle_net_benefit(&rs, k, t)).abs());
        }
    }
    e
}

/// Perfectly separable scores must give AUC 1.
pub fn separable_auc() -> f64 {
    let rs: Vec<EvalRecord> = (0..30)
        .map(|i| {
            let c = i % 3;
            let mut p = vec![0.1; 3];
            p[c] = 0.8;
            EvalRecord::new(c, p)
        })
        .collect();
    roc_auc_macro(&rs).macro_auc
}

/// Largest deviation, over classes and random instances, of the per-class
/// net benefit at `t = 0` from the class prevalence.
pub fn zero_threshold_deviation(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (rs, k) = random_instance(&mut rng);
        let curve = dca_net_benefit(&rs, &[0.0]).unwrap();
        for c in 0..k {
            let prevalence = rs.iter().filter(|r| r.label == c).count() as f64 / rs.len() as f64;
            worst = worst.max((curve.per_class[c][0] - prevalence).abs());
        }
    }
    worst
}
