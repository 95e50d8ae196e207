use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fedadapt::metrics::{dca_csv, dca_net_benefit, ece, reliability_csv, roc_auc_macro, roc_csv, MetricSummary};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::split_slug;
use crate::train::{BestRecords, LogRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitBest {
    pub round: usize,
    pub metrics: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rounds: usize,
    /// Highest-accuracy round of every split, earliest on ties.
    pub best: BTreeMap<String, SplitBest>,
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

/// Summarizes a training run directory into `out`: `summary.csv` with the
/// best round per split, `curves_<split>.csv` with per-round ACC/BACC/F1,
/// and ROC, reliability and decision-curve CSVs of each split's best round
/// when its records are available.
pub fn cmd_report(run_dir: &Path, out: &Path) -> Result<ReportSummary> {
    let log = read_log(&run_dir.join(crate::METRICS_LOG))?;
    if log.is_empty() {
        bail!("{} holds no records", run_dir.join(crate::METRICS_LOG).display());
    }
    let mut best: BTreeMap<String, SplitBest> = BTreeMap::new();
    let mut curves: BTreeMap<String, String> = BTreeMap::new();
    for r in &log {
        if best.get(&r.split).is_none_or(|b| r.metrics.acc > b.metrics.acc) {
            best.insert(
                r.split.clone(),
                SplitBest {
                    round: r.round,
                    metrics: r.metrics,
                },
            );
        }
        let c = curves
            .entry(r.split.clone())
            .or_insert_with(|| String::from("round,acc,bacc,macro_f1,auc,ece\n"));
        let m = &r.metrics;
        writeln!(c, "{},{},{},{},{},{}", r.round, m.acc, m.bacc, m.macro_f1, m.auc, m.ece)?;
    }
    let summary = ReportSummary {
        rounds: log.iter().map(|r| r.round).max().unwrap_or(0),
        best,
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut table = String::from("split,round,acc,bacc,macro_f1,auc,ece\n");
    for (split, b) in &summary.best {
        let m = &b.metrics;
        writeln!(
            table,
            "{split},{},{},{},{},{},{}",
            b.round, m.acc, m.bacc, m.macro_f1, m.auc, m.ece
        )?;
    }
    fs::write(out.join("summary.csv"), table)?;
    for (split, text) in &curves {
        fs::write(out.join(format!("curves_{}.csv", split_slug(split))), text)?;
    }

    let records_path = run_dir.join(crate::BEST_RECORDS);
    if records_path.is_file() {
        let cfg = ExperimentConfig::load(&run_dir.join(crate::RESOLVED_CONFIG))?;
        let text = fs::read_to_string(&records_path)?;
        let records: BTreeMap<String, BestRecords> = serde_json::from_str(&text)?;
        let thresholds = cfg.dca_thresholds();
        for (split, b) in &records {
            if summary.best.get(split).map(|s| s.round) != Some(b.round) {
                bail!(
                    "{split}: best records are from round {} but the log selects another round",
                    b.round
                );
            }
            let slug = split_slug(split);
            fs::write(out.join(format!("roc_{slug}.csv")), roc_csv(&roc_auc_macro(&b.records)))?;
            let (_, bins) = ece(&b.records, cfg.train.ece_bins)?;
            fs::write(out.join(format!("reliability_{slug}.csv")), reliability_csv(&bins))?;
            let curve = dca_net_benefit(&b.records, &thresholds)?;
            fs::write(out.join(format!("dca_{slug}.csv")), dca_csv(&curve))?;
        }
    }
    Ok(summary)
}
