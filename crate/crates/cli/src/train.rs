use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use fedadapt::data::{read_dataset, synth_generate, EmbeddingDataset};
use fedadapt::federation::RoundComm;
use fedadapt::metrics::{EvalRecord, MetricSummary};
use fedadapt::{run_federated, Execution, FamConfig, FederatedData, RunOutcome, Scalar};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Precision};
use crate::datasets::read_all;

/// One line of the metrics log: a split evaluated after a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    pub split: String,
    pub client: Option<usize>,
    pub n: usize,
    #[serde(flatten)]
    pub metrics: MetricSummary,
    /// The owning client's mean losses this round; client mean for the
    /// global split; absent at round 0.
    pub loss_contr: Option<f64>,
    pub loss_da: Option<f64>,
    pub comm: Option<RoundComm>,
    pub cumulative_comm: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub precision: Precision,
    pub round: usize,
    pub fam_config: FamConfig,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecords {
    pub round: usize,
    pub metrics: MetricSummary,
    pub records: Vec<EvalRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub rounds: usize,
    pub clients: usize,
    pub fam_params: usize,
    pub per_client_payload: u64,
    pub total_comm: u64,
    pub best_checkpoint_round: usize,
    pub best: BTreeMap<String, (usize, MetricSummary)>,
}

struct Inputs {
    clients: Vec<EmbeddingDataset>,
    target_pool: Option<EmbeddingDataset>,
    global_eval: Option<EmbeddingDataset>,
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    if cfg.data.clients.is_empty() {
        let synth = cfg.synth.as_ref().context("no client files and no [synth] block")?;
        let data = synth_generate(synth)?;
        return Ok(Inputs {
            clients: data.sources,
            target_pool: Some(data.target.clone()),
            global_eval: Some(data.target),
        });
    }
    let read_opt = |p: &Option<PathBuf>| -> Result<Option<EmbeddingDataset>> {
        p.as_ref()
            .map(|p| read_dataset(p).with_context(|| format!("reading {}", p.display())))
            .transpose()
    };
    Ok(Inputs {
        clients: read_all(&cfg.data.clients)?,
        target_pool: read_opt(&cfg.data.target_pool)?,
        global_eval: read_opt(&cfg.data.global_eval)?,
    })
}

/// Runs the configured experiment and writes every artifact under
/// `cfg.out_dir`. All files except `timings.json` are a pure function of the
/// configuration.
pub fn cmd_train(cfg: &ExperimentConfig, exec: Execution) -> Result<TrainSummary> {
    cfg.validate()?;
    cfg.check_paths()?;
    let inputs = load_inputs(cfg)?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, &inputs, exec),
        Precision::F64 => train_as::<f64>(cfg, &inputs, exec),
    }
}

fn train_as<T: Scalar>(cfg: &ExperimentConfig, inputs: &Inputs, exec: Execution) -> Result<TrainSummary> {
    let started = Instant::now();
    let data = FederatedData::<T>::from_datasets(
        &inputs.clients,
        inputs.target_pool.as_ref(),
        inputs.global_eval.as_ref(),
        cfg.data.split,
        cfg.seed,
    )?;
    let out = run_federated(&cfg.train, &data, exec)?;
    let total_seconds = started.elapsed().as_secs_f64();
    write_outputs(cfg, &data, &out, total_seconds)
}

fn log_records<T>(out: &RunOutcome<T>) -> Vec<LogRecord> {
    let mut lines = Vec::new();
    for r in &out.rounds {
        let mean = |f: &dyn Fn(&fedadapt::federation::EpochStats) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = r.client_stats.iter().filter_map(f).collect();
            (!v.is_empty() && v.len() == r.client_stats.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        for s in &r.splits {
            let (loss_contr, loss_da) = match s.client {
                Some(c) => r
                    .client_stats
                    .get(c)
                    .map_or((None, None), |st| (Some(st.loss_contr), st.loss_da)),
                None => (mean(&|st| Some(st.loss_contr)), mean(&|st| st.loss_da)),
            };
            lines.push(LogRecord {
                round: r.round,
                split: s.split.clone(),
                client: s.client,
                n: s.n,
                metrics: s.metrics,
                loss_contr,
                loss_da,
                comm: r.comm,
                cumulative_comm: r.cumulative_comm,
            });
        }
    }
    lines
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_outputs<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &FederatedData<T>,
    out: &RunOutcome<T>,
    total_seconds: f64,
) -> Result<TrainSummary> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(crate::RESOLVED_CONFIG), cfg.to_toml()?)?;

    let mut log = Vec::new();
    for line in log_records(out) {
        serde_json::to_writer(&mut log, &line)?;
        log.write_all(b"\n")?;
    }
    fs::write(dir.join(crate::METRICS_LOG), log)?;

    write_json(
        &dir.join(crate::TIMINGS),
        &serde_json::json!({
            "train_seconds": out.ledger.train_seconds,
            "total_seconds": total_seconds,
        }),
    )?;

    let d = data.feature_dim();
    let summary = TrainSummary {
        rounds: cfg.train.rounds,
        clients: data.clients.len(),
        fam_params: out.fam_config.param_count(),
        per_client_payload: cfg.train.per_client_payload(d),
        total_comm: out.ledger.total(),
        best_checkpoint_round: out.best_checkpoint.0,
        best: out
            .best
            .iter()
            .map(|(k, b)| (k.clone(), (b.round, b.metrics)))
            .collect(),
    };
    write_json(&dir.join(crate::LEDGER), &out.ledger)?;

    let checkpoint = |round: usize, v: &[T]| Checkpoint {
        precision: cfg.precision,
        round,
        fam_config: out.fam_config,
        vector: v.iter().map(|x| x.as_f64()).collect(),
    };
    write_json(
        &dir.join(crate::FINAL_CHECKPOINT),
        &checkpoint(out.server.round, &out.server.global_fam),
    )?;
    write_json(
        &dir.join(crate::BEST_CHECKPOINT),
        &checkpoint(out.best_checkpoint.0, &out.best_checkpoint.1),
    )?;

    let best: BTreeMap<&str, BestRecords> = out
        .best
        .iter()
        .map(|(k, b)| {
            (
                k.as_str(),
                BestRecords {
                    round: b.round,
                    metrics: b.metrics,
                    records: b.records.clone(),
                },
            )
        })
        .collect();
    let mut text = serde_json::to_string(&best)?;
    text.push('\n');
    fs::write(dir.join(crate::BEST_RECORDS), text)?;
    write_json(&dir.join(crate::SUMMARY), &summary)?;
    Ok(summary)
}
