//! Federated rounds: local adversarial training on every client, upload of
//! the adapter vector, unweighted server averaging, broadcast, evaluation,
//! and communication accounting.

mod eval;
mod local;
mod server;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eval::evaluate;
pub use local::{objective_backprop, ClientData, ClientState, EpochStats, LabeledSet, StepLosses};
pub use server::{aggregate, CommLedger, RoundComm, ServerState};

use crate::adversary::{DomainClassifier, DomainClassifierConfig};
use crate::data::{split_train_val_test, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::fam::{FamConfig, FamParams, FamVariant};
use crate::losses::Temperature;
use crate::metrics::{EvalRecord, MetricSummary, DEFAULT_ECE_BINS};
use crate::numerics::{AdamConfig, Matrix};
use crate::rng;
use crate::scalar::Scalar;

/// Run hyperparameters. Defaults follow the reference protocol: 50 rounds of
/// one local epoch, batches of 32, `λ = 0.5`, Adam(0.9, 0.98, 1e-6) with lr
/// 5e-5 and decoupled weight decay 0.02, and a logit scale of 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlRunConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub adam: AdamConfig,
    pub enable_da: bool,
    /// Average discriminator parameters at the server as well.
    pub share_dc: bool,
    /// Keep batch-norm fields of the adapter local on broadcast.
    pub local_bn: bool,
    pub fam_variant: FamVariant,
    /// Adapter hidden width; defaults to the feature width.
    pub fam_hidden_dim: Option<usize>,
    pub discriminator: DomainClassifierConfig,
    /// Inverse softmax temperature `1/τ`.
    pub logit_scale: f64,
    pub ece_bins: usize,
    pub seed: u64,
}

impl Default for FlRunConfig {
    fn default() -> Self {
        FlRunConfig {
            rounds: 50,
            local_epochs: 1,
            batch_size: 32,
            lambda: 0.5,
            adam: AdamConfig::default(),
            enable_da: true,
            share_dc: false,
            local_bn: false,
            fam_variant: FamVariant::Standard,
            fam_hidden_dim: None,
            discriminator: DomainClassifierConfig::default(),
            logit_scale: 100.0,
            ece_bins: DEFAULT_ECE_BINS,
            seed: 0,
        }
    }
}

impl FlRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::invalid("local_epochs", "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size", "must be >= 2"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        if self.ece_bins == 0 {
            return Err(Error::invalid("ece_bins", "must be >= 1"));
        }
        if self.fam_hidden_dim == Some(0) {
            return Err(Error::invalid("fam_hidden_dim", "must be >= 1"));
        }
        self.temperature()?;
        self.adam.validate()?;
        self.discriminator.validate()
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::from_logit_scale(self.logit_scale)
            .map_err(|_| Error::invalid("logit_scale", "must be finite and > 0"))
    }

    pub fn fam_config(&self, feature_dim: usize) -> FamConfig {
        FamConfig {
            feature_dim,
            hidden_dim: self.fam_hidden_dim.unwrap_or(feature_dim),
            variant: self.fam_variant,
        }
    }

    /// Scalars moved per client and direction each round.
    pub fn per_client_payload(&self, feature_dim: usize) -> u64 {
        let mut n = self.fam_config(feature_dim).param_count() as u64;
        if self.share_dc {
            n += self.discriminator.param_count(feature_dim) as u64;
        }
        n
    }
}

/// Inputs of a federated run, already converted to the working precision.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedData<T> {
    pub clients: Vec<ClientData<T>>,
    /// One prompt embedding per class.
    pub prompt_bank: Matrix<T>,
    /// Shared unlabeled reference features for the domain loss.
    pub target_pool: Option<Matrix<T>>,
    /// Held-out labeled split evaluated with the global adapter.
    pub global_eval: Option<LabeledSet<T>>,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.6, 0.2, 0.2];

impl<T: Scalar> FederatedData<T> {
    /// Splits every client dataset into train/val/test with a per-client seeded
    /// shuffle. The prompt bank comes from the first client file; all files
    /// must share width and class table.
    pub fn from_datasets(
        clients: &[EmbeddingDataset],
        target_pool: Option<&EmbeddingDataset>,
        global_eval: Option<&EmbeddingDataset>,
        ratios: [f64; 3],
        seed: u64,
    ) -> Result<Self> {
        let first = clients.first().ok_or(Error::Empty("client datasets"))?;
        let prompt_bank = first
            .prompt_matrix()
            .ok_or_else(|| Error::invalid("prompt_bank", "first client dataset carries no prompt bank"))?;
        for ds in clients.iter().chain(target_pool).chain(global_eval) {
            if !ds.compatible_with(first) {
                return Err(Error::invalid(
                    "datasets",
                    "all datasets must share feature width and class names",
                ));
            }
        }
        let clients = clients
            .iter()
            .enumerate()
            .map(|(i, ds)| {
                let idx: Vec<usize> = (0..ds.len()).collect();
                let s = split_train_val_test(&idx, ratios, rng_seed(seed, i))?;
                Ok(ClientData {
                    train: LabeledSet::from_dataset(&ds.subset(&s.train)),
                    val: LabeledSet::from_dataset(&ds.subset(&s.val)),
                    test: LabeledSet::from_dataset(&ds.subset(&s.test)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FederatedData {
            clients,
            prompt_bank,
            target_pool: target_pool.map(EmbeddingDataset::features_matrix),
            global_eval: global_eval.map(LabeledSet::from_dataset),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.prompt_bank.cols()
    }

    fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Empty("clients"));
        }
        let d = self.feature_dim();
        let k = self.prompt_bank.rows();
        let sets = self
            .clients
            .iter()
            .flat_map(|c| [&c.train, &c.val, &c.test])
            .chain(self.global_eval.as_ref());
        for set in sets {
            if set.features.cols() != d {
                return Err(Error::dim("client features", d, set.features.cols()));
            }
            if let Some(&l) = set.labels.iter().find(|&&l| l >= k) {
                return Err(Error::invalid("labels", format!("label {l} >= class count {k}")));
            }
        }
        if let Some(p) = &self.target_pool {
            if p.cols() != d {
                return Err(Error::dim("target pool", d, p.cols()));
            }
        }
        Ok(())
    }
}

fn rng_seed(seed: u64, client: usize) -> u64 {
    use rand::Rng;
    rng::stream(seed, &[0x5e, client as u64]).random()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Serial,
    /// Clients of a round train concurrently on the current rayon pool.
    Parallel,
}

/// Evaluation of one split after one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    /// Owning client, `None` for the global split.
    pub client: Option<usize>,
    pub n: usize,
    #[serde(flatten)]
    pub metrics: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 0 is the evaluation of the initialization.
    pub round: usize,
    pub splits: Vec<SplitMetrics>,
    /// Per-client mean losses of this round's local training.
    pub client_stats: Vec<EpochStats>,
    pub comm: Option<RoundComm>,
    pub cumulative_comm: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestSplit {
    pub round: usize,
    pub metrics: MetricSummary,
    pub records: Vec<EvalRecord>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub rounds: Vec<RoundMetrics>,
    pub ledger: CommLedger,
    pub server: ServerState<T>,
    pub clients: Vec<ClientState<T>>,
    /// Highest-accuracy round per split (earliest on ties), with its records.
    pub best: BTreeMap<String, BestSplit>,
    /// Round and global vector with the best selection score: global-split
    /// accuracy when present, else mean client test accuracy.
    pub best_checkpoint: (usize, Vec<T>),
    pub fam_config: FamConfig,
}

impl<T: Scalar> RunOutcome<T> {
    pub fn final_global(&self) -> Result<FamParams<T>> {
        FamParams::from_vector(self.fam_config, &self.server.global_fam)
    }
}

/// Overwrites each client's adapter with the global vector (batch-norm
/// fields kept local when `local_bn`) and, when shared, its discriminator.
/// Returns the number of scalars sent.
pub fn broadcast<T: Scalar>(server: &ServerState<T>, clients: &mut [ClientState<T>], local_bn: bool) -> Result<u64> {
    let mut sent = 0u64;
    for c in clients.iter_mut() {
        c.fam.load_broadcast(&server.global_fam, local_bn)?;
        sent += server.global_fam.len() as u64;
        if let Some(dc) = &server.global_dc {
            c.dc.load_vector(dc)?;
            sent += dc.len() as u64;
        }
    }
    Ok(sent)
}

const INIT_FAM: u64 = 0xfa;
const INIT_DC: u64 = 0xdc;

/// Initial adapter (shared by all clients) and per-client states, seeded from
/// `cfg.seed`. Discriminators are per-client unless `share_dc`.
pub fn initial_clients<T: Scalar>(
    cfg: &FlRunConfig,
    fam_cfg: FamConfig,
    n: usize,
) -> Result<(FamParams<T>, Vec<ClientState<T>>)> {
    let d = fam_cfg.feature_dim;
    let fam = FamParams::init(fam_cfg, &mut rng::stream(cfg.seed, &[INIT_FAM]))?;
    let make_dc = |path: &[u64]| -> Result<DomainClassifier<T>> {
        let dc = DomainClassifier::init(d, cfg.discriminator, &mut rng::stream(cfg.seed, path))?;
        Ok(if cfg.discriminator.zero_head {
            dc.with_zero_head()
        } else {
            dc
        })
    };
    let shared_dc = if cfg.share_dc {
        Some(make_dc(&[INIT_DC, u64::MAX])?)
    } else {
        None
    };
    let clients = (0..n)
        .map(|i| {
            let dc = match &shared_dc {
                Some(dc) => dc.clone(),
                None => make_dc(&[INIT_DC, i as u64])?,
            };
            Ok(ClientState::new(i, fam.clone(), dc))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fam, clients))
}

fn train_round<T: Scalar>(
    clients: &mut [ClientState<T>],
    data: &FederatedData<T>,
    cfg: &FlRunConfig,
    round: usize,
    exec: Execution,
) -> Result<Vec<EpochStats>> {
    let job = |(client, cdata): (&mut ClientState<T>, &ClientData<T>)| -> Result<EpochStats> {
        let mut acc = EpochStats::default();
        let mut da_sum = 0.0;
        for epoch in 0..cfg.local_epochs {
            let s = client.local_train_epoch(cdata, &data.prompt_bank, data.target_pool.as_ref(), cfg, round, epoch)?;
            acc.loss_contr += s.loss_contr;
            acc.batches += s.batches;
            if let Some(d) = s.loss_da {
                da_sum += d;
                acc.loss_da = Some(da_sum);
            }
        }
        let e = cfg.local_epochs as f64;
        acc.loss_contr /= e;
        acc.loss_da = acc.loss_da.map(|d| d / e);
        Ok(acc)
    };
    let results: Vec<Result<EpochStats>> = match exec {
        Execution::Serial => clients.iter_mut().zip(&data.clients).map(job).collect(),
        Execution::Parallel => clients.par_iter_mut().zip(data.clients.par_iter()).map(job).collect(),
    };
    results.into_iter().collect()
}

struct Evaluation {
    splits: Vec<SplitMetrics>,
    records: Vec<Vec<EvalRecord>>,
    selection_score: f64,
}

fn evaluate_round<T: Scalar>(
    server: &ServerState<T>,
    clients: &[ClientState<T>],
    data: &FederatedData<T>,
    cfg: &FlRunConfig,
    fam_cfg: FamConfig,
) -> Result<Evaluation> {
    let tau = cfg.temperature()?;
    let mut splits = Vec::new();
    let mut records = Vec::new();
    let mut push = |name: String, client: Option<usize>, recs: Vec<EvalRecord>| -> Result<f64> {
        let metrics = MetricSummary::compute(&recs, cfg.ece_bins)?;
        splits.push(SplitMetrics {
            split: name,
            client,
            n: recs.len(),
            metrics,
        });
        records.push(recs);
        Ok(metrics.acc)
    };
    let mut test_accs = Vec::new();
    for (i, (c, cd)) in clients.iter().zip(&data.clients).enumerate() {
        push(
            format!("client{i}/val"),
            Some(i),
            evaluate(&c.fam, &cd.val, &data.prompt_bank, tau)?,
        )?;
        test_accs.push(push(
            format!("client{i}/test"),
            Some(i),
            evaluate(&c.fam, &cd.test, &data.prompt_bank, tau)?,
        )?);
    }
    let selection_score = match &data.global_eval {
        Some(set) => {
            let global = FamParams::from_vector(fam_cfg, &server.global_fam)?;
            push(
                "global".to_owned(),
                None,
                evaluate(&global, set, &data.prompt_bank, tau)?,
            )?
        }
        None => test_accs.iter().sum::<f64>() / test_accs.len() as f64,
    };
    Ok(Evaluation {
        splits,
        records,
        selection_score,
    })
}

/// Runs `cfg.rounds` federated rounds. Round 0 evaluates the initialization.
/// Results are a pure function of `cfg`, `data` and the seed; serial and
/// parallel execution agree bit for bit.
pub fn run_federated<T: Scalar>(cfg: &FlRunConfig, data: &FederatedData<T>, exec: Execution) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    data.validate()?;
    let d = data.feature_dim();
    let fam_cfg = cfg.fam_config(d);
    fam_cfg.validate()?;
    if cfg.enable_da && data.target_pool.as_ref().is_none_or(|p| p.is_empty()) {
        return Err(Error::invalid("target_pool", "required when enable_da = true"));
    }

    let (fam0, mut clients) = initial_clients::<T>(cfg, fam_cfg, data.clients.len())?;
    let mut server = ServerState {
        global_fam: fam0.to_vector(),
        global_dc: cfg.share_dc.then(|| clients[0].dc.to_vector()),
        round: 0,
        ledger: CommLedger::default(),
    };

    let mut rounds = Vec::with_capacity(cfg.rounds + 1);
    let mut best: BTreeMap<String, BestSplit> = BTreeMap::new();
    let mut best_checkpoint = (0usize, server.global_fam.clone(), f64::NEG_INFINITY);

    let mut record_round = |round: usize,
                            server: &ServerState<T>,
                            clients: &[ClientState<T>],
                            client_stats: Vec<EpochStats>,
                            rounds: &mut Vec<RoundMetrics>|
     -> Result<()> {
        let ev = evaluate_round(server, clients, data, cfg, fam_cfg)?;
        for (s, recs) in ev.splits.iter().zip(ev.records) {
            let better = best.get(&s.split).is_none_or(|b| s.metrics.acc > b.metrics.acc);
            if better {
                best.insert(
                    s.split.clone(),
                    BestSplit {
                        round,
                        metrics: s.metrics,
                        records: recs,
                    },
                );
            }
        }
        if ev.selection_score > best_checkpoint.2 {
            best_checkpoint = (round, server.global_fam.clone(), ev.selection_score);
        }
        rounds.push(RoundMetrics {
            round,
            splits: ev.splits,
            client_stats,
            comm: server.ledger.rounds.last().copied().filter(|c| c.round == round),
            cumulative_comm: server.ledger.total(),
        });
        Ok(())
    };

    record_round(0, &server, &clients, Vec::new(), &mut rounds)?;

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let stats = train_round(&mut clients, data, cfg, round, exec)?;
        server.ledger.train_seconds.push(started.elapsed().as_secs_f64());

        let uploads: Vec<Vec<T>> = clients.iter().map(|c| c.fam.to_vector()).collect();
        let mut uploaded: u64 = uploads.iter().map(|v| v.len() as u64).sum();
        server.global_fam = aggregate(&uploads)?;
        if cfg.share_dc {
            let dcs: Vec<Vec<T>> = clients.iter().map(|c| c.dc.to_vector()).collect();
            uploaded += dcs.iter().map(|v| v.len() as u64).sum::<u64>();
            server.global_dc = Some(aggregate(&dcs)?);
        }
        let downloaded = broadcast(&server, &mut clients, cfg.local_bn)?;
        server.round = round;
        server.ledger.record(round, uploaded, downloaded);

        record_round(round, &server, &clients, stats, &mut rounds)?;
    }

    Ok(RunOutcome {
        rounds,
        ledger: server.ledger.clone(),
        server,
        clients,
        best,
        best_checkpoint: (best_checkpoint.0, best_checkpoint.1),
        fam_config: fam_cfg,
    })
}
