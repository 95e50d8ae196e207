use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FlRunConfig;
use crate::adversary::{domain_backprop, DomainClassifier};
use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::fam::FamParams;
use crate::losses::{contrastive_loss, cosine_backward, cosine_similarity_cached, Temperature};
use crate::numerics::{Matrix, Mode};
use crate::rng;
use crate::scalar::Scalar;

/// Feature rows with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<T> {
    pub features: Matrix<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn from_dataset(ds: &EmbeddingDataset) -> Self {
        LabeledSet {
            features: ds.features_matrix(),
            labels: ds.labels().iter().map(|&l| l as usize).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A client's private train/validation/test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientData<T> {
    pub train: LabeledSet<T>,
    pub val: LabeledSet<T>,
    pub test: LabeledSet<T>,
}

/// Everything a client owns across rounds. Optimizer moments live inside the
/// parameter blocks of `fam` and `dc`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState<T> {
    pub client_id: usize,
    pub fam: FamParams<T>,
    pub dc: DomainClassifier<T>,
}

/// Mean losses over one local epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss_contr: f64,
    pub loss_da: Option<f64>,
    pub batches: usize,
}

/// Losses of one minibatch objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses<T> {
    pub contrastive: T,
    pub domain: Option<T>,
}

impl<T: Scalar> StepLosses<T> {
    /// `L_contr − λ L_DA`, the quantity the adapter minimizes.
    pub fn adapter_objective(&self, lambda: T) -> T {
        self.contrastive - lambda * self.domain.unwrap_or_else(T::zero)
    }
}

/// Forward and backward pass of the full local objective on one minibatch.
///
/// `texts` holds the prompt row of each source label, so the diagonal of the
/// similarity matrix pairs every image with its own class prompt. With a
/// target batch the discriminator sees a balanced `2B` batch of masked
/// features and the adapter receives its gradient through reversal at `λ`.
/// Gradients accumulate in `fam` and `dc`; nothing is stepped.
#[allow(clippy::too_many_arguments)]
pub fn objective_backprop<T: Scalar>(
    fam: &mut FamParams<T>,
    dc: &mut DomainClassifier<T>,
    source: &Matrix<T>,
    texts: &Matrix<T>,
    target: Option<&Matrix<T>>,
    lambda: T,
    tau: Temperature,
    mode: Mode,
) -> Result<StepLosses<T>> {
    let (masked_s, cache_s) = fam.forward_masked(source, mode)?;
    let (sim, cos_cache) = cosine_similarity_cached(&masked_s, texts)?;
    let (contrastive, d_sim) = contrastive_loss(&sim, tau)?;
    let mut d_masked_s = cosine_backward(&cos_cache, &d_sim)?;

    let domain = match target {
        Some(target) => {
            let target_mode = match mode {
                Mode::Eval => Mode::Eval,
                Mode::Train { .. } => Mode::Train { update_running: false },
            };
            let (masked_t, cache_t) = fam.forward_masked(target, target_mode)?;
            let step = domain_backprop(dc, &masked_s, &masked_t, lambda)?;
            fam.backward(&cache_t, &step.d_target)?;
            d_masked_s.add_assign(&step.d_source)?;
            Some(step.loss)
        }
        None => None,
    };
    fam.backward(&cache_s, &d_masked_s)?;
    Ok(StepLosses { contrastive, domain })
}

const SHUFFLE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;

impl<T: Scalar> ClientState<T> {
    pub fn new(client_id: usize, fam: FamParams<T>, dc: DomainClassifier<T>) -> Self {
        ClientState { client_id, fam, dc }
    }

    /// One pass over the training split in shuffled minibatches of `B`
    /// (a trailing batch of a single row is dropped), with one Adam step per
    /// parameter group and minibatch.
    pub fn local_train_epoch(
        &mut self,
        data: &ClientData<T>,
        prompt_bank: &Matrix<T>,
        target_pool: Option<&Matrix<T>>,
        cfg: &FlRunConfig,
        round: usize,
        epoch: usize,
    ) -> Result<EpochStats> {
        let train = &data.train;
        if train.len() < 2 {
            return Err(Error::Empty("client training split (needs at least 2 samples)"));
        }
        if train.features.cols() != prompt_bank.cols() {
            return Err(Error::dim(
                "local_train_epoch features",
                prompt_bank.cols(),
                train.features.cols(),
            ));
        }
        let use_da = cfg.enable_da;
        let pool = match (use_da, target_pool) {
            (true, Some(p)) if !p.is_empty() => Some(p),
            (true, _) => return Err(Error::Empty("target pool (required when enable_da = true)")),
            (false, _) => None,
        };
        if let Some(p) = pool {
            if p.cols() != train.features.cols() {
                return Err(Error::dim("target pool width", train.features.cols(), p.cols()));
            }
        }

        let path = |stream: u64| [self.client_id as u64, round as u64, epoch as u64, stream];
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &path(SHUFFLE_STREAM)));
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).filter(|b| b.len() >= 2).collect();

        let mut target_draws = Vec::new();
        if let Some(p) = pool {
            let demand: usize = batches.iter().map(|b| b.len()).sum();
            let mut trng = rng::stream(cfg.seed, &path(TARGET_STREAM));
            if p.rows() >= demand {
                let mut perm: Vec<usize> = (0..p.rows()).collect();
                perm.shuffle(&mut trng);
                perm.truncate(demand);
                target_draws = perm;
            } else {
                target_draws = (0..demand).map(|_| trng.random_range(0..p.rows())).collect();
            }
        }

        let lambda = T::of(cfg.lambda);
        let tau = cfg.temperature()?;
        let mut stats = EpochStats::default();
        let mut sum_contr = 0.0;
        let mut sum_da = 0.0;
        let mut cursor = 0;
        for batch in &batches {
            let source = train.features.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let texts = prompt_bank.select_rows(&labels);
            let target = pool.map(|p| {
                let rows = &target_draws[cursor..cursor + batch.len()];
                cursor += batch.len();
                p.select_rows(rows)
            });

            self.fam.zero_grad();
            self.dc.zero_grad();
            let losses = objective_backprop(
                &mut self.fam,
                &mut self.dc,
                &source,
                &texts,
                target.as_ref(),
                lambda,
                tau,
                Mode::TRAIN,
            )?;
            self.fam.adam_step(&cfg.adam);
            if use_da {
                self.dc.adam_step(&cfg.adam);
            }
            sum_contr += losses.contrastive.as_f64();
            if let Some(d) = losses.domain {
                sum_da += d.as_f64();
            }
            stats.batches += 1;
        }
        if stats.batches > 0 {
            stats.loss_contr = sum_contr / stats.batches as f64;
            stats.loss_da = use_da.then(|| sum_da / stats.batches as f64);
        }
        Ok(stats)
    }
}
