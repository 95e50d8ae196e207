//! Per-client domain discriminator and its adversarial coupling to the
//! adapter through gradient reversal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fam::FamParams;
use crate::losses::da_loss;
use crate::network::{vector_len, Network, NetworkCache};
use crate::numerics::{grad_reverse, Activation, AdamConfig, Linear, Matrix, Mode};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainClassifierConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    /// Start the output layer at zero so every initial prediction is 0.5.
    pub zero_head: bool,
}

impl Default for DomainClassifierConfig {
    fn default() -> Self {
        DomainClassifierConfig {
            hidden1: 512,
            hidden2: 256,
            zero_head: true,
        }
    }
}

impl DomainClassifierConfig {
    pub fn widths(&self, feature_dim: usize) -> Vec<usize> {
        vec![feature_dim, self.hidden1, self.hidden2, 1]
    }

    pub fn param_count(&self, feature_dim: usize) -> usize {
        vector_len(&self.widths(feature_dim))
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden1 == 0 {
            return Err(Error::invalid("hidden1", "must be >= 1"));
        }
        if self.hidden2 == 0 {
            return Err(Error::invalid("hidden2", "must be >= 1"));
        }
        Ok(())
    }
}

/// linear → BN → ReLU → linear → BN → ReLU → linear → sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainClassifier<T> {
    net: Network<T>,
}

#[derive(Clone, Debug)]
pub struct DomainCache<T> {
    net: NetworkCache<T>,
}

impl<T: Scalar> DomainClassifier<T> {
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, cfg: DomainClassifierConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(DomainClassifier {
            net: Network::init(&cfg.widths(feature_dim), Activation::Relu, Activation::Sigmoid, rng),
        })
    }

    /// Zeroes the output layer so every prediction starts at exactly 0.5.
    pub fn with_zero_head(mut self) -> Self {
        let (a, b) = (self.net.head.fan_in(), self.net.head.fan_out());
        self.net.head = Linear::zeros(a, b);
        self
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    /// Source-domain probability per row.
    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<(Vec<T>, DomainCache<T>)> {
        let (out, net) = self.net.forward(x, mode)?;
        Ok((out.into_vec(), DomainCache { net }))
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        Ok(self.net.forward_pure(x, Mode::Eval)?.0.into_vec())
    }

    /// Accumulates parameter gradients, returns the gradient on the features.
    pub fn backward(&mut self, cache: &DomainCache<T>, d_probs: &[T]) -> Result<Matrix<T>> {
        let d = Matrix::from_vec(d_probs.len(), 1, d_probs.to_vec())?;
        self.net.backward(&cache.net, &d)
    }

    pub fn zero_grad(&mut self) {
        self.net.zero_grad();
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.net.adam_step(cfg);
    }

    pub fn to_vector(&self) -> Vec<T> {
        self.net.to_vector()
    }

    pub fn grad_vector(&self) -> Vec<T> {
        self.net.grad_vector()
    }

    pub fn load_vector(&mut self, v: &[T]) -> Result<()> {
        self.net.load_vector(v)
    }

    pub fn param_count(&self) -> usize {
        self.net.vector_len()
    }
}

/// `2B` masked features: the first `B` rows come from the client's own data
/// (label `true`), the last `B` from the shared reference pool.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch<T> {
    features: Matrix<T>,
    labels: Vec<bool>,
}

impl<T: Scalar> DomainBatch<T> {
    pub fn new(source: &Matrix<T>, target: &Matrix<T>) -> Result<Self> {
        if source.rows() != target.rows() {
            return Err(Error::dim("DomainBatch balance", source.rows(), target.rows()));
        }
        if source.rows() == 0 {
            return Err(Error::Empty("DomainBatch"));
        }
        let features = source.vstack(target)?;
        let b = source.rows();
        let labels = (0..2 * b).map(|i| i < b).collect();
        Ok(DomainBatch { features, labels })
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn half(&self) -> usize {
        self.labels.len() / 2
    }

    pub fn is_balanced(&self) -> bool {
        let ones = self.labels.iter().filter(|&&z| z).count();
        2 * ones == self.labels.len()
    }
}

/// Outcome of one discriminator pass with the gradient already reversed for
/// the adapter side.
pub struct DomainStep<T> {
    pub loss: T,
    /// `-λ ∂L_DA/∂I*` for the source rows.
    pub d_source: Matrix<T>,
    /// `-λ ∂L_DA/∂I*` for the target rows.
    pub d_target: Matrix<T>,
}

/// Discriminator forward/backward on a balanced batch. Discriminator
/// gradients (descent on `L_DA`) accumulate in `dc`; the returned feature
/// gradients have passed through the reversal layer.
pub fn domain_backprop<T: Scalar>(
    dc: &mut DomainClassifier<T>,
    masked_source: &Matrix<T>,
    masked_target: &Matrix<T>,
    lambda: T,
) -> Result<DomainStep<T>> {
    if lambda < T::zero() {
        return Err(Error::invalid("lambda", "must be >= 0"));
    }
    let batch = DomainBatch::new(masked_source, masked_target)?;
    let (probs, cache) = dc.forward(batch.features(), Mode::TRAIN)?;
    let (loss, d_probs) = da_loss(&probs, batch.labels())?;
    let d_features = dc.backward(&cache, &d_probs)?;
    let reversed = grad_reverse(&d_features, lambda);
    let b = batch.half();
    Ok(DomainStep {
        loss,
        d_source: reversed.slice_rows(0, b),
        d_target: reversed.slice_rows(b, 2 * b),
    })
}

/// Gradients of the adversarial term alone: descent on `L_DA` for the
/// discriminator and, via gradient reversal, `-λ ∂L_DA/∂θ` for the adapter.
/// Both accumulate into the respective parameter blocks. Adapter running
/// statistics are left untouched. Returns `L_DA`.
pub fn adversarial_backprop<T: Scalar>(
    fam: &mut FamParams<T>,
    dc: &mut DomainClassifier<T>,
    source: &Matrix<T>,
    target: &Matrix<T>,
    lambda: T,
) -> Result<T> {
    let frozen_stats = Mode::Train { update_running: false };
    let (ms, cache_s) = fam.forward_masked(source, frozen_stats)?;
    let (mt, cache_t) = fam.forward_masked(target, frozen_stats)?;
    let step = domain_backprop(dc, &ms, &mt, lambda)?;
    fam.backward(&cache_s, &step.d_source)?;
    fam.backward(&cache_t, &step.d_target)?;
    Ok(step.loss)
}
