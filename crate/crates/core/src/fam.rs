//! Feature adaptation module: a small network that turns frozen image features
//! into a per-sample attention mask over feature channels, applied by
//! element-wise product. Its flat parameter vector is the only payload that
//! clients exchange with the server.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{layout_for, vector_len, Network, NetworkCache, Segment, SegmentKind};
use crate::numerics::{Activation, AdamConfig, Matrix, Mode};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamVariant {
    /// linear → BN → LeakyReLU → linear → softmax
    #[default]
    Standard,
    /// Adds a second `linear → BN → LeakyReLU` block of width `hidden_dim`.
    Deep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub variant: FamVariant,
}

impl FamConfig {
    /// Hidden width equal to the feature width.
    pub fn new(feature_dim: usize) -> Self {
        FamConfig {
            feature_dim,
            hidden_dim: feature_dim,
            variant: FamVariant::Standard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be >= 1"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim", "must be >= 1"));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let (d, h) = (self.feature_dim, self.hidden_dim);
        match self.variant {
            FamVariant::Standard => vec![d, h, d],
            FamVariant::Deep => vec![d, h, h, d],
        }
    }

    pub fn layout(&self) -> Vec<Segment> {
        layout_for(&self.widths())
    }

    /// Length of the transmitted vector, running statistics included.
    pub fn param_count(&self) -> usize {
        vector_len(&self.widths())
    }

    pub fn learnable_count(&self) -> usize {
        self.layout()
            .iter()
            .filter(|s| s.kind.is_learnable())
            .map(|s| s.range.len())
            .sum()
    }
}

pub fn fam_param_count(config: &FamConfig) -> usize {
    config.param_count()
}

/// `I* = A ⊗ I`
pub fn apply_mask<T: Scalar>(features: &Matrix<T>, mask: &Matrix<T>) -> Result<Matrix<T>> {
    features.zip_map(mask, "apply_mask", |a, b| a * b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamParams<T> {
    config: FamConfig,
    net: Network<T>,
}

#[derive(Clone, Debug)]
pub struct FamCache<T> {
    net: NetworkCache<T>,
    input: Matrix<T>,
    mask: Matrix<T>,
}

impl<T> FamCache<T> {
    pub fn mask(&self) -> &Matrix<T> {
        &self.mask
    }
}

impl<T: Scalar> FamParams<T> {
    pub fn init<R: Rng + ?Sized>(config: FamConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(FamParams {
            config,
            net: Network::init(&config.widths(), Activation::LEAKY_RELU, Activation::SoftmaxRows, rng),
        })
    }

    /// All linear weights and biases zero; batch norm at identity.
    pub fn zeros(config: FamConfig) -> Result<Self> {
        config.validate()?;
        Ok(FamParams {
            config,
            net: Network::zeros(&config.widths(), Activation::LEAKY_RELU, Activation::SoftmaxRows),
        })
    }

    pub fn from_vector(config: FamConfig, v: &[T]) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        p.load_vector(v)?;
        Ok(p)
    }

    pub fn config(&self) -> &FamConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    /// Attention mask `A` with rows on the probability simplex over features.
    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, FamCache<T>)> {
        let (mask, net) = self.net.forward(x, mode)?;
        Ok((
            mask.clone(),
            FamCache {
                net,
                input: x.clone(),
                mask,
            },
        ))
    }

    /// Masked features `A ⊗ I` together with the cache for [`Self::backward`].
    pub fn forward_masked(&mut self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, FamCache<T>)> {
        let (mask, cache) = self.forward(x, mode)?;
        Ok((apply_mask(x, &mask)?, cache))
    }

    /// Eval-mode mask; leaves the parameters untouched.
    pub fn mask(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.net.forward_pure(x, Mode::Eval)?.0)
    }

    pub fn masked_features(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        apply_mask(x, &self.mask(x)?)
    }

    /// Reverse pass of [`Self::forward_masked`]. The product rule sends the
    /// upstream gradient through both the mask path and the identity path.
    /// Parameter gradients accumulate; the feature gradient is returned.
    pub fn backward(&mut self, cache: &FamCache<T>, d_masked: &Matrix<T>) -> Result<Matrix<T>> {
        cache.input.expect_same_shape("fam_backward", d_masked)?;
        let d_mask = d_masked.hadamard(&cache.input)?;
        let direct = d_masked.hadamard(&cache.mask)?;
        let via_mask = self.net.backward(&cache.net, &d_mask)?;
        direct.add(&via_mask)
    }

    pub fn zero_grad(&mut self) {
        self.net.zero_grad();
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.net.adam_step(cfg);
    }

    /// Canonical flat layout: per hidden block `W, b, γ, β, running mean,
    /// running var`, then the output `W, b`.
    pub fn to_vector(&self) -> Vec<T> {
        self.net.to_vector()
    }

    pub fn grad_vector(&self) -> Vec<T> {
        self.net.grad_vector()
    }

    pub fn load_vector(&mut self, v: &[T]) -> Result<()> {
        self.net.load_vector(v)
    }

    /// Loads a broadcast vector, optionally keeping local batch-norm fields.
    pub fn load_broadcast(&mut self, v: &[T], keep_local_bn: bool) -> Result<()> {
        self.net
            .load_vector_where(v, |k: SegmentKind| !(keep_local_bn && k.is_batchnorm()))
    }
}
