//! Forward and reverse-mode passes for the layer kinds used by the adapter and
//! the domain discriminator: dense, batch norm, pointwise activations, row
//! softmax, and gradient reversal.

use rand::Rng;

use super::{Matrix, ParamBlock};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Forward-pass regime.
///
/// `Train { update_running: false }` normalizes with batch statistics but
/// leaves the running estimates alone; used for the discriminator's view of
/// reference-pool samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { update_running: bool },
    Eval,
}

impl Mode {
    pub const TRAIN: Mode = Mode::Train { update_running: true };

    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// `x · w + b` with `b` broadcast over rows.
pub fn linear_forward<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if x.cols() != w.rows() {
        return Err(Error::dim("linear_forward", w.rows(), x.cols()));
    }
    b.expect_shape("linear_forward bias", 1, w.cols())?;
    x.matmul(w)?.add_row_broadcast(b)
}

pub struct LinearGrads<T> {
    pub dx: Matrix<T>,
    pub dw: Matrix<T>,
    pub db: Matrix<T>,
}

pub fn linear_backward<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, dout: &Matrix<T>) -> Result<LinearGrads<T>> {
    dout.expect_shape("linear_backward", x.rows(), w.cols())?;
    Ok(LinearGrads {
        dx: dout.matmul_t(w)?,
        dw: x.t_matmul(dout)?,
        db: dout.sum_rows(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: ParamBlock<T>,
    pub bias: ParamBlock<T>,
}

#[derive(Clone, Debug)]
pub struct LinearCache<T> {
    input: Matrix<T>,
}

impl<T: Scalar> Linear<T> {
    /// Weights uniform in ±1/√fan_in, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self::from_parts(
            Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
            Matrix::zeros(1, fan_out),
        )
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self::from_parts(Matrix::zeros(fan_in, fan_out), Matrix::zeros(1, fan_out))
    }

    pub fn from_parts(weight: Matrix<T>, bias: Matrix<T>) -> Self {
        Linear {
            weight: ParamBlock::new(weight),
            bias: ParamBlock::new(bias),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape().0
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape().1
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, LinearCache<T>)> {
        let out = linear_forward(x, &self.weight.value, &self.bias.value)?;
        Ok((out, LinearCache { input: x.clone() }))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &LinearCache<T>, dout: &Matrix<T>) -> Result<Matrix<T>> {
        let g = linear_backward(&cache.input, &self.weight.value, dout)?;
        self.weight.accumulate(&g.dw)?;
        self.bias.accumulate(&g.db)?;
        Ok(g.dx)
    }

    pub fn blocks_mut(&mut self) -> [&mut ParamBlock<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    normalized: Matrix<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    batch_stats: bool,
}

pub struct BatchNormOutput<T> {
    pub out: Matrix<T>,
    pub cache: BatchNormCache<T>,
    /// Updated `(running_mean, running_var)` in train mode.
    pub running: Option<(Vec<T>, Vec<T>)>,
}

/// Column-wise batch normalization. Running variance is tracked with the
/// unbiased batch estimate.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Scalar>(
    x: &Matrix<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
    momentum: T,
    eps: T,
) -> Result<BatchNormOutput<T>> {
    let (rows, cols) = x.shape();
    for (name, v) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if v.len() != cols {
            return Err(Error::dim(
                "batchnorm_forward",
                format!("{name} of length {cols}"),
                v.len(),
            ));
        }
    }
    if rows == 0 {
        return Err(Error::Empty("batchnorm_forward input"));
    }

    let (mean, var, running) = if mode.is_train() {
        if rows < 2 {
            return Err(Error::DegenerateBatch {
                op: "batchnorm_forward",
                rows,
            });
        }
        let n = T::of_usize(rows);
        let mut mean = vec![T::zero(); cols];
        for r in 0..rows {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); cols];
        for r in 0..rows {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let unbias = n / (n - T::one());
        let keep = T::one() - momentum;
        let new_mean = running_mean
            .iter()
            .zip(&mean)
            .map(|(&rm, &m)| keep * rm + momentum * m)
            .collect();
        let new_var = running_var
            .iter()
            .zip(&var)
            .map(|(&rv, &v)| keep * rv + momentum * v * unbias)
            .collect();
        (mean, var, Some((new_mean, new_var)))
    } else {
        (running_mean.to_vec(), running_var.to_vec(), None)
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = Matrix::zeros(rows, cols);
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let xh = (x[(r, c)] - mean[c]) * inv_std[c];
            normalized[(r, c)] = xh;
            out[(r, c)] = gamma[c] * xh + beta[c];
        }
    }
    Ok(BatchNormOutput {
        out,
        cache: BatchNormCache {
            normalized,
            inv_std,
            gamma: gamma.to_vec(),
            batch_stats: mode.is_train(),
        },
        running,
    })
}

pub struct BatchNormGrads<T> {
    pub dx: Matrix<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub fn batchnorm_backward<T: Scalar>(cache: &BatchNormCache<T>, dout: &Matrix<T>) -> Result<BatchNormGrads<T>> {
    let (rows, cols) = cache.normalized.shape();
    dout.expect_shape("batchnorm_backward", rows, cols)?;
    let mut dgamma = vec![T::zero(); cols];
    let mut dbeta = vec![T::zero(); cols];
    for r in 0..rows {
        for c in 0..cols {
            dgamma[c] += dout[(r, c)] * cache.normalized[(r, c)];
            dbeta[c] += dout[(r, c)];
        }
    }
    let mut dx = Matrix::zeros(rows, cols);
    if cache.batch_stats {
        // dx = inv_std/B · (B·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = dout·γ
        let n = T::of_usize(rows);
        for c in 0..cols {
            let g = cache.gamma[c];
            let sum_dxhat = dbeta[c] * g;
            let sum_dxhat_xhat = dgamma[c] * g;
            let k = cache.inv_std[c] / n;
            for r in 0..rows {
                let dxhat = dout[(r, c)] * g;
                dx[(r, c)] = k * (n * dxhat - sum_dxhat - cache.normalized[(r, c)] * sum_dxhat_xhat);
            }
        }
    } else {
        for r in 0..rows {
            for c in 0..cols {
                dx[(r, c)] = dout[(r, c)] * cache.gamma[c] * cache.inv_std[c];
            }
        }
    }
    Ok(BatchNormGrads { dx, dgamma, dbeta })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: ParamBlock<T>,
    pub beta: ParamBlock<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: ParamBlock::new(Matrix::filled(1, width, T::one())),
            beta: ParamBlock::new(Matrix::zeros(1, width)),
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
            momentum: T::of(BN_MOMENTUM),
            eps: T::of(BN_EPS),
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, BatchNormCache<T>)> {
        let res = batchnorm_forward(
            x,
            self.gamma.value.as_slice(),
            self.beta.value.as_slice(),
            &self.running_mean,
            &self.running_var,
            mode,
            self.momentum,
            self.eps,
        )?;
        if let (Mode::Train { update_running: true }, Some((m, v))) = (mode, res.running) {
            self.running_mean = m;
            self.running_var = v;
        }
        Ok((res.out, res.cache))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, dout: &Matrix<T>) -> Result<Matrix<T>> {
        let g = batchnorm_backward(cache, dout)?;
        self.gamma.accumulate(&Matrix::row_vector(g.dgamma))?;
        self.beta.accumulate(&Matrix::row_vector(g.dbeta))?;
        Ok(g.dx)
    }

    pub fn blocks_mut(&mut self) -> [&mut ParamBlock<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu {
        slope: f64,
    },
    Relu,
    Sigmoid,
    /// Softmax over each row.
    SoftmaxRows,
}

impl Activation {
    pub const LEAKY_RELU: Activation = Activation::LeakyRelu {
        slope: LEAKY_RELU_SLOPE,
    };
}

#[derive(Clone, Debug)]
pub struct ActivationCache<T> {
    kind: Activation,
    input: Matrix<T>,
    output: Matrix<T>,
}

impl<T> ActivationCache<T> {
    pub fn output(&self) -> &Matrix<T> {
        &self.output
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Stable softmax of one row.
pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Stable log-softmax of one row.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    row.iter().map(|&v| v - lse).collect()
}

pub fn activation_forward<T: Scalar>(x: &Matrix<T>, kind: Activation) -> Result<Matrix<T>> {
    let out = match kind {
        Activation::LeakyRelu { slope } => {
            let s = T::of(slope);
            x.map(|v| if v > T::zero() { v } else { s * v })
        }
        Activation::Relu => x.map(|v| v.max(T::zero())),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::SoftmaxRows => {
            if x.cols() == 0 {
                return Err(Error::invalid("softmax_rows", "needs at least one column"));
            }
            let mut out = Matrix::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                out.row_mut(r).copy_from_slice(&softmax(x.row(r)));
            }
            out
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite("activation_forward"));
    }
    Ok(out)
}

pub fn activation_backward<T: Scalar>(cache: &ActivationCache<T>, dout: &Matrix<T>) -> Result<Matrix<T>> {
    let (x, y) = (&cache.input, &cache.output);
    dout.expect_same_shape("activation_backward", x)?;
    let dx = match cache.kind {
        Activation::LeakyRelu { slope } => {
            let s = T::of(slope);
            x.zip_map(dout, "leaky_relu", |v, g| if v > T::zero() { g } else { s * g })?
        }
        Activation::Relu => x.zip_map(dout, "relu", |v, g| if v > T::zero() { g } else { T::zero() })?,
        Activation::Sigmoid => y.zip_map(dout, "sigmoid", |s, g| g * s * (T::one() - s))?,
        Activation::SoftmaxRows => {
            let mut dx = Matrix::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let yr = y.row(r);
                let gr = dout.row(r);
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for (d, (&yi, &gi)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                    *d = yi * (gi - dot);
                }
            }
            dx
        }
    };
    Ok(dx)
}

/// Forward pass that retains what the backward pass needs.
pub fn activation_apply<T: Scalar>(x: &Matrix<T>, kind: Activation) -> Result<(Matrix<T>, ActivationCache<T>)> {
    let out = activation_forward(x, kind)?;
    Ok((
        out.clone(),
        ActivationCache {
            kind,
            input: x.clone(),
            output: out,
        },
    ))
}

// ---------------------------------------------------------------------------
// Gradient reversal
// ---------------------------------------------------------------------------

/// Backward pass of the gradient reversal layer: identity forward, `-lambda`
/// times the upstream gradient backward.
pub fn grad_reverse<T: Scalar>(upstream: &Matrix<T>, lambda: T) -> Matrix<T> {
    upstream.scale(-lambda)
}
