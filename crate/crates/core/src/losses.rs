//! Cosine-similarity classification, the symmetric image/text contrastive
//! loss, and the binary domain cross-entropy, each with exact gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, softmax, Matrix};
use crate::scalar::Scalar;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Softmax temperature `τ > 0`; logits are `s / τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::invalid("tau", format!("must be finite and > 0, got {tau}")))
        }
    }

    /// From the inverse temperature, e.g. a logit scale of 100.
    pub fn from_logit_scale(scale: f64) -> Result<Self> {
        Self::new(1.0 / scale)
    }

    pub fn tau(self) -> f64 {
        self.0
    }

    pub fn logit_scale(self) -> f64 {
        1.0 / self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(0.01)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

#[derive(Clone, Debug)]
pub struct CosineCache<T> {
    query_unit: Matrix<T>,
    query_norms: Vec<T>,
    key_unit: Matrix<T>,
    similarity: Matrix<T>,
}

fn normalize_rows<T: Scalar>(m: &Matrix<T>, which: &'static str) -> Result<(Matrix<T>, Vec<T>)> {
    let mut unit = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = m.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
        if n.is_nan() || n <= T::zero() || !n.is_finite() {
            return Err(Error::DegenerateVector { which, row: r });
        }
        unit.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

/// `s[j][c] = <q_j, k_c> / (|q_j| |k_c|)`, with the cache for [`cosine_backward`].
pub fn cosine_similarity_cached<T: Scalar>(
    queries: &Matrix<T>,
    keys: &Matrix<T>,
) -> Result<(Matrix<T>, CosineCache<T>)> {
    if queries.cols() != keys.cols() {
        return Err(Error::dim("cosine_similarity", queries.cols(), keys.cols()));
    }
    let (query_unit, query_norms) = normalize_rows(queries, "queries")?;
    let (key_unit, _) = normalize_rows(keys, "keys")?;
    let similarity = query_unit.matmul_t(&key_unit)?;
    Ok((
        similarity.clone(),
        CosineCache {
            query_unit,
            query_norms,
            key_unit,
            similarity,
        },
    ))
}

pub fn cosine_similarity<T: Scalar>(queries: &Matrix<T>, keys: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(cosine_similarity_cached(queries, keys)?.0)
}

/// Gradient with respect to the queries; keys are frozen text features.
pub fn cosine_backward<T: Scalar>(cache: &CosineCache<T>, d_sim: &Matrix<T>) -> Result<Matrix<T>> {
    cache.similarity.expect_same_shape("cosine_backward", d_sim)?;
    let mut dq = d_sim.matmul(&cache.key_unit)?;
    for j in 0..dq.rows() {
        let proj: T = d_sim
            .row(j)
            .iter()
            .zip(cache.similarity.row(j))
            .map(|(&g, &s)| g * s)
            .sum();
        let inv_norm = T::one() / cache.query_norms[j];
        let unit = cache.query_unit.row(j);
        for (d, &u) in dq.row_mut(j).iter_mut().zip(unit) {
            *d = (*d - proj * u) * inv_norm;
        }
    }
    Ok(dq)
}

/// Class distribution `softmax(s / τ)` for one similarity row.
pub fn class_probabilities<T: Scalar>(similarities: &[T], tau: Temperature) -> Vec<T> {
    let scale = T::of(tau.logit_scale());
    let logits: Vec<T> = similarities.iter().map(|&s| s * scale).collect();
    softmax(&logits)
}

/// Symmetric contrastive loss over a square similarity matrix whose diagonal
/// holds the matching pairs: `-(1/B) Σ_j ½ (log p_jj + log q_jj)` with `P` the
/// row softmax and `Q` the row softmax of the transpose. Returns the loss and
/// its gradient with respect to the similarities.
pub fn contrastive_loss<T: Scalar>(sim: &Matrix<T>, tau: Temperature) -> Result<(T, Matrix<T>)> {
    let b = sim.rows();
    if b != sim.cols() {
        return Err(Error::dim(
            "contrastive_loss",
            format!("square matrix ({b}x{b})"),
            format!("{}x{}", b, sim.cols()),
        ));
    }
    if b == 0 {
        return Err(Error::Empty("contrastive_loss batch"));
    }
    let scale = T::of(tau.logit_scale());
    let logits = sim.scale(scale);
    let logits_t = logits.transpose();
    let mut total = T::zero();
    let mut grad = Matrix::zeros(b, b);
    for j in 0..b {
        let lp = log_softmax(logits.row(j));
        let lq = log_softmax(logits_t.row(j));
        total += lp[j] + lq[j];
        // row j of P and column j of the column-softmax
        for k in 0..b {
            grad[(j, k)] += lp[k].exp();
            grad[(k, j)] += lq[k].exp();
        }
        grad[(j, j)] -= T::of(2.0);
    }
    let two_b = T::of_usize(2 * b);
    let loss = -total / two_b;
    let k = scale / two_b;
    Ok((loss, grad.scale(k)))
}

/// Binary cross-entropy between source probabilities `d` and domain labels
/// (`true` = client data), averaged over all rows. Gradient is that of the
/// clamped loss.
pub fn da_loss<T: Scalar>(d: &[T], z: &[bool]) -> Result<(T, Vec<T>)> {
    if d.len() != z.len() {
        return Err(Error::dim("da_loss", d.len(), z.len()));
    }
    if d.is_empty() {
        return Err(Error::Empty("da_loss batch"));
    }
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    let n = T::of_usize(d.len());
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(d.len());
    for (&p, &label) in d.iter().zip(z) {
        let clamped = p.max(lo).min(hi);
        let inside = p >= lo && p <= hi;
        let (term, g) = if label {
            (clamped.ln(), -T::one() / clamped)
        } else {
            ((T::one() - clamped).ln(), T::one() / (T::one() - clamped))
        };
        total += term;
        grad.push(if inside { g / n } else { T::zero() });
    }
    Ok((-total / n, grad))
}
