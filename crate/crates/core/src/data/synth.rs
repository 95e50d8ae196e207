//! Desk-scale stand-in for frozen encoder outputs: class anchors on the unit
//! sphere, per-domain offsets, and Gaussian noise.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub feature_dim: usize,
    /// Labeled source domains; one extra held-out domain is always generated.
    pub n_domains: usize,
    pub samples_per_class: usize,
    /// Upper bound on the pairwise cosine between class anchors.
    pub max_anchor_cosine: f64,
    /// Norm of each domain's offset vector.
    pub shift: f64,
    /// Offset norm of the held-out domain; `None` uses `shift`.
    pub target_shift: Option<f64>,
    /// Coordinates a domain offset is spread over; 0 means all of them.
    pub shift_support: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 8,
            feature_dim: 64,
            n_domains: 3,
            samples_per_class: 40,
            max_anchor_cosine: 0.5,
            shift: 1.0,
            target_shift: None,
            shift_support: 0,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_classes", self.n_classes),
            ("feature_dim", self.feature_dim),
            ("n_domains", self.n_domains),
            ("samples_per_class", self.samples_per_class),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be >= 1"));
            }
        }
        if self.shift_support > self.feature_dim {
            return Err(Error::invalid("shift_support", "cannot exceed feature_dim"));
        }
        if !(self.max_anchor_cosine > -1.0 && self.max_anchor_cosine <= 1.0) {
            return Err(Error::invalid("max_anchor_cosine", "must lie in (-1, 1]"));
        }
        if !(self.shift >= 0.0 && self.noise_sigma >= 0.0 && self.target_shift.is_none_or(|t| t >= 0.0)) {
            return Err(Error::invalid("shift/noise_sigma", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    /// One labeled dataset per source domain.
    pub sources: Vec<EmbeddingDataset>,
    /// Held-out shifted domain; doubles as the unlabeled reference pool.
    pub target: EmbeddingDataset,
    pub anchors: Vec<f32>,
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-12).then(|| v.into_iter().map(|x| x / n).collect())
}

fn class_anchors(cfg: &SyntheticConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng::stream(cfg.seed, &[0xa1]);
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_classes);
    let mut attempts = 0usize;
    while anchors.len() < cfg.n_classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid(
                "max_anchor_cosine",
                "could not place anchors under this separation bound",
            ));
        }
        let Some(candidate) = unit(gaussian_vec(cfg.feature_dim, &mut rng)) else {
            continue;
        };
        let ok = anchors.iter().all(|a| {
            let cos: f64 = a.iter().zip(&candidate).map(|(x, y)| x * y).sum();
            cos < cfg.max_anchor_cosine
        });
        if ok {
            anchors.push(candidate);
        }
    }
    Ok(anchors)
}

fn domain_offset<R: Rng + ?Sized>(cfg: &SyntheticConfig, shift: f64, rng: &mut R) -> Vec<f64> {
    let d = cfg.feature_dim;
    let mut offset = vec![0.0; d];
    if shift == 0.0 {
        return offset;
    }
    let support = if cfg.shift_support == 0 { d } else { cfg.shift_support };
    loop {
        let coords = sample(rng, d, support);
        let raw = gaussian_vec(support, rng);
        if let Some(dir) = unit(raw) {
            for (c, v) in coords.iter().zip(dir) {
                offset[c] = v * shift;
            }
            return offset;
        }
    }
}

/// Generates `n_domains` source domains plus one held-out target domain, all
/// sharing the anchor prompt bank. Samples are `anchor + offset + noise`.
pub fn synth_generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let anchors = class_anchors(cfg)?;
    let names: Vec<String> = (0..cfg.n_classes).map(|c| format!("class_{c}")).collect();
    let bank: Vec<f32> = anchors.iter().flatten().map(|&v| v as f32).collect();

    let make_domain = |domain: usize| -> Result<EmbeddingDataset> {
        let mut rng = rng::stream(cfg.seed, &[0xd0, domain as u64]);
        let shift = if domain == cfg.n_domains {
            cfg.target_shift.unwrap_or(cfg.shift)
        } else {
            cfg.shift
        };
        let offset = domain_offset(cfg, shift, &mut rng);
        let mut labels = Vec::with_capacity(cfg.n_classes * cfg.samples_per_class);
        let mut features = Vec::with_capacity(labels.capacity() * cfg.feature_dim);
        for (class, anchor) in anchors.iter().enumerate() {
            for _ in 0..cfg.samples_per_class {
                loop {
                    let row: Vec<f32> = anchor
                        .iter()
                        .zip(&offset)
                        .map(|(&a, &o)| {
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            (a + o + cfg.noise_sigma * noise) as f32
                        })
                        .collect();
                    if row.iter().any(|&v| v != 0.0) {
                        features.extend(row);
                        break;
                    }
                }
                labels.push(class as u32);
            }
        }
        Ok(EmbeddingDataset::new(
            cfg.feature_dim,
            names.clone(),
            Some(bank.clone()),
            labels,
            features,
        )?)
    };

    let sources = (0..cfg.n_domains).map(make_domain).collect::<Result<Vec<_>>>()?;
    let target = make_domain(cfg.n_domains)?;
    Ok(SyntheticData {
        sources,
        target,
        anchors: bank,
    })
}
