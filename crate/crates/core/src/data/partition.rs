//! Non-IID client partitioning and train/validation/test splitting.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPartitionConfig {
    pub alpha: f64,
    pub n_clients: usize,
    pub seed: u64,
}

impl DirichletPartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be finite and > 0"));
        }
        if self.n_clients == 0 {
            return Err(Error::invalid("n_clients", "must be >= 1"));
        }
        Ok(())
    }
}

fn indices_by_class(labels: &[u32]) -> Vec<Vec<usize>> {
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut by_class = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    by_class
}

/// Proportions drawn from a symmetric Dirichlet via normalized Gamma draws.
fn dirichlet_proportions<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        // every draw underflowed; fall back to a single random owner
        let owner = rng.random_range(0..n);
        (0..n).map(|i| if i == owner { 1.0 } else { 0.0 }).collect()
    }
}

/// Splits sample indices across clients: for every class, a proportion vector
/// is drawn from `Dirichlet(α, …, α)` and the shuffled class indices are cut
/// into contiguous slices by cumulative proportion. Smaller `α` concentrates
/// each class on fewer clients. Output lists are sorted.
pub fn dirichlet_partition(labels: &[u32], cfg: &DirichletPartitionConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let mut rng = rng::stream(cfg.seed, &[0xd1]);
    let mut clients = vec![Vec::new(); cfg.n_clients];
    for mut members in indices_by_class(labels) {
        members.shuffle(&mut rng);
        let props = dirichlet_proportions(cfg.alpha, cfg.n_clients, &mut rng);
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (c, p) in props.iter().enumerate() {
            cum += p;
            let end = if c + 1 == cfg.n_clients {
                n
            } else {
                ((cum * n as f64).floor() as usize).clamp(start, n)
            };
            clients[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    clients.iter_mut().for_each(|c| c.sort_unstable());
    Ok(clients)
}

/// Assigns disjoint class subsets: classes are shuffled and dealt round-robin,
/// so each client holds `K / N` classes (remainders go to the first clients).
pub fn pathological_partition(
    labels: &[u32],
    n_classes: usize,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be >= 1"));
    }
    if n_clients > n_classes {
        return Err(Error::invalid(
            "n_clients",
            format!("{n_clients} clients cannot hold disjoint subsets of {n_classes} classes"),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::invalid(
            "labels",
            format!("label {bad} >= n_classes {n_classes}"),
        ));
    }
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.shuffle(&mut rng::stream(seed, &[0xba]));
    let mut owner = vec![0usize; n_classes];
    for (pos, &class) in order.iter().enumerate() {
        owner[class] = pos % n_clients;
    }
    let mut clients = vec![Vec::new(); n_clients];
    for (i, &l) in labels.iter().enumerate() {
        clients[owner[l as usize]].push(i);
    }
    Ok(clients)
}

/// Class subsets each client receives under [`pathological_partition`].
pub fn pathological_classes(n_classes: usize, n_clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let labels: Vec<u32> = (0..n_classes as u32).collect();
    pathological_partition(&labels, n_classes, n_clients, seed)
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then `floor(n·r)` rows to validation and test; the
/// remainder goes to training.
pub fn split_train_val_test(indices: &[usize], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if indices.is_empty() {
        return Err(Error::Empty("indices to split"));
    }
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "ratios",
            format!("{ratios:?} must be in [0,1] and sum to 1"),
        ));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, &[0x5b]));
    let n = shuffled.len();
    let n_val = (n as f64 * ratios[1]).floor() as usize;
    let n_test = (n as f64 * ratios[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(Splits {
        train: shuffled[..n_train].to_vec(),
        val: shuffled[n_train..n_train + n_val].to_vec(),
        test: shuffled[n_train + n_val..].to_vec(),
    })
}
