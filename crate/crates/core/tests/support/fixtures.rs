//! Small synthetic federations for fast end-to-end runs.

use fedadapt::data::{synth_generate, SyntheticConfig};
use fedadapt::federation::DEFAULT_SPLIT;
use fedadapt::{FederatedData, FlRunConfig, Scalar};

pub fn synth(n_clients: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_classes: 4,
        feature_dim: 8,
        n_domains: n_clients,
        samples_per_class: 12,
        shift: 0.5,
        target_shift: Some(1.5),
        shift_support: 3,
        noise_sigma: 0.2,
        seed,
        ..Default::default()
    }
}

pub fn federation<T: Scalar>(n_clients: usize, seed: u64) -> FederatedData<T> {
    let data = synth_generate(&synth(n_clients, seed)).unwrap();
    FederatedData::from_datasets(
        &data.sources,
        Some(&data.target),
        Some(&data.target),
        DEFAULT_SPLIT,
        seed,
    )
    .unwrap()
}

pub fn run_config(rounds: usize, seed: u64) -> FlRunConfig {
    let mut cfg = FlRunConfig {
        rounds,
        batch_size: 8,
        seed,
        ..Default::default()
    };
    cfg.adam.learning_rate = 1e-3;
    cfg.discriminator.hidden1 = 16;
    cfg.discriminator.hidden2 = 8;
    cfg
}
