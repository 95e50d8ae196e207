use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fedadapt::data::{
    dirichlet_partition, pathological_partition, read_dataset, split_train_val_test, synth_generate, write_dataset,
    DirichletPartitionConfig, EmbeddingDataset, SyntheticConfig,
};

/// Writes `source_{i}.faeb` for every source domain and `target.faeb`.
pub fn cmd_synth(cfg: &SyntheticConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = synth_generate(cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (i, ds) in data.sources.iter().enumerate() {
        let p = out.join(format!("source_{i}.faeb"));
        write_dataset(ds, &p)?;
        written.push(p);
    }
    let p = out.join("target.faeb");
    write_dataset(&data.target, &p)?;
    written.push(p);
    Ok(written)
}

#[derive(Clone, Debug, PartialEq)]
pub enum PartitionScheme {
    Dirichlet {
        alpha: f64,
        clients: usize,
    },
    Pathological {
        clients: usize,
    },
    /// Train/validation/test fractions.
    Split {
        ratios: [f64; 3],
    },
}

/// Cuts `input` into `client_{i}.faeb` files, or `train/val/test.faeb` for
/// the split scheme.
pub fn cmd_partition(input: &Path, scheme: &PartitionScheme, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let ds = read_dataset(input).with_context(|| format!("reading {}", input.display()))?;
    let parts: Vec<(String, Vec<usize>)> = match *scheme {
        PartitionScheme::Dirichlet { alpha, clients } => {
            let cfg = DirichletPartitionConfig {
                alpha,
                n_clients: clients,
                seed,
            };
            named_clients(dirichlet_partition(ds.labels(), &cfg)?)
        }
        PartitionScheme::Pathological { clients } => {
            named_clients(pathological_partition(ds.labels(), ds.n_classes(), clients, seed)?)
        }
        PartitionScheme::Split { ratios } => {
            let all: Vec<usize> = (0..ds.len()).collect();
            let s = split_train_val_test(&all, ratios, seed)?;
            vec![
                ("train".into(), s.train),
                ("val".into(), s.val),
                ("test".into(), s.test),
            ]
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    parts
        .into_iter()
        .map(|(name, idx)| {
            let p = out.join(format!("{name}.faeb"));
            write_dataset(&ds.subset(&idx), &p)?;
            Ok(p)
        })
        .collect()
}

fn named_clients(parts: Vec<Vec<usize>>) -> Vec<(String, Vec<usize>)> {
    parts
        .into_iter()
        .enumerate()
        .map(|(i, idx)| (format!("client_{i}"), idx))
        .collect()
}

pub(crate) fn read_all(paths: &[PathBuf]) -> Result<Vec<EmbeddingDataset>> {
    paths
        .iter()
        .map(|p| read_dataset(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}
