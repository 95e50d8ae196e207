//! Embedding files, client partitioning, and synthetic data.

mod format;
mod partition;
mod synth;

pub use format::{read_dataset, write_dataset, EmbeddingDataset, FormatError, MAGIC, VERSION};
pub use partition::{
    dirichlet_partition, pathological_classes, pathological_partition, split_train_val_test, DirichletPartitionConfig,
    Splits,
};
pub use synth::{synth_generate, SyntheticConfig, SyntheticData};
