//! Federated adaptation of a frozen vision-language backbone: a small
//! feature-mask adapter trained per client with a contrastive image-prompt
//! loss and an adversarial domain discriminator, then averaged on a server.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*32`/`*64` aliases below fix the precision.

pub mod adversary;
pub mod data;
pub mod error;
pub mod fam;
pub mod federation;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod rng;
pub mod scalar;

pub use adversary::{DomainClassifier, DomainClassifierConfig};
pub use error::{Error, Result};
pub use fam::{FamConfig, FamParams, FamVariant};
pub use federation::{run_federated, Execution, FederatedData, FlRunConfig, RunOutcome};
pub use losses::Temperature;
pub use numerics::{AdamConfig, Matrix, Mode};
pub use scalar::Scalar;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type FamParams32 = FamParams<f32>;
pub type FamParams64 = FamParams<f64>;
pub type DomainClassifier32 = DomainClassifier<f32>;
pub type DomainClassifier64 = DomainClassifier<f64>;
pub type FederatedData32 = FederatedData<f32>;
pub type FederatedData64 = FederatedData<f64>;
pub type RunOutcome32 = RunOutcome<f32>;
pub type RunOutcome64 = RunOutcome<f64>;
