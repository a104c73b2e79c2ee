//! Latent diffusion with variational-circuit denoisers, simulated on a dense
//! statevector.
//!
//! The pipeline is: images → autoencoder latents ([`autoencoder`], [`data`]) →
//! diffusion training of a noise predictor ([`denoiser`], [`diffusion`],
//! [`training`]) → ancestral sampling → latent-space metrics ([`metrics`]).

pub mod autoencoder;
pub mod circuits;
pub mod cli;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod statevector;
pub mod training;

pub use circuits::{AnsatzKind, CircuitSpec, Entanglement};
pub use data::LatentDataset;
pub use denoiser::{DenoiserConfig, DenoiserParams, Variant};
pub use diffusion::DiffusionSchedule;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use statevector::{Basis, Gate, Observable, StateVector};
pub use training::{TrainConfig, TrainedModel, Trainer};
