//! Joint Bayesian translation of biomarkers between two unpaired datasets
//! sharing a multi-way time-series design.
//!
//! Variables in each dataset are clustered onto latent factors, irregular
//! series are aligned onto a left-to-right hidden Markov chain, covariate
//! effects (aligned time, disease, and their interaction) act in latent space
//! with shared and dataset-specific parts, and a posterior over
//! cluster-to-cluster matchings is sampled by Metropolis-within-Gibbs.
//!
//! The crate is IO-free; file formats and the command-line interface live in
//! the companion `xlate-cli` crate.

pub mod data;
pub mod effects;
pub mod error;
pub mod factor;
pub mod geweke;
pub mod hmm;
pub mod matching;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod summarize;
pub mod synth;

pub use error::{Error, Result};
