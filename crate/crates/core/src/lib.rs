//! Segmentation of marked spatial point patterns into spatially coherent
//! regimes: grid summaries, principal-component features, and a hidden Potts
//! Gaussian mixture fitted by MCMC.

pub mod config;
pub mod error;
pub mod features;
pub mod gridstats;
pub mod ingest;
pub mod kmeans;
pub mod posterior;
pub mod potts;
pub mod sampler;
pub mod simbench;
pub mod stats;

pub use error::{PcmError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
