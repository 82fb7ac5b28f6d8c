//! Distributed multi-target tracking with Gaussian-mixture PHD filters,
//! iterated weighted-arithmetic-average fusion and bandwidth-limited
//! component exchange.

pub mod assignment;
pub mod bandwidth;
pub mod consensus;
pub mod experiment;
pub mod error;
pub mod gm;
pub mod linalg;
pub mod metrics;
pub mod phd;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
pub use gm::{GaussianComponent, GaussianMixture, MergeMetric};
