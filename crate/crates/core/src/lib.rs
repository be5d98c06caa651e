//! Short-term river stage and streamflow forecasting toolkit.
//!
//! The crate is organized around a four-part pipeline:
//!
//! 1. [`model`] — a diffusion-convolutional GRU over the watershed gauge
//!    graph (plus a plain GRU over watershed rainfall) forecasts the
//!    target-station water level 1–6 hours ahead.
//! 2. [`rating_curve`] — piecewise power-law curves convert forecast stage
//!    to discharge, mirroring how the "reported" discharge record itself
//!    is produced.
//! 3. [`residual`] — a correction cascade learns what is left: an
//!    autoregressive correction in reported space, then three stages fit
//!    against sparse field measurements (hysteresis regression, LOWESS
//!    over stage, bootstrapped gradient-boosted trees).
//! 4. [`metrics`] — scalar and flood-peak evaluation metrics.
//!
//! Supporting modules: [`graph`] (watershed graph and diffusion transition
//! matrices), [`numerics`] (dense tensors with reverse-mode gradients),
//! [`ingest`] (CSV loading, hourly resampling, chronological splits,
//! window construction), [`synth`] (a synthetic watershed generator with
//! known injected rating-curve error), and [`run`] (batch entry points
//! behind the `flowcast` CLI).

pub mod config;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rating_curve;
pub mod residual;
pub mod run;
pub mod synth;

mod error;

pub use error::{Error, Result};

/// Derive a component seed from the root seed and a label, so every
/// source of randomness in a run flows from one configured seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
