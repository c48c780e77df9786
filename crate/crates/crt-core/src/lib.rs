//! Self-supervised representation learning for multivariate time series.
//!
//! A series is viewed in three domains at once: the raw waveform, and the
//! magnitude and phase of its frequency spectrum. Patches are dropped in both
//! time and frequency (magnitude and phase always dropped as a pair), and a
//! transformer encoder/decoder is pretrained to reconstruct the missing
//! patches from whichever domain survived, with an instance-discrimination
//! term keeping representations consistent across domains. A small classifier
//! head is then fine-tuned on a labeled fraction.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sequencing;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use cli::run;
pub use error::{CrtError, Result};
