//! Semi-supervised learning with layer-routed pseudo-label gradients.
//!
//! The crate trains small feed-forward classifiers from a handful of labels
//! plus an unlabeled pool. Pseudo-labels shape the feature extractor only; the
//! linear classifier is updated from labeled data alone, and an averaged copy
//! of the classifier (`β̄`) provides stable cluster targets for the extractor.
//!
//! - [`netcore`]: matrices, the layered network, manual backprop, checkpoints
//! - [`data`]: synthetic generators, IDX loading, splits, augmentation, batches
//! - [`sslcore`]: pseudo-label selection, losses, routing, averaged head
//! - [`trainer`]: optimizer, schedules, EMAs, metrics, the training loop
//! - [`theoryverify`]: numerical checks of the consistency-loss analysis

pub mod data;
mod error;
pub mod netcore;
pub mod rng;
pub mod sslcore;
pub mod theoryverify;
pub mod trainer;

pub use error::{Error, Result};
