//! Continual representation learning on fixed simplex-ETF prototypes.
//!
//! The crate trains a small MLP encoder over a class-incremental task stream
//! so that embeddings of each class collapse onto a pre-assigned vertex of a
//! simplex equiangular tight frame, while distillation against a frozen copy
//! of the previous model preserves what earlier tasks learned.
//!
//! Everything here is deterministic given a seed and runs on plain `f64`
//! buffers; no IO happens in this crate. The companion CLI crate owns file
//! formats, configuration parsing and reporting.
//!
//! Module map:
//!
//! * [`etf`] — prototype geometry: construction, validation, class lookup.
//! * [`batch`] — paired-view embedding batches consumed by the losses.
//! * [`losses`] — contrastive and distillation objectives with analytic
//!   gradients with respect to the embeddings.
//! * [`encoder`] — MLP backbone + projection head with hand-written
//!   forward/backward passes and SGD updates.
//! * [`buffer`] — fixed-capacity replay memory filled by reservoir sampling.
//! * [`stream`] — synthetic class-incremental task streams and two-view
//!   augmentation.
//! * [`trainer`] — the two-stage protocol (representation learning, then a
//!   classifier on the frozen encoder) over a whole stream.
//! * [`metrics`] — average accuracy, average forgetting and
//!   neural-collapse diagnostics.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod batch;
pub mod buffer;
pub mod encoder;
pub mod error;
pub mod etf;
pub mod linalg;
pub mod losses;
pub(crate) mod math;
pub mod metrics;
pub mod rng;
pub mod stream;
pub mod trainer;

pub use batch::EmbeddingBatch;
pub use error::{Error, Result};
pub use etf::{ClassPrototypeMap, PrototypeSet};
pub use linalg::Mat;

/// Global class label; unique across the whole stream.
pub type ClassId = u32;
