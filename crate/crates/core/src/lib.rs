//! Uncertainty quantification for k-shot in-context learning runs.
//!
//! The crate reads logged candidate-label probabilities (one record per
//! question and demonstration set), aggregates the beams of each set, and
//! decomposes the predictive entropy into a mean per-set term and a
//! between-set mutual-information term. Around that core sit evaluation
//! metrics (exact match, AUROC, shift analysis across shot counts), a
//! residual-stream projection analyzer, and a latent-concept simulator with
//! exactly computable ground truth.
//!
//! Interchangeable algorithm variants (beam aggregation, uncertainty score,
//! correctness rule, residual normalization) sit behind small traits and are
//! looked up by name through [`registry::Registry`].

pub mod aggregate;
pub mod error;
pub mod lens;
pub mod metrics;
pub mod numeric;
pub mod records;
pub mod registry;
pub mod report;
pub mod synthetic;
pub mod uq;

pub use error::{Error, Result};
pub use records::{
    BeamEntry, DecodeStrategy, EntropyBase, GenerationRecord, LabelSpace, QuestionBundle,
    RunManifest,
};
pub use uq::UncertaintyTriple;
