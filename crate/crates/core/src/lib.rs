//! Measure how far speech encoders listen for lexical tone.
//!
//! The crate covers the whole desk-scale pipeline: synthetic tonal corpora
//! with known cue spans, log-Mel window baselines, linear probes, a small
//! differentiable encoder with an exact input-gradient pass, gradient-energy
//! histograms around tone centers, and CTC forced alignment. Tensors from
//! external models enter through the [`interchange`] format.

pub mod ctcalign;
pub mod error;
pub mod external;
pub mod gradsens;
pub mod interchange;
pub mod linmodel;
pub mod probes;
pub mod rng;
pub mod signal;
pub mod spansweep;
pub mod synthcorpus;
pub mod toyencoder;

pub use error::{Error, Result};
