//! Exemplar-free class-incremental learning with language-guided concept
//! bottleneck models.
//!
//! The engine works on precomputed, frozen embeddings: image features `x`,
//! class-name embeddings and concept-text embeddings, all in one space of
//! dimension `D`. For every task it
//!
//! 1. picks a compact set of concepts from the task's pool ([`selector`]),
//! 2. appends them to the concept bottleneck and adds classifier rows for the
//!    new classes ([`model`]),
//! 3. stores one prototype per new class and shifts stored prototypes into
//!    pseudo-features for old classes ([`prototype`]),
//! 4. trains bottleneck and classifier with cross-entropy, a cubed-cosine
//!    alignment to the frozen concept activations and an elastic-net penalty
//!    ([`trainer`]).
//!
//! Predictions decompose exactly into per-concept contributions
//! ([`explain`]).
//!
//! ```no_run
//! use concept_cil::synth::{generate, SynthConfig};
//! use concept_cil::trainer::{run_sequence, TrainConfig};
//!
//! let bundle = generate(&SynthConfig::default())?;
//! let run = run_sequence(&bundle, &TrainConfig::default(), None)?;
//! println!("last accuracy {:.3}", run.metrics.last_accuracy);
//! # Ok::<(), concept_cil::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod evaluator;
pub mod explain;
pub mod model;
pub mod prototype;
pub mod selector;
pub mod synth;
pub mod tensor;
pub mod trainer;

mod error;

pub use error::{Error, Result};
