//! Influence paths through a two-layer LSTM language model on synthetic
//! subject-verb agreement tasks.

pub mod analysis;
pub mod checks;
pub mod compression;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod influence;
pub mod lstm;
pub mod metrics;

pub use corpus::{Condition, Lexicon, LexiconConfig, TaskInstance, TaskKind, TokenId};
pub use error::{Error, Result};
pub use graph::{NodeId, Path, UnrolledGraph};
pub use influence::{AgreementQoi, NumberDoi, PathAttribution};
pub use lstm::{ActivationTrace, Gate, LstmModel};
