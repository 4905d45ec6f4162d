//! Sanskrit word segmentation and morphological analysis with character-level
//! neural taggers.
//!
//! Segmentation is cast as per-character edit labelling ([`editrules`]), the
//! analysis of a word as choosing a stem-rewriting rule ([`stemrules`]) plus a
//! morphological tag. [`models`] holds the three task networks, built on the
//! small autodiff engine in [`neuralcore`]; [`eval`] scores predictions.

pub mod corpus;
pub mod editrules;
pub mod eval;
pub mod models;
pub mod neuralcore;
pub mod stemrules;
mod task;
pub mod translit;

pub use corpus::{Analysis, SentenceRecord};
pub use editrules::{EditLabelSequence, EditRule, EditRuleVocab, TokenSpan};
pub use eval::{ErrorCategory, ScoreReport};
pub use models::{Model, Prediction};
pub use neuralcore::{Char2Token, ModelConfig, SpanSource, Tensor};
pub use stemrules::{MorphTag, StemRule, StemRuleVocab};
pub use task::Task;
pub use translit::TranslitTable;

/// Tool version recorded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
