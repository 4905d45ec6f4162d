use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LrSchedule;
use crate::Task;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("dropout must be in [0, 1), got {0}")]
    Dropout(f64),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("hidden_dim must be even so it splits across two LSTM directions, got {0}")]
    OddHidden(usize),
    #[error("warmup_fraction must be in [0, 1], got {0}")]
    Warmup(f64),
}

/// How the analyzer turns a word's characters into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Char2Token {
    /// Concatenated final states of a character BiLSTM.
    Lstm,
    /// Feature-wise max over character convolutions.
    Max,
}

/// Which spans feed the stem and tag heads of the joint model while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanSource {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    /// Width of the contextual layers; split in half across LSTM directions.
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub transliteration: bool,
    pub rule_cutoff: usize,
    pub char2token: Char2Token,
    pub joint_tag_rules: bool,
    pub max_lr: f64,
    pub seed: u64,
    pub use_lstm: bool,
    pub span_source: SpanSource,
    pub warmup_fraction: f64,
    pub div: f64,
    pub final_div: f64,
}

pub const DEFAULT_MAX_LR: f64 = 0.5;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_task(Task::T1)
    }
}

impl ModelConfig {
    pub fn for_task(task: Task) -> Self {
        let base = ModelConfig {
            batch_size: 16,
            epochs: 15,
            dropout: 0.1,
            hidden_dim: 512,
            embedding_dim: 128,
            transliteration: true,
            rule_cutoff: 1,
            char2token: Char2Token::Max,
            joint_tag_rules: false,
            max_lr: DEFAULT_MAX_LR,
            seed: 0,
            use_lstm: true,
            span_source: SpanSource::Gold,
            warmup_fraction: 0.3,
            div: 25.0,
            final_div: 1e4,
        };
        match task {
            Task::T1 | Task::T3 => base,
            Task::T2 => ModelConfig {
                transliteration: false,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Dropout(self.dropout));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("hidden_dim", self.hidden_dim),
            ("embedding_dim", self.embedding_dim),
            ("rule_cutoff", self.rule_cutoff),
        ] {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !self.hidden_dim.is_multiple_of(2) {
            return Err(ConfigError::OddHidden(self.hidden_dim));
        }
        for (name, v) in [("max_lr", self.max_lr), ("div", self.div), ("final_div", self.final_div)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(ConfigError::Warmup(self.warmup_fraction));
        }
        Ok(())
    }

    pub fn schedule(&self, total_steps: usize) -> LrSchedule {
        LrSchedule {
            total_steps,
            max_lr: self.max_lr,
            warmup_fraction: self.warmup_fraction,
            div: self.div,
            final_div: self.final_div,
        }
    }
}
