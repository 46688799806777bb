use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Task, DEFAULT_MAX_LEN};
use crate::error::{invalid, Error, Result};
use crate::syntax::{default_schedule, DeltaSchedule};

/// Whether attention weights are reweighted by syntactic distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMode {
    /// Masked softmax followed by distance reweighting.
    #[serde(rename = "gate")]
    Gate,
    /// Masked softmax only.
    #[serde(rename = "plain")]
    Plain,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Gate => "gate",
            AttentionMode::Plain => "plain",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gate" => Ok(AttentionMode::Gate),
            "plain" => Ok(AttentionMode::Plain),
            other => Err(invalid(format!("unknown attention mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub task: Task,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub word_emb_dim: usize,
    pub feature_emb_dim: usize,
    pub delta_schedule: DeltaSchedule,
    pub attention_mode: AttentionMode,
    /// Word vectors come from a feature file instead of a learned table.
    pub external_word_features: bool,
    /// Learned absolute-position embedding added to `H⁰`; off for GATE, used
    /// only as a word-order-sensitive control.
    pub position_embedding: bool,
    /// Embed the trigger's event type into the classifier input.
    pub trigger_type_feature: bool,
    pub max_len: usize,
}

impl EncoderConfig {
    /// Full-size defaults for `task`.
    pub fn for_task(task: Task) -> Self {
        EncoderConfig {
            task,
            d_model: 512,
            n_layers: 1,
            n_heads: 8,
            ffn_dim: 2048,
            dropout: 0.5,
            word_emb_dim: 64,
            feature_emb_dim: 30,
            delta_schedule: default_schedule(task, 8).expect("8-head default"),
            attention_mode: AttentionMode::Gate,
            external_word_features: false,
            position_embedding: false,
            trigger_type_feature: false,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the concatenated per-token input before projection.
    pub fn input_dim(&self) -> usize {
        self.word_emb_dim + 3 * self.feature_emb_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(invalid("d_model and n_heads must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.delta_schedule.len() != self.n_heads {
            return Err(invalid(format!(
                "delta schedule has {} entries for {} heads",
                self.delta_schedule.len(),
                self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ffn_dim == 0 || self.word_emb_dim == 0 || self.feature_emb_dim == 0 || self.max_len == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::Delta;

    #[test]
    fn defaults_are_consistent() {
        let c = EncoderConfig::for_task(Task::Earl);
        c.validate().unwrap();
        assert_eq!((c.d_model, c.n_layers, c.n_heads, c.d_k()), (512, 1, 8, 64));
        assert_eq!(c.delta_schedule.deltas()[0], Delta::Bounded(2));
        assert_eq!(c.input_dim(), 64 + 90);
    }

    #[test]
    fn inconsistent_configs_rejected() {
        let mut c = EncoderConfig::for_task(Task::Re);
        c.n_heads = 5;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::for_task(Task::Re);
        c.delta_schedule = DeltaSchedule::unbounded(4);
        assert!(c.validate().is_err());
    }
}
