use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::SemanticType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Answer-span extraction.
    Span,
    /// Binary evidence-sentence classification.
    Evidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Learned positions; longer inputs are rejected.
    pub max_seq_len: usize,
    /// When false the entity encoder is absent and every position takes the
    /// entity-free fusion path.
    pub use_entities: bool,
    pub entity_vocab_size: usize,
    pub entity_dim: usize,
    pub entity_heads: usize,
    pub entity_attention_layers: usize,
    pub num_lf_classes: usize,
    /// Weight of the logical-form loss.
    pub omega: f64,
    pub dropout: f64,
    pub max_answer_len: usize,
    pub mode: TaskMode,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            hidden_dim: 128,
            layers: 4,
            heads: 4,
            ffn_dim: 512,
            max_seq_len: 128,
            use_entities: true,
            entity_vocab_size: SemanticType::VOCAB_SIZE,
            entity_dim: 100,
            entity_heads: 4,
            entity_attention_layers: 1,
            num_lf_classes: 9,
            omega: 0.3,
            dropout: 0.1,
            max_answer_len: 30,
            mode: TaskMode::Span,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// A few-minute-per-run size for single-core experiments.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim: 32,
            layers: 2,
            heads: 2,
            ffn_dim: 64,
            max_seq_len: 48,
            entity_dim: 16,
            entity_heads: 2,
            // 0.02 leaves attention almost uniform at this width
            init_std: 0.1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.omega) {
            return bad(format!("omega {} outside [0, 1]", self.omega));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let dims = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
            ("num_lf_classes", self.num_lf_classes),
            ("max_answer_len", self.max_answer_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return bad(format!("hidden_dim {} not divisible by heads {}", self.hidden_dim, self.heads));
        }
        if self.use_entities {
            if self.entity_dim == 0 || self.entity_heads == 0 || self.entity_vocab_size == 0 {
                return bad("entity dimensions must be positive".into());
            }
            if self.entity_dim % self.entity_heads != 0 {
                return bad(format!(
                    "entity_dim {} not divisible by entity_heads {}",
                    self.entity_dim, self.entity_heads
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = ModelConfig { vocab_size: 10, ..Default::default() };
        assert_eq!(c.entity_vocab_size, 20);
        assert_eq!((c.hidden_dim, c.layers, c.heads, c.entity_dim), (128, 4, 4, 100));
        c.validate().unwrap();
        assert!(ModelConfig { omega: 1.5, ..c.clone() }.validate().is_err());
        assert!(ModelConfig { heads: 3, ..c.clone() }.validate().is_err());
        assert!(ModelConfig { vocab_size: 0, ..c.clone() }.validate().is_err());
        ModelConfig::small(50).validate().unwrap();
        let back: ModelConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
