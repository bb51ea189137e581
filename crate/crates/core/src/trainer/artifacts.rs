//! Saved model directories: config, vocabulary, gazetteer and checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::data::Sample;
use super::train::{predict, span_text};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelInput, TaskMode};
use crate::synth::LF_STRINGS;
use crate::tensor_core::checkpoint::{digest_hex, read_checkpoint, write_checkpoint, Digest};
use crate::text::{Gazetteer, PairEncoder, Vocab};

pub const CONFIG_FILE: &str = "model_config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const GAZETTEER_FILE: &str = "gazetteer.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Binds a checkpoint to the exact config and vocabulary it was trained with.
pub fn config_digest(config: &ModelConfig, vocab: &Vocab) -> Digest {
    let mut h = Sha256::new();
    h.update(config.to_json().as_bytes());
    h.update(vocab.digest());
    h.finalize().into()
}

#[derive(Clone, Debug)]
pub struct ModelDir {
    pub model: Model,
    pub vocab: Vocab,
    pub gazetteer: Gazetteer,
}

pub fn save_model_dir(dir: &Path, model: &Model, vocab: &Vocab, gazetteer: &Gazetteer) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(CONFIG_FILE);
    std::fs::write(&p, serde_json::to_string_pretty(&model.config)?).map_err(|e| Error::io(&p, e))?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    gazetteer.save(&dir.join(GAZETTEER_FILE))?;
    write_checkpoint(&dir.join(CHECKPOINT_FILE), &model.params, &config_digest(&model.config, vocab))
}

/// Loads a model directory, refusing checkpoints whose digest does not
/// match the stored config and vocabulary.
pub fn load_model_dir(dir: &Path) -> Result<ModelDir> {
    let p = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let config: ModelConfig = serde_json::from_str(&text)?;
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    let gazetteer = Gazetteer::load(&dir.join(GAZETTEER_FILE))?;
    let (stored, params) = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let expected = config_digest(&config, &vocab);
    if stored != expected {
        return Err(Error::Integrity(format!(
            "checkpoint digest {} does not match config/vocab digest {}",
            digest_hex(&stored),
            digest_hex(&expected)
        )));
    }
    if config.vocab_size != vocab.len() {
        return Err(Error::Integrity(format!(
            "config expects {} vocabulary entries, vocab file has {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    let model = Model::from_parts(config, params)?;
    Ok(ModelDir {
        model,
        vocab,
        gazetteer,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutput {
    pub text: String,
    /// Byte offsets into the context.
    pub char_start: usize,
    pub char_end: usize,
    pub lf_id: usize,
    pub lf_string: String,
}

/// Answers free-text questions with a loaded model.
pub struct Predictor {
    pub dir: ModelDir,
}

impl Predictor {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Predictor {
            dir: load_model_dir(dir)?,
        })
    }

    pub fn answer(&self, question: &str, context: &str) -> Result<AnswerOutput> {
        let model = &self.dir.model;
        if model.config.mode != TaskMode::Span {
            return Err(Error::Config("answering needs a span-mode model".into()));
        }
        let encoder = PairEncoder::new(&self.dir.vocab, model.config.max_seq_len);
        let pair = encoder.encode(
            question,
            context,
            &self.dir.gazetteer.tag(question),
            &self.dir.gazetteer.tag(context),
            None,
        )?;
        if pair.context_end == pair.context_start {
            return Err(Error::Encoding("context is empty after truncation".into()));
        }
        let sample = Sample {
            example: 0,
            input: ModelInput::from_pair(&pair),
            span: None,
            lf: 0,
            evidence: None,
            offsets: pair.context_offsets.iter().map(|c| (c.start, c.end)).collect(),
            context_start: pair.context_start,
        };
        let p = predict(model, &sample)?;
        let span = p.span.expect("span mode");
        let cs = pair.char_span(span.0, span.1).expect("decoded span lies in the context");
        Ok(AnswerOutput {
            text: span_text(&sample, context, span),
            char_start: cs.start,
            char_end: cs.end,
            lf_id: p.lf,
            lf_string: LF_STRINGS.get(p.lf).unwrap_or(&"").to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Lexicon;

    #[test]
    fn round_trip_and_digest_mismatch() {
        let vocab = Vocab::build("what is the dose of aspirin 40 mg daily ?".split(' '), 1);
        let config = ModelConfig {
            dropout: 0.0,
            ..ModelConfig::small(vocab.len())
        };
        let model = Model::new(config, 3).unwrap();
        let gaz = Lexicon::clinical().gazetteer().unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model_dir(dir.path(), &model, &vocab, &gaz).unwrap();
        let loaded = load_model_dir(dir.path()).unwrap();
        assert_eq!(loaded.model.config, model.config);
        let p = Predictor { dir: loaded };
        let a = p.answer("what is the dose of aspirin?", "aspirin 40 mg daily").unwrap();
        assert!(!a.text.is_empty());
        assert_eq!(&"aspirin 40 mg daily"[a.char_start..a.char_end], a.text);

        // a different vocabulary changes the digest
        let other = Vocab::build("a b c".split(' '), 1);
        other.save(&dir.path().join(VOCAB_FILE)).unwrap();
        assert!(matches!(load_model_dir(dir.path()), Err(Error::Integrity(_))));
    }
}
