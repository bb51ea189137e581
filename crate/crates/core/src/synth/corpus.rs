//! End-to-end corpus construction in either context setting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::{generate_corpus, GeneratorConfig, Note};
use super::lexicon::Lexicon;
use super::questions::{build_paragraph_context, instantiate_questions, QAExample};
use super::templates::QuestionTemplate;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Context is the evidence sentence alone.
    Sentence,
    /// Context is a window of 15 to 20 sentences around the evidence.
    Paragraph,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(Setting::Sentence),
            "paragraph" => Ok(Setting::Paragraph),
            _ => Err(Error::Config(format!("unknown setting `{s}`, expected sentence or paragraph"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Sentence => "sentence",
            Setting::Paragraph => "paragraph",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub notes: Vec<Note>,
    pub examples: Vec<QAExample>,
    /// (note, template) pairs with no matching fact.
    pub skipped: usize,
}

/// Generates notes and questions; in the paragraph setting every example's
/// context is widened around its evidence sentence.
pub fn build_corpus(
    cfg: &GeneratorConfig,
    templates: &[QuestionTemplate],
    lexicon: &Lexicon,
    setting: Setting,
) -> Result<Corpus> {
    let gazetteer = lexicon.gazetteer()?;
    let notes = generate_corpus(cfg, lexicon)?;
    let (mut examples, skipped) = instantiate_questions(&notes, templates, &gazetteer);
    if setting == Setting::Paragraph {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u64::MAX);
        examples = examples
            .iter()
            .map(|ex| build_paragraph_context(ex, &notes[ex.note_id as usize], lexicon, &gazetteer, &mut rng))
            .collect::<Result<_>>()?;
    }
    Ok(Corpus {
        notes,
        examples,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_templates, PARAGRAPH_MAX, PARAGRAPH_MIN};

    #[test]
    fn settings_shape_contexts() {
        let cfg = GeneratorConfig {
            num_notes: 3,
            ..Default::default()
        };
        let lex = Lexicon::clinical();
        let t = default_templates();
        let s = build_corpus(&cfg, &t, &lex, Setting::Sentence).unwrap();
        assert!(s.examples.iter().all(|e| e.context.len() == 1));
        let p = build_corpus(&cfg, &t, &lex, Setting::Paragraph).unwrap();
        assert_eq!(p.examples.len(), s.examples.len());
        for (a, b) in p.examples.iter().zip(&s.examples) {
            assert!((PARAGRAPH_MIN..=PARAGRAPH_MAX).contains(&a.context.len()));
            assert_eq!(a.answer.text, b.answer.text);
            a.validate().unwrap();
        }
        let again = build_corpus(&cfg, &t, &lex, Setting::Paragraph).unwrap();
        assert_eq!(again.examples, p.examples);
        assert!("essay".parse::<Setting>().is_err());
    }
}
