//! Turning examples into model inputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::ModelInput;
use crate::synth::QAExample;
use crate::text::{tokenize, EntityTag, PairEncoder, Vocab};

/// One encoded training or evaluation instance.
#[derive(Clone, Debug)]
pub struct Sample {
    /// Index of the source example.
    pub example: usize,
    pub input: ModelInput,
    /// Gold token span, absent when truncation removed the answer.
    pub span: Option<(usize, usize)>,
    pub lf: usize,
    /// Evidence label for sentence-classification pairs.
    pub evidence: Option<bool>,
    /// Byte offsets of each context token, indexed from the context start.
    pub offsets: Vec<(usize, usize)>,
    pub context_start: usize,
}

/// Vocabulary over question and context tokens of `examples`.
pub fn build_vocab(examples: &[QAExample], min_frequency: usize) -> Vocab {
    let mut words: Vec<String> = Vec::new();
    for ex in examples {
        words.extend(tokenize(&ex.question).into_iter().map(|t| t.text));
        for s in &ex.context {
            words.extend(tokenize(s).into_iter().map(|t| t.text));
        }
    }
    Vocab::build(words.iter().map(String::as_str), min_frequency)
}

pub fn encode_example(encoder: &PairEncoder, ex: &QAExample, index: usize) -> Result<Sample> {
    let ctx = ex.context_text();
    let pair = encoder.encode(
        &ex.question,
        &ctx,
        &ex.question_entities,
        &ex.context_entities,
        Some(ex.answer_span()),
    )?;
    Ok(Sample {
        example: index,
        input: ModelInput::from_pair(&pair),
        span: pair.answer_span(),
        lf: ex.lf_id as usize,
        evidence: None,
        offsets: pair.context_offsets.iter().map(|c| (c.start, c.end)).collect(),
        context_start: pair.context_start,
    })
}

pub fn encode_examples(encoder: &PairEncoder, examples: &[QAExample]) -> Result<Vec<Sample>> {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| encode_example(encoder, ex, i))
        .collect()
}

/// Tags of `tags` falling inside `start..end`, rebased to that range.
fn tags_within(tags: &[EntityTag], start: usize, end: usize) -> Vec<EntityTag> {
    tags.iter()
        .filter(|t| t.char_start >= start && t.char_end <= end)
        .map(|t| EntityTag {
            semantic_type: t.semantic_type,
            char_start: t.char_start - start,
            char_end: t.char_end - start,
        })
        .collect()
}

/// Question/sentence pairs for evidence classification: the evidence
/// sentence plus up to `negatives` other sentences of the same context.
pub fn evidence_pairs(
    encoder: &PairEncoder,
    examples: &[QAExample],
    negatives: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let mut starts = Vec::with_capacity(ex.context.len());
        let mut pos = 0;
        for s in &ex.context {
            starts.push(pos);
            pos += s.len() + 1;
        }
        let mut others: Vec<usize> = (0..ex.context.len())
            .filter(|&j| j != ex.evidence_index && ex.context[j] != ex.context[ex.evidence_index])
            .collect();
        others.shuffle(&mut rng);
        others.truncate(negatives);
        let mut chosen = vec![ex.evidence_index];
        chosen.extend(others);
        for j in chosen {
            let sentence = &ex.context[j];
            let tags = tags_within(&ex.context_entities, starts[j], starts[j] + sentence.len());
            let pair = encoder.encode(&ex.question, sentence, &ex.question_entities, &tags, None)?;
            out.push(Sample {
                example: i,
                input: ModelInput::from_pair(&pair),
                span: None,
                lf: ex.lf_id as usize,
                evidence: Some(j == ex.evidence_index),
                offsets: pair.context_offsets.iter().map(|c| (c.start, c.end)).collect(),
                context_start: pair.context_start,
            });
        }
    }
    Ok(out)
}
