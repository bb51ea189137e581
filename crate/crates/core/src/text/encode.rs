use serde::{Deserialize, Serialize};

use super::gazetteer::EntityTag;
use super::tokenize::{tokenize, Token};
use super::vocab::{Vocab, CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};

/// Byte range into a piece of text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

/// `[CLS] question [SEP] context [SEP]` padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    pub entity_ids: Vec<usize>,
    pub answer_start_tok: Option<usize>,
    pub answer_end_tok: Option<usize>,
    /// First context position (inclusive) and end position (exclusive).
    pub context_start: usize,
    pub context_end: usize,
    /// Byte offsets into the context text for each context position.
    pub context_offsets: Vec<CharSpan>,
    /// Set when the gold answer fell outside the truncated context.
    pub answer_dropped: bool,
    /// Entity tags that aligned to no kept token.
    pub dropped_tags: usize,
}

impl EncodedPair {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Real (unpadded) length.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }

    /// True for positions holding context tokens (not separators or padding).
    pub fn context_mask(&self) -> Vec<bool> {
        (0..self.len())
            .map(|i| i >= self.context_start && i < self.context_end)
            .collect()
    }

    pub fn answer_span(&self) -> Option<(usize, usize)> {
        self.answer_start_tok.zip(self.answer_end_tok)
    }

    /// Byte span in the context covered by token positions `start..=end`.
    pub fn char_span(&self, start: usize, end: usize) -> Option<CharSpan> {
        if start < self.context_start || end >= self.context_end || start > end {
            return None;
        }
        let s = self.context_offsets[start - self.context_start];
        let e = self.context_offsets[end - self.context_start];
        Some(CharSpan { start: s.start, end: e.end })
    }
}

/// Turns question/context text into fixed-length model input.
#[derive(Clone, Debug)]
pub struct PairEncoder<'v> {
    pub vocab: &'v Vocab,
    pub max_seq_len: usize,
}

impl<'v> PairEncoder<'v> {
    pub fn new(vocab: &'v Vocab, max_seq_len: usize) -> Self {
        PairEncoder { vocab, max_seq_len }
    }

    pub fn encode(
        &self,
        question: &str,
        context: &str,
        question_tags: &[EntityTag],
        context_tags: &[EntityTag],
        answer: Option<CharSpan>,
    ) -> Result<EncodedPair> {
        let q_tokens = tokenize(question);
        let c_tokens = tokenize(context);
        let max = self.max_seq_len;
        let fixed = q_tokens.len() + 3;
        if fixed > max {
            return Err(Error::Encoding(format!(
                "question has {} tokens; with separators it needs {fixed} positions but max_seq_len is {max}",
                q_tokens.len()
            )));
        }
        if let Some(a) = answer {
            if a.start >= a.end || a.end > context.len() {
                return Err(Error::Encoding(format!(
                    "answer span {}..{} lies outside a context of {} bytes",
                    a.start,
                    a.end,
                    context.len()
                )));
            }
        }
        let kept = c_tokens.len().min(max - fixed);
        let c_tokens = &c_tokens[..kept];

        let mut token_ids = Vec::with_capacity(max);
        let mut segment_ids = Vec::with_capacity(max);
        let mut entity_ids = Vec::with_capacity(max);

        token_ids.push(CLS_ID);
        segment_ids.push(0);
        entity_ids.push(0);
        let (q_entities, q_dropped) = align(&q_tokens, question_tags);
        for (t, e) in q_tokens.iter().zip(q_entities) {
            token_ids.push(self.vocab.id(&t.text));
            segment_ids.push(0);
            entity_ids.push(e);
        }
        token_ids.push(SEP_ID);
        segment_ids.push(0);
        entity_ids.push(0);

        let context_start = token_ids.len();
        let (c_entities, c_dropped) = align(c_tokens, context_tags);
        for (t, e) in c_tokens.iter().zip(c_entities) {
            token_ids.push(self.vocab.id(&t.text));
            segment_ids.push(1);
            entity_ids.push(e);
        }
        let context_end = token_ids.len();
        token_ids.push(SEP_ID);
        segment_ids.push(1);
        entity_ids.push(0);

        let active = token_ids.len();
        let mut attention_mask = vec![true; active];
        token_ids.resize(max, PAD_ID);
        segment_ids.resize(max, 0);
        entity_ids.resize(max, 0);
        attention_mask.resize(max, false);

        let (mut answer_start_tok, mut answer_end_tok, mut answer_dropped) = (None, None, false);
        if let Some(a) = answer {
            let first = c_tokens.iter().position(|t| t.end > a.start);
            let last = c_tokens.iter().rposition(|t| t.start < a.end);
            match (first, last) {
                (Some(f), Some(l)) if f <= l && a.end <= c_tokens[kept - 1].end => {
                    answer_start_tok = Some(context_start + f);
                    answer_end_tok = Some(context_start + l);
                }
                _ => answer_dropped = true,
            }
        }

        Ok(EncodedPair {
            token_ids,
            segment_ids,
            attention_mask,
            entity_ids,
            answer_start_tok,
            answer_end_tok,
            context_start,
            context_end,
            context_offsets: c_tokens.iter().map(|t| CharSpan { start: t.start, end: t.end }).collect(),
            answer_dropped,
            dropped_tags: q_dropped + c_dropped,
        })
    }
}

/// Entity id per token (first intersecting tag wins) and the count of tags
/// that touched no token.
fn align(tokens: &[Token], tags: &[EntityTag]) -> (Vec<usize>, usize) {
    let mut ids = vec![0; tokens.len()];
    let mut dropped = 0;
    for tag in tags {
        let mut hit = false;
        for (t, id) in tokens.iter().zip(ids.iter_mut()) {
            if t.start < tag.char_end && tag.char_start < t.end {
                hit = true;
                if *id == 0 {
                    *id = tag.semantic_type.entity_id();
                }
            }
        }
        if !hit {
            dropped += 1;
        }
    }
    (ids, dropped)
}
