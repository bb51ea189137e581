//! Question instantiation from templates and the two context settings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generate::{distractor_sentence, Fact, FactKind, Note, Role};
use super::lexicon::Lexicon;
use super::templates::QuestionTemplate;
use crate::error::{Error, Result};
use crate::text::{CharSpan, EntityTag, Gazetteer};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    /// Index of the evidence sentence within `context`.
    pub sentence_index: usize,
    /// Byte offsets into the space-joined context.
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub note_id: u32,
    pub question: String,
    pub question_template_id: u32,
    pub lf_id: u32,
    pub context: Vec<String>,
    pub evidence_index: usize,
    /// Position of the evidence sentence in its source note.
    pub evidence_note_index: usize,
    pub answer: Answer,
    pub question_entities: Vec<EntityTag>,
    pub context_entities: Vec<EntityTag>,
}

impl QAExample {
    pub fn context_text(&self) -> String {
        self.context.join(" ")
    }

    pub fn answer_span(&self) -> CharSpan {
        CharSpan {
            start: self.answer.char_start,
            end: self.answer.char_end,
        }
    }

    /// Answer matches the context slice, sits inside the evidence sentence
    /// and entity tags are in range.
    pub fn validate(&self) -> Result<()> {
        let ctx = self.context_text();
        let bad = |m: String| Err(Error::Invariant(format!("example {}: {m}", self.id)));
        if self.evidence_index >= self.context.len() || self.answer.sentence_index != self.evidence_index {
            return bad(format!("evidence index {} out of range", self.evidence_index));
        }
        let a = &self.answer;
        if a.char_start >= a.char_end || ctx.get(a.char_start..a.char_end) != Some(a.text.as_str()) {
            return bad(format!("answer {:?} does not match context slice {}..{}", a.text, a.char_start, a.char_end));
        }
        let ev_start: usize = self.context[..self.evidence_index].iter().map(|s| s.len() + 1).sum();
        if a.char_start < ev_start || a.char_end > ev_start + self.context[self.evidence_index].len() {
            return bad("answer lies outside the evidence sentence".into());
        }
        for (tags, len) in [(&self.question_entities, self.question.len()), (&self.context_entities, ctx.len())] {
            if tags.iter().any(|t| t.char_start >= t.char_end || t.char_end > len) {
                return bad("entity tag out of range".into());
            }
        }
        Ok(())
    }
}

/// Slot role filled into the question and the role answering it, for each
/// logical form, or `None` when the fact cannot answer that form.
pub fn lf_roles(lf_id: u32, fact: &Fact) -> Option<(Role, Role)> {
    let med = fact.treatment_is_medication();
    let given = matches!(fact.kind, FactKind::Medication | FactKind::Procedure);
    match lf_id {
        0 if fact.kind == FactKind::Medication => Some((Role::Treatment, Role::Dosage)),
        1 if fact.kind == FactKind::Medication => Some((Role::Treatment, Role::Sig)),
        2 if med && fact.kind == FactKind::Outcome(super::generate::Effect::Causes) => {
            Some((Role::Treatment, Role::Condition))
        }
        3 if fact.kind == FactKind::Medication => Some((Role::Treatment, Role::Condition)),
        4 | 7 if given => Some((Role::Treatment, Role::Condition)),
        5 if given => Some((Role::Condition, Role::Treatment)),
        6 if fact.kind == FactKind::Medication => Some((Role::Condition, Role::Treatment)),
        8 if matches!(fact.kind, FactKind::Outcome(_)) => Some((Role::Treatment, Role::Condition)),
        _ => None,
    }
}

/// Sentence-setting examples: one per (fact, compatible template). The second
/// value counts (note, template) pairs for which the note had no matching fact.
pub fn instantiate_questions(
    notes: &[Note],
    templates: &[QuestionTemplate],
    gazetteer: &Gazetteer,
) -> (Vec<QAExample>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for note in notes {
        for t in templates {
            let mut matched = false;
            for (fi, fact) in note.facts.iter().enumerate() {
                let Some((slot_role, answer_role)) = lf_roles(t.lf_id, fact) else {
                    continue;
                };
                let (Some(slot), Some(ans)) = (fact.mention(slot_role), fact.mention(answer_role)) else {
                    continue;
                };
                matched = true;
                let sentence = note.sentences[fact.sentence_index].clone();
                let question = t.fill(&slot.text);
                out.push(QAExample {
                    id: format!("n{:05}-f{fi}-t{:03}", note.note_id, t.template_id),
                    note_id: note.note_id,
                    question_entities: gazetteer.tag(&question),
                    question,
                    question_template_id: t.template_id,
                    lf_id: t.lf_id,
                    context_entities: gazetteer.tag(&sentence),
                    context: vec![sentence],
                    evidence_index: 0,
                    evidence_note_index: fact.sentence_index,
                    answer: Answer {
                        sentence_index: 0,
                        char_start: ans.char_start,
                        char_end: ans.char_end,
                        text: ans.text.clone(),
                    },
                });
            }
            if !matched {
                skipped += 1;
            }
        }
    }
    out.sort_by(|a, b| (a.note_id, &a.id).cmp(&(b.note_id, &b.id)));
    (out, skipped)
}

pub const PARAGRAPH_MIN: usize = 15;
pub const PARAGRAPH_MAX: usize = 20;

/// Re-windows a sentence-setting example onto `l_para` note sentences with
/// the evidence at offset `l_pre`. Positions falling outside the note are
/// filled with fresh distractor sentences.
pub fn paragraph_window<R: Rng + ?Sized>(
    example: &QAExample,
    note: &Note,
    l_para: usize,
    l_pre: usize,
    lexicon: &Lexicon,
    gazetteer: &Gazetteer,
    rng: &mut R,
) -> Result<QAExample> {
    let ev = example.evidence_note_index;
    if ev >= note.sentences.len() || note.note_id != example.note_id {
        return Err(Error::Internal(format!(
            "evidence index {ev} out of range for note {} with {} sentences",
            note.note_id,
            note.sentences.len()
        )));
    }
    if l_pre >= l_para {
        return Err(Error::Internal(format!("l_pre {l_pre} must be below l_para {l_para}")));
    }
    let first = ev as isize - l_pre as isize;
    let context: Vec<String> = (0..l_para as isize)
        .map(|k| {
            let i = first + k;
            if i >= 0 && (i as usize) < note.sentences.len() {
                note.sentences[i as usize].clone()
            } else {
                distractor_sentence(lexicon, rng)
            }
        })
        .collect();
    let shift: usize = context[..l_pre].iter().map(|s| s.len() + 1).sum();
    let old_shift: usize = example.context[..example.evidence_index].iter().map(|s| s.len() + 1).sum();
    let text = context.join(" ");
    let mut out = example.clone();
    out.answer.char_start = example.answer.char_start - old_shift + shift;
    out.answer.char_end = example.answer.char_end - old_shift + shift;
    out.answer.sentence_index = l_pre;
    out.evidence_index = l_pre;
    out.context_entities = gazetteer.tag(&text);
    out.context = context;
    Ok(out)
}

/// Paragraph setting: `l_para` uniform in 15..=20, `l_pre` uniform below it.
pub fn build_paragraph_context<R: Rng + ?Sized>(
    example: &QAExample,
    note: &Note,
    lexicon: &Lexicon,
    gazetteer: &Gazetteer,
    rng: &mut R,
) -> Result<QAExample> {
    let l_para = rng.random_range(PARAGRAPH_MIN..=PARAGRAPH_MAX);
    let l_pre = rng.random_range(0..l_para);
    paragraph_window(example, note, l_para, l_pre, lexicon, gazetteer, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate::{generate_corpus, GeneratorConfig, Mention};
    use crate::synth::templates::default_templates;
    use crate::text::SemanticType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn aspirin_note() -> Note {
        let s = "Aspirin 40 mg daily for angina.".to_string();
        let m = |role, text: &str, ty| {
            let start = s.find(text).unwrap();
            Mention {
                role,
                text: text.into(),
                semantic_type: ty,
                char_start: start,
                char_end: start + text.len(),
            }
        };
        Note {
            note_id: 0,
            facts: vec![Fact {
                kind: FactKind::Medication,
                sentence_index: 0,
                mentions: vec![
                    m(Role::Treatment, "Aspirin", Some(SemanticType::Clnd)),
                    m(Role::Dosage, "40 mg", Some(SemanticType::Qnco)),
                    m(Role::Sig, "daily", None),
                    m(Role::Condition, "angina", Some(SemanticType::Fndg)),
                ],
            }],
            sentences: vec![s],
        }
    }

    #[test]
    fn dosage_question_from_table_template() {
        let lex = Lexicon::clinical();
        let gaz = lex.gazetteer().unwrap();
        let (ex, _) = instantiate_questions(&[aspirin_note()], &default_templates(), &gaz);
        let dosage: Vec<&QAExample> = ex.iter().filter(|e| e.lf_id == 0).collect();
        assert_eq!(dosage.len(), 6);
        let q = dosage.iter().find(|e| e.question == "what is the dosage of aspirin?").unwrap();
        assert_eq!(q.answer.text, "40 mg");
        assert!(dosage.iter().all(|e| e.answer.text == "40 mg"));
        for e in &ex {
            e.validate().unwrap();
        }
        assert!(q.question_entities.iter().any(|t| t.semantic_type == SemanticType::Clnd));
    }

    #[test]
    fn no_facts_no_examples() {
        let gaz = Lexicon::clinical().gazetteer().unwrap();
        let mut note = aspirin_note();
        note.facts.clear();
        let (ex, skipped) = instantiate_questions(&[note], &default_templates(), &gaz);
        assert!(ex.is_empty());
        assert_eq!(skipped, default_templates().len());
    }

    #[test]
    fn paragraph_boundaries() {
        let lex = Lexicon::clinical();
        let gaz = lex.gazetteer().unwrap();
        let note = aspirin_note();
        let (ex, _) = instantiate_questions(std::slice::from_ref(&note), &default_templates(), &gaz);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = paragraph_window(&ex[0], &note, 15, 0, &lex, &gaz, &mut rng).unwrap();
        assert_eq!(first.context.len(), 15);
        assert_eq!(first.evidence_index, 0);
        first.validate().unwrap();
        let last = paragraph_window(&ex[0], &note, 20, 19, &lex, &gaz, &mut rng).unwrap();
        assert_eq!(last.evidence_index, 19);
        assert_eq!(last.context[19], note.sentences[0]);
        last.validate().unwrap();
        let mut bad = ex[0].clone();
        bad.evidence_note_index = 5;
        assert!(matches!(
            build_paragraph_context(&bad, &note, &lex, &gaz, &mut rng),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn labels_are_sound_over_a_corpus() {
        let lex = Lexicon::clinical();
        let gaz = lex.gazetteer().unwrap();
        let notes = generate_corpus(&GeneratorConfig { num_notes: 30, ..Default::default() }, &lex).unwrap();
        let (ex, _) = instantiate_questions(&notes, &default_templates(), &gaz);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut by_key = std::collections::HashMap::new();
        for e in &ex {
            e.validate().unwrap();
            // re-query the fact table
            let fi: usize = e.id.split('-').nth(1).unwrap()[1..].parse().unwrap();
            let fact = &notes[e.note_id as usize].facts[fi];
            let (_, role) = lf_roles(e.lf_id, fact).unwrap();
            assert_eq!(fact.mention(role).unwrap().text, e.answer.text);
            let prev = by_key.entry((e.note_id, fi, e.lf_id)).or_insert(e.answer.text.clone());
            assert_eq!(*prev, e.answer.text);
            let p = build_paragraph_context(e, &notes[e.note_id as usize], &lex, &gaz, &mut rng).unwrap();
            assert!((PARAGRAPH_MIN..=PARAGRAPH_MAX).contains(&p.context.len()));
            p.validate().unwrap();
        }
        assert!(ex.len() > 300);
    }

    #[test]
    fn evidence_position_is_roughly_uniform() {
        let lex = Lexicon::clinical();
        let gaz = lex.gazetteer().unwrap();
        let note = aspirin_note();
        let (ex, _) = instantiate_questions(std::slice::from_ref(&note), &default_templates(), &gaz);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut hist = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let p = build_paragraph_context(&ex[0], &note, &lex, &gaz, &mut rng).unwrap();
            let rel = p.evidence_index as f64 / p.context.len() as f64;
            hist[(rel * 4.0) as usize] += 1;
        }
        for h in hist {
            let frac = h as f64 / n as f64;
            assert!((frac - 0.25).abs() < 0.03, "{hist:?}");
        }
    }
}
