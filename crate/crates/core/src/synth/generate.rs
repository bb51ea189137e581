//! Seeded note generator: structured facts rendered into sentences, mixed
//! with distractor sentences that mention entities but answer nothing.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::lexicon::{zipf_index, Lexicon, Term};
use crate::error::{Error, Result};
use crate::text::SemanticType;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_notes: usize,
    pub facts_per_note: usize,
    pub distractor_rate: f64,
    /// Skew of entity sampling; 0 is uniform.
    pub zipf_exponent: f64,
    /// Relative frequency of medication, procedure and outcome facts.
    pub fact_mix: [f64; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 13,
            num_notes: 100,
            facts_per_note: 5,
            distractor_rate: 0.5,
            zipf_exponent: 1.0,
            fact_mix: [0.5, 0.25, 0.25],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Causes,
    Worsens,
    Improves,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactKind {
    Medication,
    Procedure,
    Outcome(Effect),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Treatment,
    Dosage,
    Sig,
    Condition,
}

/// One slot value inside its fact's sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub role: Role,
    pub text: String,
    pub semantic_type: Option<SemanticType>,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub kind: FactKind,
    pub sentence_index: usize,
    pub mentions: Vec<Mention>,
}

impl Fact {
    pub fn mention(&self, role: Role) -> Option<&Mention> {
        self.mentions.iter().find(|m| m.role == role)
    }

    pub fn treatment_is_medication(&self) -> bool {
        self.mention(Role::Treatment)
            .is_some_and(|m| m.semantic_type == Some(SemanticType::Clnd))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: u32,
    pub sentences: Vec<String>,
    pub facts: Vec<Fact>,
}

impl Note {
    pub fn fact_sentence_indices(&self) -> HashSet<usize> {
        self.facts.iter().map(|f| f.sentence_index).collect()
    }
}

const MEDICATION_SENTENCES: &[&str] = &[
    "{T} {D} {S} for {C}.",
    "Patient was started on {T} {D} {S} for {C}.",
    "Continue {T} {D} {S} given history of {C}.",
    "For {C} she takes {T} {D} {S}.",
    "Home medications include {T} {D} {S} for {C}.",
    "{C} is managed with {T} {D} by mouth {S}.",
    "He remains on {T} {D} {S} to control {C}.",
];

const PROCEDURE_SENTENCES: &[&str] = &[
    "{T} was performed for {C}.",
    "Underwent {T} due to {C}.",
    "Given concern for {C}, {T} was obtained.",
    "Patient received {T} for {C}.",
    "{C} was addressed with {T}.",
];

const CAUSES_SENTENCES: &[&str] = &[
    "{T} caused {C}.",
    "Developed {C} after starting {T}.",
    "{C} was attributed to {T}.",
    "Reports new {C} since {T}.",
];

const WORSENS_SENTENCES: &[&str] = &["{C} worsened on {T}.", "Her {C} got worse after {T}."];

const IMPROVES_SENTENCES: &[&str] = &[
    "{C} improved after {T}.",
    "{T} relieved her {C}.",
    "Noted resolution of {C} following {T}.",
];

/// `{X}` names a background entity type; `{W}` a body weight.
const DISTRACTOR_SENTENCES: &[(&str, &[SemanticType])] = &[
    ("Patient is an {X} seen after a {X}.", &[SemanticType::Aggp, SemanticType::Evnt]),
    ("Exam of the {X} was unremarkable.", &[SemanticType::Bpoc]),
    ("Weight today is {W}.", &[]),
    ("She uses a {X} at home.", &[SemanticType::Phob]),
    ("Denies {X} use.", &[SemanticType::Sbst]),
    ("Labs notable for {X}.", &[SemanticType::Lbtr]),
    ("History of {X} in childhood.", &[SemanticType::Cgab]),
    ("The {X} appeared normal.", &[SemanticType::Anst]),
    ("Family was updated at bedside.", &[]),
    ("Follow up in clinic in two weeks.", &[]),
    ("Findings discussed with the {X}.", &[SemanticType::Aggp]),
    ("Tenderness noted over the {X}.", &[SemanticType::Bpoc]),
];

/// Fills `{T} {D} {S} {C}` placeholders, recording where each value lands.
fn render(template: &str, values: &[(Role, &str, Option<SemanticType>)]) -> (String, Vec<Mention>) {
    let mut out = String::new();
    let mut mentions = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let role = match &rest[open + 1..open + 2] {
            "T" => Role::Treatment,
            "D" => Role::Dosage,
            "S" => Role::Sig,
            _ => Role::Condition,
        };
        let (_, text, ty) = values
            .iter()
            .find(|(r, _, _)| *r == role)
            .expect("sentence template uses a role the fact lacks");
        let start = out.len();
        out.push_str(text);
        mentions.push(Mention {
            role,
            text: text.to_string(),
            semantic_type: *ty,
            char_start: start,
            char_end: out.len(),
        });
        rest = &rest[open + 3..];
    }
    out.push_str(rest);
    (out, mentions)
}

/// Builds notes deterministically from `cfg.seed`; note `i` draws from its
/// own RNG stream so notes do not depend on each other.
pub fn generate_corpus(cfg: &GeneratorConfig, lexicon: &Lexicon) -> Result<Vec<Note>> {
    lexicon.validate()?;
    if cfg.num_notes == 0 {
        return Err(Error::Config("num_notes must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.distractor_rate) {
        return Err(Error::Config(format!("distractor_rate {} outside [0, 1]", cfg.distractor_rate)));
    }
    if cfg.fact_mix.iter().any(|w| *w < 0.0 || !w.is_finite()) || cfg.fact_mix.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config("fact_mix must be non-negative with a positive sum".into()));
    }
    (0..cfg.num_notes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            generate_note(i as u32, cfg, lexicon, &mut rng)
        })
        .collect()
}

struct Picker<'a> {
    lexicon: &'a Lexicon,
    zipf: f64,
}

impl Picker<'_> {
    /// Zipf draw from `pool`, avoiding surfaces in `used` when possible.
    fn term<'t, R: Rng>(&self, rng: &mut R, pool: &'t [Term], used: &HashSet<String>) -> &'t Term {
        for _ in 0..32 {
            let t = &pool[zipf_index(rng, pool.len(), self.zipf)];
            if !used.contains(&t.surface) {
                return t;
            }
        }
        pool.iter().find(|t| !used.contains(&t.surface)).unwrap_or(&pool[0])
    }

    fn dose<R: Rng>(&self, rng: &mut R) -> String {
        let lex = self.lexicon;
        let a = lex.dose_amounts[rng.random_range(0..lex.dose_amounts.len())];
        let u = &lex.dose_units[rng.random_range(0..lex.dose_units.len())];
        format!("{a} {u}")
    }
}

fn generate_note<R: Rng>(note_id: u32, cfg: &GeneratorConfig, lexicon: &Lexicon, rng: &mut R) -> Result<Note> {
    let picker = Picker {
        lexicon,
        zipf: cfg.zipf_exponent,
    };
    let total_mix: f64 = cfg.fact_mix.iter().sum();
    let mut used_conditions = HashSet::new();
    let mut given_treatments = HashSet::new();
    let mut outcome_treatments = HashSet::new();
    let mut seen_treatments: Vec<&Term> = Vec::new();

    let mut fact_sentences: Vec<(String, Fact)> = Vec::new();
    for _ in 0..cfg.facts_per_note {
        let u = rng.random::<f64>() * total_mix;
        let kind = if u < cfg.fact_mix[0] {
            FactKind::Medication
        } else if u < cfg.fact_mix[0] + cfg.fact_mix[1] {
            FactKind::Procedure
        } else {
            let effect = [Effect::Causes, Effect::Causes, Effect::Worsens, Effect::Improves][rng.random_range(0..4)];
            FactKind::Outcome(effect)
        };
        let (template, values) = match kind {
            FactKind::Medication | FactKind::Procedure => {
                let pool = if kind == FactKind::Medication {
                    &lexicon.medications
                } else {
                    &lexicon.procedures
                };
                let t = picker.term(rng, pool, &given_treatments);
                let c = picker.term(rng, &lexicon.conditions, &used_conditions);
                given_treatments.insert(t.surface.clone());
                used_conditions.insert(c.surface.clone());
                seen_treatments.push(t);
                let mut values = vec![
                    (Role::Treatment, t.surface.clone(), Some(t.semantic_type)),
                    (Role::Condition, c.surface.clone(), Some(c.semantic_type)),
                ];
                let template = if kind == FactKind::Medication {
                    values.push((Role::Dosage, picker.dose(rng), Some(SemanticType::Qnco)));
                    let sig = &lexicon.sigs[rng.random_range(0..lexicon.sigs.len())];
                    values.push((Role::Sig, sig.clone(), None));
                    MEDICATION_SENTENCES[rng.random_range(0..MEDICATION_SENTENCES.len())]
                } else {
                    PROCEDURE_SENTENCES[rng.random_range(0..PROCEDURE_SENTENCES.len())]
                };
                (template, values)
            }
            FactKind::Outcome(effect) => {
                // half the time an outcome follows a treatment already in the note
                let reuse: Vec<&&Term> = seen_treatments
                    .iter()
                    .filter(|t| !outcome_treatments.contains(&t.surface))
                    .collect();
                let t: &Term = if !reuse.is_empty() && rng.random_bool(0.5) {
                    reuse[rng.random_range(0..reuse.len())]
                } else {
                    let pool = if rng.random_bool(0.7) {
                        &lexicon.medications
                    } else {
                        &lexicon.procedures
                    };
                    let mut avoid = outcome_treatments.clone();
                    avoid.extend(given_treatments.iter().cloned());
                    picker.term(rng, pool, &avoid)
                };
                let c = picker.term(rng, &lexicon.symptoms, &used_conditions);
                outcome_treatments.insert(t.surface.clone());
                used_conditions.insert(c.surface.clone());
                let pool = match effect {
                    Effect::Causes => CAUSES_SENTENCES,
                    Effect::Worsens => WORSENS_SENTENCES,
                    Effect::Improves => IMPROVES_SENTENCES,
                };
                let values = vec![
                    (Role::Treatment, t.surface.clone(), Some(t.semantic_type)),
                    (Role::Condition, c.surface.clone(), Some(c.semantic_type)),
                ];
                (pool[rng.random_range(0..pool.len())], values)
            }
        };
        let borrowed: Vec<(Role, &str, Option<SemanticType>)> =
            values.iter().map(|(r, s, t)| (*r, s.as_str(), *t)).collect();
        let (sentence, mentions) = render(template, &borrowed);
        fact_sentences.push((
            sentence,
            Fact {
                kind,
                sentence_index: 0,
                mentions,
            },
        ));
    }

    let n_distractors = if cfg.distractor_rate > 0.0 && cfg.facts_per_note > 0 {
        Binomial::new(2 * cfg.facts_per_note as u64, cfg.distractor_rate)
            .map_err(|e| Error::Config(format!("distractor distribution: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut slots: Vec<Option<usize>> = (0..fact_sentences.len()).map(Some).collect();
    slots.extend(std::iter::repeat_n(None, n_distractors));
    slots.shuffle(rng);

    let mut sentences = Vec::with_capacity(slots.len());
    let mut facts = Vec::with_capacity(fact_sentences.len());
    let mut fact_sentences: Vec<Option<(String, Fact)>> = fact_sentences.into_iter().map(Some).collect();
    for slot in slots {
        match slot {
            Some(i) => {
                let (s, mut f) = fact_sentences[i].take().expect("fact placed twice");
                f.sentence_index = sentences.len();
                sentences.push(s);
                facts.push(f);
            }
            None => sentences.push(distractor_sentence(lexicon, rng)),
        }
    }
    Ok(Note {
        note_id,
        sentences,
        facts,
    })
}

/// A sentence naming only background entities.
pub fn distractor_sentence<R: Rng + ?Sized>(lexicon: &Lexicon, rng: &mut R) -> String {
    let (template, types) = DISTRACTOR_SENTENCES[rng.random_range(0..DISTRACTOR_SENTENCES.len())];
    let mut out = String::new();
    let mut types = types.iter();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        match &rest[open + 1..open + 2] {
            "W" => {
                let w = lexicon.weights_kg[rng.random_range(0..lexicon.weights_kg.len())];
                out.push_str(&format!("{w} kg"));
            }
            _ => {
                let ty = *types.next().expect("distractor template lists too few types");
                let pool: Vec<&Term> = lexicon.background.iter().filter(|t| t.semantic_type == ty).collect();
                match pool.is_empty() {
                    true => out.push_str("patient"),
                    false => out.push_str(&pool[rng.random_range(0..pool.len())].surface),
                }
            }
        }
        rest = &rest[open + 3..];
    }
    out.push_str(rest);
    out
}
