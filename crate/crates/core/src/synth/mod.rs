//! Synthetic clinical notes, paraphrase templates, logical forms and QA examples.

mod corpus;
mod dataset;
mod generate;
mod lexicon;
mod lf;
mod questions;
mod templates;

pub use corpus::{build_corpus, Corpus, Setting};
pub use dataset::{read_dataset, write_dataset, write_jsonl, JsonlReader};
pub use generate::{distractor_sentence, generate_corpus, Effect, Fact, FactKind, GeneratorConfig, Mention, Note, Role};
pub use lexicon::{zipf_index, Lexicon, Term};
pub use lf::{is_slot, lf_inventory, lf_tokenize, LogicalForm, LF_STRINGS};
pub use questions::{
    build_paragraph_context, instantiate_questions, lf_roles, paragraph_window, Answer, QAExample, PARAGRAPH_MAX,
    PARAGRAPH_MIN,
};
pub use templates::{default_templates, templates_by_lf, validate_templates, QuestionTemplate};
