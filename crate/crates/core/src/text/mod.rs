//! Tokenization, vocabulary, gazetteer entity tagging and pair encoding.

mod encode;
mod gazetteer;
mod semtype;
mod tokenize;
mod vocab;

pub use encode::{CharSpan, EncodedPair, PairEncoder};
pub use gazetteer::{tag_entities, EntityTag, Gazetteer};
pub use semtype::SemanticType;
pub use tokenize::{normalize_surface, tokenize, Token};
pub use vocab::{Vocab, CLS, CLS_ID, PAD, PAD_ID, SEP, SEP_ID, UNK, UNK_ID};
