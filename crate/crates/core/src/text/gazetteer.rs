use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::semtype::SemanticType;
use super::tokenize::{normalize_surface, tokenize};
use crate::error::{Error, Result};

/// A typed entity mention; offsets are byte offsets into the tagged text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTag {
    pub semantic_type: SemanticType,
    pub char_start: usize,
    pub char_end: usize,
}

/// Surface-form dictionary mapping (possibly multi-word) phrases to one
/// semantic type each. Keys are stored in tokenized, lowercased form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gazetteer {
    entries: BTreeMap<String, SemanticType>,
    max_tokens: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, ty: SemanticType) -> Result<()> {
        let key = normalize_surface(surface);
        if key.is_empty() {
            return Err(Error::Config(format!("empty gazetteer surface form `{surface}`")));
        }
        if let Some(prev) = self.entries.get(&key) {
            if *prev != ty {
                return Err(Error::Config(format!(
                    "surface form `{surface}` typed both {prev} and {ty}"
                )));
            }
        }
        self.max_tokens = self.max_tokens.max(key.split(' ').count());
        self.entries.insert(key, ty);
        Ok(())
    }

    pub fn lookup(&self, surface: &str) -> Option<SemanticType> {
        self.entries.get(&normalize_surface(surface)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SemanticType)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, SemanticType> = serde_json::from_str(json)?;
        let mut g = Gazetteer::new();
        for (surface, ty) in raw {
            g.insert(&surface, ty)?;
        }
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("string map serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Case-insensitive, longest-match-first, left-to-right scan. Tags never overlap.
    pub fn tag(&self, text: &str) -> Vec<EntityTag> {
        let tokens = tokenize(text);
        let mut tags = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_tokens.min(tokens.len() - i)).rev().find_map(|n| {
                let key = tokens[i..i + n].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
                self.entries.get(&key).map(|ty| (n, *ty))
            });
            match longest {
                Some((n, ty)) => {
                    tags.push(EntityTag {
                        semantic_type: ty,
                        char_start: tokens[i].start,
                        char_end: tokens[i + n - 1].end,
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        tags
    }
}

/// Free-function form of [`Gazetteer::tag`].
pub fn tag_entities(text: &str, gazetteer: &Gazetteer) -> Vec<EntityTag> {
    gazetteer.tag(text)
}
