use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

const RESERVED: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Word-level vocabulary with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

impl Vocab {
    /// Keeps tokens seen at least `min_frequency` times, ordered by descending
    /// frequency and then lexicographically.
    pub fn build<'a, I>(tokens: I, min_frequency: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_frequency.max(1) && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()));
        v.min_frequency = min_frequency;
        v
    }

    /// Reserved tokens followed by `tokens` in order (duplicates ignored).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
            min_frequency: 1,
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens) {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }

    /// One token per line; line `n` (0-based) holds id `n + 4`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for t in self.words() {
            writeln!(f, "{t}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::Dataset {
                    line: n + 1,
                    message: format!("invalid vocabulary entry {line:?}"),
                });
            }
            words.push(line);
        }
        let v = Self::from_tokens(words.iter().cloned());
        if v.len() != words.len() + RESERVED.len() {
            return Err(Error::Integrity(format!("{}: duplicate or reserved tokens", path.display())));
        }
        Ok(v)
    }
}
