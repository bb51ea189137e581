use serde::{Deserialize, Serialize};

/// A lowercased token with byte offsets into the source text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token. Offsets index the original (un-lowercased) text.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;

    let flush = |tokens: &mut Vec<Token>, start: Option<usize>, end: usize| {
        if let Some(s) = start {
            tokens.push(Token {
                text: text[s..end].to_lowercase(),
                start: s,
                end,
            });
        }
    };

    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            flush(&mut tokens, word_start.take(), i);
        } else if is_punct(c) {
            flush(&mut tokens, word_start.take(), i);
            tokens.push(Token {
                text: c.to_lowercase().collect(),
                start: i,
                end: i + c.len_utf8(),
            });
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    flush(&mut tokens, word_start, text.len());
    tokens
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_ascii())
}

/// Token texts joined by single spaces; the canonical key for gazetteer lookups.
pub fn normalize_surface(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .map(|t| t.text)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn splits_punctuation() {
        assert_eq!(texts("Penicillin 40 mg."), ["penicillin", "40", "mg", "."]);
        assert_eq!(texts("x-ray"), ["x", "-", "ray"]);
        assert_eq!(texts("patient's  BP,"), ["patient", "'", "s", "bp", ","]);
        assert!(texts("").is_empty());
        assert!(texts("   \t\n").is_empty());
    }

    #[test]
    fn offsets_index_original_text() {
        let s = "Aspirin 40 mg daily.";
        for t in tokenize(s) {
            assert_eq!(s[t.start..t.end].to_lowercase(), t.text);
        }
        let s = "café—naïve";
        let toks = tokenize(s);
        assert_eq!(texts(s), ["café", "—", "naïve"]);
        assert_eq!(&s[toks[1].start..toks[1].end], "—");
    }

    #[test]
    fn normalizes_surface_forms() {
        assert_eq!(normalize_surface("Chest X-Ray"), "chest x - ray");
        assert_eq!(normalize_surface("  40   MG "), "40 mg");
    }
}
