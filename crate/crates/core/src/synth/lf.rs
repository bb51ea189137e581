use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// A logical form: its class id, canonical string and token multiset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalForm {
    pub lf_id: u32,
    pub lf_string: String,
    pub lf_tokens: Vec<String>,
}

impl LogicalForm {
    pub fn new(lf_id: u32, lf_string: &str) -> Self {
        LogicalForm {
            lf_id,
            lf_string: lf_string.to_string(),
            lf_tokens: lf_tokenize(lf_string),
        }
    }

    /// Slot markers such as `|medication|` appearing in the form.
    pub fn slots(&self) -> BTreeSet<&str> {
        self.lf_tokens.iter().map(String::as_str).filter(|t| is_slot(t)).collect()
    }
}

pub fn is_slot(token: &str) -> bool {
    token.len() > 2 && token.starts_with('|') && token.ends_with('|')
}

const LF_DELIMITERS: [char; 8] = ['(', ')', '[', ']', '{', '}', '=', ','];

/// Splits on whitespace and `( ) [ ] { } = , ;`, dropping empty fragments.
/// Slot markers like `|medication|` survive as single tokens.
pub fn lf_tokenize(lf: &str) -> Vec<String> {
    lf.split(|c: char| c.is_whitespace() || c == ';' || LF_DELIMITERS.contains(&c))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// The nine logical forms: the dosage form followed by the eight
/// medication/adverse-event forms, in that order (ids 0..=8).
pub const LF_STRINGS: [&str; 9] = [
    "MedicationEvent (|medication|) [dosage=x]",
    "MedicationEvent (|medication|) [sig=x]",
    "MedicationEvent (|medication|) causes {ConditionEvent (x) OR SymptomEvent (x)}",
    "MedicationEvent (|medication|) given {ConditionEvent (x) OR SymptomEvent (x)}",
    "[ProcedureEvent (|treatment|) given/conducted {ConditionEvent (x) OR SymptomEvent (x)}] OR [MedicationEvent (|treatment|) given {ConditionEvent (x) OR SymptomEvent (x)}]",
    "{MedicationEvent (x) CheckIfNull ([enddate]) OR MedicationEvent (x) [enddate>currentDate] OR ProcedureEvent (x) [date=x]} given {ConditionEvent (|problem|) OR SymptomEvent (|problem|)}",
    "{MedicationEvent (x) CheckIfNull ([enddate]) OR MedicationEvent (x) [enddate>currentDate]} given {ConditionEvent (|problem|) OR SymptomEvent (|problem|)}",
    "{MedicationEvent (|treatment|) OR ProcedureEvent (|treatment|)} given {ConditionEvent (x) OR SymptomEvent (x)}",
    "{MedicationEvent (|treatment|) OR ProcedureEvent (|treatment|)} improves/worsens/causes {ConditionEvent (x) OR SymptomEvent (x)}",
];

pub fn lf_inventory() -> Vec<LogicalForm> {
    LF_STRINGS
        .iter()
        .enumerate()
        .map(|(i, s)| LogicalForm::new(i as u32, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dosage_form_tokens() {
        assert_eq!(
            lf_tokenize("MedicationEvent (|medication|) [dosage=x]"),
            ["MedicationEvent", "|medication|", "dosage", "x"]
        );
        assert!(lf_tokenize("").is_empty());
        assert!(lf_tokenize(" ( ) [] ;; ").is_empty());
    }

    #[test]
    fn inventory_is_consistent() {
        let inv = lf_inventory();
        assert_eq!(inv.len(), 9);
        let ids: BTreeSet<u32> = inv.iter().map(|l| l.lf_id).collect();
        assert_eq!(ids.len(), 9);
        for lf in &inv {
            assert_eq!(lf.lf_tokens, lf_tokenize(&lf.lf_string));
            assert_eq!(lf.slots().len(), 1, "{}", lf.lf_string);
        }
        // shared head token enables partial credit between forms
        assert!(inv[0].lf_tokens.contains(&"MedicationEvent".to_string()));
        assert!(inv[1].lf_tokens.contains(&"MedicationEvent".to_string()));
    }

    #[test]
    fn slot_markers_stay_whole() {
        let toks = lf_tokenize(LF_STRINGS[5]);
        assert!(toks.contains(&"|problem|".to_string()));
        assert!(toks.contains(&"enddate>currentDate".to_string()));
        assert!(toks.contains(&"CheckIfNull".to_string()));
    }
}
