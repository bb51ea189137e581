use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// The closed set of clinical semantic types used for entity tagging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemanticType {
    /// Acquired Abnormality
    Acab,
    /// Age Group
    Aggp,
    /// Anatomical Abnormality
    Anab,
    /// Anatomical Structure
    Anst,
    /// Body Part, Organ, or Organ Component
    Bpoc,
    /// Congenital Abnormality
    Cgab,
    /// Clinical Drug
    Clnd,
    /// Diagnostic Procedure
    Diap,
    /// Experimental Model of Disease
    Emod,
    /// Event
    Evnt,
    /// Finding
    Fndg,
    /// Injury or Poisoning
    Inpo,
    /// Laboratory Procedure
    Lbpr,
    /// Laboratory or Test Result
    Lbtr,
    /// Physical Object
    Phob,
    /// Quantitative Concept
    Qnco,
    /// Substance
    Sbst,
    /// Sign or Symptom
    Sosy,
    /// Therapeutic or Preventive Procedure
    Topp,
}

impl SemanticType {
    pub const ALL: [SemanticType; 19] = [
        SemanticType::Acab,
        SemanticType::Aggp,
        SemanticType::Anab,
        SemanticType::Anst,
        SemanticType::Bpoc,
        SemanticType::Cgab,
        SemanticType::Clnd,
        SemanticType::Diap,
        SemanticType::Emod,
        SemanticType::Evnt,
        SemanticType::Fndg,
        SemanticType::Inpo,
        SemanticType::Lbpr,
        SemanticType::Lbtr,
        SemanticType::Phob,
        SemanticType::Qnco,
        SemanticType::Sbst,
        SemanticType::Sosy,
        SemanticType::Topp,
    ];

    /// Number of entity ids including the "no entity" id 0.
    pub const VOCAB_SIZE: usize = Self::ALL.len() + 1;

    pub fn code(self) -> &'static str {
        match self {
            SemanticType::Acab => "acab",
            SemanticType::Aggp => "aggp",
            SemanticType::Anab => "anab",
            SemanticType::Anst => "anst",
            SemanticType::Bpoc => "bpoc",
            SemanticType::Cgab => "cgab",
            SemanticType::Clnd => "clnd",
            SemanticType::Diap => "diap",
            SemanticType::Emod => "emod",
            SemanticType::Evnt => "evnt",
            SemanticType::Fndg => "fndg",
            SemanticType::Inpo => "inpo",
            SemanticType::Lbpr => "lbpr",
            SemanticType::Lbtr => "lbtr",
            SemanticType::Phob => "phob",
            SemanticType::Qnco => "qnco",
            SemanticType::Sbst => "sbst",
            SemanticType::Sosy => "sosy",
            SemanticType::Topp => "topp",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SemanticType::Acab => "Acquired Abnormality",
            SemanticType::Aggp => "Age Group",
            SemanticType::Anab => "Anatomical Abnormality",
            SemanticType::Anst => "Anatomical Structure",
            SemanticType::Bpoc => "Body Part, Organ, or Organ Component",
            SemanticType::Cgab => "Congenital Abnormality",
            SemanticType::Clnd => "Clinical Drug",
            SemanticType::Diap => "Diagnostic Procedure",
            SemanticType::Emod => "Experimental Model of Disease",
            SemanticType::Evnt => "Event",
            SemanticType::Fndg => "Finding",
            SemanticType::Inpo => "Injury or Poisoning",
            SemanticType::Lbpr => "Laboratory Procedure",
            SemanticType::Lbtr => "Laboratory or Test Result",
            SemanticType::Phob => "Physical Object",
            SemanticType::Qnco => "Quantitative Concept",
            SemanticType::Sbst => "Substance",
            SemanticType::Sosy => "Sign or Symptom",
            SemanticType::Topp => "Therapeutic or Preventive Procedure",
        }
    }

    /// Entity id fed to the model; 0 is reserved for "no entity".
    pub fn entity_id(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).expect("listed") + 1
    }

    pub fn from_entity_id(id: usize) -> Option<Self> {
        id.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SemanticType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.code() == s)
            .ok_or_else(|| Error::Config(format!("unknown semantic type `{s}`")))
    }
}

impl Serialize for SemanticType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for SemanticType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nineteen_codes_with_contiguous_ids() {
        assert_eq!(SemanticType::ALL.len(), 19);
        assert_eq!(SemanticType::VOCAB_SIZE, 20);
        for (i, t) in SemanticType::ALL.iter().enumerate() {
            assert_eq!(t.entity_id(), i + 1);
            assert_eq!(SemanticType::from_entity_id(i + 1), Some(*t));
            assert_eq!(t.code().parse::<SemanticType>().unwrap(), *t);
        }
        assert_eq!(SemanticType::from_entity_id(0), None);
        assert_eq!(SemanticType::from_entity_id(20), None);
        assert!("dsyn".parse::<SemanticType>().is_err());
    }
}
