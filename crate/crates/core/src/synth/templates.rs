use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lf::{is_slot, LogicalForm};
use crate::error::{Error, Result};

/// A question paraphrase with one typed slot, e.g. `What is the dosage of |medication|?`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub template_id: u32,
    pub lf_id: u32,
    pub pattern: String,
}

impl QuestionTemplate {
    pub fn slots(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.pattern.as_str();
        while let Some(open) = rest.find('|') {
            let after = &rest[open + 1..];
            match after.find('|') {
                Some(close) => {
                    out.push(&rest[open..open + close + 2]);
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        out
    }

    /// Fills every slot occurrence with `value` and lowercases the result.
    pub fn fill(&self, value: &str) -> String {
        let mut q = self.pattern.clone();
        for slot in self.slots() {
            q = q.replace(slot, value);
        }
        q.to_lowercase()
    }
}

const PATTERNS: [&[&str]; 9] = [
    &[
        "What is the dosage of |medication|?",
        "What dose of |medication| is the patient on?",
        "What is her current dose of |medication|?",
        "How much |medication| is given per dose?",
        "What dosage of |medication| was prescribed?",
        "How much |medication| does she take and at what dosage?",
    ],
    &[
        "How often does the patient take |medication|?",
        "How often should |medication| be taken?",
        "How often is |medication| given?",
        "What is the frequency of |medication|?",
        "At what frequency is |medication| taken?",
        "What dosing frequency is |medication| on?",
        "What is the frequency of |medication| and how often is it given?",
    ],
    &[
        "What side effects did |medication| cause?",
        "What side effect did the patient have from |medication|?",
        "Were there side effects from |medication|?",
        "What adverse reaction did the patient have to |medication|?",
        "What reaction developed after |medication|?",
        "Did |medication| cause a reaction?",
    ],
    &[
        "Why is the patient on |medication|?",
        "Why was |medication| started?",
        "Why does she take |medication|?",
        "What is the indication for |medication|?",
        "What indication was |medication| prescribed for?",
        "Which indication is |medication| used for?",
    ],
    &[
        "Why was |treatment| given?",
        "Why did the patient receive |treatment|?",
        "Why was |treatment| ordered?",
        "What was the reason for |treatment|?",
        "What reason was given for |treatment|?",
        "For what reason was |treatment| done?",
    ],
    &[
        "How is the patient's |problem| being treated?",
        "How was |problem| treated?",
        "What intervention treated her |problem|?",
        "What treatment has the patient had for |problem|?",
        "What treatment was given for |problem|?",
        "Which treatment was used for |problem|?",
    ],
    &[
        "What medication is the patient taking for |problem|?",
        "What medication was started for |problem|?",
        "Is the patient on any medication for |problem|?",
        "What drug was prescribed for |problem|?",
        "Which drug treats her |problem|?",
        "What drug is she taking for |problem|?",
    ],
    &[
        "What condition was |treatment| used for?",
        "Which condition required |treatment|?",
        "For which condition was |treatment| recommended?",
        "What problem did |treatment| address?",
        "What problem was |treatment| meant to treat?",
        "Which problem led to |treatment|?",
    ],
    &[
        "What effect did |treatment| have?",
        "What was the effect of |treatment|?",
        "What effect was seen with |treatment|?",
        "What was the response to |treatment|?",
        "What response followed |treatment|?",
        "Was there a response to |treatment|?",
    ],
];

/// Built-in paraphrase templates for the nine logical forms, ids assigned
/// sequentially in LF order.
pub fn default_templates() -> Vec<QuestionTemplate> {
    let mut out = Vec::new();
    for (lf, patterns) in PATTERNS.iter().enumerate() {
        for p in patterns.iter() {
            out.push(QuestionTemplate {
                template_id: out.len() as u32,
                lf_id: lf as u32,
                pattern: p.to_string(),
            });
        }
    }
    out
}

pub fn templates_by_lf(templates: &[QuestionTemplate]) -> BTreeMap<u32, Vec<u32>> {
    let mut m: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for t in templates {
        m.entry(t.lf_id).or_default().push(t.template_id);
    }
    m
}

/// Checks ids are unique, every LF is covered and template slots are drawn
/// from the slots of their LF.
pub fn validate_templates(templates: &[QuestionTemplate], inventory: &[LogicalForm]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for t in templates {
        if !seen.insert(t.template_id) {
            return Err(Error::Config(format!("duplicate template id {}", t.template_id)));
        }
        let lf = inventory
            .iter()
            .find(|l| l.lf_id == t.lf_id)
            .ok_or_else(|| Error::Config(format!("template {} references unknown LF {}", t.template_id, t.lf_id)))?;
        let lf_slots = lf.slots();
        for s in t.slots() {
            if !is_slot(s) || !lf_slots.contains(s) {
                return Err(Error::Config(format!(
                    "template {} slot {s} is not a slot of LF {}",
                    t.template_id, t.lf_id
                )));
            }
        }
    }
    for lf in inventory {
        if !templates.iter().any(|t| t.lf_id == lf.lf_id) {
            return Err(Error::Config(format!("LF {} has no templates", lf.lf_id)));
        }
    }
    Ok(())
}
