//! Span EM/F1, logical-form exact and relaxed scores, evidence scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::LogicalForm;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn span_em(pred: &str, gold: &str) -> f64 {
    f64::from(normalize_answer(pred) == normalize_answer(gold))
}

/// Multiset overlap of two token lists.
fn multiset_overlap<T: std::hash::Hash + Eq>(a: &[T], b: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in a {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in b {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    common
}

fn overlap_prf<T: std::hash::Hash + Eq>(pred: &[T], gold: &[T]) -> Prf {
    if pred.is_empty() && gold.is_empty() {
        return Prf::from_pr(1.0, 1.0);
    }
    if pred.is_empty() || gold.is_empty() {
        return Prf::default();
    }
    let common = multiset_overlap(pred, gold) as f64;
    Prf::from_pr(common / pred.len() as f64, common / gold.len() as f64)
}

pub fn token_prf(pred: &str, gold: &str) -> Prf {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    overlap_prf(&pt, &gt)
}

pub fn token_f1(pred: &str, gold: &str) -> f64 {
    token_prf(pred, gold).f1
}

/// Counts per class: gold support, predicted count, true positives.
fn class_counts(preds: &[usize], golds: &[usize], num_classes: usize) -> Vec<(usize, usize, usize)> {
    let mut c = vec![(0, 0, 0); num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        c[g].0 += 1;
        c[p].1 += 1;
        if p == g {
            c[g].2 += 1;
        }
    }
    c
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    /// Per-class scores averaged with gold-support weights.
    pub weighted: Prf,
    /// Unweighted mean over classes with non-zero support.
    pub macro_avg: Prf,
    pub accuracy: f64,
    pub per_class: BTreeMap<usize, Prf>,
}

fn class_scores(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<ClassScores> {
    if preds.len() != golds.len() {
        return Err(Error::Dimension(format!("{} predictions for {} golds", preds.len(), golds.len())));
    }
    if preds.is_empty() {
        return Err(Error::Config("cannot score an empty prediction list".into()));
    }
    if let Some(bad) = preds.iter().chain(golds).find(|&&c| c >= num_classes) {
        return Err(Error::Index(format!("class id {bad} outside 0..{num_classes}")));
    }
    let counts = class_counts(preds, golds, num_classes);
    let n = golds.len() as f64;
    let mut out = ClassScores {
        accuracy: preds.iter().zip(golds).filter(|(p, g)| p == g).count() as f64 / n,
        ..Default::default()
    };
    let mut supported = 0.0;
    for (class, &(support, predicted, tp)) in counts.iter().enumerate() {
        if support == 0 && predicted == 0 {
            continue;
        }
        let p = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let r = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let prf = Prf::from_pr(p, r);
        out.per_class.insert(class, prf);
        if support > 0 {
            let w = support as f64 / n;
            out.weighted.precision += w * prf.precision;
            out.weighted.recall += w * prf.recall;
            out.weighted.f1 += w * prf.f1;
            out.macro_avg.precision += prf.precision;
            out.macro_avg.recall += prf.recall;
            out.macro_avg.f1 += prf.f1;
            supported += 1.0;
        }
    }
    out.macro_avg.precision /= supported;
    out.macro_avg.recall /= supported;
    out.macro_avg.f1 /= supported;
    Ok(out)
}

/// LF classification scored on whole class labels.
pub fn lf_exact_scores(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<ClassScores> {
    class_scores(preds, golds, num_classes)
}

/// LF scored on token multisets: per-example P/R/F1 averaged over examples.
pub fn lf_relaxed_scores(preds: &[usize], golds: &[usize], inventory: &[LogicalForm]) -> Result<Prf> {
    if preds.len() != golds.len() {
        return Err(Error::Dimension(format!("{} predictions for {} golds", preds.len(), golds.len())));
    }
    if preds.is_empty() {
        return Err(Error::Config("cannot score an empty prediction list".into()));
    }
    let tokens = |c: usize| -> Result<&[String]> {
        inventory
            .iter()
            .find(|l| l.lf_id as usize == c)
            .map(|l| l.lf_tokens.as_slice())
            .ok_or_else(|| Error::Index(format!("LF class {c} has no tokenization")))
    };
    let mut sum = Prf::default();
    for (&p, &g) in preds.iter().zip(golds) {
        let e = overlap_prf(tokens(p)?, tokens(g)?);
        sum.precision += e.precision;
        sum.recall += e.recall;
        sum.f1 += e.f1;
    }
    let n = preds.len() as f64;
    Ok(Prf {
        precision: sum.precision / n,
        recall: sum.recall / n,
        f1: sum.f1 / n,
    })
}

pub fn evidence_scores(preds: &[usize], golds: &[usize]) -> Result<ClassScores> {
    class_scores(preds, golds, 2).map_err(|e| match e {
        Error::Index(m) => Error::Index(format!("evidence label must be 0 or 1: {m}")),
        other => other,
    })
}

/// Rows are gold classes, columns predictions.
pub fn confusion_matrix(preds: &[usize], golds: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p < num_classes && g < num_classes {
            m[g][p] += 1;
        }
    }
    m
}

pub fn confusion_csv(matrix: &[Vec<usize>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("gold\\pred".to_string())
        .chain((0..matrix.len()).map(|i| i.to_string()))
        .collect();
    w.write_record(&header).expect("in-memory csv");
    for (g, row) in matrix.iter().enumerate() {
        let rec: Vec<String> = std::iter::once(g.to_string()).chain(row.iter().map(|c| c.to_string())).collect();
        w.write_record(&rec).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerLf {
    pub n: usize,
    pub em: f64,
    pub token_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub em: f64,
    pub token_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lf_exact: Option<ClassScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lf_relaxed: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<ClassScores>,
    pub per_lf: BTreeMap<u32, PerLf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
    /// Examples whose gold answer did not survive truncation.
    pub dropped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::lf_inventory;

    #[test]
    fn normalization_cases() {
        assert_eq!(span_em("penicillin", "Penicillin."), 1.0);
        assert_eq!(token_f1("penicillin", "Penicillin."), 1.0);
        let p = token_prf("40 mg daily", "40 mg");
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.recall, 1.0);
        assert!((p.f1 - 0.8).abs() < 1e-12);
        assert_eq!(span_em("aspirin", "heparin"), 0.0);
        assert_eq!(token_f1("aspirin", "heparin"), 0.0);
        assert_eq!(span_em("", ""), 1.0);
        assert_eq!(token_f1("", "the ."), 1.0);
        assert_eq!(token_f1("x", ""), 0.0);
    }

    #[test]
    fn exact_scores_hand_counts() {
        let perfect = lf_exact_scores(&[0, 1, 2], &[0, 1, 2], 9).unwrap();
        assert_eq!(perfect.weighted, Prf::from_pr(1.0, 1.0));
        // predict class 0 everywhere on a balanced 2-class set:
        // class 0 P=1/2 R=1 F1=2/3, class 1 all zero; weighted F1 = 1/3
        let s = lf_exact_scores(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((s.weighted.f1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.weighted.precision - 0.25).abs() < 1e-12);
        assert!((s.weighted.recall - 0.5).abs() < 1e-12);
        assert!(matches!(lf_exact_scores(&[], &[], 2), Err(Error::Config(_))));
        assert!(matches!(lf_exact_scores(&[9], &[0], 9), Err(Error::Index(_))));
    }

    #[test]
    fn relaxed_partial_credit() {
        let inv = lf_inventory();
        // dosage vs sig: 3 of 4 tokens shared
        let r = lf_relaxed_scores(&[1], &[0], &inv).unwrap();
        assert!((r.precision - 0.75).abs() < 1e-12);
        assert!((r.recall - 0.75).abs() < 1e-12);
        assert!((r.f1 - 0.75).abs() < 1e-12);
        let same = lf_relaxed_scores(&[4, 5], &[4, 5], &inv).unwrap();
        assert_eq!(same, Prf::from_pr(1.0, 1.0));
        assert!(lf_relaxed_scores(&[12], &[0], &inv).is_err());
    }

    #[test]
    fn evidence_hand_counts() {
        assert_eq!(evidence_scores(&[1, 0, 1], &[1, 0, 1]).unwrap().weighted, Prf::from_pr(1.0, 1.0));
        // all-evidence on 2 evidence + 1 non-evidence: class1 P=2/3 R=1 F1=0.8; class0 zero
        let s = evidence_scores(&[1, 1, 1], &[1, 1, 0]).unwrap();
        assert!((s.weighted.f1 - 2.0 / 3.0 * 0.8).abs() < 1e-12);
        assert!((s.weighted.recall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.per_class[&1].recall, 1.0);
        assert_eq!(evidence_scores(&[0, 1], &[1, 0]).unwrap().weighted.f1, 0.0);
        assert!(matches!(evidence_scores(&[2], &[1]), Err(Error::Index(_))));
    }

    #[test]
    fn confusion_csv_layout() {
        let m = confusion_matrix(&[0, 1, 1], &[0, 0, 1], 2);
        assert_eq!(m, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(confusion_csv(&m), "gold\\pred,0,1\n0,1,1\n1,0,1\n");
    }
}
