//! Paraphrase-level and random train/val/test splits.
//!
//! Notes are partitioned once. Each LF's templates are divided into a
//! training set and a held-out set shared by validation and test. In `pl`
//! mode training sees only the training templates; in `r` mode it sees all.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{QAExample, QuestionTemplate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Pl,
    R,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pl" => Ok(SplitMode::Pl),
            "r" => Ok(SplitMode::R),
            _ => Err(Error::Config(format!("unknown split mode `{s}` (expected pl or r)"))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Pl => "pl",
            SplitMode::R => "r",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotePartition {
    pub train: BTreeSet<u32>,
    pub val: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatePartition {
    pub train: BTreeSet<u32>,
    pub held_out: BTreeSet<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub mode: SplitMode,
    pub seed: u64,
    pub train_frac: f64,
    pub notes: NotePartition,
    pub templates: BTreeMap<u32, TemplatePartition>,
}

impl SplitAssignment {
    pub fn build(
        note_ids: &[u32],
        ratios: [f64; 3],
        templates: &[QuestionTemplate],
        mode: SplitMode,
        train_frac: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(SplitAssignment {
            mode,
            seed,
            train_frac,
            notes: split_notes(note_ids, ratios, seed)?,
            templates: partition_templates(&crate::synth::templates_by_lf(templates), train_frac, seed)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    fn template_side(&self) -> HashMap<u32, bool> {
        let mut m = HashMap::new();
        for p in self.templates.values() {
            m.extend(p.train.iter().map(|t| (*t, true)));
            m.extend(p.held_out.iter().map(|t| (*t, false)));
        }
        m
    }
}

/// Seeded shuffle, then cut at rounded cumulative ratios. Every split with a
/// positive ratio receives at least one note.
pub fn split_notes(note_ids: &[u32], ratios: [f64; 3], seed: u64) -> Result<NotePartition> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let positive = ratios.iter().filter(|r| **r > 0.0).count();
    if note_ids.len() < positive {
        return Err(Error::Config(format!(
            "{} notes cannot fill {positive} non-empty splits",
            note_ids.len()
        )));
    }
    let mut ids = note_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != note_ids.len() {
        return Err(Error::Config("duplicate note ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = ids.len();
    let mut sizes = [0usize; 3];
    let mut cum = 0.0;
    let mut prev = 0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        let cut = if i == 2 { n } else { ((cum * n as f64).round() as usize).min(n) };
        sizes[i] = cut - prev.min(cut);
        prev = prev.max(cut);
    }
    // give empty positive splits one note from the largest split
    for i in 0..3 {
        if ratios[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    let (a, rest) = ids.split_at(sizes[0]);
    let (b, c) = rest.split_at(sizes[1]);
    Ok(NotePartition {
        train: a.iter().copied().collect(),
        val: b.iter().copied().collect(),
        test: c.iter().copied().collect(),
    })
}

/// Number of training templates out of `n`: `floor(frac * n)`, clamped so
/// both sides are non-empty when `n >= 2`.
pub fn train_template_count(n: usize, train_frac: f64) -> usize {
    let k = (train_frac * n as f64 + 1e-9).floor() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        n
    }
}

pub fn partition_templates(
    by_lf: &BTreeMap<u32, Vec<u32>>,
    train_frac: f64,
    seed: u64,
) -> Result<BTreeMap<u32, TemplatePartition>> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac {train_frac} must lie in (0, 1)")));
    }
    let mut out = BTreeMap::new();
    for (lf, ids) in by_lf {
        let mut ids = ids.clone();
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(*lf as u64 + 1);
        ids.shuffle(&mut rng);
        let k = train_template_count(ids.len(), train_frac);
        out.insert(
            *lf,
            TemplatePartition {
                train: ids[..k].iter().copied().collect(),
                held_out: ids[k..].iter().copied().collect(),
            },
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitSets {
    pub train: Vec<QAExample>,
    pub val: Vec<QAExample>,
    pub test: Vec<QAExample>,
}

impl SplitSets {
    pub fn ids(&self) -> [Vec<String>; 3] {
        [&self.train, &self.val, &self.test].map(|s| s.iter().map(|e| e.id.clone()).collect())
    }
}

pub fn filter_examples(examples: &[QAExample], assignment: &SplitAssignment) -> Result<SplitSets> {
    let side = assignment.template_side();
    let mut out = SplitSets::default();
    for ex in examples {
        let seen = *side.get(&ex.question_template_id).ok_or_else(|| {
            Error::Config(format!("example {} uses unknown template {}", ex.id, ex.question_template_id))
        })?;
        let notes = &assignment.notes;
        if notes.train.contains(&ex.note_id) {
            if seen || assignment.mode == SplitMode::R {
                out.train.push(ex.clone());
            }
        } else if !seen {
            if notes.val.contains(&ex.note_id) {
                out.val.push(ex.clone());
            } else if notes.test.contains(&ex.note_id) {
                out.test.push(ex.clone());
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub shared_templates: usize,
    pub shared_notes: usize,
}

impl LeakageAudit {
    pub fn clean(&self) -> bool {
        self.shared_templates == 0 && self.shared_notes == 0
    }
}

/// Overlap between the training set and the evaluation sets. In `r` mode
/// template overlap is expected and only notes are counted.
pub fn audit(sets: &SplitSets, mode: SplitMode) -> LeakageAudit {
    let train_t: BTreeSet<u32> = sets.train.iter().map(|e| e.question_template_id).collect();
    let train_n: BTreeSet<u32> = sets.train.iter().map(|e| e.note_id).collect();
    let eval = sets.val.iter().chain(&sets.test);
    let eval_t: BTreeSet<u32> = eval.clone().map(|e| e.question_template_id).collect();
    let eval_n: BTreeSet<u32> = eval.map(|e| e.note_id).collect();
    let val_n: BTreeSet<u32> = sets.val.iter().map(|e| e.note_id).collect();
    let test_n: BTreeSet<u32> = sets.test.iter().map(|e| e.note_id).collect();
    LeakageAudit {
        shared_templates: match mode {
            SplitMode::Pl => train_t.intersection(&eval_t).count(),
            SplitMode::R => 0,
        },
        shared_notes: train_n.intersection(&eval_n).count() + val_n.intersection(&test_n).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn note_counts_follow_ratios() {
        let ids: Vec<u32> = (0..524).collect();
        let p = split_notes(&ids, [433.0 / 524.0, 44.0 / 524.0, 47.0 / 524.0], 1).unwrap();
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (433, 44, 47));
        assert_eq!(p, split_notes(&ids, [433.0 / 524.0, 44.0 / 524.0, 47.0 / 524.0], 1).unwrap());
        let all = split_notes(&ids, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(all.train.len(), 524);
        assert!(split_notes(&[1, 2], [0.5, 0.25, 0.25], 0).is_err());
        let tiny = split_notes(&[1, 2, 3], [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!((tiny.train.len(), tiny.val.len(), tiny.test.len()), (1, 1, 1));
    }

    #[test]
    fn floor_rule() {
        assert_eq!(train_template_count(6, 0.7), 4);
        assert_eq!(train_template_count(10, 0.7), 7);
        assert_eq!(train_template_count(7, 0.7), 4);
        assert_eq!(train_template_count(1, 0.7), 1);
        assert_eq!(train_template_count(2, 0.99), 1);
        assert_eq!(train_template_count(2, 0.01), 1);
    }

    #[test]
    fn partition_is_complete_and_disjoint() {
        let by_lf: BTreeMap<u32, Vec<u32>> = [(0, (0..6).collect()), (1, vec![6]), (2, (7..17).collect())].into();
        let p = partition_templates(&by_lf, 0.7, 5).unwrap();
        assert_eq!((p[&0].train.len(), p[&0].held_out.len()), (4, 2));
        assert_eq!((p[&1].train.len(), p[&1].held_out.len()), (1, 0));
        assert_eq!((p[&2].train.len(), p[&2].held_out.len()), (7, 3));
        for (lf, part) in &p {
            assert!(part.train.is_disjoint(&part.held_out));
            let all: Vec<u32> = part.train.union(&part.held_out).copied().collect();
            assert_eq!(all, by_lf[lf]);
        }
        assert!(partition_templates(&by_lf, 1.0, 5).is_err());
    }

    #[test]
    fn empty_corpus_gives_empty_sets() {
        let t = crate::synth::default_templates();
        let a = SplitAssignment::build(&[0, 1, 2], [0.6, 0.2, 0.2], &t, SplitMode::Pl, 0.7, 0).unwrap();
        let s = filter_examples(&[], &a).unwrap();
        assert!(s.train.is_empty() && s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("pl".parse::<SplitMode>().unwrap(), SplitMode::Pl);
        assert!(matches!("x".parse::<SplitMode>(), Err(Error::Config(_))));
    }
}
