//! Seed sweeps over the system/split grid.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::{build_vocab, encode_examples, evidence_pairs, Sample};
use super::train::{evaluate_samples, train, System, TrainConfig, TrainData};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelConfig};
use crate::split::{filter_examples, SplitAssignment, SplitMode, SplitSets};
use crate::synth::{QAExample, QuestionTemplate};
use crate::text::PairEncoder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    /// Architecture shared by every run; `vocab_size` is replaced per run.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub ratios: [f64; 3],
    pub train_frac: f64,
    pub min_frequency: usize,
    /// Non-evidence sentences paired with each question in evidence mode.
    pub evidence_negatives: usize,
    /// Per-run training logs go under this directory when set.
    pub out_dir: Option<PathBuf>,
    pub verbose: bool,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3],
            ratios: [0.8, 0.1, 0.1],
            train_frac: 0.7,
            min_frequency: 2,
            evidence_negatives: 2,
            out_dir: None,
            verbose: false,
        }
    }
}

impl MatrixConfig {
    fn validate(&self) -> Result<()> {
        if self.seeds.len() < 3 {
            return Err(Error::Config(format!("need at least 3 seeds, got {}", self.seeds.len())));
        }
        ModelConfig {
            vocab_size: self.model.vocab_size.max(4),
            ..self.model.clone()
        }
        .validate()
    }
}

/// Scores of one system on one split, one value per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub system: String,
    pub split: SplitMode,
    pub f1: Vec<f64>,
    pub em: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl MatrixCell {
    pub fn f1_mean(&self) -> f64 {
        mean(&self.f1)
    }
    pub fn f1_sd(&self) -> f64 {
        sd(&self.f1)
    }
    pub fn em_mean(&self) -> f64 {
        mean(&self.em)
    }
    pub fn em_sd(&self) -> f64 {
        sd(&self.em)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    /// Column names for the two score lists, e.g. `F1`/`EM`.
    pub columns: [String; 2],
    pub seeds: Vec<u64>,
    pub cells: Vec<MatrixCell>,
    /// Test-set sizes per seed.
    pub n_test: Vec<usize>,
}

impl MatrixReport {
    pub fn cell(&self, system: &str, split: SplitMode) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.system == system && c.split == split)
    }

    fn cell_mut(&mut self, system: &str, split: SplitMode) -> &mut MatrixCell {
        if let Some(i) = self.cells.iter().position(|c| c.system == system && c.split == split) {
            return &mut self.cells[i];
        }
        self.cells.push(MatrixCell {
            system: system.to_string(),
            split,
            f1: Vec::new(),
            em: Vec::new(),
        });
        self.cells.last_mut().unwrap()
    }

    pub fn to_csv(&self) -> String {
        let [a, b] = &self.columns;
        let (a, b) = (a.to_lowercase(), b.to_lowercase());
        let mut s = format!("system,split,{a}_mean,{a}_sd,{b}_mean,{b}_sd,seeds\n");
        for c in &self.cells {
            writeln!(
                s,
                "{},{},{:.4},{:.4},{:.4},{:.4},{}",
                c.system,
                c.split,
                c.f1_mean(),
                c.f1_sd(),
                c.em_mean(),
                c.em_sd(),
                c.f1.len()
            )
            .unwrap();
        }
        s
    }

    pub fn to_text(&self) -> String {
        let [a, b] = &self.columns;
        let mut s = format!("{:<22} {:>18} {:>18}\n", "system", a, b);
        for c in &self.cells {
            let name = format!("{} ({})", c.system, c.split);
            writeln!(
                s,
                "{:<22} {:>8.2} ± {:<7.2} {:>8.2} ± {:<7.2}",
                name,
                100.0 * c.f1_mean(),
                100.0 * c.f1_sd(),
                100.0 * c.em_mean(),
                100.0 * c.em_sd()
            )
            .unwrap();
        }
        s
    }
}

struct Run<'a> {
    label: &'a str,
    system: System,
    omega: f64,
    split: SplitMode,
}

fn split_sets(
    examples: &[QAExample],
    templates: &[QuestionTemplate],
    cfg: &MatrixConfig,
    mode: SplitMode,
    seed: u64,
) -> Result<SplitSets> {
    let mut note_ids: Vec<u32> = examples.iter().map(|e| e.note_id).collect();
    note_ids.sort_unstable();
    note_ids.dedup();
    let assignment = SplitAssignment::build(&note_ids, cfg.ratios, templates, mode, cfg.train_frac, seed)?;
    let sets = filter_examples(examples, &assignment)?;
    if sets.train.is_empty() || sets.val.is_empty() || sets.test.is_empty() {
        return Err(Error::Config(format!("{mode} split with seed {seed} left an empty partition")));
    }
    Ok(sets)
}

fn train_one(
    run: &Run,
    sets: &SplitSets,
    cfg: &MatrixConfig,
    seed: u64,
    encode: &dyn Fn(&PairEncoder, &[QAExample]) -> Result<Vec<Sample>>,
) -> Result<EvalReport> {
    let vocab = build_vocab(&sets.train, cfg.min_frequency);
    let base = ModelConfig {
        vocab_size: vocab.len(),
        omega: run.omega,
        ..cfg.model.clone()
    };
    let model_cfg = run.system.apply(&base);
    let encoder = PairEncoder::new(&vocab, model_cfg.max_seq_len);
    let (tr, va, te) = (
        encode(&encoder, &sets.train)?,
        encode(&encoder, &sets.val)?,
        encode(&encoder, &sets.test)?,
    );
    let model = Model::new(model_cfg, seed)?;
    let tcfg = TrainConfig {
        seed,
        system: run.system,
        ..cfg.train.clone()
    };
    let log = match &cfg.out_dir {
        Some(d) => {
            let dir = d.join(format!("{}-{}-seed{seed}", run.label, run.split));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            Some(dir.join("train_log.jsonl"))
        }
        None => None,
    };
    let data = TrainData {
        train: &tr,
        val: &va,
        val_examples: &sets.val,
    };
    let outcome = train(model, data, &tcfg, log.as_deref(), None)?;
    let report = evaluate_samples(&outcome.model, &te, &sets.test)?;
    if cfg.verbose {
        eprintln!(
            "seed {seed} {} ({}): steps {} val {:.4} test f1 {:.4} em {:.4}",
            run.label, run.split, outcome.steps, outcome.best_val, report.token_f1, report.em
        );
    }
    Ok(report)
}

/// Trains the baseline, fused and multitask systems on the pl split and the
/// fused system on the r split, for every seed, scoring span F1/EM on the
/// shared test set.
pub fn run_matrix(examples: &[QAExample], templates: &[QuestionTemplate], cfg: &MatrixConfig) -> Result<MatrixReport> {
    cfg.validate()?;
    let runs = [
        Run { label: "baseline", system: System::Baseline, omega: 0.0, split: SplitMode::Pl },
        Run { label: "fused", system: System::Fused, omega: 0.0, split: SplitMode::Pl },
        Run { label: "multitask", system: System::Multitask, omega: cfg.model.omega, split: SplitMode::Pl },
        Run { label: "fused", system: System::Fused, omega: 0.0, split: SplitMode::R },
    ];
    let mut report = MatrixReport {
        columns: ["F1".into(), "EM".into()],
        seeds: cfg.seeds.clone(),
        ..Default::default()
    };
    let encode = |enc: &PairEncoder, ex: &[QAExample]| encode_examples(enc, ex);
    for &seed in &cfg.seeds {
        let pl = split_sets(examples, templates, cfg, SplitMode::Pl, seed)?;
        let r = split_sets(examples, templates, cfg, SplitMode::R, seed)?;
        debug_assert_eq!(pl.ids()[2], r.ids()[2]);
        report.n_test.push(pl.test.len());
        for run in &runs {
            let sets = if run.split == SplitMode::Pl { &pl } else { &r };
            let rep = train_one(run, sets, cfg, seed, &encode)?;
            let cell = report.cell_mut(run.label, run.split);
            cell.f1.push(rep.token_f1);
            cell.em.push(rep.em);
        }
    }
    Ok(report)
}

/// Evidence-sentence classification with and without the LF loss on the pl
/// split of paragraph-setting examples. Columns are weighted F1 and accuracy.
pub fn run_evidence_matrix(
    examples: &[QAExample],
    templates: &[QuestionTemplate],
    cfg: &MatrixConfig,
) -> Result<MatrixReport> {
    cfg.validate()?;
    if cfg.model.omega <= 0.0 {
        return Err(Error::Config("the auxiliary evidence run needs omega > 0".into()));
    }
    let runs = [
        Run { label: "evidence-noaux", system: System::Evidence, omega: 0.0, split: SplitMode::Pl },
        Run { label: "evidence-multitask", system: System::Evidence, omega: cfg.model.omega, split: SplitMode::Pl },
    ];
    let mut report = MatrixReport {
        columns: ["F1".into(), "Accuracy".into()],
        seeds: cfg.seeds.clone(),
        ..Default::default()
    };
    for &seed in &cfg.seeds {
        let sets = split_sets(examples, templates, cfg, SplitMode::Pl, seed)?;
        let negatives = cfg.evidence_negatives;
        let encode = |enc: &PairEncoder, ex: &[QAExample]| evidence_pairs(enc, ex, negatives, seed);
        for run in &runs {
            let rep = train_one(run, &sets, cfg, seed, &encode)?;
            report.n_test.push(rep.n_examples);
            let ev = rep
                .evidence
                .ok_or_else(|| Error::Internal("evidence report missing in evidence mode".into()))?;
            let cell = report.cell_mut(run.label, run.split);
            cell.f1.push(ev.weighted.f1);
            cell.em.push(ev.accuracy);
        }
    }
    Ok(report)
}
