use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use clinqa_core::config::ExperimentConfig;
use clinqa_core::metrics::confusion_csv;
use clinqa_core::model::{check_all_fragments, Model, ModelConfig, TaskMode};
use clinqa_core::split::{audit, filter_examples, SplitAssignment, SplitSets};
use clinqa_core::synth::{
    build_corpus, default_templates, lf_inventory, lf_tokenize, read_dataset, validate_templates, write_dataset,
    write_jsonl, Lexicon, QAExample, QuestionTemplate, Setting, LF_STRINGS,
};
use clinqa_core::text::{Gazetteer, PairEncoder};
use clinqa_core::trainer::{
    build_vocab, encode_examples, evaluate_samples, evidence_pairs, load_model_dir, run_evidence_matrix, run_matrix,
    save_model_dir, train, MatrixConfig, Sample, System, TrainData,
};
use clinqa_core::{Error, Result};

#[derive(Parser)]
#[command(name = "clinqa", version, about = "Entity-enriched multi-task clinical question answering")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON file of dotted configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set model.hidden_dim=64.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with gazetteer, vocabulary and templates.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        num_notes: Option<usize>,
        #[arg(long)]
        setting: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition notes and templates and report leakage.
    Split {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one system and save the best checkpoint.
    Train {
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on one split part; prints the report as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        part: String,
        /// Write the LF confusion matrix here as CSV.
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
    },
    /// Finite-difference checks of every model fragment.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Seed sweep over systems and splits; writes CSV, text and JSON tables.
    RunMatrix {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Compare evidence classifiers with and without the LF loss instead.
        #[arg(long)]
        evidence: bool,
    },
    /// Split a logical form into tokens.
    LfTokenize {
        /// Logical form text; omit to list the built-in forms.
        lf: Option<String>,
        #[arg(long)]
        id: Option<usize>,
    },
}

const EXAMPLES_FILE: &str = "examples.jsonl";
const NOTES_FILE: &str = "notes.jsonl";
const TEMPLATES_FILE: &str = "templates.json";
const SPLIT_FILE: &str = "split.json";

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolved config, seed and source version; enough to replay the command.
fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, seed: u64, extra: Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "seed": seed,
        "git_describe": git_describe(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.to_flat(),
        "outputs": extra,
    });
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

fn emit<T: Serialize>(json_mode: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json_mode {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn load_templates(data: &Path) -> Result<Vec<QuestionTemplate>> {
    let p = data.join(TEMPLATES_FILE);
    if !p.exists() {
        return Ok(default_templates());
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let templates: Vec<QuestionTemplate> = serde_json::from_str(&text)?;
    validate_templates(&templates, &lf_inventory())?;
    Ok(templates)
}

fn load_split(data: &Path, split: &Path) -> Result<(SplitAssignment, SplitSets)> {
    let examples = read_dataset(&data.join(EXAMPLES_FILE))?;
    let assignment = SplitAssignment::load(&split.join(SPLIT_FILE))?;
    let sets = filter_examples(&examples, &assignment)?;
    Ok((assignment, sets))
}

fn samples_for(mode: TaskMode, encoder: &PairEncoder, examples: &[QAExample], negatives: usize, seed: u64) -> Result<Vec<Sample>> {
    match mode {
        TaskMode::Span => encode_examples(encoder, examples),
        TaskMode::Evidence => {
            let s = evidence_pairs(encoder, examples, negatives, seed)?;
            if !s.iter().any(|s| s.evidence == Some(false)) {
                return Err(Error::Config(
                    "evidence mode needs multi-sentence contexts; generate data with --setting paragraph".into(),
                ));
            }
            Ok(s)
        }
    }
}

fn gen_data(common: &Common, seed: Option<u64>, num_notes: Option<usize>, setting: Option<String>, out: &Path) -> Result<()> {
    let mut o = common.overrides.clone();
    if let Some(s) = seed {
        o.push(format!("generator.seed={s}"));
    }
    if let Some(n) = num_notes {
        o.push(format!("generator.num_notes={n}"));
    }
    if let Some(s) = setting {
        o.push(format!("data.setting={}", s.parse::<Setting>()?));
    }
    let cfg = ExperimentConfig::load(common.config.as_deref(), &o)?;
    let lexicon = Lexicon::clinical();
    let templates = default_templates();
    let corpus = build_corpus(&cfg.generator, &templates, &lexicon, cfg.data.setting)?;
    create_dir(out)?;
    write_dataset(&corpus.examples, &out.join(EXAMPLES_FILE))?;
    write_jsonl(&corpus.notes, &out.join(NOTES_FILE))?;
    write_text(&out.join(TEMPLATES_FILE), &serde_json::to_string_pretty(&templates)?)?;
    lexicon.gazetteer()?.save(&out.join("gazetteer.json"))?;
    let vocab = build_vocab(&corpus.examples, cfg.data.min_frequency);
    vocab.save(&out.join("vocab.txt"))?;
    let summary = json!({
        "notes": corpus.notes.len(),
        "examples": corpus.examples.len(),
        "skipped_template_note_pairs": corpus.skipped,
        "setting": cfg.data.setting,
        "vocab_size": vocab.len(),
    });
    write_manifest(out, "gen-data", &cfg, cfg.generator.seed, summary.clone())?;
    emit(common.json, &summary, || {
        format!(
            "wrote {} examples from {} notes ({} setting, {} template/note pairs skipped) to {}\n",
            corpus.examples.len(),
            corpus.notes.len(),
            cfg.data.setting,
            corpus.skipped,
            out.display()
        )
    })
}

fn split_cmd(
    common: &Common,
    mode: Option<String>,
    train_frac: Option<f64>,
    seed: Option<u64>,
    data: &Path,
    out: &Path,
) -> Result<()> {
    let mut o = common.overrides.clone();
    if let Some(m) = mode {
        o.push(format!("split.mode={}", m.parse::<clinqa_core::split::SplitMode>()?));
    }
    if let Some(f) = train_frac {
        o.push(format!("split.train_frac={f}"));
    }
    if let Some(s) = seed {
        o.push(format!("split.seed={s}"));
    }
    let cfg = ExperimentConfig::load(common.config.as_deref(), &o)?;
    let examples = read_dataset(&data.join(EXAMPLES_FILE))?;
    let templates = load_templates(data)?;
    let mut note_ids: Vec<u32> = examples.iter().map(|e| e.note_id).collect();
    note_ids.sort_unstable();
    note_ids.dedup();
    let s = &cfg.split;
    let assignment = SplitAssignment::build(&note_ids, s.ratios, &templates, s.mode, s.train_frac, s.seed)?;
    let sets = filter_examples(&examples, &assignment)?;
    let leak = audit(&sets, s.mode);
    create_dir(out)?;
    assignment.save(&out.join(SPLIT_FILE))?;
    for (name, ids) in ["train", "val", "test"].iter().zip(sets.ids()) {
        write_text(&out.join(format!("{name}_ids.txt")), &(ids.join("\n") + "\n"))?;
    }
    let partitions: BTreeMap<u32, Value> = assignment
        .templates
        .iter()
        .map(|(lf, p)| (*lf, json!({"train": p.train, "held_out": p.held_out})))
        .collect();
    let summary = json!({
        "mode": s.mode,
        "sizes": {"train": sets.train.len(), "val": sets.val.len(), "test": sets.test.len()},
        "notes": {"train": assignment.notes.train.len(), "val": assignment.notes.val.len(), "test": assignment.notes.test.len()},
        "templates": partitions,
        "leakage": leak,
    });
    write_manifest(out, "split", &cfg, s.seed, summary.clone())?;
    emit(common.json, &summary, || {
        let mut t = format!(
            "{} split: {} train / {} val / {} test examples\n",
            s.mode,
            sets.train.len(),
            sets.val.len(),
            sets.test.len()
        );
        for (lf, p) in &assignment.templates {
            t += &format!("  LF{lf}: {} train / {} held-out templates\n", p.train.len(), p.held_out.len());
        }
        t += &format!(
            "leakage audit: {} shared templates, {} shared notes\n",
            leak.shared_templates, leak.shared_notes
        );
        t
    })?;
    if !leak.clean() {
        return Err(Error::Invariant(format!("leakage audit failed: {leak:?}")));
    }
    Ok(())
}

fn train_cmd(common: &Common, system: Option<String>, seed: Option<u64>, data: &Path, split: &Path, out: &Path) -> Result<()> {
    let mut o = common.overrides.clone();
    if let Some(s) = system {
        o.push(format!("train.system={}", s.parse::<System>()?));
    }
    if let Some(s) = seed {
        o.push(format!("train.seed={s}"));
    }
    let cfg = ExperimentConfig::load(common.config.as_deref(), &o)?;
    let (_, sets) = load_split(data, split)?;
    let gazetteer = Gazetteer::load(&data.join("gazetteer.json"))?;
    let vocab = build_vocab(&sets.train, cfg.data.min_frequency);
    let model_cfg = cfg.train.system.apply(&ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    });
    let encoder = PairEncoder::new(&vocab, model_cfg.max_seq_len);
    let neg = cfg.data.evidence_negatives;
    let seed = cfg.train.seed;
    let tr = samples_for(model_cfg.mode, &encoder, &sets.train, neg, seed)?;
    let va = samples_for(model_cfg.mode, &encoder, &sets.val, neg, seed)?;
    create_dir(out)?;
    let model = Model::new(model_cfg, seed)?;
    let mut save = |m: &Model| save_model_dir(out, m, &vocab, &gazetteer);
    let outcome = train(
        model,
        TrainData {
            train: &tr,
            val: &va,
            val_examples: &sets.val,
        },
        &cfg.train,
        Some(&out.join("train_log.jsonl")),
        Some(&mut save),
    )?;
    save_model_dir(out, &outcome.model, &vocab, &gazetteer)?;
    let summary = json!({
        "system": cfg.train.system,
        "steps": outcome.steps,
        "best_val": outcome.best_val,
        "val_history": outcome.val_history,
        "train_samples": tr.len(),
        "val_samples": va.len(),
        "vocab_size": vocab.len(),
    });
    write_manifest(out, "train", &cfg, seed, summary.clone())?;
    emit(common.json, &summary, || {
        format!(
            "trained {} for {} steps; best validation score {:.4}; model in {}\n",
            cfg.train.system,
            outcome.steps,
            outcome.best_val,
            out.display()
        )
    })
}

fn eval_cmd(common: &Common, model_dir: &Path, data: &Path, split: &Path, part: &str, confusion: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(common.config.as_deref(), &common.overrides)?;
    let dir = load_model_dir(model_dir)?;
    let (_, sets) = load_split(data, split)?;
    let examples = match part {
        "train" => &sets.train,
        "val" => &sets.val,
        "test" => &sets.test,
        other => return Err(Error::Config(format!("unknown split part `{other}`"))),
    };
    let encoder = PairEncoder::new(&dir.vocab, dir.model.config.max_seq_len);
    let samples = samples_for(dir.model.config.mode, &encoder, examples, cfg.data.evidence_negatives, cfg.train.seed)?;
    let report = evaluate_samples(&dir.model, &samples, examples)?;
    if let (Some(path), Some(m)) = (confusion, &report.confusion) {
        write_text(path, &confusion_csv(m))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn gradcheck_cmd(common: &Common, seeds: u64, tolerance: f64) -> Result<()> {
    // fragment shapes are fixed; loading still rejects bad --config/--set
    ExperimentConfig::load(common.config.as_deref(), &common.overrides)?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let checks = check_all_fragments(&seeds, tolerance)?;
    let mut worst: BTreeMap<&str, (f64, bool)> = BTreeMap::new();
    for c in &checks {
        let e = worst.entry(c.fragment.as_str()).or_insert((0.0, true));
        e.0 = e.0.max(c.report.max_rel_err());
        e.1 &= c.passed();
    }
    let summary: BTreeMap<&str, Value> = worst
        .iter()
        .map(|(k, (err, ok))| (*k, json!({"max_rel_err": err, "passed": ok})))
        .collect();
    emit(common.json, &summary, || {
        let mut t = format!("{:<16} {:>12}  {}\n", "fragment", "max rel err", "status");
        for (k, (err, ok)) in &worst {
            t += &format!("{k:<16} {err:>12.3e}  {}\n", if *ok { "ok" } else { "FAIL" });
        }
        t
    })?;
    if checks.iter().all(|c| c.passed()) {
        Ok(())
    } else {
        Err(Error::Invariant(format!("gradient check exceeded tolerance {tolerance}")))
    }
}

fn run_matrix_cmd(common: &Common, data: &Path, out: &Path, evidence: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(common.config.as_deref(), &common.overrides)?;
    let examples = read_dataset(&data.join(EXAMPLES_FILE))?;
    let templates = load_templates(data)?;
    create_dir(out)?;
    let mcfg = MatrixConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        seeds: cfg.seeds.clone(),
        ratios: cfg.split.ratios,
        train_frac: cfg.split.train_frac,
        min_frequency: cfg.data.min_frequency,
        evidence_negatives: cfg.data.evidence_negatives,
        out_dir: Some(out.join("runs")),
        verbose: !common.json,
    };
    let report = if evidence {
        run_evidence_matrix(&examples, &templates, &mcfg)?
    } else {
        run_matrix(&examples, &templates, &mcfg)?
    };
    write_text(&out.join("matrix.csv"), &report.to_csv())?;
    write_text(&out.join("matrix.txt"), &report.to_text())?;
    write_text(&out.join("matrix.json"), &serde_json::to_string_pretty(&report)?)?;
    write_manifest(out, "run-matrix", &cfg, cfg.seeds[0], json!({"evidence": evidence}))?;
    emit(common.json, &report, || report.to_text())
}

fn lf_tokenize_cmd(common: &Common, lf: Option<String>, id: Option<usize>) -> Result<()> {
    ExperimentConfig::load(common.config.as_deref(), &common.overrides)?;
    let forms: Vec<(Option<usize>, String)> = match (lf, id) {
        (Some(s), _) => vec![(None, s)],
        (None, Some(i)) => {
            let s = LF_STRINGS
                .get(i)
                .ok_or_else(|| Error::Config(format!("no logical form with id {i}")))?;
            vec![(Some(i), s.to_string())]
        }
        (None, None) => LF_STRINGS.iter().enumerate().map(|(i, s)| (Some(i), s.to_string())).collect(),
    };
    let rows: Vec<Value> = forms
        .iter()
        .map(|(i, s)| json!({"lf_id": i, "lf": s, "tokens": lf_tokenize(s)}))
        .collect();
    emit(common.json, &rows, || {
        forms
            .iter()
            .map(|(i, s)| {
                let prefix = i.map(|i| format!("LF{i}: ")).unwrap_or_default();
                format!("{prefix}{}\n", lf_tokenize(s).join(" "))
            })
            .collect()
    })
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::GenData {
            seed,
            num_notes,
            setting,
            out,
        } => gen_data(c, seed, num_notes, setting, &out),
        Command::Split {
            mode,
            train_frac,
            seed,
            data,
            out,
        } => split_cmd(c, mode, train_frac, seed, &data, &out),
        Command::Train {
            system,
            seed,
            data,
            split,
            out,
        } => train_cmd(c, system, seed, &data, &split, &out),
        Command::Eval {
            model,
            data,
            split,
            part,
            confusion_csv,
        } => eval_cmd(c, &model, &data, &split, &part, confusion_csv.as_deref()),
        Command::Gradcheck { seeds, tolerance } => gradcheck_cmd(c, seeds, tolerance),
        Command::RunMatrix { data, out, evidence } => run_matrix_cmd(c, &data, &out, evidence),
        Command::LfTokenize { lf, id } => lf_tokenize_cmd(c, lf, id),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
