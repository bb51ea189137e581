use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{
    confusion_matrix, evidence_scores, lf_exact_scores, lf_relaxed_scores, span_em, token_f1, EvalReport, PerLf,
};
use crate::model::{decode_span, evidence_loss, multitask_loss, Dropout, Model, ModelConfig, TaskMode};
use crate::synth::{lf_inventory, QAExample};
use crate::tensor_core::{sigmoid, AdamState, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// Plain encoder: no entity path, no LF loss.
    Baseline,
    /// Entity-fused encoder trained on spans only.
    Fused,
    /// Entity-fused encoder with the LF loss.
    Multitask,
    /// Entity-fused evidence-sentence classifier; LF loss weight from the config.
    Evidence,
}

impl std::str::FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(System::Baseline),
            "fused" => Ok(System::Fused),
            "multitask" => Ok(System::Multitask),
            "evidence" => Ok(System::Evidence),
            _ => Err(Error::Config(format!("unknown system `{s}`"))),
        }
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("system serializes");
        f.write_str(s.as_str().expect("string variant"))
    }
}

impl System {
    /// Adjusts entity use, loss weight and task mode for this system.
    pub fn apply(self, config: &ModelConfig) -> ModelConfig {
        let mut c = config.clone();
        match self {
            System::Baseline => {
                c.use_entities = false;
                c.omega = 0.0;
                c.mode = TaskMode::Span;
            }
            System::Fused => {
                c.use_entities = true;
                c.omega = 0.0;
                c.mode = TaskMode::Span;
            }
            System::Multitask => {
                c.use_entities = true;
                c.mode = TaskMode::Span;
            }
            System::Evidence => {
                c.use_entities = true;
                c.mode = TaskMode::Evidence;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub system: System,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            weight_decay: 1e-5,
            warmup_frac: 0.1,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            patience: 3,
            system: System::Multitask,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("warmup_frac {} outside [0, 1)", self.warmup_frac)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.system == System::Multitask && model.omega <= 0.0 {
            return Err(Error::Config("the multitask system needs omega > 0".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak` over `warmup_frac` of training, then linear
/// decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, peak: f64, warmup_frac: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be positive".into()));
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warm = warmup_frac * total;
    Ok(if step < warm {
        peak * step / warm
    } else if total > warm {
        peak * (total - step) / (total - warm)
    } else {
        peak
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    /// Span loss, or evidence loss in evidence mode.
    pub l_span: f64,
    pub l_lf: Option<f64>,
    pub l_total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogEntry>,
    /// Validation score of the returned parameters after each evaluation.
    pub val_history: Vec<f64>,
    pub best_val: f64,
    pub steps: usize,
}

/// Loss for one sample; returns the tape-level total and components.
fn sample_loss(
    model: &Model,
    tape: &mut Tape,
    sample: &Sample,
    dropout: &mut Dropout,
) -> Result<Option<(Var, f64, Option<f64>)>> {
    let c = &model.config;
    let out = model.forward(tape, &sample.input, dropout)?;
    let gold_lf = Some(sample.lf);
    let parts = match c.mode {
        TaskMode::Span => {
            let Some(span) = sample.span else {
                return Ok(None);
            };
            multitask_loss(tape, &out, span, gold_lf, c.omega)?
        }
        TaskMode::Evidence => {
            let label = sample
                .evidence
                .ok_or_else(|| Error::Config("evidence mode needs labelled sentence pairs".into()))?;
            evidence_loss(tape, &out, label, gold_lf, c.omega)?
        }
    };
    Ok(Some((parts.total, parts.main, parts.lf)))
}

/// Accumulates gradients of the mean loss over `batch` into the model's
/// parameter buffers. Returns averaged (total, main, lf) values and the
/// number of samples that contributed.
pub fn batch_gradients(
    model: &mut Model,
    batch: &[&Sample],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, f64, Option<f64>, usize)> {
    let mode = model.config.mode;
    let usable: Vec<&&Sample> = batch
        .iter()
        .filter(|s| mode == TaskMode::Evidence || s.span.is_some())
        .collect();
    let scale = 1.0 / usable.len().max(1) as f64;
    let (mut total, mut main, mut lf_sum, mut has_lf) = (0.0, 0.0, 0.0, false);
    let mut rng = rng;
    for s in &usable {
        let mut dropout = Dropout {
            rate: model.config.dropout,
            rng: rng.as_deref_mut(),
        };
        let (grads, loss, m, lf) = {
            let mut tape = Tape::new(&model.params);
            let Some((loss, m, lf)) = sample_loss(model, &mut tape, s, &mut dropout)? else {
                continue;
            };
            (tape.backward(loss)?, tape.scalar(loss), m, lf)
        };
        model.params.accumulate(&grads, scale)?;
        total += loss * scale;
        main += m * scale;
        if let Some(l) = lf {
            lf_sum += l * scale;
            has_lf = true;
        }
    }
    Ok((total, main, has_lf.then_some(lf_sum), usable.len()))
}

/// Validation score used for model selection.
fn selection_score(report: &EvalReport, mode: TaskMode) -> f64 {
    match mode {
        TaskMode::Span => report.token_f1,
        TaskMode::Evidence => report.evidence.as_ref().map_or(0.0, |e| e.weighted.f1),
    }
}

pub struct TrainData<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub val_examples: &'a [QAExample],
}

/// Called with the model each time validation improves.
pub type OnImprove<'a> = &'a mut dyn FnMut(&Model) -> Result<()>;

/// Trains from `model`'s current parameters, evaluating on the validation
/// set after each epoch and returning the best parameters seen.
pub fn train(
    mut model: Model,
    data: TrainData,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
    mut on_improve: Option<OnImprove>,
) -> Result<TrainOutcome> {
    cfg.validate(&model.config)?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut log_file = match log_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let mut total_steps = cfg.epochs * steps_per_epoch;
    if let Some(m) = cfg.max_steps {
        total_steps = total_steps.min(m);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut adam = AdamState::new(&model.params)
        .with_lr(cfg.lr)
        .with_weight_decay(cfg.weight_decay);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut step = 0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total_steps {
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            model.params.zero_grad();
            let (total, main, lf, used) = batch_gradients(&mut model, &batch, Some(&mut dropout_rng))?;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            if used == 0 {
                continue;
            }
            let lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_frac)?;
            adam.step(&mut model.params, Some(lr))?;
            let entry = LogEntry {
                step,
                lr,
                l_span: main,
                l_lf: lf,
                l_total: total,
            };
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &entry)?;
                f.write_all(b"\n").map_err(|e| Error::io(log_path.unwrap(), e))?;
            }
            log.push(entry);
            step += 1;
        }
        let report = evaluate_samples(&model, data.val, data.val_examples)?;
        let score = selection_score(&report, model.config.mode);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model.params.clone()));
            since_best = 0;
            if let Some(cb) = on_improve.as_mut() {
                cb(&model)?;
            }
        } else {
            since_best += 1;
        }
        history.push(best.as_ref().map_or(score, |(b, _)| *b));
        if since_best >= cfg.patience {
            break;
        }
    }
    if let Some(f) = log_file.as_mut() {
        f.flush().map_err(|e| Error::io(log_path.unwrap(), e))?;
    }
    let (best_val, params) = match best {
        Some(b) => b,
        None => {
            let report = evaluate_samples(&model, data.val, data.val_examples)?;
            (selection_score(&report, model.config.mode), model.params.clone())
        }
    };
    model.params = params;
    for t in model.params.tensors_mut() {
        t.clear_grad();
    }
    Ok(TrainOutcome {
        model,
        log,
        val_history: history,
        best_val,
        steps: step,
    })
}

/// Model output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Predicted token span relative to the input, in span mode.
    pub span: Option<(usize, usize)>,
    pub lf: usize,
    pub evidence_prob: Option<f64>,
}

pub fn predict(model: &Model, sample: &Sample) -> Result<Prediction> {
    let mut tape = Tape::new(&model.params);
    let out = model.forward(&mut tape, &sample.input, &mut Dropout::off())?;
    let lf_logits = tape.value(out.lf_logits);
    let lf = lf_logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (span, evidence_prob) = match model.config.mode {
        TaskMode::Span => (
            Some(decode_span(
                tape.value(out.start_logits),
                tape.value(out.end_logits),
                model.config.max_answer_len,
            )?),
            None,
        ),
        TaskMode::Evidence => (None, out.evidence_logit.map(|v| sigmoid(tape.scalar(v)))),
    };
    Ok(Prediction { span, lf, evidence_prob })
}

/// Text of predicted token span within the example's context.
pub fn span_text(sample: &Sample, context: &str, span: (usize, usize)) -> String {
    let (s, e) = (span.0 - sample.context_start, span.1 - sample.context_start);
    context[sample.offsets[s].0..sample.offsets[e].1].to_string()
}

/// Scores `samples` (encoded from `examples`). LF metrics appear only when
/// the model trains its LF head.
pub fn evaluate_samples(model: &Model, samples: &[Sample], examples: &[QAExample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let c = &model.config;
    let mut report = EvalReport {
        n_examples: samples.len(),
        ..Default::default()
    };
    let (mut lf_pred, mut lf_gold) = (Vec::new(), Vec::new());
    let (mut ev_pred, mut ev_gold) = (Vec::new(), Vec::new());
    let mut per_lf: std::collections::BTreeMap<u32, PerLf> = Default::default();
    for s in samples {
        let p = predict(model, s)?;
        lf_pred.push(p.lf);
        lf_gold.push(s.lf);
        match c.mode {
            TaskMode::Span => {
                let ex = &examples[s.example];
                if s.span.is_none() {
                    report.dropped += 1;
                }
                let text = span_text(s, &ex.context_text(), p.span.expect("span mode"));
                let (em, f1) = (span_em(&text, &ex.answer.text), token_f1(&text, &ex.answer.text));
                report.em += em;
                report.token_f1 += f1;
                let entry = per_lf.entry(ex.lf_id).or_default();
                entry.n += 1;
                entry.em += em;
                entry.token_f1 += f1;
            }
            TaskMode::Evidence => {
                ev_pred.push(usize::from(p.evidence_prob.unwrap_or(0.0) >= 0.5));
                ev_gold.push(usize::from(s.evidence == Some(true)));
            }
        }
    }
    let n = samples.len() as f64;
    report.em /= n;
    report.token_f1 /= n;
    for v in per_lf.values_mut() {
        v.em /= v.n as f64;
        v.token_f1 /= v.n as f64;
    }
    report.per_lf = per_lf;
    if c.omega > 0.0 {
        report.lf_exact = Some(lf_exact_scores(&lf_pred, &lf_gold, c.num_lf_classes)?);
        report.lf_relaxed = Some(lf_relaxed_scores(&lf_pred, &lf_gold, &lf_inventory())?);
        report.confusion = Some(confusion_matrix(&lf_pred, &lf_gold, c.num_lf_classes));
    }
    if c.mode == TaskMode::Evidence {
        report.evidence = Some(evidence_scores(&ev_pred, &ev_gold)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let total = 1000;
        assert_eq!(lr_at(0, total, 2e-5, 0.1).unwrap(), 0.0);
        assert!((lr_at(100, total, 2e-5, 0.1).unwrap() - 2e-5).abs() < 1e-18);
        assert!((lr_at(550, total, 2e-5, 0.1).unwrap() - 1e-5).abs() < 1e-18);
        assert_eq!(lr_at(1000, total, 2e-5, 0.1).unwrap(), 0.0);
        assert!(lr_at(0, 0, 2e-5, 0.1).is_err());
        assert_eq!(lr_at(0, 10, 1.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn systems_configure_the_model() {
        let base = ModelConfig::small(10);
        assert!(!System::Baseline.apply(&base).use_entities);
        assert_eq!(System::Fused.apply(&base).omega, 0.0);
        assert_eq!(System::Multitask.apply(&base).omega, 0.3);
        assert_eq!(System::Evidence.apply(&base).mode, TaskMode::Evidence);
        assert_eq!("fused".parse::<System>().unwrap(), System::Fused);
        assert_eq!(System::Multitask.to_string(), "multitask");
        let cfg = TrainConfig {
            system: System::Multitask,
            ..Default::default()
        };
        assert!(cfg.validate(&ModelConfig { omega: 0.0, ..base }).is_err());
    }
}
