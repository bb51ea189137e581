//! Finite-difference checks of the model's building blocks on tiny shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::config::{ModelConfig, TaskMode};
use super::loss::{evidence_loss, multitask_loss};
use super::network::{encode_entities, encode_tokens, fuse, heads, Dropout, Model, ModelInput};
use crate::error::Result;
use crate::tensor_core::{gradcheck, GradcheckReport, ParamStore, Tape, Tensor, Var};

pub const FRAGMENTS: [&str; 6] = ["fusion", "entity_encoder", "encoder", "span_head", "lf_head", "evidence_head"];

#[derive(Clone, Debug, Serialize)]
pub struct FragmentCheck {
    pub fragment: String,
    pub seed: u64,
    pub report: GradcheckReport,
}

impl FragmentCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn tiny_config(mode: TaskMode) -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        hidden_dim: 8,
        layers: 2,
        heads: 2,
        ffn_dim: 12,
        max_seq_len: 8,
        entity_dim: 6,
        entity_heads: 2,
        entity_attention_layers: 1,
        num_lf_classes: 4,
        dropout: 0.0,
        layer_norm_eps: 1e-5,
        mode,
        ..ModelConfig::default()
    }
}

/// Parameters of `model` whose names start with one of `prefixes`, with
/// every value redrawn so biases and norm gains are exercised too.
fn sub_store(model: &Model, prefixes: &[&str], rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    let normal = Normal::new(0.0, 0.4).expect("valid std");
    let mut store = ParamStore::new();
    for (_, name, t) in model.params.iter() {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            let data: Vec<f64> = (0..t.numel()).map(|_| normal.sample(rng)).collect();
            store.insert(name, Tensor::new(t.shape().to_vec(), data)?)?;
        }
    }
    Ok(store)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// `Σ r_ij · x_ij` for fixed random weights `r`, so every output element
/// contributes a distinct gradient.
fn projection_loss(tape: &mut Tape, x: Var, weights: &[f64]) -> Result<Var> {
    let y = tape.mul_const(x, weights.to_vec())?;
    Ok(tape.sum(y))
}

fn sample_input(rng: &mut ChaCha8Rng, c: &ModelConfig, len: usize) -> ModelInput {
    let q_len = 2;
    let token_ids = (0..len).map(|_| rng.random_range(4..c.vocab_size)).collect();
    let segment_ids = (0..len).map(|i| usize::from(i > q_len)).collect();
    let entity_ids = (0..len)
        .map(|_| if rng.random_bool(0.5) { rng.random_range(1..c.entity_vocab_size) } else { 0 })
        .collect();
    // last position is padding
    let attention_mask = (0..len).map(|i| i + 1 < len).collect();
    let context_mask = (0..len).map(|i| i > q_len && i + 2 < len).collect();
    ModelInput {
        token_ids,
        segment_ids,
        entity_ids,
        attention_mask,
        context_mask,
    }
}

/// Runs one fragment check; `fragment` is one of [`FRAGMENTS`].
pub fn check_fragment(fragment: &str, seed: u64, tolerance: f64) -> Result<FragmentCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = if fragment == "evidence_head" { TaskMode::Evidence } else { TaskMode::Span };
    let c = tiny_config(mode);
    let model = Model::new(c.clone(), seed)?;
    let len = c.max_seq_len;
    let input = sample_input(&mut rng, &c, len);
    let d = c.hidden_dim;
    let report = match fragment {
        // `lookup` shares names and ids with `store` and resolves parameter
        // names while the checker holds `store` mutably.
        "fusion" => {
            let mut store = sub_store(&model, &["fusion."], &mut rng)?;
            let tokens = random_matrix(&mut rng, len, d)?;
            let ents = random_matrix(&mut rng, len, c.entity_dim)?;
            let flags: Vec<f64> = input.entity_ids.iter().map(|&e| f64::from(e != 0)).collect();
            let w = random_matrix(&mut rng, len, d)?.into_data();
            let lookup = store.clone();
            gradcheck(
                &mut store,
                |tape| {
                    let t = tape.constant(&tokens);
                    let e = tape.constant(&ents);
                    let h = fuse(tape, &lookup, t, Some((e, flags.clone())))?;
                    projection_loss(tape, h, &w)
                },
                tolerance,
            )?
        }
        "entity_encoder" => {
            let mut store = sub_store(&model, &["entity."], &mut rng)?;
            let w = random_matrix(&mut rng, len, c.entity_dim)?.into_data();
            let lookup = store.clone();
            gradcheck(
                &mut store,
                |tape| {
                    let e = encode_entities(
                        &lookup,
                        &c,
                        tape,
                        &input.entity_ids,
                        &input.attention_mask,
                        &mut Dropout::off(),
                    )?;
                    projection_loss(tape, e, &w)
                },
                tolerance,
            )?
        }
        "encoder" => {
            let mut store = sub_store(&model, &["embed.", "encoder."], &mut rng)?;
            let w = random_matrix(&mut rng, len, d)?.into_data();
            let lookup = store.clone();
            gradcheck(
                &mut store,
                |tape| {
                    let h = encode_tokens(&lookup, &c, tape, &input, &mut Dropout::off())?;
                    projection_loss(tape, h, &w)
                },
                tolerance,
            )?
        }
        "span_head" | "lf_head" | "evidence_head" => {
            let mut store = sub_store(&model, &["span.", "pool.", "lf.", "evidence."], &mut rng)?;
            let fused = random_matrix(&mut rng, len, d)?;
            let gold_lf = rng.random_range(0..c.num_lf_classes);
            let lookup = store.clone();
            let omega = match fragment {
                "span_head" => 0.0,
                "lf_head" => 1.0,
                _ => 0.3,
            };
            gradcheck(
                &mut store,
                |tape| {
                    let f = tape.constant(&fused);
                    let out = heads(&lookup, &c, tape, f, &input.context_mask)?;
                    let parts = if mode == TaskMode::Evidence {
                        evidence_loss(tape, &out, true, Some(gold_lf), omega)?
                    } else {
                        multitask_loss(tape, &out, (3, 4), Some(gold_lf), omega)?
                    };
                    Ok(parts.total)
                },
                tolerance,
            )?
        }
        other => {
            return Err(crate::error::Error::Config(format!(
                "unknown fragment `{other}`, expected one of {FRAGMENTS:?}"
            )))
        }
    };
    Ok(FragmentCheck {
        fragment: fragment.to_string(),
        seed,
        report,
    })
}

/// Checks every fragment for each seed.
pub fn check_all_fragments(seeds: &[u64], tolerance: f64) -> Result<Vec<FragmentCheck>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for f in FRAGMENTS {
            out.push(check_fragment(f, seed, tolerance)?);
        }
    }
    Ok(out)
}
