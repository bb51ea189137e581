//! Token encoder, entity encoder, fusion layer and the three heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, TaskMode};
use crate::error::{Error, Result};
use crate::tensor_core::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::EncodedPair;

/// One unpadded input sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub entity_ids: Vec<usize>,
    /// False at padding positions, which are excluded as attention keys.
    pub attention_mask: Vec<bool>,
    /// True at positions eligible as answer boundaries.
    pub context_mask: Vec<bool>,
}

impl ModelInput {
    /// Drops padding; masked positions never influence real ones.
    pub fn from_pair(pair: &EncodedPair) -> Self {
        let n = pair.active_len();
        ModelInput {
            token_ids: pair.token_ids[..n].to_vec(),
            segment_ids: pair.segment_ids[..n].to_vec(),
            entity_ids: pair.entity_ids[..n].to_vec(),
            attention_mask: vec![true; n],
            context_mask: pair.context_mask()[..n].to_vec(),
        }
    }

    /// Keeps the padding; results on real positions match [`Self::from_pair`].
    pub fn from_pair_padded(pair: &EncodedPair) -> Self {
        ModelInput {
            token_ids: pair.token_ids.clone(),
            segment_ids: pair.segment_ids.clone(),
            entity_ids: pair.entity_ids.clone(),
            attention_mask: pair.attention_mask.clone(),
            context_mask: pair.context_mask(),
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Outputs of one forward pass, as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `[1×L]`, negative infinity outside the context.
    pub start_logits: Var,
    pub end_logits: Var,
    /// `[1×C]` from the pooled first position.
    pub lf_logits: Var,
    /// `[1×1]`, evidence mode only.
    pub evidence_logit: Option<Var>,
}

/// Dropout masks drawn from `rng`; inert when `rng` is absent.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let rate = self.rate;
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let n = tape.value(x).len();
                let factors = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
                tape.mul_const(x, factors)
            }
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn truncated_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    std: f64,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let t = truncated_normal(&mut self.rng, shape, self.std);
        self.store.insert(name, t).map(|_| ())
    }

    fn constant(&mut self, name: &str, n: usize, value: f64) -> Result<()> {
        self.store.insert(name, Tensor::new(vec![n], vec![value; n])?).map(|_| ())
    }

    fn block(&mut self, prefix: &str, d: usize, ffn: usize) -> Result<()> {
        self.constant(&format!("{prefix}.ln1.gamma"), d, 1.0)?;
        self.constant(&format!("{prefix}.ln1.beta"), d, 0.0)?;
        for w in ["q", "k", "v", "o"] {
            self.normal(&format!("{prefix}.attn.w{w}"), &[d, d])?;
            self.constant(&format!("{prefix}.attn.b{w}"), d, 0.0)?;
        }
        self.constant(&format!("{prefix}.ln2.gamma"), d, 1.0)?;
        self.constant(&format!("{prefix}.ln2.beta"), d, 0.0)?;
        self.normal(&format!("{prefix}.ffn.w1"), &[d, ffn])?;
        self.constant(&format!("{prefix}.ffn.b1"), ffn, 0.0)?;
        self.normal(&format!("{prefix}.ffn.w2"), &[ffn, d])?;
        self.constant(&format!("{prefix}.ffn.b2"), d, 0.0)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.hidden_dim;
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: c.init_std,
        };
        init.normal("embed.token", &[c.vocab_size, d])?;
        init.normal("embed.segment", &[2, d])?;
        init.normal("embed.position", &[c.max_seq_len, d])?;
        for l in 0..c.layers {
            init.block(&format!("encoder.{l}"), d, c.ffn_dim)?;
        }
        init.constant("encoder.ln_f.gamma", d, 1.0)?;
        init.constant("encoder.ln_f.beta", d, 0.0)?;
        if c.use_entities {
            let de = c.entity_dim;
            init.normal("entity.embed", &[c.entity_vocab_size, de])?;
            for l in 0..c.entity_attention_layers {
                init.block(&format!("entity.{l}"), de, 2 * de)?;
            }
            init.constant("entity.ln_f.gamma", de, 1.0)?;
            init.constant("entity.ln_f.beta", de, 0.0)?;
            init.normal("fusion.w_e", &[de, d])?;
        }
        init.normal("fusion.w_t", &[d, d])?;
        init.constant("fusion.b", d, 0.0)?;
        init.normal("span.w", &[d, 2])?;
        init.constant("span.b", 2, 0.0)?;
        init.normal("pool.w", &[d, d])?;
        init.constant("pool.b", d, 0.0)?;
        init.normal("lf.w", &[d, c.num_lf_classes])?;
        init.constant("lf.b", c.num_lf_classes, 0.0)?;
        if c.mode == TaskMode::Evidence {
            init.normal("evidence.w", &[d, 1])?;
            init.constant("evidence.b", 1, 0.0)?;
        }
        Ok(Model { config, params: store })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let expected = Model::new(config.clone(), 0)?;
        for (_, name, t) in expected.params.iter() {
            match params.by_name(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Integrity(format!(
                        "parameter `{name}` has shape {:?}, config expects {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Integrity(format!("checkpoint lacks parameter `{name}`"))),
            }
        }
        if params.len() != expected.params.len() {
            return Err(Error::Integrity("checkpoint holds parameters the config does not define".into()));
        }
        Ok(Model { config, params })
    }

    pub fn param_id(&self, name: &str) -> Result<ParamId> {
        self.params
            .id(name)
            .ok_or_else(|| Error::Internal(format!("missing parameter `{name}`")))
    }

    pub fn forward(&self, tape: &mut Tape, input: &ModelInput, dropout: &mut Dropout) -> Result<HeadOutputs> {
        let fused = fused_states(&self.params, &self.config, tape, input, dropout)?;
        heads(&self.params, &self.config, tape, fused, &input.context_mask)
    }
}

fn p(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Internal(format!("missing parameter `{name}`")))?;
    Ok(tape.param(id))
}

fn linear(tape: &mut Tape, store: &ParamStore, x: Var, w: &str, b: &str) -> Result<Var> {
    let w = p(tape, store, w)?;
    let b = p(tape, store, b)?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn layer_norm(tape: &mut Tape, store: &ParamStore, x: Var, prefix: &str, eps: f64) -> Result<Var> {
    let g = p(tape, store, &format!("{prefix}.gamma"))?;
    let b = p(tape, store, &format!("{prefix}.beta"))?;
    tape.layer_norm(x, g, b, eps)
}

/// Pre-norm self-attention block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
pub fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    heads: usize,
    mask: &[bool],
    eps: f64,
    dropout: &mut Dropout,
) -> Result<Var> {
    let h = layer_norm(tape, store, x, &format!("{prefix}.ln1"), eps)?;
    let mut qkv = [h; 3];
    for (slot, w) in qkv.iter_mut().zip(["q", "k", "v"]) {
        let y = linear(tape, store, h, &format!("{prefix}.attn.w{w}"), &format!("{prefix}.attn.b{w}"))?;
        *slot = tape.split_heads(y, heads)?;
    }
    let a = tape.attention(qkv[0], qkv[1], qkv[2], mask)?;
    let a = tape.merge_heads(a)?;
    let a = linear(tape, store, a, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"))?;
    let a = dropout.apply(tape, a)?;
    let x = tape.add(x, a)?;
    let h = layer_norm(tape, store, x, &format!("{prefix}.ln2"), eps)?;
    let f = linear(tape, store, h, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
    let f = tape.gelu(f);
    let f = linear(tape, store, f, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))?;
    let f = dropout.apply(tape, f)?;
    tape.add(x, f)
}

fn check_input(config: &ModelConfig, input: &ModelInput) -> Result<()> {
    let l = input.len();
    if l == 0 {
        return Err(Error::Dimension("empty input sequence".into()));
    }
    if l > config.max_seq_len {
        return Err(Error::Dimension(format!(
            "sequence of {l} tokens exceeds {} learned positions",
            config.max_seq_len
        )));
    }
    if [input.segment_ids.len(), input.entity_ids.len(), input.attention_mask.len(), input.context_mask.len()]
        .iter()
        .any(|&n| n != l)
    {
        return Err(Error::Dimension("input fields differ in length".into()));
    }
    Ok(())
}

/// Token states `[L×d]` after embeddings, the encoder stack and a final norm.
pub fn encode_tokens(
    store: &ParamStore,
    config: &ModelConfig,
    tape: &mut Tape,
    input: &ModelInput,
    dropout: &mut Dropout,
) -> Result<Var> {
    check_input(config, input)?;
    let l = input.len();
    let tok = p(tape, store, "embed.token")?;
    let seg = p(tape, store, "embed.segment")?;
    let pos = p(tape, store, "embed.position")?;
    let t = tape.gather(tok, &input.token_ids)?;
    let s = tape.gather(seg, &input.segment_ids)?;
    let positions: Vec<usize> = (0..l).collect();
    let q = tape.gather(pos, &positions)?;
    let x = tape.add(t, s)?;
    let x = tape.add(x, q)?;
    let mut x = dropout.apply(tape, x)?;
    for layer in 0..config.layers {
        x = transformer_block(
            tape,
            store,
            &format!("encoder.{layer}"),
            x,
            config.heads,
            &input.attention_mask,
            config.layer_norm_eps,
            dropout,
        )?;
    }
    layer_norm(tape, store, x, "encoder.ln_f", config.layer_norm_eps)
}

/// Entity states `[L×d_e]`: type embedding lookup and self-attention blocks.
pub fn encode_entities(
    store: &ParamStore,
    config: &ModelConfig,
    tape: &mut Tape,
    entity_ids: &[usize],
    attention_mask: &[bool],
    dropout: &mut Dropout,
) -> Result<Var> {
    if let Some(bad) = entity_ids.iter().find(|&&e| e >= config.entity_vocab_size) {
        return Err(Error::Index(format!(
            "entity id {bad} outside 0..{}",
            config.entity_vocab_size
        )));
    }
    let table = p(tape, store, "entity.embed")?;
    let mut e = tape.gather(table, entity_ids)?;
    for layer in 0..config.entity_attention_layers {
        e = transformer_block(
            tape,
            store,
            &format!("entity.{layer}"),
            e,
            config.entity_heads,
            attention_mask,
            config.layer_norm_eps,
            dropout,
        )?;
    }
    layer_norm(tape, store, e, "entity.ln_f", config.layer_norm_eps)
}

/// `h = GELU(W_t w + b)` everywhere, plus `W_e e` where `flags` is 1.
pub fn fuse(tape: &mut Tape, store: &ParamStore, tokens: Var, entities: Option<(Var, Vec<f64>)>) -> Result<Var> {
    let wt = p(tape, store, "fusion.w_t")?;
    let b = p(tape, store, "fusion.b")?;
    let mut pre = tape.matmul(tokens, wt)?;
    if let Some((e, flags)) = entities {
        let we = p(tape, store, "fusion.w_e")?;
        let proj = tape.matmul(e, we)?;
        let gated = tape.scale_rows(proj, flags)?;
        pre = tape.add(pre, gated)?;
    }
    let pre = tape.add_row(pre, b)?;
    Ok(tape.gelu(pre))
}

pub fn fused_states(
    store: &ParamStore,
    config: &ModelConfig,
    tape: &mut Tape,
    input: &ModelInput,
    dropout: &mut Dropout,
) -> Result<Var> {
    let tokens = encode_tokens(store, config, tape, input, dropout)?;
    let entities = if config.use_entities {
        let e = encode_entities(store, config, tape, &input.entity_ids, &input.attention_mask, dropout)?;
        let flags = input.entity_ids.iter().map(|&id| f64::from(id != 0)).collect();
        Some((e, flags))
    } else {
        None
    };
    let h = fuse(tape, store, tokens, entities)?;
    dropout.apply(tape, h)
}

pub fn heads(
    store: &ParamStore,
    config: &ModelConfig,
    tape: &mut Tape,
    fused: Var,
    context_mask: &[bool],
) -> Result<HeadOutputs> {
    if !context_mask.iter().any(|&m| m) && config.mode == TaskMode::Span {
        return Err(Error::Decode("context mask selects no positions".into()));
    }
    let span = linear(tape, store, fused, "span.w", "span.b")?;
    let start = tape.select_col(span, 0)?;
    let end = tape.select_col(span, 1)?;
    let start_logits = tape.mask_fill(start, context_mask)?;
    let end_logits = tape.mask_fill(end, context_mask)?;
    let cls = tape.select_row(fused, 0)?;
    let pooled = linear(tape, store, cls, "pool.w", "pool.b")?;
    let pooled = tape.tanh(pooled);
    let lf_logits = linear(tape, store, pooled, "lf.w", "lf.b")?;
    let evidence_logit = match config.mode {
        TaskMode::Evidence => Some(linear(tape, store, pooled, "evidence.w", "evidence.b")?),
        TaskMode::Span => None,
    };
    Ok(HeadOutputs {
        start_logits,
        end_logits,
        lf_logits,
        evidence_logit,
    })
}
