//! Encoder, entity fusion, task heads, losses and span decoding.

mod config;
mod fragments;
mod loss;
mod network;

pub use fragments::{check_all_fragments, check_fragment, FragmentCheck, FRAGMENTS};
pub use config::{ModelConfig, TaskMode};
pub use loss::{decode_span, evidence_loss, multitask_loss, weighted_objective, LossParts};
pub use network::{
    encode_entities, encode_tokens, fuse, fused_states, heads, transformer_block, Dropout, HeadOutputs, Model,
    ModelInput,
};
