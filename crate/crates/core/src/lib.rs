//! Entity-enriched, multi-task extractive question answering over
//! clinical-style notes, built on a small self-contained tensor library.
//!
//! The pipeline: [`synth`] generates notes, paraphrase templates and logical
//! forms; [`text`] tokenizes, tags entities and encodes question/context
//! pairs; [`split`] builds paraphrase-level and random splits; [`model`] holds
//! the encoder, entity fusion and task heads; [`trainer`] runs experiments;
//! [`metrics`] scores them.

pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod split;
pub mod synth;
pub mod tensor_core;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
