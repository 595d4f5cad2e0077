//! Contrastive semantic-matching metric for evaluating generated text
//! against a reference, plus the evaluation harness around it.
//!
//! * [`tokenizer`]: GPT-2 byte-level BPE and a word-level fallback.
//! * [`model`]: embedding, context projection, conversion, pooling, cosine.
//! * [`training`]: margin loss, exact gradients, Adam, batch scheduling.
//! * [`data`]: JSONL corpora, dataset registries, triplet construction.
//! * [`eval`]: separation and human-agreement statistics, ROUGE baselines.
//! * [`attribution`]: Integrated-Gradients token attribution.
//! * [`checkpoint`]: the binary tensor container.

pub mod attribution;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
