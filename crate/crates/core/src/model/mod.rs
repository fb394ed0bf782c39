//! The generator: shared encoder, autoregressive decoder, classification
//! head over (query, passage) and (query, pseudo-answer) cross-attention,
//! and low-rank adapters.

mod infer;
mod lora;
mod network;
mod pack;
mod vocab;

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use infer::{ClsPrediction, EncoderStates, GenerationOutput};
pub use lora::{lora_attach, lora_merge};
pub use network::{E2eModel, ExampleLoss};
pub use pack::{cls_targets, pack_input, pack_query_context, FieldedInput, Mode, SpanMap};
pub use vocab::{Vocab, EOS, PAD, SEP, UNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Filled from the vocabulary when the model is built.
    pub vocab_size: usize,
    pub d_model: usize,
    /// Feature width used to scale the classification cross-attention and
    /// as the classification FFN hidden width.
    pub d_k: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    /// Learned query/key/value projections inside the classification
    /// cross-attention (off: raw encoder states).
    pub cls_projections: bool,
    /// One FFN for both the passage and the pseudo-answer branch.
    pub share_cls_ffn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 32,
            d_k: 32,
            d_ff: 64,
            n_heads: 2,
            n_layers_enc: 2,
            n_layers_dec: 2,
            max_input_len: 128,
            max_output_len: 16,
            cls_projections: false,
            share_cls_ffn: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("d_k", self.d_k),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("n_layers_enc", self.n_layers_enc),
            ("n_layers_dec", self.n_layers_dec),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= UNK {
            return Err(Error::Config("vocab_size must exceed the reserved tokens".into()));
        }
        Ok(())
    }
}
