//! Desk-scale text encoder: hashed n-gram tokens, one attention head, MLP head.

mod checkpoint;
mod model;
mod tokenizer;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use model::*;
pub use tokenizer::{Token, Tokenizer, TokenizerConfig, SEP, SEP_ID, SEQ_START, SEQ_START_ID};
