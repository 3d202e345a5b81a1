//! Hashed n-gram tokenizer.
//!
//! Text is split into alphanumeric words (optionally lowercased). Each
//! unigram and each bigram `"w1 w2"` (joined by one space) is hashed with
//! 64-bit FNV-1a and mapped to bucket `2 + hash % (buckets - 2)`. Ids 0 and 1
//! are reserved for the sequence-start and separator markers. An encoded
//! sequence is `[start] unigrams... bigrams... [sep]`, each group in text order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

pub const SEQ_START_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const SEQ_START: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub buckets: usize,
    pub ngram_orders: Vec<usize>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { lowercase: true, buckets: 4096, ngram_orders: vec![1, 2] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub id: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    config: TokenizerConfig,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig) -> Result<Self> {
        if config.buckets < 3 {
            return Err(Error::InvalidConfig(format!("need at least 3 hash buckets, got {}", config.buckets)));
        }
        if config.ngram_orders.is_empty() || config.ngram_orders.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad n-gram orders {:?}", config.ngram_orders)));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.buckets
    }

    pub fn words(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| if self.config.lowercase { w.to_lowercase() } else { w.to_string() })
            .collect()
    }

    pub fn bucket(&self, gram: &str) -> usize {
        2 + (fnv1a64(gram.as_bytes()) % (self.config.buckets as u64 - 2)) as usize
    }

    /// Full marked-up token sequence for `text`.
    pub fn encode(&self, text: &str) -> Vec<Token> {
        let words = self.words(text);
        let mut tokens = vec![Token { text: SEQ_START.to_string(), id: SEQ_START_ID }];
        for &n in &self.config.ngram_orders {
            for window in words.windows(n) {
                let gram = window.join(" ");
                let id = self.bucket(&gram);
                tokens.push(Token { text: gram, id });
            }
        }
        tokens.push(Token { text: SEP.to_string(), id: SEP_ID });
        tokens
    }

    pub fn encode_ids(&self, text: &str) -> Vec<usize> {
        self.encode(text).into_iter().map(|t| t.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_wrap_unigrams_then_bigrams() {
        let tok = Tokenizer::new(TokenizerConfig::default()).unwrap();
        let texts: Vec<String> = tok.encode("Iron, conducts HEAT").into_iter().map(|t| t.text).collect();
        assert_eq!(texts, ["[CLS]", "iron", "conducts", "heat", "iron conducts", "conducts heat", "[SEP]"]);
    }

    #[test]
    fn word_ids_avoid_reserved_slots() {
        let tok = Tokenizer::new(TokenizerConfig { buckets: 3, ..Default::default() }).unwrap();
        assert!(tok.encode_ids("a b c d").iter().skip(1).rev().skip(1).all(|&id| id == 2));
    }

    #[test]
    fn bucket_is_fnv_modulo() {
        let tok = Tokenizer::new(TokenizerConfig::default()).unwrap();
        // FNV-1a("foobar") = 0x85944171f73967e8
        assert_eq!(tok.bucket("foobar"), 2 + (0x8594_4171_f739_67e8_u64 % 4094) as usize);
    }

    #[test]
    fn empty_text_still_has_markers() {
        let tok = Tokenizer::new(TokenizerConfig::default()).unwrap();
        assert_eq!(tok.encode_ids("  ?! "), vec![SEQ_START_ID, SEP_ID]);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(Tokenizer::new(TokenizerConfig { buckets: 2, ..Default::default() }).is_err());
        assert!(Tokenizer::new(TokenizerConfig { ngram_orders: vec![], ..Default::default() }).is_err());
    }
}
