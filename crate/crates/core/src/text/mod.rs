//! Corpus-built word vocabulary, tokenizer and transformer text encoder.

pub mod encoder;
pub mod tokenize;
pub mod vocab;

pub use encoder::{EncoderConfig, EncoderLayer, EncoderParams, FrozenEncoder, Pooling, TextEmbedder};
pub use tokenize::{split_tokens, tokenize, Encoded, Token};
pub use vocab::{build_vocab, Vocab, PAD, PAD_ID, UNK, UNK_ID};
