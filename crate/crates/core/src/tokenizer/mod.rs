//! Subword vocabularies, deterministic BPE, and vocabulary extension.

mod bpe;
mod overlap;
mod vocab;

pub use bpe::{min_vocab_size, train_bpe, BpeTokenizer, UNK_GLYPH, WORD_BOUNDARY};
pub use overlap::{extend_vocabulary, overlap_report, OverlapMap, OverlapReport};
pub use vocab::{
    Vocabulary, BOS_ID, EOS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SPECIAL_TOKENS, UNK_ID,
};
