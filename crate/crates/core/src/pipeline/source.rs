use crate::corpus::Corpus;
use crate::error::Result;
use crate::mlm::{init_model, pretrain, Checkpoint, MaskingPolicy, ModelConfig, TrainRun};
use crate::rng::{derive_seed, named_stream};
use crate::tokenizer::{train_bpe, BpeTokenizer};

type Trained = (Checkpoint, BpeTokenizer, Vec<(usize, f64)>);

/// Trains a tokenizer on `corpus`, then pretrains a fresh model on it.
/// `shape.vocab_size` is replaced by the tokenizer's size.
pub fn train_source_model(
    corpus: &Corpus,
    vocab_size: usize,
    shape: &ModelConfig,
    policy: &MaskingPolicy,
    run: &TrainRun,
) -> Result<Trained> {
    let tok = train_bpe(corpus, vocab_size)?;
    let cfg = ModelConfig {
        vocab_size: tok.vocab().len(),
        ..shape.clone()
    };
    let mut init = init_model(&cfg, derive_seed(run.seed, named_stream("init")))?;
    init.tokenizer_ref = Some(tok.fingerprint());
    let (ckpt, curve) = pretrain(&init, corpus, &tok, policy, run)?;
    Ok((ckpt, tok, curve))
}
