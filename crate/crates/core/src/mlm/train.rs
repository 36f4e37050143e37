use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::checkpoint::Checkpoint;
use super::masking::{mask_batch, MaskedBatch, MaskingPolicy};
use super::model::{loss_and_grads, mlm_loss};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, named_stream, stream_rng};
use crate::tokenizer::{BpeTokenizer, BOS_ID, EOS_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub steps: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamHyper,
    pub seed: u64,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            steps: 200,
            batch_size: 16,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

/// `<s> tokens </s>`, truncated to `max_len`.
pub fn encode_text(tok: &BpeTokenizer, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids = tok.tokenize(text);
    ids.truncate(max_len.saturating_sub(2).max(1));
    let mut seq = Vec::with_capacity(ids.len() + 2);
    seq.push(BOS_ID);
    seq.extend(ids);
    seq.push(EOS_ID);
    seq.truncate(max_len);
    seq
}

/// Encodes every sentence, dropping those that yield no tokens.
pub fn encode_corpus(corpus: &Corpus, tok: &BpeTokenizer, max_len: usize) -> Vec<Vec<u32>> {
    corpus
        .sentences()
        .iter()
        .map(|s| encode_text(tok, s, max_len))
        .filter(|s| s.iter().any(|&t| t != BOS_ID && t != EOS_ID))
        .collect()
}

/// Masks a batch, redrawing until at least one position is selected.
fn mask_nonempty(batch: &[Vec<u32>], policy: &MaskingPolicy, vocab: usize, seed: u64) -> Result<MaskedBatch> {
    for attempt in 0..1000u64 {
        let m = mask_batch(batch, policy, vocab, derive_seed(seed, attempt))?;
        if m.num_selected() > 0 {
            return Ok(m);
        }
    }
    Err(Error::Data("batch has no maskable positions".into()))
}

/// Continued masked-LM training. Data order and masking depend only on
/// `run.seed`; the loss is recorded at every step.
pub fn pretrain(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    tok: &BpeTokenizer,
    policy: &MaskingPolicy,
    run: &TrainRun,
) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    if corpus.is_empty() {
        return Err(Error::Argument("cannot pretrain on an empty corpus".into()));
    }
    if run.batch_size == 0 {
        return Err(Error::Argument("batch_size must be positive".into()));
    }
    policy.validate()?;
    run.adam.validate()?;
    ckpt.validate()?;
    let vocab = ckpt.config.vocab_size;
    if tok.vocab().len() != vocab {
        return Err(Error::Config(format!(
            "tokenizer has {} tokens but the model vocabulary is {vocab}",
            tok.vocab().len()
        )));
    }
    let data = encode_corpus(corpus, tok, ckpt.config.max_seq_len);
    if data.is_empty() {
        return Err(Error::Data("corpus yields no trainable sequences".into()));
    }

    let mut out = ckpt.clone();
    let mut state = AdamState::new();
    let mut curve = Vec::with_capacity(run.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let data_stream = named_stream("data-order");
    let mask_stream = derive_seed(run.seed, named_stream("mlm-mask"));
    for step in 0..run.steps {
        let mut batch = Vec::with_capacity(run.batch_size);
        while batch.len() < run.batch_size {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(&mut stream_rng(derive_seed(run.seed, data_stream), epoch));
                epoch += 1;
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        let masked = mask_nonempty(&batch, policy, vocab, derive_seed(mask_stream, step as u64))?;
        let (loss, grads) = loss_and_grads(&out, &masked.inputs, &masked.labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at step {step}")));
        }
        adam_step(&mut out.tensors, &grads, &mut state, &run.adam)?;
        curve.push((step, loss));
    }
    Ok((out, curve))
}

/// Mean masked-LM loss over encoded sequences with a fixed masking draw.
pub fn heldout_loss(ckpt: &Checkpoint, data: &[Vec<u32>], policy: &MaskingPolicy, seed: u64) -> Result<f64> {
    let masked = mask_nonempty(data, policy, ckpt.config.vocab_size, seed)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (inputs, labels) in masked.inputs.chunks(32).zip(masked.labels.chunks(32)) {
        let n = labels.iter().flatten().filter(|l| l.is_some()).count();
        if n == 0 {
            continue;
        }
        total += mlm_loss(ckpt, inputs, labels)? * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[(usize, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("step,loss\n");
    for (s, l) in curve {
        out.push_str(&format!("{s},{l}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
