use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{named_stream, stream_rng};
use crate::tokenizer::{BOS_ID, EOS_ID, MASK_ID, NUM_SPECIALS, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingPolicy {
    pub mask_rate: f64,
    pub mask_token_frac: f64,
    pub random_token_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            mask_rate: 0.15,
            mask_token_frac: 0.8,
            random_token_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Argument(format!("mask_rate {} outside (0, 1)", self.mask_rate)));
        }
        let fracs = [self.mask_token_frac, self.random_token_frac, self.keep_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Argument("masking fractions must lie in [0, 1]".into()));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("masking fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub inputs: Vec<Vec<u32>>,
    /// Original id at selected positions, `None` elsewhere.
    pub labels: Vec<Vec<Option<u32>>>,
}

impl MaskedBatch {
    pub fn num_selected(&self) -> usize {
        self.labels.iter().flatten().filter(|l| l.is_some()).count()
    }
}

fn eligible(id: u32) -> bool {
    id != PAD_ID && id != BOS_ID && id != EOS_ID
}

/// Selects each non-pad, non-boundary position with probability `mask_rate`
/// and corrupts it: mask token, random non-special token, or unchanged.
pub fn mask_batch(batch: &[Vec<u32>], policy: &MaskingPolicy, vocab_size: usize, seed: u64) -> Result<MaskedBatch> {
    policy.validate()?;
    let mut rng = stream_rng(seed, named_stream("masking"));
    let mut inputs = batch.to_vec();
    let mut labels = Vec::with_capacity(batch.len());
    for seq in inputs.iter_mut() {
        let mut row = vec![None; seq.len()];
        for (tok, label) in seq.iter_mut().zip(row.iter_mut()) {
            if !eligible(*tok) || rng.random::<f64>() >= policy.mask_rate {
                continue;
            }
            *label = Some(*tok);
            let u: f64 = rng.random();
            if u < policy.mask_token_frac {
                *tok = MASK_ID;
            } else if u < policy.mask_token_frac + policy.random_token_frac {
                *tok = if vocab_size > NUM_SPECIALS {
                    rng.random_range(NUM_SPECIALS as u32..vocab_size as u32)
                } else {
                    MASK_ID
                };
            }
        }
        labels.push(row);
    }
    Ok(MaskedBatch { inputs, labels })
}
