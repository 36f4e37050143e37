use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::bpe::BpeTokenizer;
use super::vocab::{Vocabulary, NUM_SPECIALS};
use crate::error::{Error, Result};

/// How the tokens of a target vocabulary relate to a source vocabulary.
///
/// `shared` and `novel` partition the non-special target ids; the specials
/// map to each other by position (and therefore by name).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMap {
    pub shared: BTreeMap<u32, u32>,
    pub novel: BTreeSet<u32>,
    pub target_len: usize,
    pub source_len: usize,
}

impl OverlapMap {
    /// Matches target tokens to source tokens by string equality.
    pub fn between(source: &Vocabulary, target: &Vocabulary) -> Result<Self> {
        check_specials(source, target)?;
        let mut shared = BTreeMap::new();
        let mut novel = BTreeSet::new();
        for (tid, tok) in target.tokens().iter().enumerate().skip(NUM_SPECIALS) {
            match source.id(tok) {
                Some(sid) => {
                    shared.insert(tid as u32, sid);
                }
                None => {
                    novel.insert(tid as u32);
                }
            }
        }
        Ok(OverlapMap {
            shared,
            novel,
            target_len: target.len(),
            source_len: source.len(),
        })
    }

    /// Source id whose row a target id inherits, if any. Specials map to themselves.
    pub fn source_of(&self, target_id: u32) -> Option<u32> {
        if (target_id as usize) < NUM_SPECIALS {
            Some(target_id)
        } else {
            self.shared.get(&target_id).copied()
        }
    }
}

fn check_specials(source: &Vocabulary, target: &Vocabulary) -> Result<()> {
    if source.specials() != target.specials() {
        return Err(Error::Config(format!(
            "special tokens differ: source {:?}, target {:?}",
            source.specials(),
            target.specials()
        )));
    }
    Ok(())
}

/// Appends the target tokenizer's novel tokens to the source vocabulary.
///
/// Source ids are never reassigned; novel tokens follow in target-id order.
/// The returned map relates the target tokenizer's own ids to source ids.
pub fn extend_vocabulary(source: &Vocabulary, target_tok: &BpeTokenizer) -> Result<(Vocabulary, OverlapMap)> {
    let map = OverlapMap::between(source, target_tok.vocab())?;
    let mut merged = source.clone();
    for &tid in &map.novel {
        let tok = target_tok.vocab().token(tid).expect("novel id in range");
        merged.push(tok.to_string());
    }
    Ok((merged, map))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapReport {
    pub shared_count: usize,
    pub novel_count: usize,
    pub overlap_ratio: f64,
}

pub fn overlap_report(map: &OverlapMap) -> OverlapReport {
    let shared_count = map.shared.len();
    let novel_count = map.novel.len();
    let total = shared_count + novel_count;
    OverlapReport {
        shared_count,
        novel_count,
        overlap_ratio: if total == 0 {
            0.0
        } else {
            shared_count as f64 / total as f64
        },
    }
}
