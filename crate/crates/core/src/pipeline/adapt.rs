use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlm::Checkpoint;
use crate::ofa::{
    factorize, informed_init, random_init, source_embedding, subword_external_vectors, transplant,
    ExternalEmbeddings, FactorizedEmbedding, InitReport, NewEmbeddings,
};
use crate::tokenizer::{extend_vocabulary, BpeTokenizer, OverlapMap};

/// Embedding initialization for tokens the source model has never seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Random,
    Ofa,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Random => "random",
            InitScheme::Ofa => "ofa",
        }
    }
}

/// Source vocabulary extended with the target tokenizer's novel tokens,
/// segmenting with the target merges.
pub fn merged_tokenizer(source_tok: &BpeTokenizer, target_tok: &BpeTokenizer) -> Result<(BpeTokenizer, OverlapMap)> {
    let (merged, _) = extend_vocabulary(source_tok.vocab(), target_tok)?;
    let tok = target_tok.with_vocabulary(merged)?;
    let map = OverlapMap::between(source_tok.vocab(), tok.vocab())?;
    Ok((tok, map))
}

/// New embedding rows for `merged_tok`. `latent_dim` defaults to the model
/// width; `external` is required for [`InitScheme::Ofa`].
#[allow(clippy::too_many_arguments)]
pub fn initialize(
    source: &Checkpoint,
    source_tok: &BpeTokenizer,
    merged_tok: &BpeTokenizer,
    map: &OverlapMap,
    scheme: InitScheme,
    external: Option<&ExternalEmbeddings>,
    latent_dim: Option<usize>,
    neighbors: usize,
    seed: u64,
) -> Result<(NewEmbeddings, InitReport)> {
    if source_tok.vocab().len() != source.config.vocab_size {
        return Err(Error::Config(format!(
            "source tokenizer has {} tokens, checkpoint expects {}",
            source_tok.vocab().len(),
            source.config.vocab_size
        )));
    }
    let e = source_embedding(source)?;
    match scheme {
        InitScheme::Random => {
            let (m, report) = random_init(&e, merged_tok.vocab(), map, seed)?;
            Ok((NewEmbeddings::Full(m), report))
        }
        InitScheme::Ofa => {
            let ext = external.ok_or_else(|| Error::Config("ofa initialization needs external word vectors".into()))?;
            let fe = factorize(&e, latent_dim.unwrap_or(source.config.dim))?;
            let src_ext = subword_external_vectors(ext, source_tok);
            let tgt_ext = subword_external_vectors(ext, merged_tok);
            let out = informed_init(&fe, map, &src_ext, &tgt_ext, neighbors, seed)?;
            let fe_new = FactorizedEmbedding {
                coords: out.coords,
                primitives: fe.primitives,
                singular_values: fe.singular_values,
            };
            Ok((NewEmbeddings::Factorized(fe_new), out.report))
        }
    }
}

/// Source checkpoint moved onto the merged vocabulary.
pub struct Adapted {
    pub checkpoint: Checkpoint,
    pub tokenizer: BpeTokenizer,
    pub report: InitReport,
}

/// Merge, initialize and transplant in one go.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    source: &Checkpoint,
    source_tok: &BpeTokenizer,
    target_tok: &BpeTokenizer,
    scheme: InitScheme,
    external: Option<&ExternalEmbeddings>,
    latent_dim: Option<usize>,
    neighbors: usize,
    seed: u64,
) -> Result<Adapted> {
    let (tokenizer, map) = merged_tokenizer(source_tok, target_tok)?;
    let (emb, report) = initialize(source, source_tok, &tokenizer, &map, scheme, external, latent_dim, neighbors, seed)?;
    let checkpoint = transplant(source, emb, &tokenizer)?;
    Ok(Adapted {
        checkpoint,
        tokenizer,
        report,
    })
}
