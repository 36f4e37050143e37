use super::factorize::{reconstruct, EmbeddingMatrix, FactorizedEmbedding};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlm::{is_embedding_tensor, Checkpoint, Tensor, TOKEN_EMBEDDING};
use crate::tokenizer::BpeTokenizer;

/// Embeddings for the target vocabulary, either assembled or still factorized.
#[derive(Debug, Clone)]
pub enum NewEmbeddings {
    Full(EmbeddingMatrix),
    Factorized(FactorizedEmbedding),
}

impl NewEmbeddings {
    fn assemble(self) -> Result<EmbeddingMatrix> {
        match self {
            NewEmbeddings::Full(e) => Ok(e),
            NewEmbeddings::Factorized(fe) => reconstruct(&fe),
        }
    }
}

/// The token embedding of a checkpoint as an [`EmbeddingMatrix`].
pub fn source_embedding(ckpt: &Checkpoint) -> Result<EmbeddingMatrix> {
    let t = ckpt.tensor(TOKEN_EMBEDDING)?;
    let mut e = EmbeddingMatrix::new(Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone())?)?;
    e.vocab_ref = ckpt.tokenizer_ref.clone();
    Ok(e)
}

/// Swaps in new token embeddings and the target tokenizer, keeping every
/// non-embedding tensor. The result always has tied embeddings.
pub fn transplant(source: &Checkpoint, new_embeddings: NewEmbeddings, target_tok: &BpeTokenizer) -> Result<Checkpoint> {
    let e = new_embeddings.assemble()?;
    let dim = source.config.dim;
    let vocab = target_tok.vocab().len();
    if e.dim() != dim || e.rows() != vocab {
        return Err(Error::Config(format!(
            "embedding shape mismatch: expected [{vocab}, {dim}] (target vocabulary × model dim), got [{}, {}]",
            e.rows(),
            e.dim()
        )));
    }
    let mut config = source.config.clone();
    config.vocab_size = vocab;
    config.tie_embeddings = true;
    let mut tensors = source.tensors.clone();
    tensors.retain(|name, _| !is_embedding_tensor(name));
    tensors.insert(
        TOKEN_EMBEDDING.to_string(),
        Tensor {
            shape: vec![vocab, dim],
            data: e.values.into_data(),
        },
    );
    let out = Checkpoint {
        config,
        tensors,
        tokenizer_ref: Some(target_tok.fingerprint()),
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Origin};
    use crate::mlm::{forward, init_model, ModelConfig};
    use crate::ofa::factorize;
    use crate::tokenizer::train_bpe;

    fn setup() -> (Checkpoint, BpeTokenizer) {
        let c = Corpus::from_lines("x", Origin::Natural, ["ngeve alwa kilumbu", "mbote alwa ngeve"]);
        let tok = train_bpe(&c, 30).unwrap();
        let cfg = ModelConfig::new(tok.vocab().len(), 8, 1, 2, 16);
        let mut ckpt = init_model(&cfg, 3).unwrap();
        ckpt.tokenizer_ref = Some(tok.fingerprint());
        (ckpt, tok)
    }

    #[test]
    fn identity_transplant_keeps_logits() {
        let (ckpt, tok) = setup();
        let out = transplant(&ckpt, NewEmbeddings::Full(source_embedding(&ckpt).unwrap()), &tok).unwrap();
        for (name, t) in &ckpt.tensors {
            assert_eq!(&out.tensors[name], t, "{name}");
        }
        let batch = vec![tok.tokenize("mbote alwa ngeve")];
        let pos: Vec<_> = (0..batch[0].len()).map(|i| (0, i)).collect();
        let a = forward(&ckpt, &batch, &pos).unwrap();
        let b = forward(&out, &batch, &pos).unwrap();
        for (x, y) in a.logits.iter().flatten().zip(b.logits.iter().flatten()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn factorized_full_rank_matches_source() {
        let (ckpt, tok) = setup();
        let fe = factorize(&source_embedding(&ckpt).unwrap(), 8).unwrap();
        let out = transplant(&ckpt, NewEmbeddings::Factorized(fe), &tok).unwrap();
        let a = &ckpt.tensors[TOKEN_EMBEDDING].data;
        let b = &out.tensors[TOKEN_EMBEDDING].data;
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let (ckpt, tok) = setup();
        let e = EmbeddingMatrix::new(Matrix::zeros(tok.vocab().len(), 4)).unwrap();
        let err = transplant(&ckpt, NewEmbeddings::Full(e), &tok).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("[") && m.contains(", 4]")), "{err}");
    }

    #[test]
    fn untied_source_is_retied() {
        let (ckpt, tok) = setup();
        let mut cfg = ckpt.config.clone();
        cfg.tie_embeddings = false;
        let untied = init_model(&cfg, 1).unwrap();
        let out = transplant(&untied, NewEmbeddings::Full(source_embedding(&untied).unwrap()), &tok).unwrap();
        assert!(out.config.tie_embeddings);
        assert!(!out.tensors.contains_key(crate::mlm::OUTPUT_EMBEDDING));
        assert_eq!(out.tokenizer_ref, Some(tok.fingerprint()));
    }
}
