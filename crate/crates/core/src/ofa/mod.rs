//! Embedding factorization, informed initialization of new subwords, and
//! transplanting a checkpoint onto an extended vocabulary.

mod external;
mod factorize;
mod init;
mod transplant;

pub use external::{
    load_external_embeddings, subword_external_vector, subword_external_vectors, ExternalEmbeddings,
    SubwordExternalVector,
};
pub use factorize::{factorize, reconstruct, EmbeddingMatrix, FactorizedEmbedding};
pub use init::{informed_init, nearest_sources, random_init, InitOutcome, InitReport, RowInit, DEFAULT_NEIGHBORS};
pub use transplant::{source_embedding, transplant, NewEmbeddings};
