pub mod corpus;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mlm;
pub mod ofa;
pub mod pipeline;
pub mod rng;
pub mod tokenizer;
pub mod toy;

pub use error::{Error, Result};
