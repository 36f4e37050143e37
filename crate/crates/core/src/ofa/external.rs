use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::tokenizer::{BpeTokenizer, NUM_SPECIALS};

/// Static word vectors from an aligned multilingual embedding space.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    /// Rows skipped because their word had already been seen.
    pub duplicates: usize,
}

impl ExternalEmbeddings {
    pub fn new(dim: usize) -> Self {
        ExternalEmbeddings {
            dim,
            ..Default::default()
        }
    }

    /// Adds a vector; returns `false` (and counts a duplicate) if the word is
    /// already present.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {word:?} has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("vector for {word:?} is not finite")));
        }
        let word: String = word.nfc().collect();
        if self.index.contains_key(&word) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.vectors.push(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Writes word2vec text format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (w, v) in self.iter() {
            out.push_str(w);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads word2vec text format: a `count dim` header, then `word v1 … vm` rows.
pub fn load_external_embeddings(path: impl AsRef<Path>) -> Result<ExternalEmbeddings> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (count, dim) = match lines.next() {
        Some((_, header)) => {
            let parts: Vec<&str> = header.split_whitespace().collect();
            match parts.as_slice() {
                [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
                    (Ok(c), Ok(d)) if d > 0 => (c, d),
                    _ => return Err(Error::parse(path, 1, format!("bad header {header:?}"))),
                },
                _ => return Err(Error::parse(path, 1, "header must be `count dim`")),
            }
        }
        None => return Err(Error::parse(path, 1, "empty file")),
    };

    let mut ext = ExternalEmbeddings::new(dim);
    let mut rows = 0;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        let mut vector = Vec::with_capacity(dim);
        for v in values {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad value {v:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value {v:?}")));
            }
            vector.push(x);
        }
        ext.insert(word, vector)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        rows += 1;
    }
    if rows != count {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {count} vectors, file has {rows}"),
        ));
    }
    if ext.duplicates > 0 {
        log::warn!("{}: {} duplicate words ignored", path.display(), ext.duplicates);
    }
    Ok(ext)
}

/// External vector of a subword: the mean vector of all external words whose
/// tokenization contains it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordExternalVector {
    pub subword: String,
    pub vector: Option<Vec<f64>>,
    pub support: usize,
}

/// Scans every external word for one subword.
pub fn subword_external_vector(subword: &str, ext: &ExternalEmbeddings, tok: &BpeTokenizer) -> SubwordExternalVector {
    let target = tok.vocab().id(subword);
    let mut sum = vec![0.0; ext.dim()];
    let mut support = 0;
    let mut ids = Vec::new();
    if let Some(target) = target.filter(|&id| id as usize >= NUM_SPECIALS) {
        for (word, v) in ext.iter() {
            ids.clear();
            tok.tokenize_word(word, &mut ids);
            if ids.contains(&target) {
                support += 1;
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            }
        }
    }
    finish(subword.to_string(), sum, support)
}

fn finish(subword: String, sum: Vec<f64>, support: usize) -> SubwordExternalVector {
    let vector = (support > 0).then(|| sum.into_iter().map(|s| s / support as f64).collect());
    SubwordExternalVector {
        subword,
        vector,
        support,
    }
}

/// External vectors for every id of the tokenizer's vocabulary, in one pass
/// over the external words. Special tokens never receive a vector.
pub fn subword_external_vectors(ext: &ExternalEmbeddings, tok: &BpeTokenizer) -> Vec<SubwordExternalVector> {
    let n = tok.vocab().len();
    let mut sums = vec![vec![0.0; ext.dim()]; n];
    let mut support = vec![0usize; n];
    let mut ids = Vec::new();
    for (word, v) in ext.iter() {
        ids.clear();
        tok.tokenize_word(word, &mut ids);
        ids.sort_unstable();
        ids.dedup();
        for &id in ids.iter().filter(|&&id| id as usize >= NUM_SPECIALS) {
            support[id as usize] += 1;
            sums[id as usize].iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
    }
    tok.vocab()
        .tokens()
        .iter()
        .zip(sums.into_iter().zip(support))
        .map(|(t, (sum, sup))| finish(t.clone(), sum, sup))
        .collect()
}
