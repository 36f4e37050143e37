//! Monolingual corpora: ingestion, concatenation, statistics, splitting and
//! dictionary-based synthetic data.
//!
//! A corpus is a list of sentences, one per line on disk. Every sentence is
//! NFC-normalized, trimmed and non-empty.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Language code used for corpora that mix several languages.
pub const MULTI_LANG: &str = "multi";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Natural,
    Synthetic,
    Mixed,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Natural => "natural",
            Origin::Synthetic => "synthetic",
            Origin::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub lang: String,
    sentences: Vec<String>,
    pub origin: Origin,
}

/// NFC-normalizes and trims a line. Interior line breaks become spaces.
/// Returns `None` for lines that are empty after trimming.
pub fn normalize_line(line: &str) -> Option<String> {
    let nfc: String = line
        .nfc()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    let trimmed = nfc.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_string())
    }
}

impl Corpus {
    /// Builds a corpus from raw lines, applying the same normalization as
    /// [`ingest_corpus`].
    pub fn from_lines<I, S>(lang: impl Into<String>, origin: Origin, lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Corpus {
            lang: lang.into(),
            sentences: lines
                .into_iter()
                .filter_map(|l| normalize_line(l.as_ref()))
                .collect(),
            origin,
        }
    }

    pub fn empty(lang: impl Into<String>, origin: Origin) -> Self {
        Corpus {
            lang: lang.into(),
            sentences: Vec::new(),
            origin,
        }
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Writes one sentence per line with LF endings.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for s in &self.sentences {
            writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads the given files in order into one corpus.
pub fn ingest_corpus<P: AsRef<Path>>(paths: &[P], lang: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            offset: e.valid_up_to(),
        })?;
        sentences.extend(text.lines().filter_map(normalize_line));
    }
    Ok(Corpus {
        lang: lang.to_string(),
        sentences,
        origin: Origin::Natural,
    })
}

pub fn concat_corpora(corpora: &[Corpus]) -> Result<Corpus> {
    let first = corpora
        .first()
        .ok_or_else(|| Error::Argument("cannot concatenate an empty list of corpora".into()))?;
    let lang = if corpora.iter().all(|c| c.lang == first.lang) {
        first.lang.clone()
    } else {
        MULTI_LANG.to_string()
    };
    let origin = if corpora.iter().all(|c| c.origin == first.origin) {
        first.origin
    } else {
        Origin::Mixed
    };
    let sentences = corpora
        .iter()
        .flat_map(|c| c.sentences.iter().cloned())
        .collect();
    Ok(Corpus {
        lang,
        sentences,
        origin,
    })
}

/// Size and line count of a corpus. `bytes` counts UTF-8 bytes of every
/// sentence plus one newline each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub lang: String,
    pub origin: Origin,
    pub bytes: u64,
    pub sentence_count: u64,
}

impl CorpusStats {
    /// Size in decimal megabytes (10^6 bytes).
    pub fn size_mb(&self) -> f64 {
        self.bytes as f64 / 1e6
    }

    /// Size in megabytes rounded half-up to one decimal.
    pub fn size_mb_display(&self) -> String {
        let tenths = (self.bytes + 50_000) / 100_000;
        format!("{}.{}", tenths / 10, tenths % 10)
    }

    /// Statistics of the concatenation of the two corpora described.
    pub fn combine(&self, other: &CorpusStats) -> CorpusStats {
        CorpusStats {
            lang: if self.lang == other.lang {
                self.lang.clone()
            } else {
                MULTI_LANG.to_string()
            },
            origin: if self.origin == other.origin {
                self.origin
            } else {
                Origin::Mixed
            },
            bytes: self.bytes + other.bytes,
            sentence_count: self.sentence_count + other.sentence_count,
        }
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    CorpusStats {
        lang: corpus.lang.clone(),
        origin: corpus.origin,
        bytes: corpus.sentences.iter().map(|s| s.len() as u64 + 1).sum(),
        sentence_count: corpus.sentences.len() as u64,
    }
}

/// Writes `lang,origin,size_mb,sentence_count` rows.
pub fn write_stats_csv(path: impl AsRef<Path>, stats: &[CorpusStats]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("lang,origin,size_mb,sentence_count\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.lang,
            s.origin,
            s.size_mb_display(),
            s.sentence_count
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// What to do with a token that has no lexicon entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    #[default]
    Passthrough,
    Drop,
}

/// Word-substitution dictionary. Keys are case-folded; a key may carry
/// several candidate translations, chosen between by the translation seed.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
    pub fallback: Fallback,
}

impl Lexicon {
    pub fn new(fallback: Fallback) -> Self {
        Lexicon {
            entries: HashMap::new(),
            fallback,
        }
    }

    pub fn insert(&mut self, source: &str, target: &str) -> Result<()> {
        let target = target.trim();
        if target.is_empty() {
            return Err(Error::Data(format!(
                "lexicon entry for `{source}` maps to an empty string"
            )));
        }
        let key: String = source.trim().nfc().collect::<String>().to_lowercase();
        let target: String = target.nfc().collect();
        let slot = self.entries.entry(key).or_default();
        if !slot.contains(&target) {
            slot.push(target);
        }
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses a `source<TAB>target` file; `#` lines and blank lines are skipped.
    pub fn load(path: impl AsRef<Path>, fallback: Fallback) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lex = Lexicon::new(fallback);
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(src), Some(tgt), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(path, i + 1, "expected two tab-separated columns"));
            };
            lex.insert(src, tgt)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(lex)
    }
}

/// Source of synthetic sentences in a target language. The dictionary
/// translator is the only built-in implementation; machine-translation
/// backends plug in here.
pub trait Translator {
    fn translate(&self, corpus: &Corpus, target_lang: &str, seed: u64) -> Result<Corpus>;
}

pub struct DictionaryTranslator<'a> {
    pub lexicon: &'a Lexicon,
}

impl Translator for DictionaryTranslator<'_> {
    fn translate(&self, corpus: &Corpus, target_lang: &str, seed: u64) -> Result<Corpus> {
        let mut out = dictionary_translate(corpus, self.lexicon, seed)?;
        out.lang = target_lang.to_string();
        Ok(out)
    }
}

fn split_punct(token: &str) -> (&str, &str, &str) {
    let start = token
        .char_indices()
        .find(|(_, c)| c.is_alphanumeric())
        .map_or(token.len(), |(i, _)| i);
    let end = token
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map_or(start, |(i, c)| i + c.len_utf8());
    (&token[..start], &token[start..end.max(start)], &token[end.max(start)..])
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Replaces every whitespace token by its lexicon entry. Sentences whose
/// tokens are all dropped are kept untranslated so the output never contains
/// empty sentences and has the same length as the input.
pub fn dictionary_translate(corpus: &Corpus, lexicon: &Lexicon, seed: u64) -> Result<Corpus> {
    if corpus.is_empty() {
        return Err(Error::Argument("cannot translate an empty corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(corpus.len());
    for sentence in corpus.sentences() {
        let mut words = Vec::new();
        for token in sentence.split_whitespace() {
            let (pre, core, post) = split_punct(token);
            match lexicon.get(core) {
                Some(candidates) => {
                    let pick = if candidates.len() == 1 {
                        &candidates[0]
                    } else {
                        &candidates[rng.random_range(0..candidates.len())]
                    };
                    let upper = core.chars().next().is_some_and(char::is_uppercase);
                    let word = if upper {
                        capitalize_first(pick)
                    } else {
                        pick.clone()
                    };
                    words.push(format!("{pre}{word}{post}"));
                }
                None => {
                    if lexicon.fallback == Fallback::Passthrough {
                        words.push(token.to_string());
                    }
                }
            }
        }
        let translated = if words.is_empty() {
            sentence.clone()
        } else {
            words.join(" ")
        };
        sentences.push(normalize_line(&translated).unwrap_or_else(|| sentence.clone()));
    }
    Ok(Corpus {
        lang: corpus.lang.clone(),
        sentences,
        origin: Origin::Synthetic,
    })
}

/// Shuffles by seed and cuts into train/dev/test. Dev and test sizes are
/// floored; the remainder goes to train.
pub fn split_corpus(corpus: &Corpus, ratios: (f64, f64, f64), seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let (tr, dv, te) = ratios;
    if !(tr > 0.0 && dv > 0.0 && te > 0.0) || ((tr + dv + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios must be positive and sum to 1, got ({tr}, {dv}, {te})"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = (n as f64 * dv).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_dev - n_test;
    let take = |idx: &[usize]| Corpus {
        lang: corpus.lang.clone(),
        sentences: idx.iter().map(|&i| corpus.sentences[i].clone()).collect(),
        origin: corpus.origin,
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_dev]),
        take(&order[n_train + n_dev..]),
    ))
}

/// Paths grouped by language, as used by experiment configs.
pub fn ingest_many(spec: &[(String, Vec<PathBuf>)]) -> Result<Vec<Corpus>> {
    spec.iter()
        .map(|(lang, paths)| ingest_corpus(paths, lang))
        .collect()
}
