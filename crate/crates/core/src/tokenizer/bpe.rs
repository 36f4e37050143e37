use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::vocab::{Vocabulary, BOS_ID, EOS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, UNK_ID};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Marks the first symbol of every word.
pub const WORD_BOUNDARY: char = '▁';
/// Rendered in place of unknown tokens by [`BpeTokenizer::detokenize`].
pub const UNK_GLYPH: &str = "⁇";

const NO_ID: u32 = u32::MAX;

/// Splits a word into its initial symbols: the first character carries the
/// boundary marker, the rest are single characters.
fn word_symbols(word: &str) -> Vec<String> {
    let mut chars = word.chars();
    let mut out = Vec::with_capacity(word.len() + 1);
    if let Some(first) = chars.next() {
        out.push(format!("{WORD_BOUNDARY}{first}"));
        out.extend(chars.map(String::from));
    }
    out
}

#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: Vocabulary,
    merges: Vec<(String, String)>,
    // (left id, right id) -> (rank, merged id)
    ranks: HashMap<(u32, u32), (u32, u32)>,
}

impl PartialEq for BpeTokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.merges == other.merges
    }
}

impl BpeTokenizer {
    /// Assembles a tokenizer from a vocabulary and an ordered merge list.
    /// Every merge operand and result must be in the vocabulary.
    pub fn from_parts(vocab: Vocabulary, merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                vocab.id(t).ok_or_else(|| {
                    Error::Argument(format!("merge {rank} ({l} {r}) uses {t:?}, which is not in the vocabulary"))
                })
            };
            let key = (lookup(l)?, lookup(r)?);
            let merged = lookup(&format!("{l}{r}"))?;
            if ranks.insert(key, (rank as u32, merged)).is_some() {
                return Err(Error::Argument(format!("duplicate merge pair ({l} {r})")));
            }
        }
        Ok(BpeTokenizer {
            vocab,
            merges,
            ranks,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Same merges over a different (typically extended) vocabulary.
    pub fn with_vocabulary(&self, vocab: Vocabulary) -> Result<Self> {
        Self::from_parts(vocab, self.merges.clone())
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.vocab.fingerprint().as_bytes());
        for (l, r) in &self.merges {
            h.update(l.as_bytes());
            h.update(b" ");
            h.update(r.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Token ids of one whitespace-free word.
    pub fn tokenize_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = word_symbols(word)
            .iter()
            .map(|s| self.vocab.id(s).unwrap_or(NO_ID))
            .collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, merged)| (rank, w[0], w[1], merged)))
                .min();
            let Some((_, left, right, merged)) = best else {
                break;
            };
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms.into_iter().map(|s| if s == NO_ID { UNK_ID } else { s }));
    }

    /// Whitespace pretokenization followed by greedy merge application.
    /// Characters never seen in training become the unk id.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let text: String = text.nfc().collect();
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.tokenize_word(word, &mut out);
        }
        out
    }

    /// Concatenates token strings, turning boundary markers into spaces.
    /// Padding, bos and eos are skipped; unk renders as [`UNK_GLYPH`].
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.vocab.token(id).ok_or_else(|| {
                Error::Argument(format!("token id {id} out of range for vocabulary of {}", self.vocab.len()))
            })?;
            match id {
                PAD_ID | BOS_ID | EOS_ID => {}
                UNK_ID => s.push_str(UNK_GLYPH),
                MASK_ID => s.push_str(tok),
                _ => s.push_str(tok),
            }
        }
        Ok(s.replace(WORD_BOUNDARY, " ").trim().to_string())
    }

    pub fn save(&self, vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<()> {
        self.vocab.save(vocab_path)?;
        let path = merges_path.as_ref();
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<Self> {
        let vocab = Vocabulary::load(vocab_path)?;
        let path = merges_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => return Err(Error::parse(path, i + 1, "expected `left right`")),
            }
        }
        Self::from_parts(vocab, merges).map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

/// Smallest valid `vocab_size` for training on `corpus`.
pub fn min_vocab_size(corpus: &Corpus) -> usize {
    let mut alphabet = HashSet::new();
    for s in corpus.sentences() {
        for w in s.split_whitespace() {
            alphabet.extend(word_symbols(w));
        }
    }
    NUM_SPECIALS + alphabet.len()
}

/// Learns BPE merges until the vocabulary reaches `vocab_size` or no pair is
/// left. The most frequent pair wins; ties go to the lexicographically
/// smallest `(left, right)`.
pub fn train_bpe(corpus: &Corpus, vocab_size: usize) -> Result<BpeTokenizer> {
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for s in corpus.sentences() {
        for w in s.split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }

    // Intern symbols.
    let mut symbols: Vec<String> = Vec::new();
    let mut sym_id: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *sym_id.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            symbols.len() as u32 - 1
        })
    };

    let mut words: Vec<Vec<u32>> = Vec::with_capacity(word_counts.len());
    let mut counts: Vec<i64> = Vec::with_capacity(word_counts.len());
    for (w, &c) in &word_counts {
        words.push(word_symbols(w).into_iter().map(|s| intern(s, &mut symbols)).collect());
        counts.push(c as i64);
    }

    let alphabet: BTreeSet<String> = symbols.iter().cloned().collect();
    let min = NUM_SPECIALS + alphabet.len();
    if vocab_size < min {
        return Err(Error::Argument(format!(
            "vocab_size {vocab_size} is too small: need at least {min} (5 specials + {} alphabet symbols)",
            alphabet.len()
        )));
    }
    let mut vocab = Vocabulary::with_standard_specials(alphabet.iter().cloned())?;

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += counts[wi];
            pair_words.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while vocab.len() < vocab_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .min_by(|(a, ca), (b, cb)| {
                cb.cmp(ca).then_with(|| {
                    (&symbols[a.0 as usize], &symbols[a.1 as usize])
                        .cmp(&(&symbols[b.0 as usize], &symbols[b.1 as usize]))
                })
            })
            .map(|(&p, _)| p);
        let Some((left, right)) = best else { break };
        let merged_str = format!("{}{}", symbols[left as usize], symbols[right as usize]);
        let merged = intern(merged_str.clone(), &mut symbols);
        merges.push((symbols[left as usize].clone(), symbols[right as usize].clone()));
        vocab.push(merged_str);

        let mut affected: Vec<usize> = pair_words
            .remove(&(left, right))
            .unwrap_or_default()
            .into_iter()
            .collect();
        affected.sort_unstable();
        for wi in affected {
            let w = &words[wi];
            let c = counts[wi];
            for p in w.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).expect("counted pair") -= c;
            }
            let mut next = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == left && w[i + 1] == right {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(w[i]);
                    i += 1;
                }
            }
            for p in next.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += c;
                pair_words.entry((p[0], p[1])).or_default().insert(wi);
            }
            words[wi] = next;
        }
        pair_counts.retain(|_, c| *c > 0);
    }

    BpeTokenizer::from_parts(vocab, merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::from_lines("x", Origin::Natural, lines)
    }

    /// Counts adjacent symbol pairs over whitespace words directly from the text.
    fn brute_force_pair_counts(lines: &[&str]) -> BTreeMap<(String, String), usize> {
        let mut m = BTreeMap::new();
        for l in lines {
            for w in l.split_whitespace() {
                let syms = word_symbols(w);
                for p in syms.windows(2) {
                    *m.entry((p[0].clone(), p[1].clone())).or_default() += 1;
                }
            }
        }
        m
    }

    #[test]
    fn first_merge_matches_brute_force() {
        let lines = ["aaab", "aaab", "ab"];
        let counts = brute_force_pair_counts(&lines);
        let max = counts.values().max().copied().unwrap();
        let expected = counts.iter().find(|(_, &c)| c == max).map(|(p, _)| p.clone()).unwrap();
        assert_eq!(expected, ("a".to_string(), "a".to_string()));

        let tok = train_bpe(&corpus(&lines), 12).unwrap();
        assert_eq!(tok.merges()[0], expected);
    }

    #[test]
    fn boundary_size_learns_nothing_and_smaller_errors() {
        let c = corpus(&["aaab", "aaab", "ab"]);
        let min = min_vocab_size(&c);
        assert_eq!(min, 8); // ▁a, a, b
        let tok = train_bpe(&c, min).unwrap();
        assert!(tok.merges().is_empty());
        assert_eq!(tok.vocab().len(), min);
        let err = train_bpe(&c, min - 1).unwrap_err().to_string();
        assert!(err.contains("at least 8"), "{err}");
    }

    #[test]
    fn training_is_deterministic() {
        let c = corpus(&["ngeve alwa ngeve", "kilumbu mbote", "mbote ngeve"]);
        let a = train_bpe(&c, 40).unwrap();
        let b = train_bpe(&c, 40).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.vocab(), b.vocab());
    }

    #[test]
    fn empty_and_unknown_text() {
        let tok = train_bpe(&corpus(&["abc abd"]), 20).unwrap();
        assert!(tok.tokenize("").is_empty());
        let ids = tok.tokenize("xyz qq");
        assert!(!ids.is_empty());
        assert!(ids.iter().all(|&i| i == UNK_ID));
    }

    #[test]
    fn detokenize_rules() {
        let tok = train_bpe(&corpus(&["abc abd"]), 20).unwrap();
        assert_eq!(tok.detokenize(&[]).unwrap(), "");
        let ids = tok.tokenize("abc abd");
        assert_eq!(tok.detokenize(&ids).unwrap(), "abc abd");
        assert!(tok.detokenize(&[UNK_ID]).unwrap().contains(UNK_GLYPH));
        assert!(matches!(tok.detokenize(&[999]), Err(Error::Argument(_))));
    }

    #[test]
    fn vocabulary_is_truncated_to_size() {
        let c = corpus(&["the quick brown fox jumps over the lazy dog"]);
        let min = min_vocab_size(&c);
        let tok = train_bpe(&c, min + 3).unwrap();
        assert_eq!(tok.vocab().len(), min + 3);
    }

    #[test]
    fn merges_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let tok = train_bpe(&corpus(&["ngeve alwa ngeve", "kilumbu"]), 30).unwrap();
        let (v, m) = (dir.path().join("v.txt"), dir.path().join("m.txt"));
        tok.save(&v, &m).unwrap();
        let back = BpeTokenizer::load(&v, &m).unwrap();
        assert_eq!(back, tok);
        assert_eq!(back.tokenize("ngeve kilumbu"), tok.tokenize("ngeve kilumbu"));
        std::fs::write(&m, "a\n").unwrap();
        assert!(matches!(BpeTokenizer::load(&v, &m), Err(Error::Parse { line: 1, .. })));
    }
}
