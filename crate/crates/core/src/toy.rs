//! Two synthetic languages generated from one grammar. Language A and
//! language B differ only in the surface form of every concept, so a word
//! substitution lexicon translates between them exactly. Sentences carry a
//! topic, which gives a seven-class classification task, and an aligned
//! word-vector file ties each A word to its B counterpart.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Fallback, Lexicon, Origin};
use crate::error::{Error, Result};
use crate::eval::{LabeledDataset, Split, NUM_CLASSES};
use crate::ofa::ExternalEmbeddings;
use crate::rng::{derive_seed, named_stream, stream_rng};

pub const LANG_A: &str = "qaa";
pub const LANG_B: &str = "qab";

const VOWELS: &str = "aeiou";
const CONSONANTS_A: &str = "trsplfgh";
const CONSONANTS_B: &str = "kmbndzwy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lang {
    A,
    B,
}

impl Lang {
    pub fn code(self) -> &'static str {
        match self {
            Lang::A => LANG_A,
            Lang::B => LANG_B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Det,
    Prep,
    Noun,
    Verb,
    Adj,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub determiners: usize,
    pub prepositions: usize,
    pub nouns_per_topic: usize,
    pub verbs_per_topic: usize,
    pub adjectives_per_topic: usize,
    /// Probability that a content word comes from the sentence topic.
    pub on_topic: f64,
    pub vector_dim: usize,
    /// Scale of the shared topic direction in each word vector.
    pub topic_weight: f64,
    /// Std of the per-language noise added to word vectors.
    pub vector_noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 0,
            determiners: 4,
            prepositions: 4,
            nouns_per_topic: 8,
            verbs_per_topic: 5,
            adjectives_per_topic: 4,
            on_topic: 0.85,
            vector_dim: 48,
            topic_weight: 0.5,
            vector_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Concept {
    kind: Kind,
    topic: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySentence {
    pub concepts: Vec<usize>,
    pub topic: usize,
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: ToyConfig,
    concepts: Vec<Concept>,
    words_a: Vec<String>,
    words_b: Vec<String>,
}

fn make_words(n: usize, consonants: &str, rng: &mut impl Rng) -> Vec<String> {
    let cons: Vec<char> = consonants.chars().collect();
    let vowels: Vec<char> = VOWELS.chars().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .flat_map(|_| [*cons.choose(rng).unwrap(), *vowels.choose(rng).unwrap()])
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Zipf-like pick: rank r has weight 1/(r+1).
fn zipf(items: &[usize], rng: &mut impl Rng) -> usize {
    let total: f64 = (0..items.len()).map(|r| 1.0 / (r as f64 + 1.0)).sum();
    let mut u = rng.random::<f64>() * total;
    for (r, &it) in items.iter().enumerate() {
        u -= 1.0 / (r as f64 + 1.0);
        if u <= 0.0 {
            return it;
        }
    }
    *items.last().unwrap()
}

const TEMPLATES: [&[Kind]; 4] = [
    &[Kind::Det, Kind::Noun, Kind::Verb, Kind::Det, Kind::Adj, Kind::Noun],
    &[Kind::Det, Kind::Adj, Kind::Noun, Kind::Verb, Kind::Prep, Kind::Det, Kind::Noun],
    &[Kind::Noun, Kind::Verb, Kind::Noun, Kind::Prep, Kind::Noun],
    &[Kind::Det, Kind::Noun, Kind::Prep, Kind::Det, Kind::Noun, Kind::Verb, Kind::Adj],
];

impl ToyWorld {
    pub fn generate(config: &ToyConfig) -> Result<Self> {
        if config.determiners == 0
            || config.prepositions == 0
            || config.nouns_per_topic == 0
            || config.verbs_per_topic == 0
            || config.adjectives_per_topic == 0
            || config.vector_dim == 0
        {
            return Err(Error::Argument("toy word-class sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.on_topic) {
            return Err(Error::Argument("on_topic must lie in [0, 1]".into()));
        }
        let mut concepts = Vec::new();
        concepts.extend((0..config.determiners).map(|_| Concept { kind: Kind::Det, topic: None }));
        concepts.extend((0..config.prepositions).map(|_| Concept { kind: Kind::Prep, topic: None }));
        for t in 0..NUM_CLASSES {
            for (kind, n) in [
                (Kind::Noun, config.nouns_per_topic),
                (Kind::Verb, config.verbs_per_topic),
                (Kind::Adj, config.adjectives_per_topic),
            ] {
                concepts.extend((0..n).map(|_| Concept { kind, topic: Some(t) }));
            }
        }
        let n = concepts.len();
        let words_a = make_words(n, CONSONANTS_A, &mut stream_rng(config.seed, named_stream("toy-words-a")));
        let words_b = make_words(n, CONSONANTS_B, &mut stream_rng(config.seed, named_stream("toy-words-b")));
        Ok(ToyWorld {
            config: config.clone(),
            concepts,
            words_a,
            words_b,
        })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.concepts.len()
    }

    pub fn word(&self, concept: usize, lang: Lang) -> &str {
        match lang {
            Lang::A => &self.words_a[concept],
            Lang::B => &self.words_b[concept],
        }
    }

    fn pool(&self, kind: Kind, topic: Option<usize>) -> Vec<usize> {
        (0..self.concepts.len())
            .filter(|&c| self.concepts[c].kind == kind && (topic.is_none() || self.concepts[c].topic == topic))
            .collect()
    }

    /// `n` sentences with uniformly drawn topics.
    pub fn sentences(&self, n: usize, seed: u64) -> Vec<ToySentence> {
        let mut rng = stream_rng(derive_seed(self.config.seed, seed), named_stream("toy-sentences"));
        let function: Vec<Vec<usize>> = [Kind::Det, Kind::Prep].iter().map(|&k| self.pool(k, None)).collect();
        let content: Vec<[Vec<usize>; 3]> = (0..NUM_CLASSES)
            .map(|t| [Kind::Noun, Kind::Verb, Kind::Adj].map(|k| self.pool(k, Some(t))))
            .collect();
        (0..n)
            .map(|_| {
                let topic = rng.random_range(0..NUM_CLASSES);
                let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
                let concepts = template
                    .iter()
                    .map(|&kind| match kind {
                        Kind::Det => zipf(&function[0], &mut rng),
                        Kind::Prep => zipf(&function[1], &mut rng),
                        _ => {
                            let t = if rng.random::<f64>() < self.config.on_topic {
                                topic
                            } else {
                                rng.random_range(0..NUM_CLASSES)
                            };
                            let slot = match kind {
                                Kind::Noun => 0,
                                Kind::Verb => 1,
                                _ => 2,
                            };
                            zipf(&content[t][slot], &mut rng)
                        }
                    })
                    .collect();
                ToySentence { concepts, topic }
            })
            .collect()
    }

    pub fn render(&self, s: &ToySentence, lang: Lang) -> String {
        s.concepts.iter().map(|&c| self.word(c, lang)).collect::<Vec<_>>().join(" ")
    }

    pub fn corpus(&self, lang: Lang, n: usize, seed: u64) -> Corpus {
        let lines: Vec<String> = self.sentences(n, seed).iter().map(|s| self.render(s, lang)).collect();
        Corpus::from_lines(lang.code(), Origin::Natural, lines)
    }

    /// Topic-labelled sentences; topic `t` maps to class index `t`.
    pub fn labeled(&self, lang: Lang, n: usize, seed: u64, split: Split) -> Result<LabeledDataset> {
        let mut ds = LabeledDataset::new(split);
        for s in self.sentences(n, seed) {
            ds.push(&self.render(&s, lang), s.topic)?;
        }
        Ok(ds)
    }

    /// A→B word lexicon covering a seeded `coverage` fraction of concepts.
    pub fn lexicon(&self, coverage: f64, seed: u64) -> Result<Lexicon> {
        let mut rng = stream_rng(derive_seed(self.config.seed, seed), named_stream("toy-lexicon"));
        let mut lex = Lexicon::new(Fallback::Passthrough);
        for c in 0..self.concepts.len() {
            if rng.random::<f64>() < coverage {
                lex.insert(&self.words_a[c], &self.words_b[c])?;
            }
        }
        Ok(lex)
    }

    /// Aligned vectors for every A and B word: a topic direction plus a
    /// per-concept direction, with independent noise per language.
    pub fn external_embeddings(&self) -> Result<ExternalEmbeddings> {
        let m = self.config.vector_dim;
        let mut rng = stream_rng(self.config.seed, named_stream("toy-vectors"));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let unit = |rng: &mut rand_chacha::ChaCha8Rng| {
            let v: Vec<f64> = (0..m).map(|_| normal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let topics: Vec<Vec<f64>> = (0..NUM_CLASSES + 1).map(|_| unit(&mut rng)).collect();
        let noise = Normal::new(0.0, self.config.vector_noise.max(0.0)).map_err(|e| Error::Argument(e.to_string()))?;
        let mut ext = ExternalEmbeddings::new(m);
        let mut pending = Vec::with_capacity(2 * self.concepts.len());
        for (c, concept) in self.concepts.iter().enumerate() {
            let own = unit(&mut rng);
            let t = &topics[concept.topic.unwrap_or(NUM_CLASSES)];
            let base: Vec<f64> = own.iter().zip(t).map(|(o, t)| o + self.config.topic_weight * t).collect();
            for lang in [Lang::A, Lang::B] {
                let v: Vec<f64> = base.iter().map(|b| b + noise.sample(&mut rng)).collect();
                pending.push((self.word(c, lang).to_string(), v));
            }
        }
        for (w, v) in pending {
            ext.insert(&w, v)?;
        }
        Ok(ext)
    }

    /// Writes a ready-made experiment bundle and returns the paths.
    pub fn write_bundle(&self, dir: impl AsRef<Path>, sizes: &BundleSizes) -> Result<ToyBundle> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let b = ToyBundle {
            corpus_a: dir.join("qaa.txt"),
            corpus_b: dir.join("qab.txt"),
            lexicon: dir.join("qaa-qab.tsv"),
            vectors: dir.join("vectors.txt"),
            train: dir.join("qab-train.tsv"),
            dev: dir.join("qab-dev.tsv"),
            test: dir.join("qab-test.tsv"),
        };
        self.corpus(Lang::A, sizes.corpus_a, 1).write(&b.corpus_a)?;
        self.corpus(Lang::B, sizes.corpus_b, 2).write(&b.corpus_b)?;
        let mut lex = String::from("# source\ttarget\n");
        for c in 0..self.concepts.len() {
            lex.push_str(&format!("{}\t{}\n", self.words_a[c], self.words_b[c]));
        }
        std::fs::write(&b.lexicon, lex).map_err(|e| Error::io(&b.lexicon, e))?;
        self.external_embeddings()?.save(&b.vectors)?;
        self.labeled(Lang::B, sizes.train, 3, Split::Train)?.save(&b.train)?;
        self.labeled(Lang::B, sizes.dev, 4, Split::Dev)?.save(&b.dev)?;
        self.labeled(Lang::B, sizes.test, 5, Split::Test)?.save(&b.test)?;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleSizes {
    pub corpus_a: usize,
    pub corpus_b: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for BundleSizes {
    fn default() -> Self {
        BundleSizes {
            corpus_a: 2000,
            corpus_b: 300,
            train: 140,
            dev: 70,
            test: 140,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBundle {
    pub corpus_a: PathBuf,
    pub corpus_b: PathBuf,
    pub lexicon: PathBuf,
    pub vectors: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}
