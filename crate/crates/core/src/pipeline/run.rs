use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::adapt::{initialize, merged_tokenizer, InitScheme};
use super::config::{ExperimentConfig, Variant};
use super::report::render_report;
use super::stage::{file_hash, tree_hash, StageMeta, StageRecord, StageStore};
use crate::corpus::{
    concat_corpora, corpus_stats, dictionary_translate, ingest_corpus, split_corpus, write_stats_csv, Corpus, Lexicon,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, finetune_classifier, load_sib_dataset, HeadHyper, Split};
use crate::mlm::{encode_corpus, heldout_loss, pretrain, write_loss_curve, Checkpoint, TrainRun};
use crate::ofa::{load_external_embeddings, transplant, EmbeddingMatrix, FactorizedEmbedding, NewEmbeddings};
use crate::rng::{derive_seed, named_stream};
use crate::tokenizer::{overlap_report, train_bpe, BpeTokenizer};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "GRAFTBENCH_THREADS";
/// Column name of the unadapted source model.
pub const SOURCE_MODEL: &str = "source";

/// Worker threads from [`THREADS_ENV`], else the available parallelism.
/// Stages are independent of each other, so results do not depend on it.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Writes a checkpoint with its tokenizer beside it.
pub fn save_model(dir: &Path, ckpt: &Checkpoint, tok: &BpeTokenizer) -> Result<()> {
    ckpt.save(dir)?;
    tok.save(dir.join("vocab.txt"), dir.join("merges.txt"))
}

/// Reads a checkpoint directory written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<(Checkpoint, BpeTokenizer)> {
    let ckpt = Checkpoint::load(dir)?;
    let tok = BpeTokenizer::load(dir.join("vocab.txt"), dir.join("merges.txt"))?;
    if tok.vocab().len() != ckpt.config.vocab_size {
        return Err(Error::Config(format!(
            "{}: tokenizer has {} tokens, checkpoint expects {}",
            dir.display(),
            tok.vocab().len(),
            ckpt.config.vocab_size
        )));
    }
    Ok((ckpt, tok))
}

/// A per-seed artifact belonging to one model column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub model: String,
    pub seed: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub toolkit_version: String,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: u64,
    pub threads: usize,
    pub output_dir: PathBuf,
    pub models: Vec<String>,
    pub languages: Vec<String>,
    pub seeds: Vec<u64>,
    /// Merged tokenizer directory (`vocab.txt`, `merges.txt`).
    pub tokenizer: PathBuf,
    /// Initialized embedding directories, one per scheme and seed.
    pub embeddings: Vec<Artifact>,
    pub checkpoints: Vec<Artifact>,
    /// `scores.json` per model and seed.
    pub evaluations: Vec<Artifact>,
    /// `heldout.json` per adapted model and seed.
    pub heldout: Vec<Artifact>,
    pub reports: Vec<PathBuf>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Every artifact path the report depends on.
    pub fn required_artifacts(&self) -> Vec<PathBuf> {
        let mut out = vec![self.tokenizer.join("vocab.txt"), self.tokenizer.join("merges.txt")];
        out.extend(self.embeddings.iter().map(|a| a.path.clone()));
        out.extend(self.checkpoints.iter().flat_map(|a| [a.path.join("manifest.json"), a.path.join("tensors.bin")]));
        out.extend(self.evaluations.iter().map(|a| a.path.clone()));
        out.extend(self.heldout.iter().map(|a| a.path.clone()));
        out
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<String>> {
    paths.iter().map(|p| file_hash(p)).collect()
}

/// Runs independent jobs on up to `threads` workers; results come back in
/// job order and the first failing job (in that order) wins.
fn run_jobs<T: Send>(jobs: Vec<Box<dyn FnOnce() -> Result<T> + Send + '_>>, threads: usize) -> Result<Vec<T>> {
    let n = jobs.len();
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>().into_iter());
    let results: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let next = queue.lock().expect("job queue").next();
                let Some((i, job)) = next else { break };
                let r = job();
                results.lock().expect("results")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

struct Shared {
    corpus: StageMeta,
    corpus_dir: PathBuf,
    merge: StageMeta,
    merge_dir: PathBuf,
    source_hash: String,
}

fn natural_train(dir: &Path, langs: &[&String]) -> Result<Vec<Corpus>> {
    langs
        .iter()
        .map(|l| ingest_corpus(&[dir.join("natural").join(format!("{l}.txt"))], l))
        .collect()
}

fn corpus_stage(cfg: &ExperimentConfig, store: &StageStore, wants_synthetic: bool) -> Result<(StageMeta, StageRecord)> {
    let mut inputs = serde_json::Map::new();
    for (code, l) in &cfg.languages {
        let mut v = json!({ "corpora": hashes(&l.corpora)? });
        if let (true, Some(s)) = (wants_synthetic, &l.synthetic) {
            v["synthetic"] = json!({
                "corpora": hashes(&s.corpora)?,
                "lexicon": file_hash(&s.lexicon)?,
                "fallback": s.fallback,
            });
        }
        inputs.insert(code.clone(), v);
    }
    let inputs = json!({ "languages": inputs, "heldout_fraction": cfg.heldout_fraction });
    store.run("corpus", &inputs, |dir| {
        let h = cfg.heldout_fraction;
        let mut stats = Vec::new();
        for sub in ["natural", "heldout", "synthetic"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir, e))?;
        }
        for (code, l) in &cfg.languages {
            let natural = ingest_corpus(&l.corpora, code)?;
            if natural.is_empty() {
                return Err(Error::Data(format!("natural corpus for {code} is empty")));
            }
            let (train, dev, test) = split_corpus(&natural, (1.0 - h, h / 2.0, h / 2.0), named_stream("heldout"))?;
            let held = concat_corpora(&[dev, test])?;
            train.write(dir.join("natural").join(format!("{code}.txt")))?;
            held.write(dir.join("heldout").join(format!("{code}.txt")))?;
            stats.push(corpus_stats(&train));
            if let (true, Some(s)) = (wants_synthetic, &l.synthetic) {
                let src = ingest_corpus(&s.corpora, code)?;
                let lex = Lexicon::load(&s.lexicon, s.fallback)?;
                let syn = dictionary_translate(&src, &lex, named_stream("synthetic"))?;
                syn.write(dir.join("synthetic").join(format!("{code}.txt")))?;
                stats.push(corpus_stats(&syn));
            }
        }
        write_stats_csv(dir.join("stats.csv"), &stats)
    })
}

fn shared_stages(
    cfg: &ExperimentConfig,
    store: &StageStore,
    records: &mut Vec<StageRecord>,
) -> Result<(Shared, BpeTokenizer, BpeTokenizer)> {
    let wants_synthetic = cfg.variants.iter().any(|v| v.synthetic);
    let (corpus, rec) = corpus_stage(cfg, store, wants_synthetic)?;
    let corpus_dir = rec.dir.clone();
    records.push(rec);
    let langs: Vec<&String> = cfg.languages.keys().collect();

    let tok_inputs = json!({ "corpus": corpus.content_hash, "vocab_size": cfg.vocab_size });
    let (tok_meta, rec) = store.run("tokenizer", &tok_inputs, |dir| {
        let text = concat_corpora(&natural_train(&corpus_dir, &langs)?)?;
        train_bpe(&text, cfg.vocab_size)?.save(dir.join("vocab.txt"), dir.join("merges.txt"))
    })?;
    let tok_dir = rec.dir.clone();
    records.push(rec);

    let src = &cfg.source_checkpoint;
    let source_hash = tree_hash(src)?;
    let source_tok = BpeTokenizer::load(src.join("vocab.txt"), src.join("merges.txt"))?;
    let merge_inputs = json!({ "tokenizer": tok_meta.content_hash, "source": source_hash });
    let (merge, rec) = store.run("merge", &merge_inputs, |dir| {
        let target = BpeTokenizer::load(tok_dir.join("vocab.txt"), tok_dir.join("merges.txt"))?;
        let (merged, map) = merged_tokenizer(&source_tok, &target)?;
        merged.save(dir.join("vocab.txt"), dir.join("merges.txt"))?;
        write_json(&dir.join("overlap.json"), &overlap_report(&map))
    })?;
    let merge_dir = rec.dir.clone();
    records.push(rec);
    let merged = BpeTokenizer::load(merge_dir.join("vocab.txt"), merge_dir.join("merges.txt"))?;
    Ok((
        Shared {
            corpus,
            corpus_dir,
            merge,
            merge_dir,
            source_hash,
        },
        source_tok,
        merged,
    ))
}

fn init_stages(
    cfg: &ExperimentConfig,
    store: &StageStore,
    shared: &Shared,
    source_tok: &BpeTokenizer,
    merged: &BpeTokenizer,
    scheme: InitScheme,
    seed: u64,
) -> Result<(Vec<StageRecord>, PathBuf, StageMeta, PathBuf)> {
    let ext_hash = match (scheme, &cfg.external_vectors) {
        (InitScheme::Ofa, Some(p)) => Value::String(file_hash(p)?),
        _ => Value::Null,
    };
    let init_name = format!("init-{}-s{seed}", scheme.name());
    let inputs = json!({
        "merge": shared.merge.content_hash,
        "source": shared.source_hash,
        "external": ext_hash,
        "latent_dim": if scheme == InitScheme::Ofa { json!(cfg.latent_dim) } else { Value::Null },
        "neighbors": if scheme == InitScheme::Ofa { json!(cfg.neighbors) } else { Value::Null },
        "seed": seed,
    });
    let (init_meta, init_rec) = store.run(&init_name, &inputs, |dir| {
        let source = Checkpoint::load(&cfg.source_checkpoint)?;
        let map = crate::tokenizer::OverlapMap::between(source_tok.vocab(), merged.vocab())?;
        let ext = match scheme {
            InitScheme::Ofa => Some(load_external_embeddings(
                cfg.external_vectors.as_ref().ok_or_else(|| Error::Config("no external vectors".into()))?,
            )?),
            InitScheme::Random => None,
        };
        let (emb, report) = initialize(
            &source,
            source_tok,
            merged,
            &map,
            scheme,
            ext.as_ref(),
            cfg.latent_dim,
            cfg.neighbors,
            derive_seed(seed, named_stream("init")),
        )?;
        match emb {
            NewEmbeddings::Full(m) => m.save(dir.join("embedding.emb"))?,
            NewEmbeddings::Factorized(fe) => {
                EmbeddingMatrix::new(fe.coords)?.save(dir.join("coords.emb"))?;
                EmbeddingMatrix::new(fe.primitives)?.save(dir.join("primitives.emb"))?;
            }
        }
        write_json(&dir.join("init_report.json"), &report)
    })?;
    let init_dir = init_rec.dir.clone();

    let name = format!("transplant-{}-s{seed}", scheme.name());
    let inputs = json!({ "init": init_meta.content_hash, "merge": shared.merge.content_hash, "source": shared.source_hash });
    let (meta, rec) = store.run(&name, &inputs, |dir| {
        let source = Checkpoint::load(&cfg.source_checkpoint)?;
        let emb = if init_dir.join("embedding.emb").is_file() {
            NewEmbeddings::Full(EmbeddingMatrix::load(init_dir.join("embedding.emb"))?)
        } else {
            let coords = EmbeddingMatrix::load(init_dir.join("coords.emb"))?.values;
            let primitives = EmbeddingMatrix::load(init_dir.join("primitives.emb"))?.values;
            NewEmbeddings::Factorized(FactorizedEmbedding {
                coords,
                primitives,
                singular_values: Vec::new(),
            })
        };
        let ckpt = transplant(&source, emb, merged)?;
        save_model(dir, &ckpt, merged)
    })?;
    let dir = rec.dir.clone();
    Ok((vec![init_rec, rec], init_dir, meta, dir))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Heldout {
    /// Language → mean masked-LM loss on its held-out sentences.
    loss: std::collections::BTreeMap<String, f64>,
    final_train_loss: f64,
}

fn eval_stage(
    cfg: &ExperimentConfig,
    store: &StageStore,
    name: &str,
    model_hash: &str,
    model_dir: &Path,
    seed: u64,
) -> Result<(StageRecord, PathBuf)> {
    let mut data = serde_json::Map::new();
    for (code, l) in &cfg.languages {
        if let Some(e) = &l.eval {
            data.insert(code.clone(), json!(hashes(&[e.train.clone(), e.dev.clone(), e.test.clone()])?));
        }
    }
    let hyper = HeadHyper {
        seed: derive_seed(seed, named_stream("classifier")),
        ..cfg.classifier.clone()
    };
    let inputs = json!({ "model": model_hash, "data": data, "classifier": hyper });
    let (_, rec) = store.run(name, &inputs, |dir| {
        let (ckpt, tok) = load_model(model_dir)?;
        let mut scores = std::collections::BTreeMap::new();
        for (code, l) in &cfg.languages {
            let Some(e) = &l.eval else { continue };
            let train = load_sib_dataset(&e.train, Split::Train)?;
            let dev = load_sib_dataset(&e.dev, Split::Dev)?;
            let test = load_sib_dataset(&e.test, Split::Test)?;
            let (head, tuned) = finetune_classifier(&ckpt, &tok, &train, &dev, &hyper)?;
            scores.insert(code.clone(), evaluate(tuned.as_ref().unwrap_or(&ckpt), &tok, &head, &test)?);
        }
        write_json(&dir.join("scores.json"), &scores)
    })?;
    let path = rec.dir.join("scores.json");
    Ok((rec, path))
}

struct VariantOutput {
    records: Vec<StageRecord>,
    checkpoint: PathBuf,
    heldout: PathBuf,
    scores: PathBuf,
}

#[allow(clippy::too_many_arguments)]
fn variant_stages(
    cfg: &ExperimentConfig,
    store: &StageStore,
    shared: &Shared,
    merged: &BpeTokenizer,
    variant: Variant,
    seed: u64,
    transplant_meta: &StageMeta,
    transplant_dir: &Path,
) -> Result<VariantOutput> {
    let name = format!("pretrain-{}-s{seed}", variant.name());
    let run = TrainRun {
        seed: derive_seed(seed, named_stream("pretrain")),
        ..cfg.pretrain.clone()
    };
    let inputs = json!({
        "transplant": transplant_meta.content_hash,
        "corpus": shared.corpus.content_hash,
        "synthetic": variant.synthetic,
        "masking": cfg.masking,
        "pretrain": run,
    });
    let (meta, rec) = store.run(&name, &inputs, |dir| {
        let (start, _) = load_model(transplant_dir)?;
        let langs: Vec<&String> = cfg.languages.keys().collect();
        let mut parts = natural_train(&shared.corpus_dir, &langs)?;
        if variant.synthetic {
            for l in &langs {
                let p = shared.corpus_dir.join("synthetic").join(format!("{l}.txt"));
                if p.is_file() {
                    parts.push(ingest_corpus(&[p], l)?);
                }
            }
        }
        let text = concat_corpora(&parts)?;
        let (ckpt, curve) = pretrain(&start, &text, merged, &cfg.masking, &run)?;
        save_model(&dir.join("model"), &ckpt, merged)?;
        write_loss_curve(dir.join("loss.csv"), &curve)?;
        let mut loss = std::collections::BTreeMap::new();
        for l in &langs {
            let held = ingest_corpus(&[shared.corpus_dir.join("heldout").join(format!("{l}.txt"))], l)?;
            let seqs = encode_corpus(&held, merged, ckpt.config.max_seq_len);
            if !seqs.is_empty() {
                loss.insert((*l).clone(), heldout_loss(&ckpt, &seqs, &cfg.masking, named_stream("heldout-mask"))?);
            }
        }
        let final_train_loss = curve.last().map_or(f64::NAN, |c| c.1);
        write_json(&dir.join("heldout.json"), &Heldout { loss, final_train_loss })
    })?;
    let model_dir = rec.dir.join("model");
    let heldout = rec.dir.join("heldout.json");
    let (eval_rec, scores) = eval_stage(
        cfg,
        store,
        &format!("eval-{}-s{seed}", variant.name()),
        &meta.content_hash,
        &model_dir,
        seed,
    )?;
    Ok(VariantOutput {
        records: vec![rec, eval_rec],
        checkpoint: model_dir,
        heldout,
        scores,
    })
}

type VariantJob<'a> = Box<dyn FnOnce() -> Result<(String, u64, Option<VariantOutput>, StageRecord, PathBuf)> + Send + 'a>;

/// Executes every stage of the experiment matrix, reusing finished stages,
/// then writes the report and `manifest.json` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started_at = now();
    let threads = worker_threads();
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let store = StageStore::new(out)?;
    let mut records = Vec::new();
    let (shared, source_tok, merged) = shared_stages(cfg, &store, &mut records)?;

    let mut schemes: Vec<InitScheme> = cfg.variants.iter().map(|v| v.init).collect();
    schemes.sort();
    schemes.dedup();
    let mut init_jobs: Vec<Box<dyn FnOnce() -> Result<_> + Send + '_>> = Vec::new();
    for &scheme in &schemes {
        for &seed in &cfg.seeds {
            let (shared, source_tok, merged, store) = (&shared, &source_tok, &merged, &store);
            init_jobs.push(Box::new(move || {
                init_stages(cfg, store, shared, source_tok, merged, scheme, seed).map(|r| (scheme, seed, r))
            }));
        }
    }
    let inits = run_jobs(init_jobs, threads)?;

    let mut embeddings = Vec::new();
    let mut jobs: Vec<VariantJob<'_>> = Vec::new();
    for (scheme, seed, (recs, init_dir, _, _)) in &inits {
        records.extend(recs.iter().cloned());
        embeddings.push(Artifact {
            model: scheme.name().into(),
            seed: *seed,
            path: init_dir.join("init_report.json"),
        });
    }
    if cfg.include_source {
        for &seed in &cfg.seeds {
            let (store, shared) = (&store, &shared);
            jobs.push(Box::new(move || {
                let (rec, scores) = eval_stage(
                    cfg,
                    store,
                    &format!("eval-{SOURCE_MODEL}-s{seed}"),
                    &shared.source_hash,
                    &cfg.source_checkpoint,
                    seed,
                )?;
                Ok((SOURCE_MODEL.to_string(), seed, None, rec, scores))
            }));
        }
    }
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            let (_, _, (_, _, tmeta, tdir)) = inits
                .iter()
                .find(|(s, sd, _)| *s == variant.init && *sd == seed)
                .expect("init ran for every scheme and seed");
            let (store, shared, merged) = (&store, &shared, &merged);
            jobs.push(Box::new(move || {
                let v = variant_stages(cfg, store, shared, merged, variant, seed, tmeta, tdir)?;
                let scores = v.scores.clone();
                let rec = v.records[1].clone();
                Ok((variant.name(), seed, Some(v), rec, scores))
            }));
        }
    }
    let results = run_jobs(jobs, threads)?;

    let mut checkpoints = Vec::new();
    let mut evaluations = Vec::new();
    let mut heldout = Vec::new();
    for (model, seed, v, eval_rec, scores) in results {
        match v {
            Some(v) => {
                records.extend(v.records);
                checkpoints.push(Artifact {
                    model: model.clone(),
                    seed,
                    path: v.checkpoint,
                });
                heldout.push(Artifact {
                    model: model.clone(),
                    seed,
                    path: v.heldout,
                });
            }
            None => records.push(eval_rec),
        }
        evaluations.push(Artifact {
            model,
            seed,
            path: scores,
        });
    }

    let mut models: Vec<String> = Vec::new();
    if cfg.include_source {
        models.push(SOURCE_MODEL.into());
    }
    models.extend(cfg.variants.iter().map(Variant::name));
    let mut manifest = RunManifest {
        config_hash: cfg.hash(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        started_at,
        finished_at: 0,
        threads,
        output_dir: out.clone(),
        models,
        languages: cfg.eval_languages().into_iter().map(String::from).collect(),
        seeds: cfg.seeds.clone(),
        tokenizer: shared.merge_dir.clone(),
        embeddings,
        checkpoints,
        evaluations,
        heldout,
        reports: Vec::new(),
        stages: records,
    };
    let report = render_report(&manifest)?;
    let rdir = out.join("report");
    std::fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
    for (file, text) in [
        ("benchmark.md", &report.markdown),
        ("benchmark.csv", &report.csv),
        ("benchmark_seeds.csv", &report.seed_csv),
        ("heldout.csv", &report.heldout_csv),
    ] {
        let p = rdir.join(file);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        manifest.reports.push(p);
    }
    manifest.finished_at = now();
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jobs_return_in_order_and_first_error_wins() {
        let jobs: Vec<Box<dyn FnOnce() -> Result<usize> + Send>> =
            (0..20usize).map(|i| Box::new(move || Ok(i * i)) as Box<dyn FnOnce() -> Result<usize> + Send>).collect();
        assert_eq!(run_jobs(jobs, 4).unwrap(), (0..20).map(|i| i * i).collect::<Vec<_>>());
        let jobs: Vec<Box<dyn FnOnce() -> Result<usize> + Send>> = (0..6usize)
            .map(|i| {
                Box::new(move || if i >= 3 { Err(Error::Data(format!("job {i}"))) } else { Ok(i) })
                    as Box<dyn FnOnce() -> Result<usize> + Send>
            })
            .collect();
        assert!(run_jobs(jobs, 3).unwrap_err().to_string().contains("job 3"));
    }
}
