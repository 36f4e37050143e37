use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graftbench::corpus::{
    corpus_stats, dictionary_translate, ingest_corpus, write_stats_csv, Corpus, Fallback, Lexicon,
};
use graftbench::eval::{evaluate, finetune_classifier, load_sib_dataset, HeadHyper, Split};
use graftbench::mlm::{pretrain, write_loss_curve, AdamHyper, MaskingPolicy, ModelConfig, TrainRun};
use graftbench::ofa::{
    factorize, load_external_embeddings, source_embedding, transplant, EmbeddingMatrix, FactorizedEmbedding,
    NewEmbeddings, DEFAULT_NEIGHBORS,
};
use graftbench::pipeline::{
    initialize, load_model, render_report, run_experiment, save_model, train_source_model, validate_config,
    InitScheme, RunManifest,
};
use graftbench::tokenizer::{overlap_report, train_bpe, BpeTokenizer, OverlapMap};
use graftbench::toy::{BundleSizes, ToyConfig, ToyWorld};
use graftbench::{Error, Result};

#[derive(Parser)]
#[command(name = "graftbench", version, about = "Vocabulary extension and embedding initialization for low-resource MLM adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand understands.
#[derive(Args, Clone)]
struct Common {
    /// JSON config file (experiments: `run`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file, for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Random,
    Ofa,
}

#[derive(Subcommand)]
enum Command {
    /// Train a BPE tokenizer; writes vocab.txt and merges.txt.
    TrainTokenizer {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value = "und")]
        lang: String,
        #[arg(long)]
        vocab_size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Extend a source tokenizer's vocabulary with a target tokenizer's novel tokens.
    MergeVocab {
        /// Directory with the source vocab.txt and merges.txt.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Truncated SVD of a checkpoint's token embedding.
    Factorize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        latent_dim: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Initialize embeddings for a merged tokenizer.
    InitEmbeddings {
        /// Source model directory (checkpoint plus tokenizer).
        #[arg(long)]
        source: PathBuf,
        /// Merged tokenizer directory.
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
        neighbors: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Swap in new embeddings and tokenizer, keeping every other tensor.
    Transplant {
        #[arg(long)]
        source: PathBuf,
        /// Output of init-embeddings.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Masked-LM training; from scratch unless --checkpoint is given.
    Pretrain {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value = "und")]
        lang: String,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Tokenizer size when training from scratch.
        #[arg(long, default_value_t = 1000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a classifier and score it on a test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Update encoder weights too.
        #[arg(long)]
        unfreeze: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a full experiment from --config.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Print the report of a finished run (its manifest.json or output directory).
    Report {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Corpus size statistics.
    Stats {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value = "und")]
        lang: String,
        #[command(flatten)]
        common: Common,
    },
    /// Dictionary-translate a corpus with a word lexicon.
    Synth {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long, default_value = "und")]
        lang: String,
        /// Drop untranslatable words instead of copying them.
        #[arg(long)]
        drop_unknown: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic two-language data bundle.
    ToyData {
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .ok_or_else(|| Error::Argument("--out is required".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn load_tokenizer(dir: &Path) -> Result<BpeTokenizer> {
    BpeTokenizer::load(dir.join("vocab.txt"), dir.join("merges.txt"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_corpus(paths: &[PathBuf], lang: &str) -> Result<Corpus> {
    let c = ingest_corpus(paths, lang)?;
    if c.is_empty() {
        return Err(Error::Data("corpus is empty".into()));
    }
    Ok(c)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainTokenizer {
            corpus,
            lang,
            vocab_size,
            common,
        } => {
            let dir = out_dir(&common)?;
            let tok = train_bpe(&read_corpus(&corpus, &lang)?, vocab_size)?;
            tok.save(dir.join("vocab.txt"), dir.join("merges.txt"))?;
            println!("{} tokens, {} merges", tok.vocab().len(), tok.merges().len());
        }
        Command::MergeVocab { source, target, common } => {
            let dir = out_dir(&common)?;
            let (merged, map) = graftbench::pipeline::merged_tokenizer(&load_tokenizer(&source)?, &load_tokenizer(&target)?)?;
            merged.save(dir.join("vocab.txt"), dir.join("merges.txt"))?;
            let report = overlap_report(&map);
            write_json(&dir.join("overlap.json"), &report)?;
            println!(
                "{} tokens: {} shared, {} novel",
                merged.vocab().len(),
                report.shared_count,
                report.novel_count
            );
        }
        Command::Factorize {
            checkpoint,
            latent_dim,
            common,
        } => {
            let dir = out_dir(&common)?;
            let (ckpt, _) = load_model(&checkpoint)?;
            let fe = factorize(&source_embedding(&ckpt)?, latent_dim)?;
            EmbeddingMatrix::new(fe.coords.clone())?.save(dir.join("coords.emb"))?;
            EmbeddingMatrix::new(fe.primitives.clone())?.save(dir.join("primitives.emb"))?;
            let sv: String = fe.singular_values.iter().map(|s| format!("{s}\n")).collect();
            let p = dir.join("singular_values.txt");
            std::fs::write(&p, sv).map_err(|e| Error::io(&p, e))?;
            println!("latent dim {latent_dim}, discarded energy {:.6e}", fe.discarded_energy());
        }
        Command::InitEmbeddings {
            source,
            tokenizer,
            scheme,
            vectors,
            latent_dim,
            neighbors,
            common,
        } => {
            let dir = out_dir(&common)?;
            let (ckpt, source_tok) = load_model(&source)?;
            let merged = load_tokenizer(&tokenizer)?;
            let map = OverlapMap::between(source_tok.vocab(), merged.vocab())?;
            let ext = vectors.as_ref().map(load_external_embeddings).transpose()?;
            let scheme = match scheme {
                Scheme::Random => InitScheme::Random,
                Scheme::Ofa => InitScheme::Ofa,
            };
            let (emb, report) = initialize(
                &ckpt,
                &source_tok,
                &merged,
                &map,
                scheme,
                ext.as_ref(),
                latent_dim,
                neighbors,
                common.seed,
            )?;
            match emb {
                NewEmbeddings::Full(m) => m.save(dir.join("embedding.emb"))?,
                NewEmbeddings::Factorized(fe) => {
                    EmbeddingMatrix::new(fe.coords)?.save(dir.join("coords.emb"))?;
                    EmbeddingMatrix::new(fe.primitives)?.save(dir.join("primitives.emb"))?;
                }
            }
            write_json(&dir.join("init_report.json"), &report)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Transplant {
            source,
            embeddings,
            tokenizer,
            common,
        } => {
            let dir = out_dir(&common)?;
            let (ckpt, _) = load_model(&source)?;
            let tok = load_tokenizer(&tokenizer)?;
            let emb = if embeddings.join("embedding.emb").is_file() {
                NewEmbeddings::Full(EmbeddingMatrix::load(embeddings.join("embedding.emb"))?)
            } else {
                NewEmbeddings::Factorized(FactorizedEmbedding {
                    coords: EmbeddingMatrix::load(embeddings.join("coords.emb"))?.values,
                    primitives: EmbeddingMatrix::load(embeddings.join("primitives.emb"))?.values,
                    singular_values: Vec::new(),
                })
            };
            save_model(&dir, &transplant(&ckpt, emb, &tok)?, &tok)?;
            println!("wrote {}", dir.display());
        }
        Command::Pretrain {
            checkpoint,
            corpus,
            lang,
            steps,
            batch_size,
            learning_rate,
            vocab_size,
            dim,
            layers,
            heads,
            max_len,
            common,
        } => {
            let dir = out_dir(&common)?;
            let text = read_corpus(&corpus, &lang)?;
            let run = TrainRun {
                steps,
                batch_size,
                adam: AdamHyper {
                    learning_rate,
                    ..Default::default()
                },
                seed: common.seed,
            };
            let policy = MaskingPolicy::default();
            let (ckpt, tok, curve) = match checkpoint {
                Some(src) => {
                    let (start, tok) = load_model(&src)?;
                    let (ckpt, curve) = pretrain(&start, &text, &tok, &policy, &run)?;
                    (ckpt, tok, curve)
                }
                None => {
                    let shape = ModelConfig::new(0, dim, layers, heads, max_len);
                    train_source_model(&text, vocab_size, &shape, &policy, &run)?
                }
            };
            save_model(&dir, &ckpt, &tok)?;
            write_loss_curve(dir.join("loss.csv"), &curve)?;
            if let Some((s, l)) = curve.last() {
                println!("step {s}: loss {l:.4}");
            }
        }
        Command::Evaluate {
            checkpoint,
            train,
            dev,
            test,
            unfreeze,
            common,
        } => {
            let (ckpt, tok) = load_model(&checkpoint)?;
            let hyper = HeadHyper {
                seed: common.seed,
                unfreeze,
                ..Default::default()
            };
            let train = load_sib_dataset(&train, Split::Train)?;
            let dev = load_sib_dataset(&dev, Split::Dev)?;
            let test = load_sib_dataset(&test, Split::Test)?;
            let (head, tuned) = finetune_classifier(&ckpt, &tok, &train, &dev, &hyper)?;
            let report = evaluate(tuned.as_ref().unwrap_or(&ckpt), &tok, &head, &test)?;
            if common.out.is_some() {
                write_json(&out_dir(&common)?.join("scores.json"), &report)?;
            }
            println!(
                "weighted F1 {:.4}  accuracy {:.4}  ({} test examples)",
                report.weighted_f1,
                report.accuracy,
                test.len()
            );
        }
        Command::Run { common } => {
            let path = common
                .config
                .ok_or_else(|| Error::Argument("--config is required".into()))?;
            let mut cfg = validate_config(&path)?;
            if let Some(out) = common.out {
                cfg.output_dir = std::path::absolute(&out).map_err(|e| Error::io(&out, e))?;
            }
            let manifest = run_experiment(&cfg)?;
            print!("{}", std::fs::read_to_string(&manifest.reports[0]).map_err(|e| Error::io(&manifest.reports[0], e))?);
        }
        Command::Report { manifest, common } => {
            let path = match (manifest, common.out) {
                (Some(m), _) => m,
                (None, Some(dir)) => dir.join("manifest.json"),
                (None, None) => return Err(Error::Argument("--manifest or --out is required".into())),
            };
            let report = render_report(&RunManifest::load(&path)?)?;
            print!("{}", report.markdown);
        }
        Command::Stats { corpus, lang, common } => {
            let stats: Vec<_> = corpus
                .iter()
                .map(|p| ingest_corpus(std::slice::from_ref(p), &lang).map(|c| corpus_stats(&c)))
                .collect::<Result<_>>()?;
            for (p, s) in corpus.iter().zip(&stats) {
                println!("{}\t{} MB\t{} sentences", p.display(), s.size_mb_display(), s.sentence_count);
            }
            if common.out.is_some() {
                write_stats_csv(out_dir(&common)?.join("stats.csv"), &stats)?;
            }
        }
        Command::Synth {
            corpus,
            lexicon,
            lang,
            drop_unknown,
            common,
        } => {
            let fallback = if drop_unknown { Fallback::Drop } else { Fallback::Passthrough };
            let lex = Lexicon::load(&lexicon, fallback)?;
            let mut out = dictionary_translate(&read_corpus(&corpus, &lang)?, &lex, common.seed)?;
            out.lang = lang;
            let path = common
                .out
                .ok_or_else(|| Error::Argument("--out is required".into()))?;
            out.write(&path)?;
            println!("{} sentences → {}", out.len(), path.display());
        }
        Command::ToyData { common } => {
            let dir = out_dir(&common)?;
            let cfg: ToyConfig = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::parse(p, e.line(), e.to_string()))?
                }
                None => ToyConfig {
                    seed: common.seed,
                    ..Default::default()
                },
            };
            let b = ToyWorld::generate(&cfg)?.write_bundle(&dir, &BundleSizes::default())?;
            println!("wrote {}", b.corpus_a.parent().unwrap_or(&dir).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
