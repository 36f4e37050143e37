#![allow(dead_code)]

use std::path::{Path, PathBuf};

use graftbench::mlm::{MaskingPolicy, ModelConfig, TrainRun};
use graftbench::pipeline::{save_model, train_source_model};
use graftbench::toy::{BundleSizes, Lang, ToyBundle, ToyConfig, ToyWorld};
use serde_json::{json, Value};

pub struct ToySetup {
    pub root: PathBuf,
    pub bundle: ToyBundle,
    pub source_dir: PathBuf,
}

/// A small toy bundle plus a briefly trained source model, under `root`.
pub fn toy_setup(root: &Path) -> ToySetup {
    let world = ToyWorld::generate(&ToyConfig::default()).unwrap();
    let sizes = BundleSizes {
        corpus_a: 300,
        corpus_b: 120,
        train: 28,
        dev: 14,
        test: 28,
    };
    let bundle = world.write_bundle(root.join("data"), &sizes).unwrap();
    let corpus_a = world.corpus(Lang::A, sizes.corpus_a, 1);
    let run = TrainRun {
        steps: 30,
        batch_size: 8,
        ..Default::default()
    };
    let shape = ModelConfig::new(0, 16, 1, 2, 24);
    let (ckpt, tok, _) = train_source_model(&corpus_a, 120, &shape, &MaskingPolicy::default(), &run).unwrap();
    let source_dir = root.join("source");
    save_model(&source_dir, &ckpt, &tok).unwrap();
    ToySetup {
        root: root.to_path_buf(),
        bundle,
        source_dir,
    }
}

/// Config JSON with paths relative to `setup.root`.
pub fn toy_config(setup: &ToySetup, out: &str) -> Value {
    let rel = |p: &Path| p.strip_prefix(&setup.root).unwrap().to_string_lossy().into_owned();
    let b = &setup.bundle;
    json!({
        "output_dir": out,
        "source_checkpoint": rel(&setup.source_dir),
        "languages": {
            "qab": {
                "corpora": [rel(&b.corpus_b)],
                "synthetic": { "corpora": [rel(&b.corpus_a)], "lexicon": rel(&b.lexicon) },
                "eval": { "train": rel(&b.train), "dev": rel(&b.dev), "test": rel(&b.test) }
            }
        },
        "external_vectors": rel(&b.vectors),
        "vocab_size": 100,
        "pretrain": { "steps": 12, "batch_size": 8 },
        "classifier": { "steps": 15, "batch_size": 8, "eval_every": 5 },
        "include_source": true,
        "seeds": [0]
    })
}

pub fn write_config(setup: &ToySetup, name: &str, value: &Value) -> PathBuf {
    let p = setup.root.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}
