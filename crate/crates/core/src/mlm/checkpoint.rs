use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const TOKEN_EMBEDDING: &str = "token_embedding";
pub const POSITION_EMBEDDING: &str = "position_embedding";
pub const OUTPUT_EMBEDDING: &str = "output_embedding";
pub const FORMAT_VERSION: &str = "1";

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy)]
pub(crate) enum Shape {
    Vector,
    Square,
    Up,
    UpBias,
    Down,
}

/// Per-layer tensors in canonical order. The model code indexes layer
/// parameters by position in this list.
pub(crate) const LAYER_TENSORS: [(&str, Shape); 16] = [
    ("attn_norm.gain", Shape::Vector),
    ("attn_norm.bias", Shape::Vector),
    ("attn.query.weight", Shape::Square),
    ("attn.query.bias", Shape::Vector),
    ("attn.key.weight", Shape::Square),
    ("attn.key.bias", Shape::Vector),
    ("attn.value.weight", Shape::Square),
    ("attn.value.bias", Shape::Vector),
    ("attn.output.weight", Shape::Square),
    ("attn.output.bias", Shape::Vector),
    ("ffn_norm.gain", Shape::Vector),
    ("ffn_norm.bias", Shape::Vector),
    ("ffn.up.weight", Shape::Up),
    ("ffn.up.bias", Shape::UpBias),
    ("ffn.down.weight", Shape::Down),
    ("ffn.down.bias", Shape::Vector),
];

pub fn layer_tensor_name(layer: usize, suffix: &str) -> String {
    format!("layers.{layer}.{suffix}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_true")]
    pub tie_embeddings: bool,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Config with `ffn_dim = 4·dim`, tied embeddings and eps 1e-5.
    pub fn new(vocab_size: usize, dim: usize, layers: usize, heads: usize, max_seq_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            dim,
            layers,
            heads,
            ffn_dim: 4 * dim,
            max_seq_len,
            tie_embeddings: true,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Argument(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(Error::Argument("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Name and shape of every tensor, in canonical order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (v, d, f) = (self.vocab_size, self.dim, self.ffn_dim);
        let mut out = vec![
            (TOKEN_EMBEDDING.to_string(), vec![v, d]),
            (POSITION_EMBEDDING.to_string(), vec![self.max_seq_len, d]),
        ];
        for l in 0..self.layers {
            for (suffix, kind) in LAYER_TENSORS {
                let shape = match kind {
                    Shape::Vector => vec![d],
                    Shape::Square => vec![d, d],
                    Shape::Up => vec![d, f],
                    Shape::UpBias => vec![f],
                    Shape::Down => vec![f, d],
                };
                out.push((layer_tensor_name(l, suffix), shape));
            }
        }
        out.push(("final_norm.gain".into(), vec![d]));
        out.push(("final_norm.bias".into(), vec![d]));
        if !self.tie_embeddings {
            out.push((OUTPUT_EMBEDDING.into(), vec![v, d]));
        }
        out
    }
}

/// Whether a tensor is indexed by vocabulary id.
pub fn is_embedding_tensor(name: &str) -> bool {
    name == TOKEN_EMBEDDING || name == OUTPUT_EMBEDDING
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub type TensorMap = BTreeMap<String, Tensor>;

/// Model weights plus the identity of the tokenizer they were trained with.
/// With tied embeddings the output projection is `token_embedding`
/// transposed and is not stored separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: TensorMap,
    pub tokenizer_ref: Option<String>,
}

/// Random weights: N(0, 0.02) for matrices and embeddings, layernorm gains 1,
/// all biases 0.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut tensors = TensorMap::new();
    for (i, (name, shape)) in config.tensor_shapes().into_iter().enumerate() {
        let mut t = Tensor::zeros(&shape);
        if name.ends_with(".gain") {
            t.data.fill(1.0);
        } else if !name.ends_with(".bias") {
            let mut rng = stream_rng(seed, i as u64);
            t.data.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
        tensors.insert(name, t);
    }
    Ok(Checkpoint {
        config: config.clone(),
        tensors,
        tokenizer_ref: None,
    })
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into `tensors.bin`.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    config: ModelConfig,
    tokenizer_ref: Option<String>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))
    }

    /// Checks that every expected tensor is present with the right shape and
    /// finite values, and that there are no extras.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.tensor_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.tensor(&name)?;
            if t.shape != shape {
                return Err(Error::Shape(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("`{name}` has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Writes `manifest.json` and `tensors.bin` (little-endian f32, row-major,
    /// manifest order) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bin = Vec::with_capacity(4 * self.num_parameters());
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset: bin.len(),
            });
            for &v in &t.data {
                bin.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION.into(),
            config: self.config.clone(),
            tokenizer_ref: self.tokenizer_ref.clone(),
            tensors: entries,
        };
        let mpath = dir.join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join("tensors.bin");
        std::fs::write(&bpath, bin).map_err(|e| Error::io(&bpath, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join("manifest.json");
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(&mpath, e.line(), e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                &mpath,
                0,
                format!("unsupported format version {:?}", manifest.format_version),
            ));
        }
        let bpath = dir.join("tensors.bin");
        let bin = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let mut tensors = TensorMap::new();
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let end = entry.offset + 4 * n;
            let bytes = bin.get(entry.offset..end).ok_or_else(|| {
                Error::parse(&bpath, 0, format!("tensor `{}` runs past end of file", entry.name))
            })?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.insert(
                entry.name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            );
        }
        let ckpt = Checkpoint {
            config: manifest.config,
            tensors,
            tokenizer_ref: manifest.tokenizer_ref,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = ModelConfig::new(50, 32, 2, 4, 16);
        assert_eq!(cfg.head_dim(), 8);
        let a = init_model(&cfg, 3).unwrap();
        let b = init_model(&cfg, 3).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(!a.tensors.contains_key(OUTPUT_EMBEDDING));
        assert_ne!(a, init_model(&cfg, 4).unwrap());
    }

    #[test]
    fn init_std_is_two_hundredths() {
        // token embedding 2000x64 → 128,000 draws
        let cfg = ModelConfig::new(2000, 64, 1, 4, 8);
        let ckpt = init_model(&cfg, 1).unwrap();
        let x = &ckpt.tensor(TOKEN_EMBEDDING).unwrap().data;
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // standard error of a normal sample std is σ/sqrt(2n)
        assert!((std - 0.02).abs() < 3.0 * 0.02 / (2.0 * n).sqrt(), "{std}");
        let gain = &ckpt.tensor("layers.0.attn_norm.gain").unwrap().data;
        assert!(gain.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(ModelConfig::new(10, 30, 1, 4, 8).validate().is_err());
        assert!(ModelConfig::new(10, 32, 0, 4, 8).validate().is_err());
        assert!(init_model(&ModelConfig::new(0, 32, 1, 4, 8), 0).is_err());
    }

    #[test]
    fn save_load_roundtrip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::new(20, 8, 1, 2, 6);
        cfg.tie_embeddings = false;
        let mut ckpt = init_model(&cfg, 5).unwrap();
        ckpt.tokenizer_ref = Some("abc".into());
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.tokenizer_ref.as_deref(), Some("abc"));
        for (name, t) in &ckpt.tensors {
            let b = &back.tensors[name];
            assert!(t.data.iter().zip(&b.data).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        // resaving the loaded checkpoint is byte-identical
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("tensors.bin")).unwrap(),
            std::fs::read(dir2.path().join("tensors.bin")).unwrap()
        );
    }

    #[test]
    fn load_rejects_wrong_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let mut ckpt = init_model(&ModelConfig::new(20, 8, 1, 2, 6), 5).unwrap();
        ckpt.config.vocab_size = 21;
        ckpt.save(dir.path()).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Shape(_))));
    }
}
