use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, NUM_CLASSES, SIB_LABELS};
use super::metrics::{weighted_f1, EvalReport};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlm::{adam_step, encode_text, AdamHyper, AdamState, Checkpoint, Grads, Model, Tensor, TensorMap};
use crate::rng::{derive_seed, named_stream, stream_rng};
use crate::tokenizer::{BpeTokenizer, PAD_ID};

const WEIGHT: &str = "head.weight";
const BIAS: &str = "head.bias";

/// Linear classifier over pooled sentence representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// classes × D
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        ClassifierHead {
            weight: Matrix::zeros(classes, dim),
            bias: vec![0.0; classes],
        }
    }

    /// Weights drawn from N(0, 0.02), zero bias.
    pub fn init(classes: usize, dim: usize, seed: u64) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut rng = stream_rng(seed, named_stream("head-init"));
        let data = (0..classes * dim).map(|_| normal.sample(&mut rng)).collect();
        ClassifierHead {
            weight: Matrix::from_vec(classes, dim, data).expect("sized"),
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes())
            .map(|c| self.bias[c] + self.weight.row(c).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Argmax; ties go to the lower class index.
    pub fn predict_row(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate().skip(1) {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    fn to_tensors(&self) -> TensorMap {
        let mut m = TensorMap::new();
        let (c, d) = self.weight.shape();
        m.insert(WEIGHT.into(), Tensor { shape: vec![c, d], data: self.weight.data().to_vec() });
        m.insert(BIAS.into(), Tensor { shape: vec![c], data: self.bias.clone() });
        m
    }

    fn from_tensors(m: &TensorMap) -> Self {
        let w = &m[WEIGHT];
        ClassifierHead {
            weight: Matrix::from_vec(w.shape[0], w.shape[1], w.data.clone()).expect("sized"),
            bias: m[BIAS].data.clone(),
        }
    }

    /// Adds the gradient of mean cross-entropy for one example (scaled by
    /// `1/n`) and returns the gradient w.r.t. the input features.
    fn backward(&self, x: &[f64], label: usize, n: f64, grads: &mut TensorMap) -> Vec<f64> {
        let z = self.logits(x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let d = x.len();
        let mut dx = vec![0.0; d];
        for (c, e) in exps.iter().enumerate() {
            let dz = (e / sum - if c == label { 1.0 } else { 0.0 }) / n;
            grads.get_mut(BIAS).unwrap().data[c] += dz;
            let gw = &mut grads.get_mut(WEIGHT).unwrap().data[c * d..(c + 1) * d];
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += dz * v);
            dx.iter_mut().zip(self.weight.row(c)).for_each(|(g, w)| *g += dz * w);
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadHyper {
    pub steps: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamHyper,
    /// Dev set is scored every this many steps to pick the best snapshot.
    pub eval_every: usize,
    pub seed: u64,
    /// Also update encoder weights.
    pub unfreeze: bool,
}

impl Default for HeadHyper {
    fn default() -> Self {
        HeadHyper {
            steps: 300,
            batch_size: 32,
            adam: AdamHyper {
                learning_rate: 1e-2,
                ..Default::default()
            },
            eval_every: 10,
            seed: 0,
            unfreeze: false,
        }
    }
}

fn pooled(model: &Model, ids: &[u32]) -> (crate::mlm::SeqCache, Vec<f64>, usize) {
    let cache = model.forward_seq(ids);
    let d = model.cfg.dim;
    let mut mean = vec![0.0; d];
    let mut n = 0;
    for (i, &id) in ids.iter().enumerate() {
        if id != PAD_ID {
            mean.iter_mut().zip(&cache.hidden[i * d..(i + 1) * d]).for_each(|(m, h)| *m += h);
            n += 1;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    (cache, mean, n)
}

fn encode_all(ckpt: &Checkpoint, tok: &BpeTokenizer, texts: &[&str]) -> Result<Vec<Vec<u32>>> {
    if tok.vocab().len() != ckpt.config.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer has {} tokens but the model vocabulary is {}",
            tok.vocab().len(),
            ckpt.config.vocab_size
        )));
    }
    Ok(texts.iter().map(|t| encode_text(tok, t, ckpt.config.max_seq_len)).collect())
}

/// Mean of the final hidden states over non-pad positions, one row per text.
pub fn sentence_features(ckpt: &Checkpoint, tok: &BpeTokenizer, texts: &[&str]) -> Result<Matrix> {
    let seqs = encode_all(ckpt, tok, texts)?;
    let model = Model::new(ckpt)?;
    let d = ckpt.config.dim;
    let mut out = Matrix::zeros(seqs.len(), d);
    for (i, s) in seqs.iter().enumerate() {
        model.check_sequence(s)?;
        out.row_mut(i).copy_from_slice(&pooled(&model, s).1);
    }
    Ok(out)
}

/// Deterministic stream of shuffled example indices, reshuffled each epoch.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        BatchStream {
            order: (0..n).collect(),
            cursor: n,
            epoch: 0,
            seed: derive_seed(seed, named_stream("head-order")),
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.sort_unstable();
                self.order.shuffle(&mut stream_rng(self.seed, self.epoch));
                self.epoch += 1;
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn check_hyper(hyper: &HeadHyper) -> Result<()> {
    hyper.adam.validate()?;
    if hyper.batch_size == 0 || hyper.eval_every == 0 {
        return Err(Error::Argument("batch_size and eval_every must be positive".into()));
    }
    Ok(())
}

fn f1_of(preds: &[usize], golds: &[usize], classes: usize) -> Result<f64> {
    let labels: Vec<usize> = (0..classes).collect();
    Ok(weighted_f1(preds, golds, &labels)?.weighted_f1)
}

/// Trains a softmax-regression head on fixed features with Adam. When a dev
/// set is given, the head with the best dev weighted F1 (earliest on ties)
/// is returned, otherwise the final head.
pub fn train_head(
    train_x: &Matrix,
    train_y: &[usize],
    dev: Option<(&Matrix, &[usize])>,
    classes: usize,
    hyper: &HeadHyper,
) -> Result<ClassifierHead> {
    check_hyper(hyper)?;
    if train_x.rows() == 0 || train_x.rows() != train_y.len() {
        return Err(Error::Argument("training set is empty or mislabelled".into()));
    }
    if let Some(&bad) = train_y.iter().find(|&&y| y >= classes) {
        return Err(Error::Argument(format!("label {bad} out of range")));
    }
    let dev = dev.filter(|(x, _)| x.rows() > 0);
    let score = |head: &ClassifierHead| -> Result<f64> {
        let (x, y) = dev.expect("dev present");
        let preds: Vec<usize> = (0..x.rows()).map(|i| head.predict_row(x.row(i))).collect();
        f1_of(&preds, y, classes)
    };

    let mut params = ClassifierHead::init(classes, train_x.cols(), hyper.seed).to_tensors();
    let mut best = match dev {
        Some(_) => {
            let h = ClassifierHead::from_tensors(&params);
            Some((score(&h)?, h))
        }
        None => None,
    };
    let mut state = AdamState::new();
    let mut stream = BatchStream::new(train_x.rows(), hyper.seed);
    for step in 0..hyper.steps {
        let head = ClassifierHead::from_tensors(&params);
        let idx = stream.next(hyper.batch_size);
        let mut grads = head.to_tensors();
        grads.values_mut().for_each(|t| t.data.fill(0.0));
        for &i in &idx {
            head.backward(train_x.row(i), train_y[i], idx.len() as f64, &mut grads);
        }
        adam_step(&mut params, &grads, &mut state, &hyper.adam)?;
        if let Some((best_f1, best_head)) = best.as_mut() {
            if (step + 1) % hyper.eval_every == 0 || step + 1 == hyper.steps {
                let h = ClassifierHead::from_tensors(&params);
                let f = score(&h)?;
                if f > *best_f1 {
                    *best_f1 = f;
                    *best_head = h;
                }
            }
        }
    }
    Ok(match best {
        Some((_, h)) => h,
        None => ClassifierHead::from_tensors(&params),
    })
}

/// Trains a classification head on mean-pooled encoder states. With
/// `hyper.unfreeze` the encoder is updated jointly and returned.
pub fn finetune_classifier(
    ckpt: &Checkpoint,
    tok: &BpeTokenizer,
    train: &LabeledDataset,
    dev: &LabeledDataset,
    hyper: &HeadHyper,
) -> Result<(ClassifierHead, Option<Checkpoint>)> {
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    check_hyper(hyper)?;
    if !hyper.unfreeze {
        let tx = sentence_features(ckpt, tok, &train.texts())?;
        let dx = sentence_features(ckpt, tok, &dev.texts())?;
        let dy = dev.labels();
        let head = train_head(&tx, &train.labels(), Some((&dx, &dy)), NUM_CLASSES, hyper)?;
        return Ok((head, None));
    }

    let seqs = encode_all(ckpt, tok, &train.texts())?;
    let labels = train.labels();
    let mut enc = ckpt.clone();
    let mut head_params = ClassifierHead::init(NUM_CLASSES, ckpt.config.dim, hyper.seed).to_tensors();
    let (mut enc_state, mut head_state) = (AdamState::new(), AdamState::new());
    let dev_score = |enc: &Checkpoint, head: &ClassifierHead| -> Result<Option<f64>> {
        if dev.is_empty() {
            return Ok(None);
        }
        let preds = predict(enc, tok, head, &dev.texts())?;
        Ok(Some(f1_of(&preds, &dev.labels(), NUM_CLASSES)?))
    };
    let first = ClassifierHead::from_tensors(&head_params);
    let mut best = dev_score(&enc, &first)?.map(|f| (f, first, enc.clone()));
    let mut stream = BatchStream::new(seqs.len(), hyper.seed);
    for step in 0..hyper.steps {
        let head = ClassifierHead::from_tensors(&head_params);
        let idx = stream.next(hyper.batch_size);
        let mut head_grads = head.to_tensors();
        head_grads.values_mut().for_each(|t| t.data.fill(0.0));
        let enc_grads = {
            let model = Model::new(&enc)?;
            let mut grads = Grads::zeros(&model);
            let d = enc.config.dim;
            for &i in &idx {
                let ids = &seqs[i];
                model.check_sequence(ids)?;
                let (cache, x, n) = pooled(&model, ids);
                let dx = head.backward(&x, labels[i], idx.len() as f64, &mut head_grads);
                let mut dhidden = vec![0.0; ids.len() * d];
                for (p, &id) in ids.iter().enumerate() {
                    if id != PAD_ID {
                        dhidden[p * d..(p + 1) * d]
                            .iter_mut()
                            .zip(&dx)
                            .for_each(|(g, v)| *g = v / n as f64);
                    }
                }
                model.backward_seq(&cache, &dhidden, &mut grads);
            }
            grads.into_map(&enc.config)
        };
        adam_step(&mut enc.tensors, &enc_grads, &mut enc_state, &hyper.adam)?;
        adam_step(&mut head_params, &head_grads, &mut head_state, &hyper.adam)?;
        if (step + 1) % hyper.eval_every == 0 || step + 1 == hyper.steps {
            let h = ClassifierHead::from_tensors(&head_params);
            if let Some(f) = dev_score(&enc, &h)? {
                if best.as_ref().is_none_or(|(b, _, _)| f > *b) {
                    best = Some((f, h, enc.clone()));
                }
            }
        }
    }
    Ok(match best {
        Some((_, h, e)) => (h, Some(e)),
        None => (ClassifierHead::from_tensors(&head_params), Some(enc)),
    })
}

pub fn predict(ckpt: &Checkpoint, tok: &BpeTokenizer, head: &ClassifierHead, texts: &[&str]) -> Result<Vec<usize>> {
    if head.weight.cols() != ckpt.config.dim {
        return Err(Error::Shape(format!(
            "head expects dim {}, model has {}",
            head.weight.cols(),
            ckpt.config.dim
        )));
    }
    let x = sentence_features(ckpt, tok, texts)?;
    Ok((0..x.rows()).map(|i| head.predict_row(x.row(i))).collect())
}

/// Predicts a labelled set and scores it with weighted F1 over the seven
/// categories.
pub fn evaluate(ckpt: &Checkpoint, tok: &BpeTokenizer, head: &ClassifierHead, data: &LabeledDataset) -> Result<EvalReport> {
    let preds = predict(ckpt, tok, head, &data.texts())?;
    let p: Vec<&str> = preds.iter().map(|&c| SIB_LABELS[c]).collect();
    let g: Vec<&str> = data.labels().iter().map(|&c| SIB_LABELS[c]).collect();
    weighted_f1(&p, &g, &SIB_LABELS)
}
