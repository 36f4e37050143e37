use rand::Rng;

use super::checkpoint::{init_model, Checkpoint, ModelConfig, TensorMap};
use super::model::{loss_and_grads, mlm_loss};
use crate::error::{Error, Result};
use crate::rng::{named_stream, stream_rng};
use crate::tokenizer::{BOS_ID, EOS_ID, NUM_SPECIALS, PAD_ID};

const STEP: f64 = 1e-3;
const MAX_PARAMETERS: usize = 10_000;
/// Gradients whose norm is below this are compared in absolute terms. Some
/// are identically zero (a key bias shifts every attention score equally)
/// and finite differences leave only roundoff there.
const NORM_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Relative error `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` per
    /// tensor, with the denominator floored at a small constant; always in [0, 1].
    pub per_tensor: Vec<(String, f64)>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central differences of the masked-LM loss for every parameter.
pub fn numeric_gradients(
    ckpt: &Checkpoint,
    batch: &[Vec<u32>],
    labels: &[Vec<Option<u32>>],
    h: f64,
) -> Result<TensorMap> {
    let mut probe = ckpt.clone();
    let mut out = TensorMap::new();
    let names: Vec<String> = ckpt.tensors.keys().cloned().collect();
    for name in names {
        let mut g = ckpt.tensors[&name].clone();
        for i in 0..g.data.len() {
            let x = ckpt.tensors[&name].data[i];
            probe.tensors.get_mut(&name).unwrap().data[i] = x + h;
            let up = mlm_loss(&probe, batch, labels)?;
            probe.tensors.get_mut(&name).unwrap().data[i] = x - h;
            let down = mlm_loss(&probe, batch, labels)?;
            probe.tensors.get_mut(&name).unwrap().data[i] = x;
            g.data[i] = (up - down) / (2.0 * h);
        }
        out.insert(name, g);
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn compare_gradients(analytic: &TensorMap, numeric: &TensorMap, tolerance: f64) -> Result<GradCheckReport> {
    let mut per_tensor = Vec::with_capacity(analytic.len());
    for (name, a) in analytic {
        let n = numeric
            .get(name)
            .ok_or_else(|| Error::Shape(format!("no numeric gradient for `{name}`")))?;
        if n.data.len() != a.data.len() {
            return Err(Error::Shape(format!("gradient size mismatch for `{name}`")));
        }
        let diff: Vec<f64> = a.data.iter().zip(&n.data).map(|(x, y)| x - y).collect();
        let scale = (norm(&a.data) + norm(&n.data)).max(NORM_FLOOR);
        let err = (norm(&diff) / scale).min(1.0);
        per_tensor.push((name.clone(), err));
    }
    if numeric.len() != analytic.len() {
        return Err(Error::Shape("gradient maps name different tensors".into()));
    }
    let max_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    })
}

/// Random ragged batch with padding and at least one label per sequence.
fn probe_batch(cfg: &ModelConfig, seed: u64) -> (Vec<Vec<u32>>, Vec<Vec<Option<u32>>>) {
    let mut rng = stream_rng(seed, named_stream("grad-check"));
    let v = cfg.vocab_size.max(NUM_SPECIALS + 1) as u32;
    let lens = [cfg.max_seq_len.min(7), cfg.max_seq_len.min(5)];
    let mut batch = Vec::new();
    let mut labels = Vec::new();
    for (b, &len) in lens.iter().enumerate() {
        let mut seq: Vec<u32> = (0..len).map(|_| rng.random_range(NUM_SPECIALS as u32..v)).collect();
        seq[0] = BOS_ID;
        if len > 2 {
            seq[len - 1] = if b == 1 { PAD_ID } else { EOS_ID };
        }
        let mut lab: Vec<Option<u32>> = vec![None; len];
        for (i, l) in lab.iter_mut().enumerate().skip(1) {
            if seq[i] != PAD_ID && seq[i] != EOS_ID && rng.random::<f64>() < 0.5 {
                *l = Some(rng.random_range(NUM_SPECIALS as u32..v));
            }
        }
        if lab.iter().all(Option::is_none) {
            lab[len.min(2) - 1] = Some(NUM_SPECIALS as u32);
        }
        batch.push(seq);
        labels.push(lab);
    }
    (batch, labels)
}

/// Checks analytic gradients of a freshly initialized model against central
/// finite differences. Weights are drawn wider than the training init so
/// the nonlinearities are exercised.
pub fn grad_check(config: &ModelConfig, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let ckpt = probe_model(config, seed)?;
    let (batch, labels) = probe_batch(config, seed);
    let (_, analytic) = loss_and_grads(&ckpt, &batch, &labels)?;
    let numeric = numeric_gradients(&ckpt, &batch, &labels, STEP)?;
    compare_gradients(&analytic, &numeric, tolerance)
}

fn probe_model(config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    let mut ckpt = init_model(config, seed)?;
    if ckpt.num_parameters() > MAX_PARAMETERS {
        return Err(Error::Argument(format!(
            "grad_check is limited to {MAX_PARAMETERS} parameters, model has {}",
            ckpt.num_parameters()
        )));
    }
    let mut rng = stream_rng(seed, named_stream("grad-check-weights"));
    for (name, t) in ckpt.tensors.iter_mut() {
        let base = if name.ends_with(".gain") { 1.0 } else { 0.0 };
        t.data
            .iter_mut()
            .for_each(|x| *x = base + rng.random_range(-0.5..0.5));
    }
    Ok(ckpt)
}
