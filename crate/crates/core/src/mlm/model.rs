//! Pre-layernorm transformer encoder with hand-written backward pass.
//!
//! Each layer computes `h += Attn(LN₁(h))` then `h += FFN(LN₂(h))`; the
//! encoder output is `LN_f(h)`. Logits are the output dot product with the
//! (tied) token embedding rows. Padding positions are never attended to.

use super::checkpoint::{
    layer_tensor_name, Checkpoint, ModelConfig, Tensor, TensorMap, LAYER_TENSORS, OUTPUT_EMBEDDING,
    POSITION_EMBEDDING, TOKEN_EMBEDDING,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tokenizer::PAD_ID;

// Indices into LAYER_TENSORS.
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;

const FINAL_GAIN: &str = "final_norm.gain";
const FINAL_BIAS: &str = "final_norm.bias";

/// a (m×k) · b (k×n)
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (oj, &bpj) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *oj += aip * bpj;
            }
        }
    }
    out
}

/// out (k×n) += aᵀ · b, with a (m×k), b (m×n)
fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (oj, &bij) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *oj += aip * bij;
            }
        }
    }
}

/// a (m×n) · bᵀ with b (k×n), giving m×k
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            out[i * k + j] = arow.iter().zip(&b[j * n..(j + 1) * n]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_exact_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(r, bi)| *r += bi);
    }
}

fn col_sum_acc(x: &[f64], n: usize, out: &mut [f64]) {
    for row in x.chunks_exact(n) {
        out.iter_mut().zip(row).for_each(|(o, r)| *o += r);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64], eps: f64) -> (Vec<f64>, LnCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates into dg, db.
fn layer_norm_backward(dy: &[f64], d: usize, cache: &LnCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[i * d + j] = cache.rstd[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

struct LayerCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    a2: Vec<f64>,
    u: Vec<f64>,
    act: Vec<f64>,
}

/// Activations of one sequence kept for the backward pass.
pub(crate) struct SeqCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    /// S×D encoder output.
    pub(crate) hidden: Vec<f64>,
}

impl SeqCache {
    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Borrowed view of a checkpoint's tensors laid out for the forward pass.
pub(crate) struct Model<'a> {
    pub(crate) cfg: &'a ModelConfig,
    tok: &'a [f64],
    pos: &'a [f64],
    layers: Vec<[&'a [f64]; 16]>,
    lnf_g: &'a [f64],
    lnf_b: &'a [f64],
    out: &'a [f64],
}

/// Gradient buffers with the same layout as [`Model`].
pub(crate) struct Grads {
    tok: Vec<f64>,
    pos: Vec<f64>,
    layers: Vec<[Vec<f64>; 16]>,
    lnf_g: Vec<f64>,
    lnf_b: Vec<f64>,
    out: Option<Vec<f64>>,
}

impl Grads {
    pub(crate) fn zeros(model: &Model) -> Self {
        Grads {
            tok: vec![0.0; model.tok.len()],
            pos: vec![0.0; model.pos.len()],
            layers: model
                .layers
                .iter()
                .map(|l| std::array::from_fn(|i| vec![0.0; l[i].len()]))
                .collect(),
            lnf_g: vec![0.0; model.lnf_g.len()],
            lnf_b: vec![0.0; model.lnf_b.len()],
            out: (!model.cfg.tie_embeddings).then(|| vec![0.0; model.out.len()]),
        }
    }

    /// Adds `scale · dlogit` contributions of one output row.
    fn out_row(&mut self, tied: bool) -> &mut Vec<f64> {
        if tied {
            &mut self.tok
        } else {
            self.out.as_mut().expect("untied output gradient")
        }
    }

    pub(crate) fn into_map(self, cfg: &ModelConfig) -> TensorMap {
        let shapes: std::collections::HashMap<String, Vec<usize>> = cfg.tensor_shapes().into_iter().collect();
        let mut map = TensorMap::new();
        let mut put = |name: String, data: Vec<f64>| {
            let shape = shapes[&name].clone();
            map.insert(name, Tensor { shape, data });
        };
        put(TOKEN_EMBEDDING.into(), self.tok);
        put(POSITION_EMBEDDING.into(), self.pos);
        for (l, layer) in self.layers.into_iter().enumerate() {
            for (i, data) in layer.into_iter().enumerate() {
                put(layer_tensor_name(l, LAYER_TENSORS[i].0), data);
            }
        }
        put(FINAL_GAIN.into(), self.lnf_g);
        put(FINAL_BIAS.into(), self.lnf_b);
        if let Some(out) = self.out {
            put(OUTPUT_EMBEDDING.into(), out);
        }
        map
    }
}

impl<'a> Model<'a> {
    pub(crate) fn new(ckpt: &'a Checkpoint) -> Result<Self> {
        let cfg = &ckpt.config;
        let get = |name: &str| ckpt.tensor(name).map(|t| t.data.as_slice());
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut arr: [&[f64]; 16] = [&[]; 16];
            for (i, (suffix, _)) in LAYER_TENSORS.iter().enumerate() {
                arr[i] = get(&layer_tensor_name(l, suffix))?;
            }
            layers.push(arr);
        }
        let tok = get(TOKEN_EMBEDDING)?;
        let out = if cfg.tie_embeddings {
            tok
        } else {
            get(OUTPUT_EMBEDDING)?
        };
        let model = Model {
            cfg,
            tok,
            pos: get(POSITION_EMBEDDING)?,
            layers,
            lnf_g: get(FINAL_GAIN)?,
            lnf_b: get(FINAL_BIAS)?,
            out,
        };
        if model.tok.len() != cfg.vocab_size * cfg.dim || model.out.len() != cfg.vocab_size * cfg.dim {
            return Err(Error::Shape(format!(
                "embedding size does not match vocab_size {} × dim {}",
                cfg.vocab_size, cfg.dim
            )));
        }
        Ok(model)
    }

    pub(crate) fn check_sequence(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Argument("empty sequence".into()));
        }
        if ids.len() > self.cfg.max_seq_len {
            return Err(Error::Argument(format!(
                "sequence of length {} exceeds max_seq_len {}",
                ids.len(),
                self.cfg.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(Error::Argument(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_seq(&self, ids: &[u32]) -> SeqCache {
        let cfg = self.cfg;
        let (s, d, f, nh, hd) = (ids.len(), cfg.dim, cfg.ffn_dim, cfg.heads, cfg.head_dim());
        let eps = cfg.layer_norm_eps;
        let scale = 1.0 / (hd as f64).sqrt();
        let key_ok: Vec<bool> = ids.iter().map(|&i| i != PAD_ID).collect();

        let mut h = vec![0.0; s * d];
        for (i, &id) in ids.iter().enumerate() {
            let row = &mut h[i * d..(i + 1) * d];
            let e = &self.tok[id as usize * d..(id as usize + 1) * d];
            let p = &self.pos[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = e[j] + p[j];
            }
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for w in &self.layers {
            let (a, ln1) = layer_norm(&h, d, w[LN1_G], w[LN1_B], eps);
            let mut q = matmul(&a, w[WQ], s, d, d);
            add_bias(&mut q, w[BQ]);
            let mut k = matmul(&a, w[WK], s, d, d);
            add_bias(&mut k, w[BK]);
            let mut v = matmul(&a, w[WV], s, d, d);
            add_bias(&mut v, w[BV]);

            let mut probs = vec![0.0; nh * s * s];
            let mut ctx = vec![0.0; s * d];
            for head in 0..nh {
                let c0 = head * hd;
                for i in 0..s {
                    let p = &mut probs[(head * s + i) * s..(head * s + i + 1) * s];
                    let qi = &q[i * d + c0..i * d + c0 + hd];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..s {
                        if key_ok[j] {
                            let kj = &k[j * d + c0..j * d + c0 + hd];
                            let sc = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                            p[j] = sc;
                            max = max.max(sc);
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut z = 0.0;
                    for j in 0..s {
                        if key_ok[j] {
                            p[j] = (p[j] - max).exp();
                            z += p[j];
                        }
                    }
                    p.iter_mut().for_each(|pj| *pj /= z);
                    let ci = &mut ctx[i * d + c0..i * d + c0 + hd];
                    for j in 0..s {
                        if p[j] != 0.0 {
                            let vj = &v[j * d + c0..j * d + c0 + hd];
                            ci.iter_mut().zip(vj).for_each(|(c, x)| *c += p[j] * x);
                        }
                    }
                }
            }
            let mut o = matmul(&ctx, w[WO], s, d, d);
            add_bias(&mut o, w[BO]);
            h.iter_mut().zip(&o).for_each(|(x, y)| *x += y);

            let (a2, ln2) = layer_norm(&h, d, w[LN2_G], w[LN2_B], eps);
            let mut u = matmul(&a2, w[W1], s, d, f);
            add_bias(&mut u, w[B1]);
            let act: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
            let mut y = matmul(&act, w[W2], s, f, d);
            add_bias(&mut y, w[B2]);
            h.iter_mut().zip(&y).for_each(|(x, y)| *x += y);

            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                a2,
                u,
                act,
            });
        }
        let (hidden, lnf) = layer_norm(&h, d, self.lnf_g, self.lnf_b, eps);
        SeqCache {
            ids: ids.to_vec(),
            layers,
            lnf,
            hidden,
        }
    }

    /// Logits of one hidden row over the whole vocabulary.
    pub(crate) fn logits(&self, hidden_row: &[f64]) -> Vec<f64> {
        let d = self.cfg.dim;
        self.out
            .chunks_exact(d)
            .map(|e| e.iter().zip(hidden_row).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Accumulates the gradient of `dlogits · logits(hidden_row)` into
    /// `grads` and returns its gradient with respect to the hidden row.
    pub(crate) fn logits_backward(&self, hidden_row: &[f64], dlogits: &[f64], grads: &mut Grads) -> Vec<f64> {
        let d = self.cfg.dim;
        let mut dh = vec![0.0; d];
        let gout = grads.out_row(self.cfg.tie_embeddings);
        for (v, &dz) in dlogits.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let e = &self.out[v * d..(v + 1) * d];
            dh.iter_mut().zip(e).for_each(|(x, ev)| *x += dz * ev);
            gout[v * d..(v + 1) * d]
                .iter_mut()
                .zip(hidden_row)
                .for_each(|(g, hv)| *g += dz * hv);
        }
        dh
    }

    /// Backpropagates `dhidden` (S×D, gradient w.r.t. the encoder output).
    pub(crate) fn backward_seq(&self, cache: &SeqCache, dhidden: &[f64], grads: &mut Grads) {
        let cfg = self.cfg;
        let (s, d, f, nh, hd) = (cache.ids.len(), cfg.dim, cfg.ffn_dim, cfg.heads, cfg.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();

        let mut dh = layer_norm_backward(dhidden, d, &cache.lnf, self.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let w = &self.layers[l];
            let g = &mut grads.layers[l];

            // feed-forward block
            matmul_tn_acc(&lc.act, &dh, s, f, d, &mut g[W2]);
            col_sum_acc(&dh, d, &mut g[B2]);
            let dact = matmul_nt(&dh, w[W2], s, d, f);
            let du: Vec<f64> = dact.iter().zip(&lc.u).map(|(da, &u)| da * gelu_grad(u)).collect();
            matmul_tn_acc(&lc.a2, &du, s, d, f, &mut g[W1]);
            col_sum_acc(&du, f, &mut g[B1]);
            let da2 = matmul_nt(&du, w[W1], s, f, d);
            let (g_ln2, g_rest) = g.split_at_mut(LN2_B);
            let dx = layer_norm_backward(&da2, d, &lc.ln2, w[LN2_G], &mut g_ln2[LN2_G], &mut g_rest[0]);
            dh.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);

            // attention block
            matmul_tn_acc(&lc.ctx, &dh, s, d, d, &mut g[WO]);
            col_sum_acc(&dh, d, &mut g[BO]);
            let dctx = matmul_nt(&dh, w[WO], s, d, d);
            let mut dq = vec![0.0; s * d];
            let mut dk = vec![0.0; s * d];
            let mut dv = vec![0.0; s * d];
            let mut dp = vec![0.0; s];
            for head in 0..nh {
                let c0 = head * hd;
                for i in 0..s {
                    let p = &lc.probs[(head * s + i) * s..(head * s + i + 1) * s];
                    let dci = &dctx[i * d + c0..i * d + c0 + hd];
                    let mut dot_pdp = 0.0;
                    for j in 0..s {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vj = &lc.v[j * d + c0..j * d + c0 + hd];
                        dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                        dot_pdp += p[j] * dp[j];
                        dv[j * d + c0..j * d + c0 + hd]
                            .iter_mut()
                            .zip(dci)
                            .for_each(|(x, c)| *x += p[j] * c);
                    }
                    for j in 0..s {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - dot_pdp) * scale;
                        for c in 0..hd {
                            dq[i * d + c0 + c] += ds * lc.k[j * d + c0 + c];
                            dk[j * d + c0 + c] += ds * lc.q[i * d + c0 + c];
                        }
                    }
                }
            }
            let mut da = vec![0.0; s * d];
            for (wi, bi, dm) in [(WQ, BQ, &dq), (WK, BK, &dk), (WV, BV, &dv)] {
                matmul_tn_acc(&lc.a, dm, s, d, d, &mut g[wi]);
                col_sum_acc(dm, d, &mut g[bi]);
                let part = matmul_nt(dm, w[wi], s, d, d);
                da.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            let (g_ln1, g_rest) = g.split_at_mut(LN1_B);
            let dx = layer_norm_backward(&da, d, &lc.ln1, w[LN1_G], &mut g_ln1[LN1_G], &mut g_rest[0]);
            dh.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }

        for (i, &id) in cache.ids.iter().enumerate() {
            let src = &dh[i * d..(i + 1) * d];
            grads.tok[id as usize * d..(id as usize + 1) * d]
                .iter_mut()
                .zip(src)
                .for_each(|(g, x)| *g += x);
            grads.pos[i * d..(i + 1) * d]
                .iter_mut()
                .zip(src)
                .for_each(|(g, x)| *g += x);
        }
    }
}

/// Encoder output for a batch of (possibly ragged) sequences.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One S×D matrix per sequence.
    pub hidden: Vec<Matrix>,
    /// Vocabulary logits at each requested `(sequence, position)`.
    pub logits: Vec<Vec<f64>>,
}

pub fn forward(ckpt: &Checkpoint, batch: &[Vec<u32>], positions: &[(usize, usize)]) -> Result<ForwardOutput> {
    let model = Model::new(ckpt)?;
    for seq in batch {
        model.check_sequence(seq)?;
    }
    let caches: Vec<SeqCache> = batch.iter().map(|s| model.forward_seq(s)).collect();
    let d = ckpt.config.dim;
    let mut logits = Vec::with_capacity(positions.len());
    for &(b, i) in positions {
        let c = caches
            .get(b)
            .filter(|c| i < c.len())
            .ok_or_else(|| Error::Argument(format!("position ({b}, {i}) outside the batch")))?;
        logits.push(model.logits(&c.hidden[i * d..(i + 1) * d]));
    }
    let hidden = caches
        .into_iter()
        .map(|c| Matrix::from_vec(c.len(), d, c.hidden))
        .collect::<Result<_>>()?;
    Ok(ForwardOutput { hidden, logits })
}

fn log_softmax_at(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    let probs = exps.into_iter().map(|e| e / sum).collect();
    (z[label] - lse, probs)
}

fn check_labels(model: &Model, batch: &[Vec<u32>], labels: &[Vec<Option<u32>>]) -> Result<usize> {
    if batch.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} sequences but {} label rows",
            batch.len(),
            labels.len()
        )));
    }
    let mut n = 0;
    for (seq, lab) in batch.iter().zip(labels) {
        model.check_sequence(seq)?;
        if seq.len() != lab.len() {
            return Err(Error::Argument("label row length differs from its sequence".into()));
        }
        for l in lab.iter().flatten() {
            if *l as usize >= model.cfg.vocab_size {
                return Err(Error::Argument(format!("label {l} out of range")));
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Argument("no masked positions in batch".into()));
    }
    Ok(n)
}

/// Mean cross-entropy over labelled positions, without gradients.
pub fn mlm_loss(ckpt: &Checkpoint, batch: &[Vec<u32>], labels: &[Vec<Option<u32>>]) -> Result<f64> {
    let model = Model::new(ckpt)?;
    let n = check_labels(&model, batch, labels)?;
    let d = ckpt.config.dim;
    let mut total = 0.0;
    for (seq, lab) in batch.iter().zip(labels) {
        let cache = model.forward_seq(seq);
        for (i, l) in lab.iter().enumerate() {
            if let Some(l) = l {
                let z = model.logits(&cache.hidden[i * d..(i + 1) * d]);
                total -= log_softmax_at(&z, *l as usize).0;
            }
        }
    }
    Ok(total / n as f64)
}

/// Mean masked-LM cross-entropy and its gradient for every tensor.
pub fn loss_and_grads(ckpt: &Checkpoint, batch: &[Vec<u32>], labels: &[Vec<Option<u32>>]) -> Result<(f64, TensorMap)> {
    let model = Model::new(ckpt)?;
    let n = check_labels(&model, batch, labels)? as f64;
    let d = ckpt.config.dim;
    let mut grads = Grads::zeros(&model);
    let mut total = 0.0;
    for (seq, lab) in batch.iter().zip(labels) {
        let cache = model.forward_seq(seq);
        let mut dhidden = vec![0.0; seq.len() * d];
        for (i, l) in lab.iter().enumerate() {
            let Some(l) = l else { continue };
            let row = &cache.hidden[i * d..(i + 1) * d];
            let z = model.logits(row);
            let (logp, mut dz) = log_softmax_at(&z, *l as usize);
            total -= logp;
            dz[*l as usize] -= 1.0;
            dz.iter_mut().for_each(|g| *g /= n);
            let dh = model.logits_backward(row, &dz, &mut grads);
            dhidden[i * d..(i + 1) * d].copy_from_slice(&dh);
        }
        model.backward_seq(&cache, &dhidden, &mut grads);
    }
    Ok((total / n, grads.into_map(&ckpt.config)))
}
