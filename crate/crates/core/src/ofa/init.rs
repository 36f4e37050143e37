use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::external::SubwordExternalVector;
use super::factorize::{EmbeddingMatrix, FactorizedEmbedding};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::stream_rng;
use crate::tokenizer::{OverlapMap, Vocabulary};

pub const DEFAULT_NEIGHBORS: usize = 10;

/// How each target row was initialized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InitReport {
    pub copied: usize,
    pub similarity_initialized: usize,
    pub fallback_random: usize,
    /// Mean over similarity-initialized rows of the best neighbor's cosine similarity.
    pub mean_top1_similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowInit {
    Copied { source: u32 },
    /// Convex combination of source rows; weights are nonnegative and sum to one.
    Similarity { neighbors: Vec<(u32, f64)> },
    Random,
}

#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub coords: Matrix,
    pub report: InitReport,
    pub provenance: Vec<RowInit>,
}

fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = m.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(m.row(i)).for_each(|(s, x)| *s += x);
    }
    mean.iter_mut().for_each(|s| *s /= n.max(1) as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((v, x), mu) in var.iter_mut().zip(m.row(i)).zip(&mean) {
            *v += (x - mu) * (x - mu);
        }
    }
    let std = var.into_iter().map(|v| (v / n.max(1) as f64).sqrt()).collect();
    (mean, std)
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = dot(v, v).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn sample_row(mean: &[f64], std: &[f64], seed: u64, token: u32) -> Vec<f64> {
    let mut rng = stream_rng(seed, token as u64);
    mean.iter()
        .zip(std)
        .map(|(&mu, &sd)| {
            if sd > 0.0 {
                Normal::new(mu, sd).expect("finite moments").sample(&mut rng)
            } else {
                mu
            }
        })
        .collect()
}

/// Top-`k` source tokens by cosine similarity, keeping only positive
/// similarities. Ties are broken by lower source id.
pub fn nearest_sources(query: &[f64], sources: &[(u32, Vec<f64>)], k: usize) -> Vec<(u32, f64)> {
    let Some(q) = unit(query) else {
        return Vec::new();
    };
    let mut cands: Vec<(u32, f64)> = sources
        .iter()
        .map(|(id, v)| (*id, dot(&q, v)))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, order);
        cands.truncate(k);
    }
    cands.sort_by(order);
    cands
}

/// Initializes target coordinates in the factorized space.
///
/// Rows of tokens present in the source vocabulary are copied. Each novel
/// token with an external vector becomes the similarity-weighted mean of its
/// `k` most similar source tokens; the rest are sampled from a Gaussian fit
/// to each column of the source coordinates.
///
/// `source_ext` and `target_ext` are indexed by source and target id.
pub fn informed_init(
    fe_source: &FactorizedEmbedding,
    map: &OverlapMap,
    source_ext: &[SubwordExternalVector],
    target_ext: &[SubwordExternalVector],
    k: usize,
    seed: u64,
) -> Result<InitOutcome> {
    if k < 1 {
        return Err(Error::Argument("neighbor count k must be at least 1".into()));
    }
    let src = &fe_source.coords;
    if src.rows() != map.source_len || source_ext.len() != map.source_len {
        return Err(Error::Shape(format!(
            "source has {} coordinate rows and {} external vectors, vocabulary has {}",
            src.rows(),
            source_ext.len(),
            map.source_len
        )));
    }
    if target_ext.len() != map.target_len {
        return Err(Error::Shape(format!(
            "{} target external vectors for a target vocabulary of {}",
            target_ext.len(),
            map.target_len
        )));
    }

    let (mean, std) = column_moments(src);
    let sources: Vec<(u32, Vec<f64>)> = source_ext
        .iter()
        .enumerate()
        .filter_map(|(id, s)| s.vector.as_deref().and_then(unit).map(|u| (id as u32, u)))
        .collect();

    let d = src.cols();
    let mut coords = Matrix::zeros(map.target_len, d);
    let mut provenance = Vec::with_capacity(map.target_len);
    let mut report = InitReport::default();
    let mut top1_sum = 0.0;

    for t in 0..map.target_len as u32 {
        if let Some(s) = map.source_of(t) {
            coords.row_mut(t as usize).copy_from_slice(src.row(s as usize));
            provenance.push(RowInit::Copied { source: s });
            report.copied += 1;
            continue;
        }
        let neighbors = target_ext[t as usize]
            .vector
            .as_deref()
            .map(|q| nearest_sources(q, &sources, k))
            .unwrap_or_default();
        if neighbors.is_empty() {
            coords
                .row_mut(t as usize)
                .copy_from_slice(&sample_row(&mean, &std, seed, t));
            provenance.push(RowInit::Random);
            report.fallback_random += 1;
            continue;
        }
        let total: f64 = neighbors.iter().map(|(_, s)| s).sum();
        let weighted: Vec<(u32, f64)> = neighbors.iter().map(|&(v, s)| (v, s / total)).collect();
        let row = coords.row_mut(t as usize);
        for &(v, w) in &weighted {
            row.iter_mut().zip(src.row(v as usize)).for_each(|(r, x)| *r += w * x);
        }
        top1_sum += neighbors[0].1;
        report.similarity_initialized += 1;
        provenance.push(RowInit::Similarity { neighbors: weighted });
    }
    if report.similarity_initialized > 0 {
        report.mean_top1_similarity = top1_sum / report.similarity_initialized as f64;
    }
    Ok(InitOutcome {
        coords,
        report,
        provenance,
    })
}

/// Random-initialization baseline: rows of source tokens are copied, novel
/// rows are drawn from one Gaussian fit to all entries of the source matrix.
pub fn random_init(
    e_source: &EmbeddingMatrix,
    target_vocab: &Vocabulary,
    map: &OverlapMap,
    seed: u64,
) -> Result<(EmbeddingMatrix, InitReport)> {
    if map.target_len != target_vocab.len() || map.source_len != e_source.rows() {
        return Err(Error::Shape(format!(
            "overlap map ({} -> {}) does not match source rows {} / target vocabulary {}",
            map.source_len,
            map.target_len,
            e_source.rows(),
            target_vocab.len()
        )));
    }
    let data = e_source.values.data();
    let n = data.len().max(1) as f64;
    let mu = data.iter().sum::<f64>() / n;
    let sd = (data.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    let dim = e_source.dim();
    let (mean, std) = (vec![mu; dim], vec![sd; dim]);

    let mut out = Matrix::zeros(map.target_len, dim);
    let mut report = InitReport::default();
    for t in 0..map.target_len as u32 {
        match map.source_of(t) {
            Some(s) => {
                out.row_mut(t as usize).copy_from_slice(e_source.values.row(s as usize));
                report.copied += 1;
            }
            None => {
                out.row_mut(t as usize)
                    .copy_from_slice(&sample_row(&mean, &std, seed, t));
                report.fallback_random += 1;
            }
        }
    }
    let mut e = EmbeddingMatrix::new(out)?;
    e.vocab_ref = Some(target_vocab.fingerprint());
    Ok((e, report))
}
