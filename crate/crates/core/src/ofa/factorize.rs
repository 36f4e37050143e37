use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, Matrix};

const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// One embedding row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Matrix,
    /// Fingerprint of the vocabulary the rows are indexed by, when known.
    pub vocab_ref: Option<String>,
}

impl EmbeddingMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::Numeric("embedding matrix has non-finite entries".into()));
        }
        Ok(EmbeddingMatrix {
            values,
            vocab_ref: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Writes the `EMB1` binary layout: 16-byte header (magic, u32 rows,
    /// u32 cols, 4 reserved bytes), then row-major little-endian f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(16 + 4 * self.values.data().len());
        buf.extend_from_slice(EMB_MAGIC);
        buf.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&[0u8; 4]);
        for &v in self.values.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != EMB_MAGIC {
            return Err(Error::parse(path, 0, "missing EMB1 header"));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != rows * cols * 4 {
            return Err(Error::parse(
                path,
                0,
                format!("header declares {rows}x{cols} but body has {} bytes", body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        EmbeddingMatrix::new(Matrix::from_vec(rows, cols, data)?)
    }
}

/// Low-rank replacement `E ≈ F·P` of an embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedEmbedding {
    /// |V|×d coordinates.
    pub coords: Matrix,
    /// d×D primitive embeddings; rows are orthonormal right singular vectors.
    pub primitives: Matrix,
    /// All singular values of the source matrix, largest first.
    pub singular_values: Vec<f64>,
}

impl FactorizedEmbedding {
    pub fn latent_dim(&self) -> usize {
        self.coords.cols()
    }

    /// Squared singular values dropped by truncating to the latent dimension.
    pub fn discarded_energy(&self) -> f64 {
        self.singular_values
            .iter()
            .skip(self.latent_dim())
            .map(|s| s * s)
            .sum()
    }
}

/// Truncated SVD: `F = U_d Σ_d`, `P = V_dᵀ`.
pub fn factorize(e: &EmbeddingMatrix, d: usize) -> Result<FactorizedEmbedding> {
    let (n, dim) = e.values.shape();
    if d == 0 || d > dim {
        return Err(Error::Argument(format!(
            "latent dimension {d} outside 1..={dim}"
        )));
    }
    let svd = thin_svd(&e.values)?;
    let k = svd.singular_values.len();
    let mut coords = Matrix::zeros(n, d);
    let mut primitives = Matrix::zeros(d, dim);
    // d may exceed min(|V|, D); the extra components are zero.
    for j in 0..d.min(k) {
        for i in 0..n {
            coords.set(i, j, svd.u_sigma.get(i, j));
        }
        primitives.row_mut(j).copy_from_slice(svd.vt.row(j));
    }
    Ok(FactorizedEmbedding {
        coords,
        primitives,
        singular_values: svd.singular_values,
    })
}

pub fn reconstruct(fe: &FactorizedEmbedding) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(fe.coords.matmul(&fe.primitives)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingMatrix::new(Matrix::from_vec(rows, cols, data).unwrap()).unwrap()
    }

    fn oracle_singular_values(e: &EmbeddingMatrix) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(e.rows(), e.dim(), e.values.data());
        let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    fn rel_err(e: &EmbeddingMatrix, fe: &FactorizedEmbedding) -> f64 {
        let back = reconstruct(fe).unwrap();
        back.values.sub(&e.values).unwrap().frobenius_norm() / e.values.frobenius_norm()
    }

    #[test]
    fn identity_is_reconstructed_exactly() {
        let e = EmbeddingMatrix::new(Matrix::identity(4)).unwrap();
        let fe = factorize(&e, 4).unwrap();
        let back = reconstruct(&fe).unwrap();
        assert!(back.values.sub(&e.values).unwrap().frobenius_norm() <= 1e-10);
    }

    #[test]
    fn full_rank_random_reconstructs() {
        let e = random(6, 4, 11);
        let fe = factorize(&e, 4).unwrap();
        assert!(rel_err(&e, &fe) <= 1e-6);
        let back = reconstruct(&fe).unwrap();
        for i in 0..6 {
            for (a, b) in back.values.row(i).iter().zip(e.values.row(i)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn truncation_error_is_the_discarded_spectrum() {
        let e = random(6, 4, 11);
        let fe = factorize(&e, 2).unwrap();
        let sigma = oracle_singular_values(&e);
        let expected = sigma[2] * sigma[2] + sigma[3] * sigma[3];
        let err2 = reconstruct(&fe).unwrap().values.sub(&e.values).unwrap().frobenius_norm().powi(2);
        assert!((err2 - expected).abs() <= 1e-6 * expected, "{err2} vs {expected}");
        assert!((fe.discarded_energy() - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn error_shrinks_with_latent_dim() {
        let e = random(20, 8, 5);
        let errs: Vec<f64> = (1..=8).map(|d| rel_err(&e, &factorize(&e, d).unwrap())).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn primitive_rows_are_at_most_unit_norm() {
        let e = random(3, 5, 2); // fewer rows than columns
        let fe = factorize(&e, 5).unwrap();
        for i in 0..5 {
            let n: f64 = fe.primitives.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n <= 1.0 + 1e-12);
        }
        assert!(rel_err(&e, &fe) < 1e-12);
    }

    #[test]
    fn latent_dim_bounds() {
        let e = random(5, 3, 1);
        assert!(matches!(factorize(&e, 0), Err(Error::Argument(_))));
        assert!(matches!(factorize(&e, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_coordinates_reconstruct_zero() {
        let fe = FactorizedEmbedding {
            coords: Matrix::zeros(3, 2),
            primitives: random(2, 4, 3).values,
            singular_values: vec![],
        };
        assert!(reconstruct(&fe).unwrap().values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let e = EmbeddingMatrix::new(Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.25, -1.0]).unwrap()).unwrap();
        e.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), -2.0);
        assert_eq!(EmbeddingMatrix::load(&p).unwrap(), e);
        std::fs::write(&p, &bytes[..30]).unwrap();
        assert!(EmbeddingMatrix::load(&p).is_err());
    }
}
