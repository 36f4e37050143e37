//! Dense row-major matrices and a one-sided Jacobi SVD.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot subtract {:?} from {:?}",
                other.shape(),
                self.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Thin singular value decomposition `A = (UΣ) Vᵀ` with singular values in
/// non-increasing order.
///
/// `u_sigma` holds the left singular vectors already scaled by their singular
/// values; `vt` holds the right singular vectors as rows. Each right singular
/// vector is signed so that its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u_sigma: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

const MAX_SWEEPS: usize = 80;

/// Orthogonalizes the columns of `cols` in place by plane rotations, applying
/// the same rotations to `basis`. Returns an error if it does not converge.
fn jacobi_orthogonalize(cols: &mut [Vec<f64>], basis: &mut [Vec<f64>]) -> Result<()> {
    let k = cols.len();
    let eps = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&cols[p], &cols[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for (x, y) in wp.iter().zip(wq) {
                        a += x * x;
                        b += y * y;
                        g += x * y;
                    }
                    (a, b, g)
                };
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cols, p, q, c, s);
                rotate(basis, p, q, c, s);
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::Numeric(format!(
        "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
    )))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (wp, wq) = (&mut head[p], &mut tail[0]);
    for (x, y) in wp.iter_mut().zip(wq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn columns(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.cols)
        .map(|j| (0..a.rows).map(|i| a.get(i, j)).collect())
        .collect()
}

fn unit_columns(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|j| {
            let mut v = vec![0.0; n];
            v[j] = 1.0;
            v
        })
        .collect()
}

/// Computes the thin SVD of `a`.
pub fn thin_svd(a: &Matrix) -> Result<ThinSvd> {
    if !a.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let (n, m) = a.shape();
    // (scaled left vectors, right vectors) as columns, one pair per singular value
    let mut pairs: Vec<(f64, Vec<f64>, Vec<f64>)> = if n >= m {
        // A V = W, so A = W Vᵀ with W = UΣ.
        let mut w = columns(a);
        let mut v = unit_columns(m);
        jacobi_orthogonalize(&mut w, &mut v)?;
        w.into_iter()
            .zip(v)
            .map(|(wc, vc)| (norm(&wc), wc, vc))
            .collect()
    } else {
        // Aᵀ V' = W', so A = V' W'ᵀ = Σ (σ v'_i)(w'_i / σ)ᵀ.
        let mut w = columns(&a.transpose());
        let mut v = unit_columns(n);
        jacobi_orthogonalize(&mut w, &mut v)?;
        w.into_iter()
            .zip(v)
            .map(|(wc, vc)| {
                let sigma = norm(&wc);
                let left: Vec<f64> = vc.iter().map(|x| x * sigma).collect();
                let right: Vec<f64> = if sigma > 0.0 {
                    wc.iter().map(|x| x / sigma).collect()
                } else {
                    vec![0.0; m]
                };
                (sigma, left, right)
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let k = pairs.len();
    let mut u_sigma = Matrix::zeros(n, k);
    let mut vt = Matrix::zeros(k, m);
    let mut singular_values = Vec::with_capacity(k);
    for (j, (sigma, mut left, mut right)) in pairs.into_iter().enumerate() {
        let lead = right
            .iter()
            .copied()
            .reduce(|best, x| if x.abs() > best.abs() { x } else { best })
            .unwrap_or(0.0);
        if lead < 0.0 {
            left.iter_mut().for_each(|x| *x = -*x);
            right.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, &l) in left.iter().enumerate() {
            u_sigma.set(i, j, l);
        }
        vt.row_mut(j).copy_from_slice(&right);
        singular_values.push(sigma);
    }
    Ok(ThinSvd {
        u_sigma,
        singular_values,
        vt,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
