use super::Tensor;
use crate::error::{Error, Result};

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    dim: usize,
    pairs: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        pairs.sort_by_key(|&(i, _)| i);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!("duplicate sparse index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = pairs.last() {
            if i >= dim {
                return Err(Error::Shape(format!("sparse index {i} out of range for dim {dim}")));
            }
        }
        if pairs.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation("non-finite sparse value".into()));
        }
        Ok(SparseVector { dim, pairs })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            pairs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pairs(&self) -> &[(usize, f64)] {
        &self.pairs
    }

    pub fn nnz(&self) -> usize {
        self.pairs.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.pairs.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.pairs {
            out[i] = v;
        }
        out
    }
}

/// Compressed sparse row matrix used as a constant input batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows<'a, I>(cols: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SparseVector>,
    {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            if row.dim() != cols {
                return Err(Error::Shape(format!(
                    "sparse row of dim {} in matrix with {} columns",
                    row.dim(),
                    cols
                )));
            }
            for &(i, v) in row.pairs() {
                indices.push(i);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            rows: indptr.len() - 1,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        let cols = self.cols;
        let data = t.data_mut();
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                data[r * cols + c] = v;
            }
        }
        t
    }

    /// Dense product `self · w`.
    pub fn matmul(&self, w: &Tensor) -> Tensor {
        let n = w.cols();
        let mut out = Tensor::zeros(&[self.rows, n]);
        let wd = w.data();
        let od = out.data_mut();
        for r in 0..self.rows {
            let orow = &mut od[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, wv) in orow.iter_mut().zip(&wd[c * n..(c + 1) * n]) {
                    *o += v * wv;
                }
            }
        }
        out
    }

    /// `grad_w += selfᵀ · upstream`.
    pub(crate) fn transpose_matmul_acc(&self, upstream: &[f64], grad_w: &mut [f64], n: usize) {
        for r in 0..self.rows {
            let up = &upstream[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (g, u) in grad_w[c * n..(c + 1) * n].iter_mut().zip(up) {
                    *g += v * u;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_vector_rejects_bad_input() {
        assert!(SparseVector::new(3, vec![(3, 1.0)]).is_err());
        assert!(SparseVector::new(3, vec![(1, 1.0), (1, 2.0)]).is_err());
        assert!(SparseVector::new(3, vec![(1, f64::NAN)]).is_err());
        let v = SparseVector::new(3, vec![(2, 1.0), (0, 2.0)]).unwrap();
        assert_eq!(v.pairs(), &[(0, 2.0), (2, 1.0)]);
    }

    #[test]
    fn csr_matches_dense() {
        let a = SparseVector::new(4, vec![(0, 1.0), (3, 2.0)]).unwrap();
        let b = SparseVector::new(4, vec![(1, -1.0)]).unwrap();
        let m = CsrMatrix::from_rows(4, [&a, &b]).unwrap();
        let dense = m.to_dense();
        assert_eq!(dense.data(), &[1.0, 0.0, 0.0, 2.0, 0.0, -1.0, 0.0, 0.0]);
        let w = Tensor::new(vec![4, 2], (0..8).map(f64::from).collect()).unwrap();
        let out = m.matmul(&w);
        assert_eq!(out.data(), &[0.0 + 12.0, 1.0 + 14.0, -2.0, -3.0]);
    }
}
