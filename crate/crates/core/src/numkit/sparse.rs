//! CSR sparse matrices. Used for the normalized adjacency, which is constant
//! with respect to differentiation, so only the dense side of spmm carries
//! gradients.

use super::dense::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicate coordinates are summed. Entry order inside a row is by column.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            assert!(r < rows && c < cols, "triplet ({r},{c}) out of {rows}x{cols}");
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }

        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx: merged.iter().map(|&(_, c, _)| c).collect(),
            values: merged.iter().map(|&(_, _, v)| v).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row_entries(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    /// self (sparse, rows x cols) * dense (cols x d).
    pub fn spmm(&self, dense: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, dense.rows(), "spmm shape mismatch");
        let d = dense.cols();
        let mut out = DenseMatrix::zeros(self.rows, d);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                let src = dense.row(c);
                let dst = out.row_mut(r);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// self^T * dense, without materializing the transpose. This is the
    /// adjoint of `spmm` with respect to its dense argument.
    pub fn spmm_transposed(&self, dense: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, dense.rows(), "spmm_transposed shape mismatch");
        let d = dense.cols();
        let mut out = DenseMatrix::zeros(self.cols, d);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                let src = dense.row(r);
                let dst = out.row_mut(c);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out.set(r, c, out.get(r, c) + v);
            }
        }
        out
    }
}
