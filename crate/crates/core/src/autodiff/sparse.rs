use super::Matrix;
use crate::error::{Error, Result};

/// Compressed sparse row matrix. Used only as a constant left operand.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCsr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCsr {
    /// Validates the CSR layout: monotone `row_ptr`, strictly increasing columns per row.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::Argument(format!(
                "row_ptr must have {} entries starting at 0",
                rows + 1
            )));
        }
        if col_idx.len() != values.len() || row_ptr[rows] != values.len() {
            return Err(Error::Argument(
                "row_ptr, col_idx and values disagree on the entry count".into(),
            ));
        }
        for r in 0..rows {
            let (lo, hi) = (row_ptr[r], row_ptr[r + 1]);
            if lo > hi {
                return Err(Error::Argument(format!("row_ptr decreases at row {r}")));
            }
            let cols_in_row = &col_idx[lo..hi];
            if cols_in_row.iter().any(|&c| c >= cols) {
                return Err(Error::Argument(format!("column index out of range in row {r}")));
            }
            if cols_in_row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Argument(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from unsorted `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if r >= rows || c >= cols {
                return Err(Error::Argument(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(rows, cols, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs stored in row `r`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Stored value at `(r, c)`, or 0.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                m.set(r, c, v);
            }
        }
        m
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: &Matrix) -> Result<Matrix> {
        if self.cols != dense.rows() {
            return Err(Error::Dimension {
                op: "spmm",
                left: (self.rows, self.cols),
                right: dense.shape(),
            });
        }
        let width = dense.cols();
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            let o_row = out.row_mut(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                let d_row = dense.row(self.col_idx[k]);
                for (o, &d) in o_row.iter_mut().zip(d_row) {
                    *o += v * d;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`, by scattering each stored entry.
    pub fn mul_dense_transposed(&self, dense: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, dense.rows());
        let width = dense.cols();
        let mut out = Matrix::zeros(self.cols, width);
        for r in 0..self.rows {
            let d_row = dense.row(r);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                let o_row = out.row_mut(self.col_idx[k]);
                for (o, &d) in o_row.iter_mut().zip(d_row) {
                    *o += v * d;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_columns() {
        let err = SparseCsr::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_bad_row_ptr_total() {
        assert!(SparseCsr::new(2, 2, vec![0, 1, 3], vec![0, 1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let s = SparseCsr::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 2, 0.5)])
            .unwrap();
        assert_eq!(s.row_ptr(), &[0, 1, 3]);
        assert_eq!(s.col_idx(), &[1, 0, 2]);
        assert_eq!(s.values(), &[2.0, 3.0, 1.5]);
        assert_eq!(s.get(1, 2), 1.5);
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn transposed_product_matches_dense() {
        let s = SparseCsr::from_triplets(3, 2, &[(0, 1, 2.0), (2, 0, -1.0), (1, 1, 0.5)]).unwrap();
        let d = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let expected = s.to_dense().transpose().matmul(&d).unwrap();
        assert_eq!(s.mul_dense_transposed(&d), expected);
    }
}
