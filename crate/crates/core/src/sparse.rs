//! Compressed sparse row storage with the products the solvers need.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-row `(column, value)` lists; zeros are dropped and
    /// columns sorted.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::invalid(format!("duplicate column {} in a row", w[0].0)));
                }
            }
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::mismatch(format!("column {c} out of range {ncols}")));
                }
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| (j, m[(i, j)])).collect())
            .collect();
        Self::from_rows(m.ncols(), rows).expect("dense input is well formed")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// `(row, col, value)` for every stored entry in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[p] * x[self.indices[p]];
            }
            *o = acc;
        }
    }

    /// `y += alpha * A x`
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (i, o) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[p] * x[self.indices[p]];
            }
            *o += alpha * acc;
        }
    }

    /// `out = Aᵀ x`
    pub fn tmul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for p in self.indptr[i]..self.indptr[i + 1] {
                out[self.indices[p]] += self.values[p] * xi;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Sub-matrix of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &i in rows {
            let r = self.indptr[i]..self.indptr[i + 1];
            indices.extend_from_slice(&self.indices[r.clone()]);
            values.extend_from_slice(&self.values[r]);
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: rows.len(),
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Keeps the columns for which `map` returns `Some(new_index)`.
    pub fn remap_columns(&self, ncols: usize, map: impl Fn(usize) -> Option<usize>) -> Self {
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            let mut row: Vec<(usize, f64)> = self.row(i).filter_map(|(j, v)| map(j).map(|c| (c, v))).collect();
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Zeroes every stored entry rejected by `keep(row, col, value)` and
    /// compacts the storage.
    pub fn retain(&self, mut keep: impl FnMut(usize, usize, f64) -> bool) -> Self {
        let rows = (0..self.nrows)
            .map(|i| self.row(i).filter(|&(j, v)| keep(i, j, v)).collect())
            .collect();
        Self::from_rows(self.ncols, rows).expect("filtered rows stay well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_rows(
            4,
            vec![vec![(0, 1.0), (3, 2.0)], vec![], vec![(2, -1.0), (1, 0.5), (0, 0.0)]],
        )
        .unwrap()
    }

    #[test]
    fn products_match_dense() {
        let a = sample();
        assert_eq!(a.nnz(), 4);
        let d = a.to_dense();
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut y = [0.0; 3];
        a.mul_vec(&x, &mut y);
        let want = &d * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(y.as_slice(), want.as_slice());
        let r = [1.0, -1.0, 2.0];
        let mut z = [0.0; 4];
        a.tmul_vec(&r, &mut z);
        let want = d.transpose() * nalgebra::DVector::from_column_slice(&r);
        assert_eq!(z.as_slice(), want.as_slice());
    }

    #[test]
    fn row_selection_and_lookup() {
        let a = sample();
        let s = a.select_rows(&[2, 0]);
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(1, 3), 2.0);
        assert_eq!(s.get(1, 2), 0.0);
    }

    #[test]
    fn out_of_range_column_rejected() {
        assert!(CsrMatrix::from_rows(2, vec![vec![(2, 1.0)]]).is_err());
        assert!(CsrMatrix::from_rows(3, vec![vec![(1, 1.0), (1, 2.0)]]).is_err());
    }
}
