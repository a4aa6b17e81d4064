//! Compressed sparse row matrices with a fixed sparsity pattern.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Row-compressed sparsity structure with sorted column indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl Pattern {
    /// Builds a pattern from per-row column lists (duplicates allowed).
    pub fn from_rows(ncols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        Self { nrows: rows.len(), ncols, row_ptr, col_idx }
    }

    /// Square pattern coupling every pair of DOFs inside each clique.
    pub fn from_cliques<'a>(n: usize, cliques: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut rows = vec![Vec::new(); n];
        for c in cliques {
            for &i in c {
                rows[i].extend_from_slice(c);
            }
        }
        Self::from_rows(n, rows)
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Storage slot of entry `(i, j)`, if present.
    #[inline]
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }
}

#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pattern: Arc<Pattern>,
    pub values: Vec<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let n = pattern.nnz();
        Self { pattern, values: vec![0.0; n], symmetric: false }
    }

    /// Sums duplicate triplets; explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(invalid(format!("triplet ({i}, {j}) outside {nrows}x{ncols}")));
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in rows.iter_mut() {
            r.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < r.len() {
                let j = r[k].0;
                let mut s = 0.0;
                while k < r.len() && r[k].0 == j {
                    s += r[k].1;
                    k += 1;
                }
                if s != 0.0 {
                    col_idx.push(j);
                    values.push(s);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { pattern: Arc::new(Pattern { nrows, ncols, row_ptr, col_idx }), values, symmetric: false })
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn with_symmetry_flag(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.pattern.slot(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self += alpha * other`; patterns must be identical.
    pub fn add_scaled(&mut self, alpha: f64, other: &SparseMatrix) {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern,
            "add_scaled requires matching patterns"
        );
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    /// Drops stored zeros.
    pub fn finalize(self) -> Self {
        let p = &self.pattern;
        let mut trip = Vec::with_capacity(p.nnz());
        for i in 0..p.nrows {
            for k in p.row(i) {
                trip.push((i, p.col_idx[k], self.values[k]));
            }
        }
        let symmetric = self.symmetric;
        Self::from_triplets(p.nrows, p.ncols, &trip).expect("indices come from a valid pattern").with_symmetry_flag(symmetric)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        assert_eq!(x.len(), p.ncols);
        (0..p.nrows).map(|i| p.row(i).map(|k| self.values[k] * x[p.col_idx[k]]).sum()).collect()
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        assert_eq!(x.len(), p.nrows);
        let mut y = vec![0.0; p.ncols];
        for i in 0..p.nrows {
            for k in p.row(i) {
                y[p.col_idx[k]] += self.values[k] * x[i];
            }
        }
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let p = &self.pattern;
        let mut trip = Vec::with_capacity(p.nnz());
        for i in 0..p.nrows {
            for k in p.row(i) {
                trip.push((p.col_idx[k], i, self.values[k]));
            }
        }
        Self::from_triplets(p.ncols, p.nrows, &trip).expect("valid pattern").with_symmetry_flag(self.symmetric)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = &self.pattern;
        let mut d = DMatrix::zeros(p.nrows, p.ncols);
        for i in 0..p.nrows {
            for k in p.row(i) {
                d[(i, p.col_idx[k])] += self.values[k];
            }
        }
        d
    }

    /// `max |A - A^T| / max |A|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.to_dense();
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        (&d - d.transpose()).amax() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_and_drop_zeros() {
        let a = SparseMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 2, 1.0), (1, 2, -1.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 2), 0.0);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 4.0]);
        assert_eq!(a.transpose_matvec(&[1.0, 1.0]), vec![4.0, 3.0, 0.0]);
        assert!(SparseMatrix::from_triplets(1, 1, &[(1, 0, 1.0)]).is_err());
    }

    #[test]
    fn clique_pattern() {
        let p = Pattern::from_cliques(4, [&[0usize, 1, 2][..], &[1, 2, 3][..]]);
        assert_eq!(p.nnz(), 9 + 9 - 4);
        assert!(p.slot(0, 3).is_none());
        assert!(p.slot(3, 1).is_some());
    }

    #[test]
    fn finalize_preserves_values() {
        let p = Arc::new(Pattern::from_cliques(3, [&[0usize, 1, 2][..]]));
        let mut a = SparseMatrix::zeros(p);
        a.add(0, 0, 2.0);
        a.add(2, 1, -1.0);
        let f = a.clone().finalize();
        assert_eq!(f.nnz(), 2);
        assert_eq!(f.to_dense(), a.to_dense());
    }
}
