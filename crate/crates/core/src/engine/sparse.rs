use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::LinearOperator;

/// Known structure that lets [`super::evolve`] use an exact formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Structure {
    General,
    Diagonal,
    /// `coefficient · Σ_j X_j` on the full spin space, index = bit word.
    SiteFlipSum {
        sites: usize,
        coefficient: f64,
    },
}

/// Diagonal entries grouped into a small table of distinct values.
#[derive(Clone, Debug)]
pub(crate) struct DiagonalLevels {
    pub values: Vec<f64>,
    pub level: Vec<u16>,
}

/// Real sparse matrix in compressed-row form. No explicit zeros and no
/// repeated columns within a row.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    structure: Structure,
    levels: Option<DiagonalLevels>,
}

impl SparseOperator {
    /// Builds from per-row `(column, value)` lists; duplicates are summed and
    /// zeros dropped.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), dim, "row count must equal dimension");
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        let mut diagonal_only = true;
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                assert!(c < dim, "column {c} out of range");
                let mut v = row[i].1;
                i += 1;
                while i < row.len() && row[i].0 == c {
                    v += row[i].1;
                    i += 1;
                }
                if v != 0.0 {
                    diagonal_only &= c == r;
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        let mut op = Self {
            dim,
            row_ptr,
            cols,
            vals,
            structure: Structure::General,
            levels: None,
        };
        if diagonal_only {
            op.mark_diagonal();
        }
        op
    }

    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows = vec![Vec::new(); dim];
        for (r, c, v) in triplets {
            rows[r].push((c, v));
        }
        Self::from_rows(dim, rows)
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Self {
        let dim = diag.len();
        let rows = diag
            .into_iter()
            .enumerate()
            .map(|(k, v)| vec![(k, v)])
            .collect();
        let mut op = Self::from_rows(dim, rows);
        op.mark_diagonal();
        op
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(vec![1.0; dim])
    }

    fn mark_diagonal(&mut self) {
        self.structure = Structure::Diagonal;
        let diag = self.diagonal();
        let mut values: Vec<f64> = diag.clone();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite diagonal"));
        values.dedup();
        if values.len() <= 1024 {
            let level = diag
                .iter()
                .map(|v| {
                    values
                        .binary_search_by(|p| p.partial_cmp(v).unwrap())
                        .unwrap() as u16
                })
                .collect();
            self.levels = Some(DiagonalLevels { values, level });
        }
    }

    pub(crate) fn set_structure(&mut self, structure: Structure) {
        self.structure = structure;
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub(crate) fn levels(&self) -> Option<&DiagonalLevels> {
        self.levels.as_ref()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .zip(&self.vals[range])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&(c as u32)) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|r| self.get(r, r)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|r| self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.dim];
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        let mut t = Self::from_rows(self.dim, rows);
        if self.structure != Structure::General {
            t.structure = self.structure;
        }
        t
    }

    /// Largest `|A_rc - A_cr|` over stored entries is at most `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// `y = x A` for a row vector `x`.
    pub fn apply_left(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] += xr * v;
            }
        }
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        });
    }

    fn apply_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            *out = self.row(r).map(|(c, v)| x[c] * v).sum();
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_merge_and_zeros_drop() {
        let op = SparseOperator::from_triplets(
            3,
            [
                (0, 1, 1.0),
                (0, 1, 2.0),
                (1, 1, 0.0),
                (2, 0, -1.0),
                (2, 0, 1.0),
            ],
        );
        assert_eq!(op.nnz(), 1);
        assert_eq!(op.get(0, 1), 3.0);
        assert_eq!(op.structure(), Structure::General);
    }

    #[test]
    fn diagonal_detection_and_levels() {
        let op = SparseOperator::from_diagonal(vec![1.0, -1.0, 1.0, 0.0]);
        assert_eq!(op.structure(), Structure::Diagonal);
        let lv = op.levels().unwrap();
        assert_eq!(lv.values, vec![-1.0, 0.0, 1.0]);
        assert_eq!(lv.level, vec![2, 0, 2, 1]);
        assert_eq!(op.diagonal(), vec![1.0, -1.0, 1.0, 0.0]);
    }

    #[test]
    fn apply_and_transpose() {
        let op = SparseOperator::from_triplets(2, [(0, 0, 2.0), (0, 1, 1.0), (1, 0, 3.0)]);
        let mut y = vec![0.0; 2];
        op.apply(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 3.0]);
        op.apply_left(&[1.0, 0.0], &mut y);
        assert_eq!(y, vec![2.0, 1.0]);
        assert_eq!(op.transpose().get(1, 0), 1.0);
        assert!(!op.is_symmetric(1e-12));
    }
}
