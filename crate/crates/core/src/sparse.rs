//! Compressed-row symmetric real matrices acting on complex vectors.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

const PAR_ROWS: usize = 16_384;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Builds from upper or lower triangle entries; each `(a, b, w)` with
    /// `a != b` is stored at both `(a, b)` and `(b, a)`. Diagonal entries once.
    pub fn from_entries(dim: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
        for &(a, b, w) in entries {
            rows[a].push((b as u32, w));
            if a != b {
                rows[b].push((a as u32, w));
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable_by_key(|e| e.0);
            // merge duplicates
            let mut last: Option<u32> = None;
            for (c, w) in r {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += w;
                } else {
                    cols.push(c);
                    vals.push(w);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { dim, row_ptr, cols, vals }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, row_ptr: vec![0; dim + 1], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[s..e].iter().map(|&c| c as usize).zip(self.vals[s..e].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[s..e].binary_search(&(j as u32)) {
            Ok(k) => self.vals[s + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        let row = |i: usize| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.cols[k] as usize] * self.vals[k];
            }
            acc
        };
        if self.dim >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.dim];
        self.apply(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, w) in self.row(i) {
                m[(i, j)] = w;
            }
        }
        m
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| self.row(i).all(|(j, w)| self.get(j, i) == w))
    }
}
