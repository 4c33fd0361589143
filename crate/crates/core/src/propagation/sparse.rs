use rayon::prelude::*;

use crate::error::{GcmError, Result};
use crate::linalg::{axpy, Matrix};

/// Row count × column count above which `mul_dense` fans out over rows.
const PARALLEL_THRESHOLD: usize = 1 << 15;

/// Compressed sparse row matrix. Column indices are sorted within a row and
/// unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(u32, u32, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets
            .iter()
            .find(|(r, c, _)| *r as usize >= n_rows || *c as usize >= n_cols)
        {
            return Err(GcmError::contract(format!(
                "triplet ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut cursor = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = &mut cursor[c as usize];
                indices[*slot] = r as u32;
                values[*slot] = v;
                *slot += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    /// `self · x` for dense `x`. Each output row is accumulated in column
    /// order by exactly one worker, so the result does not depend on
    /// scheduling.
    pub fn mul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n_cols {
            return Err(GcmError::Dimension {
                expected: self.n_cols,
                actual: x.rows(),
            });
        }
        let d = x.cols();
        let mut out = Matrix::zeros(self.n_rows, d);
        if d == 0 {
            return Ok(out);
        }
        let kernel = |(r, dst): (usize, &mut [f64])| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                axpy(v, x.row(c as usize), dst);
            }
        };
        if self.n_rows * d >= PARALLEL_THRESHOLD {
            out.as_mut_slice()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(kernel);
        } else {
            out.as_mut_slice().chunks_mut(d).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m.row_mut(r)[c as usize] = v;
            }
        }
        m
    }
}
