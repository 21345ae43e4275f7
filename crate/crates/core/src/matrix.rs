//! Row-major dense square matrices and the few kernels the solvers need.

use rayon::prelude::*;

/// Rows below this size are multiplied sequentially.
const PARALLEL_ROWS: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds from row-major data; `None` if the length is not a square.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == n * n).then_some(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Self {
            n,
            data: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn rows_mut(&mut self) -> rayon::slice::ChunksExactMut<'_, f64> {
        let n = self.n.max(1);
        self.data.par_chunks_exact_mut(n)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `out = self · x`. Each row is reduced sequentially, so the result does
    /// not depend on the thread schedule.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        let row_dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        if self.n >= PARALLEL_ROWS {
            out.par_iter_mut()
                .zip(self.data.par_chunks_exact(self.n))
                .for_each(|(o, row)| *o = row_dot(row));
        } else {
            for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.n.max(1))) {
                *o = row_dot(row);
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Whether the directed graph on `n` nodes with an edge `k → l` iff
/// `edge(k, l)` is strongly connected.
pub fn is_strongly_connected<F>(n: usize, edge: F) -> bool
where
    F: Fn(usize, usize) -> bool,
{
    if n <= 1 {
        return true;
    }
    let reaches_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(k) = stack.pop() {
            for l in 0..n {
                if !seen[l] && if forward { edge(k, l) } else { edge(l, k) } {
                    seen[l] = true;
                    count += 1;
                    stack.push(l);
                }
            }
        }
        count == n
    };
    reaches_all(true) && reaches_all(false)
}
