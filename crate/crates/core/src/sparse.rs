//! Sparse superoperators on column-stacked density matrices.
//!
//! `vec(ρ)` stores entry `ρ_ij` at index `i + d·j`.

use nalgebra::{DMatrix, DVector};

use crate::quantum::{Operator, C64, ZERO};

/// Compressed-sparse-row complex matrix acting on `vec(ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Superoperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Hilbert-space dimension d with dim = d².
    pub fn hilbert_dim(&self) -> usize {
        (self.dim as f64).sqrt().round() as usize
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = DVector::zeros(self.dim);
        self.apply_into(x.as_slice(), y.as_mut_slice());
        y
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    /// y = L† x (Heisenberg-picture action on vec of an operator).
    pub fn adjoint_apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = DVector::zeros(self.dim);
        for r in 0..self.dim {
            let xr = x[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[k]] += self.vals[k].conj() * xr;
            }
        }
        y
    }

    /// Iterate over stored entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|r| {
                self.vals[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.vals.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    /// Same matrix with rows and columns relabeled: entry (r, c) moves to
    /// (perm[r], perm[c]).
    pub fn permuted(&self, perm: &[usize]) -> Superoperator {
        let mut b = TripletBuilder::new(self.dim);
        for (r, c, v) in self.iter() {
            b.push(perm[r], perm[c], v);
        }
        b.build()
    }

    /// L + shift·I.
    pub fn shifted(&self, shift: C64) -> Superoperator {
        let mut b = TripletBuilder::new(self.dim);
        for (r, c, v) in self.iter() {
            b.push(r, c, v);
        }
        for i in 0..self.dim {
            b.push(i, i, shift);
        }
        b.build()
    }

    /// L + other.
    pub fn plus(&self, other: &Superoperator) -> Superoperator {
        let mut b = TripletBuilder::new(self.dim);
        for (r, c, v) in self.iter().chain(other.iter()) {
            b.push(r, c, v);
        }
        b.build()
    }

    /// Half-bandwidths (lower, upper).
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut up = 0;
        for (r, c, _) in self.iter() {
            if r > c {
                lo = lo.max(r - c);
            } else {
                up = up.max(c - r);
            }
        }
        (lo, up)
    }
}

/// Accumulates (row, col, value) triplets; duplicates are summed.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl TripletBuilder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: C64) {
        debug_assert!(row < self.dim && col < self.dim);
        self.entries.push((row, col, val));
    }

    fn nonzeros(a: &Operator) -> Vec<(usize, usize, C64)> {
        let m = a.matrix();
        let mut out = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != ZERO {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// ρ ↦ coeff·Aρ.
    pub fn add_left(&mut self, a: &Operator, coeff: C64) {
        let d = a.dim();
        let nz = Self::nonzeros(a);
        for j in 0..d {
            for &(i, k, v) in &nz {
                self.push(i + d * j, k + d * j, coeff * v);
            }
        }
    }

    /// ρ ↦ coeff·ρB.
    pub fn add_right(&mut self, b: &Operator, coeff: C64) {
        let d = b.dim();
        let nz = Self::nonzeros(b);
        for i in 0..d {
            for &(k, j, v) in &nz {
                self.push(i + d * j, i + d * k, coeff * v);
            }
        }
    }

    /// ρ ↦ coeff·AρB.
    pub fn add_sandwich(&mut self, a: &Operator, b: &Operator, coeff: C64) {
        let d = a.dim();
        let na = Self::nonzeros(a);
        let nb = Self::nonzeros(b);
        for &(i, k, va) in &na {
            for &(l, j, vb) in &nb {
                self.push(i + d * j, k + d * l, coeff * va * vb);
            }
        }
    }

    pub fn build(mut self) -> Superoperator {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1) == (r, c) => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != ZERO);
        let mut row_ptr = vec![0usize; self.dim + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for r in 0..self.dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Superoperator {
            dim: self.dim,
            row_ptr,
            cols: merged.iter().map(|e| e.1).collect(),
            vals: merged.iter().map(|e| e.2).collect(),
        }
    }
}

/// Column-stack a square matrix.
pub fn vectorize(m: &DMatrix<C64>) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &DVector<C64>, d: usize) -> DMatrix<C64> {
    DMatrix::from_column_slice(d, d, v.as_slice())
}

/// tr(ρ) from vec(ρ).
pub fn vec_trace(v: &[C64], d: usize) -> C64 {
    (0..d).map(|i| v[i + d * i]).sum()
}

/// tr(Aρ) from vec(ρ) with dense A.
pub fn vec_expectation(a: &DMatrix<C64>, v: &[C64]) -> C64 {
    let d = a.nrows();
    let mut acc = ZERO;
    for j in 0..d {
        for i in 0..d {
            acc += a[(j, i)] * v[i + d * j];
        }
    }
    acc
}

/// tr(Aρ) for diagonal A given by its real diagonal.
pub fn vec_expectation_diag(diag: &[f64], v: &[C64]) -> C64 {
    let d = diag.len();
    diag.iter().enumerate().map(|(i, &a)| v[i + d * i] * a).sum()
}
