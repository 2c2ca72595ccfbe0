//! Banded LU factorization with partial pivoting for superoperator solves.

use crate::error::{Error, Result};
use crate::quantum::{C64, ZERO};
use crate::sparse::Superoperator;

/// Relabeling of `vec(ρ)` indices that makes the Liouvillian banded.
///
/// Entry ρ_(s,n),(s',m) goes to `((n·N_c + m)·2 + s)·2 + s'`, so every term of
/// the model shifts the band index by at most 4·(N_c + 1).
pub fn band_permutation(n_cutoff: usize) -> Vec<usize> {
    let d = 2 * n_cutoff;
    let mut perm = vec![0; d * d];
    for j in 0..d {
        let (sp, m) = (j / n_cutoff, j % n_cutoff);
        for i in 0..d {
            let (s, n) = (i / n_cutoff, i % n_cutoff);
            perm[i + d * j] = ((n * n_cutoff + m) * 2 + s) * 2 + sp;
        }
    }
    perm
}

/// LU factors of a banded matrix (LAPACK `gbtrf` layout, row-major windows).
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<C64>,
    pivots: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl BandLu {
    /// Factor `a`, whose band is detected from its sparsity.
    pub fn factor(a: &Superoperator) -> Result<Self> {
        let (kl, ku) = a.bandwidth();
        let n = a.dim();
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            data: vec![ZERO; n * width],
            pivots: vec![0; n],
            min_pivot: f64::INFINITY,
            max_pivot: 0.0,
        };
        for (r, c, v) in a.iter() {
            *lu.at_mut(r, c) += v;
        }
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> C64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut C64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).norm();
            for i in k + 1..=last_row {
                let v = self.at(i, k).norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(format!("zero pivot in column {k} of {n}")));
            }
            self.min_pivot = self.min_pivot.min(best);
            self.max_pivot = self.max_pivot.max(best);
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let inv = C64::new(1.0, 0.0) / self.at(k, k);
            let base_k = self.idx(k, k);
            for i in k + 1..=last_row {
                let m = self.at(i, k) * inv;
                *self.at_mut(i, k) = m;
                if m == ZERO {
                    continue;
                }
                let base_i = self.idx(i, k);
                for off in 1..=(last_col - k) {
                    let u = self.data[base_k + off];
                    self.data[base_i + off] -= m * u;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of smallest to largest pivot magnitude; a cheap conditioning hint.
    pub fn pivot_ratio(&self) -> f64 {
        if self.max_pivot > 0.0 {
            self.min_pivot / self.max_pivot
        } else {
            0.0
        }
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [C64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == ZERO {
                continue;
            }
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.at(i, k) * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            let base = self.idx(k, k);
            for off in 1..=((k + kl + ku).min(n - 1) - k) {
                acc -= self.data[base + off] * b[k + off];
            }
            b[k] = acc / self.data[base];
        }
    }
}
