//! Banded direct solvers for the stiffness operator restricted to the free nodes.
//!
//! Both factorizations work in place on dense band storage. The symmetric
//! Cholesky is also used as an inertia probe: it succeeds exactly when the
//! assembled matrix is positive definite.

use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("matrix is singular at row {0}")]
    Singular(usize),
}

/// Compact numbering of the free (unknown) nodes of a grid.
#[derive(Debug, Clone)]
pub struct FreeIndex {
    to_node: Vec<usize>,
    to_free: Vec<Option<usize>>,
    bandwidth: usize,
}

impl FreeIndex {
    pub fn new(grid: &Grid, free: &[bool]) -> FreeIndex {
        let mut to_free = vec![None; grid.len()];
        let mut to_node = Vec::new();
        for (k, &is_free) in free.iter().enumerate() {
            if is_free && !grid.is_boundary(k) {
                to_free[k] = Some(to_node.len());
                to_node.push(k);
            }
        }
        let mut bandwidth = 0;
        for (i, &k) in to_node.iter().enumerate() {
            for axis in 0..grid.dim() {
                if let Some(j) = grid.neighbor(k, axis, 1).and_then(|n| to_free[n]) {
                    bandwidth = bandwidth.max(j.abs_diff(i));
                }
            }
        }
        FreeIndex { to_node, to_free, bandwidth }
    }

    pub fn len(&self) -> usize {
        self.to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_node.is_empty()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn nodes(&self) -> &[usize] {
        &self.to_node
    }

    pub fn free_of(&self, node: usize) -> Option<usize> {
        self.to_free[node]
    }

    /// Gathers nodal values at the free nodes.
    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.to_node.iter().map(|&k| values[k]).collect()
    }

    /// Scatters compact values into a full nodal vector, zero elsewhere.
    pub fn scatter(&self, compact: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&k, &v) in self.to_node.iter().zip(compact) {
            out[k] = v;
        }
        out
    }
}

/// Symmetric band matrix, lower band stored row by row.
#[derive(Debug, Clone)]
pub struct SymBanded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, bw: usize) -> SymBanded {
        SymBanded { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            let s = self.slot(i, i);
            self.data[s] += v;
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for yi in y.iter_mut() {
            *yi = 0.0;
        }
        for i in 0..self.n {
            y[i] += self.get(i, i) * x[i];
            for j in i.saturating_sub(self.bw)..i {
                let a = self.data[self.slot(i, j)];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
        }
    }

    pub fn cholesky(&self) -> Result<BandedCholesky, LinalgError> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.data.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (i - j)];
                for k in k0..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn to_general(&self) -> Banded {
        let mut g = Banded::zeros(self.n, self.bw, self.bw);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            for j in lo..=hi {
                g.set(i, j, self.get(i, j));
            }
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l[i * w + (i - k)] * b[k];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.l[k * w + (k - i)] * b[k];
            }
            b[i] = s / self.l[i * w];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// General band matrix with room for the fill produced by partial pivoting.
#[derive(Debug, Clone)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Banded {
        let width = 2 * kl + ku + 1;
        Banded { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside the band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn lu(mut self) -> Result<BandedLu, LinalgError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let upper = kl + ku;
        let mut pivots = vec![0usize; n];
        let mut mults = vec![0.0; n * kl.max(1)];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + upper).min(n - 1);
            let mut piv = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(LinalgError::Singular(k));
            }
            pivots[k] = piv;
            if piv != k {
                for c in k..=last_col {
                    let (a, b) = (self.slot(k, c), self.slot(piv, c));
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(k, k)];
            for r in k + 1..=last_row {
                let m = self.data[self.slot(r, k)] / d;
                mults[k * kl + (r - k - 1)] = m;
                let rk = self.slot(r, k);
                self.data[rk] = 0.0;
                if m != 0.0 {
                    for c in k + 1..=last_col {
                        let (src, dst) = (self.slot(k, c), self.slot(r, c));
                        self.data[dst] -= m * self.data[src];
                    }
                }
            }
        }
        Ok(BandedLu { mat: self, pivots, mults })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    mat: Banded,
    pivots: Vec<usize>,
    mults: Vec<f64>,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.mat;
        let (n, kl) = (m.n, m.kl);
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                b[r] -= self.mults[k * kl + (r - k - 1)] * bk;
            }
        }
        let upper = m.kl + m.ku;
        for i in (0..n).rev() {
            let mut s = b[i];
            for c in i + 1..=(i + upper).min(n - 1) {
                s -= m.data[m.slot(i, c)] * b[c];
            }
            b[i] = s / m.data[m.slot(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Assembles `-Δ_h + diag(shift)` on the free nodes (nodal scaling, no
/// quadrature weights). Couplings to non-free nodes are dropped, which is the
/// homogeneous Dirichlet condition on the support boundary.
pub fn assemble_stiffness(grid: &Grid, index: &FreeIndex, shift: &[f64]) -> SymBanded {
    let mut m = SymBanded::zeros(index.len(), index.bandwidth());
    for (i, &k) in index.nodes().iter().enumerate() {
        for axis in 0..grid.dim() {
            let inv_h2 = 1.0 / (grid.spacing()[axis] * grid.spacing()[axis]);
            m.add(i, i, 2.0 * inv_h2);
            if let Some(j) = grid.neighbor(k, axis, 1).and_then(|nb| index.free_of(nb)) {
                m.add(i, j, -inv_h2);
            }
        }
        m.add(i, i, shift[i]);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use nalgebra::{DMatrix, DVector};

    fn random_band(n: usize, bw: usize, seed: u64) -> Vec<Vec<f64>> {
        // cheap deterministic pseudo-random entries
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) <= bw {
                    a[i][j] = next();
                }
            }
        }
        a
    }

    #[test]
    fn lu_matches_dense_solve() {
        for &(n, bw) in &[(7usize, 1usize), (20, 3), (33, 5)] {
            let a = random_band(n, bw, n as u64);
            let mut band = Banded::zeros(n, bw, bw);
            for i in 0..n {
                for j in 0..n {
                    if i.abs_diff(j) <= bw {
                        band.set(i, j, a[i][j]);
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let x = band.lu().unwrap().solve(&b);
            let dense = DMatrix::from_fn(n, n, |i, j| a[i][j]);
            let reference = dense.lu().solve(&DVector::from_vec(b.clone())).unwrap();
            for i in 0..n {
                assert!((x[i] - reference[i]).abs() < 1e-9 * (1.0 + reference[i].abs()));
            }
        }
    }

    #[test]
    fn cholesky_solves_and_detects_indefinite() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], &[9, 7]).unwrap();
        let free: Vec<bool> = (0..g.len()).map(|k| !g.is_boundary(k)).collect();
        let idx = FreeIndex::new(&g, &free);
        assert_eq!(idx.len(), 7 * 5);
        assert_eq!(idx.bandwidth(), 7);
        let m = assemble_stiffness(&g, &idx, &vec![1.0; idx.len()]);
        let b: Vec<f64> = (0..idx.len()).map(|i| i as f64).collect();
        let x = m.cholesky().unwrap().solve(&b);
        let mut y = vec![0.0; b.len()];
        m.matvec(&x, &mut y);
        for (yi, bi) in y.iter().zip(&b) {
            assert!((yi - bi).abs() < 1e-9 * (1.0 + bi.abs()));
        }
        // same solve through the pivoted LU
        let x2 = m.to_general().lu().unwrap().solve(&b);
        for (a, c) in x.iter().zip(&x2) {
            assert!((a - c).abs() < 1e-10 * (1.0 + a.abs()));
        }
        let shifted = assemble_stiffness(&g, &idx, &vec![-1e6; idx.len()]);
        assert!(matches!(shifted.cholesky(), Err(LinalgError::NotPositiveDefinite { .. })));
    }
}
