//! Compressed sparse row matrices and a profile (skyline) LDLᵀ factorization
//! with reverse Cuthill–McKee ordering.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

/// Row-major sparse matrix. Column indices are sorted and unique within each
/// row; explicit zeros are kept so patterns stay stable across reassembly.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` triplets; duplicates are summed on build.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::with_capacity(n, n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// Storage index of entry `(i, j)` if it is in the pattern.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let cols = &self.col_idx[lo..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut s = 0.0;
        for i in 0..self.nrows {
            let mut r = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                r += self.values[k] * y[self.col_idx[k]];
            }
            s += x[i] * r;
        }
        s
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (i, j, v) in self.triplets() {
            b.push(j, i, v);
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s·other` over the union pattern.
    pub fn add_scaled(&self, other: &CsrMatrix, s: f64) -> Result<CsrMatrix> {
        check_len(self.nrows, other.nrows)?;
        check_len(self.ncols, other.ncols)?;
        let mut b = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for (i, j, v) in self.triplets() {
            b.push(i, j, v);
        }
        for (i, j, v) in other.triplets() {
            b.push(i, j, s * v);
        }
        Ok(b.build())
    }

    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut b = TripletBuilder::new(self.nrows, other.ncols);
        for (i, k, v) in self.triplets() {
            for (j, w) in other.row(k) {
                b.push(i, j, v * w);
            }
        }
        b.build()
    }

    /// Rows and columns selected by `rows`/`cols` (both sorted index lists).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.ncols];
        for (p, &c) in cols.iter().enumerate() {
            map[c] = p;
        }
        let mut b = TripletBuilder::new(rows.len(), cols.len());
        for (p, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if map[c] != usize::MAX {
                    b.push(p, map[c], v);
                }
            }
        }
        b.build()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij − a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - self.get(j, i)).abs());
        }
        worst / scale
    }
}

/// Fill-reducing ordering and envelope layout shared by all matrices with the
/// same sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSymbolic {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    offsets: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl ProfileSymbolic {
    pub fn analyze(a: &CsrMatrix) -> Result<Self> {
        check_len(a.nrows, a.ncols)?;
        let n = a.nrows;
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j, _) in a.triplets() {
            let (pi, pj) = (inv[i], inv[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            if c < first[r] {
                first[r] = c;
            }
        }
        let mut offsets = vec![0; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + (i - first[i]);
        }
        Ok(Self {
            n,
            perm,
            inv,
            first,
            offsets,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored off-diagonal entries of the envelope.
    pub fn envelope_size(&self) -> usize {
        self.offsets[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn matches(&self, a: &CsrMatrix) -> bool {
        a.nrows == self.n && a.row_ptr == self.row_ptr && a.col_idx == self.col_idx
    }
}

fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let degree: Vec<usize> = (0..n)
        .map(|i| a.row(i).filter(|&(j, _)| j != i).count())
        .collect();
    let neighbors = |i: usize| a.row(i).map(|(j, _)| j).filter(move |&j| j != i);

    let bfs_levels = |start: usize, mark: &mut Vec<usize>, stamp: usize| -> (Vec<usize>, usize) {
        let mut order = vec![start];
        let mut level = vec![0usize];
        mark[start] = stamp;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            let lv = level[head];
            head += 1;
            for w in neighbors(v) {
                if mark[w] != stamp {
                    mark[w] = stamp;
                    order.push(w);
                    level.push(lv + 1);
                }
            }
        }
        let depth = *level.last().unwrap();
        let last: Vec<usize> = order
            .iter()
            .zip(&level)
            .filter(|(_, &l)| l == depth)
            .map(|(&v, _)| v)
            .collect();
        (last, depth)
    };

    let mut placed = vec![false; n];
    let mut mark = vec![usize::MAX; n];
    let mut stamp = 0usize;
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if placed[seed] {
            continue;
        }
        // Pseudo-peripheral start node (George–Liu).
        let mut start = seed;
        let (mut last, mut depth) = bfs_levels(start, &mut mark, stamp);
        stamp += 1;
        loop {
            let cand = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
            let (l2, d2) = bfs_levels(cand, &mut mark, stamp);
            stamp += 1;
            if d2 > depth {
                start = cand;
                last = l2;
                depth = d2;
            } else {
                break;
            }
        }
        let mut queue = VecDeque::new();
        queue.push_back(start);
        placed[start] = true;
        let mut nbuf = Vec::new();
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbuf.clear();
            nbuf.extend(neighbors(v).filter(|&w| !placed[w]));
            nbuf.sort_by_key(|&w| (degree[w], w));
            for &w in &nbuf {
                placed[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// LDLᵀ factorization of a symmetric matrix in envelope storage.
///
/// No pivoting: works for SPD matrices and for symmetric indefinite ones
/// whose leading minors in the chosen ordering are non-singular.
#[derive(Debug, Clone)]
pub struct LdltFactor {
    symbolic: ProfileSymbolic,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl LdltFactor {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let symbolic = ProfileSymbolic::analyze(a)?;
        Self::with_symbolic(symbolic, a)
    }

    pub fn with_symbolic(symbolic: ProfileSymbolic, a: &CsrMatrix) -> Result<Self> {
        let mut f = Self {
            lower: vec![0.0; symbolic.envelope_size()],
            diag: vec![0.0; symbolic.n],
            symbolic,
        };
        f.refactor(a)?;
        Ok(f)
    }

    pub fn symbolic(&self) -> &ProfileSymbolic {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Numeric refactorization for a matrix with the analyzed pattern.
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<()> {
        if !self.symbolic.matches(a) {
            return Err(Error::InvalidArgument("matrix pattern differs from the analyzed one".into()));
        }
        let sym = &self.symbolic;
        let n = sym.n;
        self.lower.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        let mut scale: f64 = 0.0;
        for (i, j, v) in a.triplets() {
            let (pi, pj) = (sym.inv[i], sym.inv[j]);
            if pi == pj {
                self.diag[pi] += v;
                scale = scale.max(v.abs());
            } else if pi > pj {
                self.lower[sym.offsets[pi] + pj - sym.first[pi]] += v;
            }
        }
        let tiny = scale.max(f64::MIN_POSITIVE) * 1e-14;

        for i in 0..n {
            let fi = sym.first[i];
            let (done, rest) = self.lower.split_at_mut(sym.offsets[i]);
            let row_i = &mut rest[..i - fi];
            // row_i[j - fi] becomes t_j = L_ij d_j, then L_ij.
            for j in fi..i {
                let fj = sym.first[j];
                let k0 = fi.max(fj);
                let row_j = &done[sym.offsets[j]..sym.offsets[j] + (j - fj)];
                let ti = &row_i[k0 - fi..j - fi];
                let lj = &row_j[k0 - fj..j - fj];
                let s: f64 = ti.iter().zip(lj).map(|(a, b)| a * b).sum();
                row_i[j - fi] -= s;
            }
            let mut d = self.diag[i];
            for j in fi..i {
                let t = row_i[j - fi];
                let l = t / self.diag[j];
                d -= t * l;
                row_i[j - fi] = l;
            }
            if !(d.abs() > tiny) || !d.is_finite() {
                return Err(Error::Singular { row: sym.perm[i] });
            }
            self.diag[i] = d;
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let sym = &self.symbolic;
        assert_eq!(b.len(), sym.n);
        let mut y: Vec<f64> = sym.perm.iter().map(|&o| b[o]).collect();
        for i in 0..sym.n {
            let fi = sym.first[i];
            let row = &self.lower[sym.offsets[i]..sym.offsets[i + 1]];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for (yi, d) in y.iter_mut().zip(&self.diag) {
            *yi /= d;
        }
        for i in (0..sym.n).rev() {
            let fi = sym.first[i];
            let yi = y[i];
            let row = &self.lower[sym.offsets[i]..sym.offsets[i + 1]];
            for (l, v) in row.iter().zip(&mut y[fi..i]) {
                *v -= l * yi;
            }
        }
        for (new, &old) in sym.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    /// Number of negative pivots (the inertia's negative count).
    pub fn negative_pivots(&self) -> usize {
        self.diag.iter().filter(|&&d| d < 0.0).count()
    }
}

/// Relative residual `‖A x − b‖₂ / max(‖b‖₂, tiny)`.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    let nb: f64 = b.iter().map(|v| v * v).sum();
    crate::math::sqrt(r) / crate::math::sqrt(nb).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
                b.push(i - 1, i, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 1, 1.0);
        b.push(0, 1, 2.5);
        b.push(1, 0, 0.0);
        let m = b.build();
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.slot(1, 0), Some(1));
    }

    #[test]
    fn ldlt_solves_tridiagonal() {
        let a = laplacian_1d(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x);
        let f = LdltFactor::new(&a).unwrap();
        let y = f.solve(&b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10);
        }
        assert!(relative_residual(&a, &y, &b) < 1e-13);
    }

    #[test]
    fn ldlt_indefinite_and_singular() {
        let mut b = TripletBuilder::new(2, 2);
        b.push(0, 0, 1.0);
        b.push(1, 1, -3.0);
        b.push(0, 1, 0.5);
        b.push(1, 0, 0.5);
        let a = b.build();
        let f = LdltFactor::new(&a).unwrap();
        assert_eq!(f.negative_pivots(), 1);
        let y = f.solve(&[1.0, 2.0]);
        assert!(relative_residual(&a, &y, &[1.0, 2.0]) < 1e-14);

        let mut s = TripletBuilder::new(2, 2);
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            s.push(i, j, 1.0);
        }
        assert!(matches!(LdltFactor::new(&s.build()), Err(Error::Singular { .. })));
    }

    #[test]
    fn refactor_requires_same_pattern() {
        let a = laplacian_1d(5);
        let mut f = LdltFactor::new(&a).unwrap();
        assert!(f.refactor(&a.scaled(2.0)).is_ok());
        assert!(f.refactor(&laplacian_1d(6)).is_err());
    }
}
