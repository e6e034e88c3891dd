//! Sparse/dense complex linear algebra used throughout: a row-major sparse
//! matrix, block detection through the sparsity pattern, and SVD-based rank and
//! null space extraction.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Relative singular-value threshold for rank decisions.
pub const RANK_RTOL: f64 = 1e-8;

/// Row-major sparse complex matrix. Each row is sorted by column and carries no
/// explicit zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SpMat {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, C64)>>,
}

impl SpMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, rows: (0..n).map(|i| vec![(i, ONE)]).collect() }
    }

    pub fn diagonal(d: &[C64]) -> Self {
        let n = d.len();
        let rows = d.iter().enumerate()
            .map(|(i, &v)| if v == ZERO { Vec::new() } else { vec![(i, v)] })
            .collect();
        Self { nrows: n, ncols: n, rows }
    }

    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, trip: I) -> Self
    where I: IntoIterator<Item = (usize, usize, C64)>
    {
        let mut acc: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); nrows];
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet out of bounds");
            *acc[r].entry(c).or_insert(ZERO) += v;
        }
        let rows = acc.into_iter()
            .map(|m| m.into_iter().filter(|(_, v)| *v != ZERO).collect())
            .collect();
        Self { nrows, ncols, rows }
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols())
                .filter_map(|j| {
                    let v = m[(i, j)];
                    (v != ZERO).then_some((j, v))
                })
                .collect())
            .collect();
        Self { nrows: m.nrows(), ncols: m.ncols(), rows }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn nnz(&self) -> usize { self.rows.iter().map(Vec::len).sum() }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        match self.rows[r].binary_search_by_key(&c, |&(j, _)| j) {
            Ok(k) => self.rows[r][k].1,
            Err(_) => ZERO,
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                rows[j].push((i, v.conj()));
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, rows }
    }

    pub fn scale(&self, a: C64) -> Self {
        let rows = self.rows.iter()
            .map(|row| row.iter()
                .map(|&(j, v)| (j, v * a))
                .filter(|(_, v)| *v != ZERO)
                .collect())
            .collect();
        Self { nrows: self.nrows, ncols: self.ncols, rows }
    }

    /// `self + a * other`.
    pub fn add_scaled(&self, a: C64, other: &SpMat) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let rows = self.rows.iter().zip(&other.rows)
            .map(|(r1, r2)| merge_rows(r1, r2, a))
            .collect();
        Self { nrows: self.nrows, ncols: self.ncols, rows }
    }

    pub fn sub(&self, other: &SpMat) -> Self { self.add_scaled(-ONE, other) }

    /// Drop entries with modulus at most `tol`.
    pub fn chop(mut self, tol: f64) -> Self {
        for row in &mut self.rows {
            row.retain(|(_, v)| v.norm() > tol);
        }
        self
    }

    pub fn matmul(&self, other: &SpMat) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul shape mismatch");
        let mut dense = vec![ZERO; other.ncols];
        let mut touched = vec![false; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut rows = Vec::with_capacity(self.nrows);
        for row in &self.rows {
            for &(k, a) in row {
                for &(j, b) in &other.rows[k] {
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    dense[j] += a * b;
                }
            }
            cols.sort_unstable();
            let mut out = Vec::with_capacity(cols.len());
            for &j in &cols {
                if dense[j] != ZERO {
                    out.push((j, dense[j]));
                }
                dense[j] = ZERO;
                touched[j] = false;
            }
            cols.clear();
            rows.push(out);
        }
        Self { nrows: self.nrows, ncols: other.ncols, rows }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        self.rows.iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Dense product `self * m`.
    pub fn mul_dense(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        assert_eq!(self.ncols, m.nrows());
        let mut out = DMatrix::zeros(self.nrows, m.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, v) in row {
                for j in 0..m.ncols() {
                    out[(i, j)] += v * m[(k, j)];
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.iter().flatten().map(|(_, v)| v.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.rows.iter().flatten().map(|(_, v)| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max-norm of `self - other`.
    pub fn dist(&self, other: &SpMat) -> f64 { self.sub(other).max_abs() }

    /// Connected blocks of the bipartite row/column sparsity pattern. Returns
    /// `(rows, cols)` pairs; columns never touched form singleton blocks with
    /// no rows.
    pub fn blocks(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut uf = UnionFind::new(self.ncols);
        for row in &self.rows {
            if let Some(&(first, _)) = row.first() {
                for &(j, _) in &row[1..] {
                    uf.union(first, j);
                }
            }
        }
        let mut root_block: BTreeMap<usize, usize> = BTreeMap::new();
        let mut blocks: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for j in 0..self.ncols {
            let r = uf.find(j);
            let b = *root_block.entry(r).or_insert_with(|| {
                blocks.push((Vec::new(), Vec::new()));
                blocks.len() - 1
            });
            blocks[b].1.push(j);
        }
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(&(first, _)) = row.first() {
                let b = root_block[&uf.find(first)];
                blocks[b].0.push(i);
            }
        }
        blocks
    }

    /// Dense submatrix on the given rows and columns.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
        let mut pos = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            pos[c] = k;
        }
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for &(j, v) in &self.rows[r] {
                if pos[j] != usize::MAX {
                    out[(i, pos[j])] = v;
                }
            }
        }
        out
    }
}

fn merge_rows(r1: &[(usize, C64)], r2: &[(usize, C64)], a: C64) -> Vec<(usize, C64)> {
    let mut out = Vec::with_capacity(r1.len() + r2.len());
    let (mut i, mut j) = (0, 0);
    while i < r1.len() || j < r2.len() {
        let (c, v) = if j >= r2.len() || (i < r1.len() && r1[i].0 < r2[j].0) {
            i += 1;
            r1[i - 1]
        } else if i >= r1.len() || r2[j].0 < r1[i].0 {
            j += 1;
            (r2[j - 1].0, a * r2[j - 1].1)
        } else {
            i += 1;
            j += 1;
            (r1[i - 1].0, r1[i - 1].1 + a * r2[j - 1].1)
        };
        if v != ZERO {
            out.push((c, v));
        }
    }
    out
}

pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self { Self { parent: (0..n).collect() } }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Accumulates rows of a tall system into a square upper-triangular factor with
/// the same row space, so huge row counts never need to be stored.
pub struct RowCompressor {
    ncols: usize,
    r: DMatrix<C64>,
    pending: Vec<Vec<(usize, C64)>>,
}

impl RowCompressor {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, r: DMatrix::zeros(0, ncols), pending: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<(usize, C64)>) {
        if row.is_empty() {
            return;
        }
        self.pending.push(row);
        if self.pending.len() >= 4 * self.ncols.max(16) {
            self.flush();
        }
    }

    pub fn push_dense(&mut self, row: &[C64]) {
        self.push(row.iter().enumerate().filter(|(_, v)| **v != ZERO).map(|(j, &v)| (j, v)).collect());
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let m0 = self.r.nrows();
        let mut stacked = DMatrix::zeros(m0 + self.pending.len(), self.ncols);
        stacked.rows_mut(0, m0).copy_from(&self.r);
        for (i, row) in self.pending.drain(..).enumerate() {
            for (j, v) in row {
                stacked[(m0 + i, j)] = v;
            }
        }
        self.r = if stacked.nrows() > self.ncols { stacked.qr().r() } else { stacked };
    }

    /// Square-or-shorter matrix with the row space of everything pushed.
    pub fn finish(mut self) -> DMatrix<C64> {
        self.flush();
        self.r
    }
}

/// Singular values and the full right singular basis (columns of `V`).
pub fn svd_full_v(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = a.ncols();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let reduced = if a.nrows() > n { a.clone().qr().r() } else { a.clone() };
    let m = reduced.nrows();
    let square = if m < n {
        let mut p = DMatrix::zeros(n, n);
        p.rows_mut(0, m).copy_from(&reduced);
        p
    } else {
        reduced
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    (sv, v_t.adjoint())
}

pub fn singular_values(a: &DMatrix<C64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let reduced = if a.nrows() > 2 * a.ncols() {
        a.clone().qr().r()
    } else if a.ncols() > 2 * a.nrows() {
        a.adjoint().qr().r()
    } else {
        a.clone()
    };
    reduced.singular_values().iter().copied().collect()
}

pub fn threshold(sigma_max: f64, rtol: f64) -> f64 { rtol * sigma_max.max(1.0) }

/// Numerical rank of a sparse matrix, decided blockwise against the global
/// largest singular value.
pub fn sparse_rank(a: &SpMat, rtol: f64) -> usize {
    let mut all: Vec<f64> = Vec::new();
    for (rows, cols) in a.blocks() {
        if rows.is_empty() {
            continue;
        }
        all.extend(singular_values(&a.submatrix(&rows, &cols)));
    }
    let smax = all.iter().copied().fold(0.0, f64::max);
    let t = threshold(smax, rtol);
    all.iter().filter(|&&s| s > t).count()
}

pub fn dense_rank(a: &DMatrix<C64>, rtol: f64) -> usize {
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let t = threshold(smax, rtol);
    sv.iter().filter(|&&s| s > t).count()
}

/// Orthonormal basis of the null space of a dense matrix, as columns, with the
/// threshold taken relative to `scale` (at least 1).
pub fn dense_null_space(a: &DMatrix<C64>, rtol: f64, scale: f64) -> DMatrix<C64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let (sv, v) = svd_full_v(a);
    let t = threshold(scale.max(sv.iter().copied().fold(0.0, f64::max)), rtol);
    let keep: Vec<usize> = (0..n).filter(|&i| sv[i] <= t).collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &v.column(i));
    }
    out
}

/// A null vector with its support spelled out.
#[derive(Clone, Debug)]
pub struct SparseVec {
    pub entries: Vec<(usize, C64)>,
}

/// Orthonormal null-space basis of a sparse system, built blockwise. The
/// threshold uses the largest singular value across all blocks.
pub fn sparse_null_space(a: &SpMat, rtol: f64) -> Vec<SparseVec> {
    let blocks = a.blocks();
    // one SVD per block, thresholded once the global σ_max is known
    let mut svds = Vec::with_capacity(blocks.len());
    let mut smax: f64 = 0.0;
    for (rows, cols) in &blocks {
        if rows.is_empty() {
            svds.push(None);
            continue;
        }
        let (sv, v) = svd_full_v(&compress_rows(a, rows, cols));
        smax = sv.iter().copied().fold(smax, f64::max);
        svds.push(Some((sv, v)));
    }
    let t = threshold(smax, rtol);
    let mut out = Vec::new();
    for ((_, cols), svd) in blocks.iter().zip(svds) {
        match svd {
            None => {
                for &c in cols {
                    out.push(SparseVec { entries: vec![(c, ONE)] });
                }
            }
            Some((sv, v)) => {
                for k in (0..cols.len()).filter(|&k| sv[k] <= t) {
                    let entries = cols.iter().enumerate()
                        .filter_map(|(i, &c)| {
                            let x = v[(i, k)];
                            (x != ZERO).then_some((c, x))
                        })
                        .collect();
                    out.push(SparseVec { entries });
                }
            }
        }
    }
    out
}

fn compress_rows(a: &SpMat, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
    if rows.len() <= 4 * cols.len() {
        return a.submatrix(rows, cols);
    }
    let mut pos = vec![usize::MAX; a.ncols];
    for (k, &c) in cols.iter().enumerate() {
        pos[c] = k;
    }
    let mut comp = RowCompressor::new(cols.len());
    for &r in rows {
        comp.push(a.rows[r].iter().map(|&(j, v)| (pos[j], v)).collect());
    }
    comp.finish()
}

/// Orthonormalize the columns of `f` with respect to the positive diagonal
/// weight `wt` (inner product `Σ wt_i conj(a_i) b_i`).
pub fn weighted_orthonormalize(f: &DMatrix<C64>, wt: &[f64]) -> DMatrix<C64> {
    assert_eq!(f.nrows(), wt.len());
    let mut scaled = f.clone();
    for (i, &w) in wt.iter().enumerate() {
        let s = w.sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    let q = if scaled.ncols() == 0 { scaled } else { scaled.qr().q() };
    let mut out = q;
    for (i, &w) in wt.iter().enumerate() {
        let s = 1.0 / w.sqrt();
        out.row_mut(i).scale_mut(s);
    }
    out
}

pub fn max_abs_dense(m: &DMatrix<C64>) -> f64 { m.iter().map(|v| v.norm()).fold(0.0, f64::max) }

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 { C64::new(re, 0.0) }

    #[test]
    fn matmul_matches_dense() {
        let a = SpMat::from_triplets(2, 3, [(0, 0, c(1.0)), (0, 2, C64::new(0.0, 2.0)), (1, 1, c(3.0))]);
        let b = SpMat::from_triplets(3, 2, [(0, 1, c(1.0)), (1, 0, c(-1.0)), (2, 0, c(1.0)), (2, 1, c(5.0))]);
        let dense = a.to_dense() * b.to_dense();
        assert!(max_abs_dense(&(a.matmul(&b).to_dense() - dense)) < 1e-15);
    }

    #[test]
    fn duplicates_sum_and_cancel() {
        let a = SpMat::from_triplets(1, 2, [(0, 0, c(1.0)), (0, 0, c(-1.0)), (0, 1, c(2.0))]);
        assert_eq!(a.rows[0], vec![(1, c(2.0))]);
    }

    #[test]
    fn rank_of_blocks() {
        // two blocks: a rank-1 2x2 and a full-rank 1x1
        let a = SpMat::from_triplets(3, 3, [
            (0, 0, c(1.0)), (0, 1, c(1.0)), (1, 0, c(2.0)), (1, 1, c(2.0)), (2, 2, c(4.0)),
        ]);
        assert_eq!(sparse_rank(&a, RANK_RTOL), 2);
        assert_eq!(a.blocks().len(), 2);
    }

    #[test]
    fn null_space_is_orthonormal_and_annihilated() {
        let a = SpMat::from_triplets(2, 4, [
            (0, 0, c(1.0)), (0, 1, c(-1.0)), (1, 1, c(1.0)), (1, 2, C64::new(0.0, 1.0)),
        ]);
        let ns = sparse_null_space(&a, RANK_RTOL);
        assert_eq!(ns.len(), 2);
        let mut m = DMatrix::<C64>::zeros(4, ns.len());
        for (k, v) in ns.iter().enumerate() {
            for &(i, x) in &v.entries {
                m[(i, k)] = x;
            }
        }
        assert!(max_abs_dense(&(a.to_dense() * &m)) < 1e-12);
        let g = m.adjoint() * &m;
        assert!(max_abs_dense(&(g - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn compressor_keeps_row_space() {
        let mut comp = RowCompressor::new(3);
        let mut full = Vec::new();
        for i in 0..200 {
            let row = [c((i % 3) as f64), c(1.0), c((i % 3) as f64 + 1.0)];
            comp.push_dense(&row);
            full.push(row);
        }
        let r = comp.finish();
        let dense = DMatrix::from_fn(200, 3, |i, j| full[i][j]);
        assert_eq!(dense_rank(&r, RANK_RTOL), dense_rank(&dense, RANK_RTOL));
        let sv1 = singular_values(&r);
        let sv2 = singular_values(&dense);
        let m1 = sv1.iter().copied().fold(0.0, f64::max);
        let m2 = sv2.iter().copied().fold(0.0, f64::max);
        assert!((m1 - m2).abs() < 1e-9 * m2);
    }

    #[test]
    fn weighted_orthonormal() {
        let f = DMatrix::from_fn(3, 2, |i, j| c((i + 2 * j) as f64 + 1.0));
        let wt = [0.5, 2.0, 1.0];
        let q = weighted_orthonormalize(&f, &wt);
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(3, wt.iter().map(|&x| c(x))));
        let g = q.adjoint() * w * &q;
        assert!(max_abs_dense(&(g - DMatrix::identity(2, 2))) < 1e-12);
    }
}
