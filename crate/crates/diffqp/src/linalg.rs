//! Dense row-major matrices and the factorizations the rest of the crate
//! builds on.
//!
//! Everything is plain `f64` with written-out loops and a fixed (ascending
//! index) summation order, so any routine fed identical inputs produces
//! bitwise-identical outputs regardless of thread count or batch layout.
//! That guarantee is load-bearing: the batched solver promises results
//! identical to a sequential per-instance loop.

use std::ops::{Index, IndexMut};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::{Error, Result};

static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of LU factorizations performed by this process so far.
///
/// Lets callers assert that a code path reused existing factors instead of
/// computing new ones: read before, read after, compare.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.load(Ordering::Relaxed)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        DenseMatrix { rows, cols, data }
    }

    /// Diagonal matrix from its diagonal entries.
    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = DenseMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Matrix product; panics on inner-dimension mismatch.
    ///
    /// Each output entry accumulates over the inner index in ascending order
    /// (exact triple-loop semantics), so results are reproducible bit for
    /// bit. The loop nest is i-k-j for cache friendliness, which performs
    /// the same additions in the same order as the naive i-j-k nest.
    pub fn matmul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &aik) in arow.iter().enumerate() {
                if aik != 0.0 {
                    let brow = rhs.row(k);
                    for (o, &bkj) in orow.iter_mut().zip(brow) {
                        *o += aik * bkj;
                    }
                }
            }
        }
        out
    }

    /// `A x` for a vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.cols, x.len());
        let mut out = vec![0.0; self.rows];
        if self.cols == 0 {
            return out;
        }
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
        out
    }

    /// `A' x` without forming the transpose.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.rows, x.len());
        let mut out = vec![0.0; self.cols];
        if self.cols == 0 {
            return out;
        }
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x) {
            if xi != 0.0 {
                axpy(xi, row, &mut out);
            }
        }
        out
    }

    /// Max absolute row sum (the matrix infinity norm).
    pub fn inf_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for row in self.data.chunks_exact(self.cols.max(1)) {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            best = best.max(s);
        }
        best
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Copies `block` into `self` with upper-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &DenseMatrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            let src = block.row(i);
            let dst = &mut self.data[(r0 + i) * self.cols + c0..];
            dst[..block.cols].copy_from_slice(src);
        }
    }

    /// Writes `diag` onto the diagonal starting at `(r0, c0)`.
    pub fn set_diag(&mut self, r0: usize, c0: usize, diag: &[f64]) {
        for (i, &d) in diag.iter().enumerate() {
            self.data[(r0 + i) * self.cols + c0 + i] = d;
        }
    }

    /// `self += alpha * other`, entrywise.
    pub fn add_scaled(&mut self, alpha: f64, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Rank-one update `self += alpha * u v'`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        for (row, &ui) in self.data.chunks_exact_mut(self.cols.max(1)).zip(u) {
            let a = alpha * ui;
            if a != 0.0 {
                axpy(a, v, row);
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// dot product of two vectors
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        s += a * b;
    }
    s
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (b, a) in y.iter_mut().zip(x) {
        *b += alpha * a;
    }
}

/// Max absolute entry of a vector; 0 for the empty vector.
pub fn vec_inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Packed LU factors of a square matrix with partial pivoting: `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    /// Unit-lower `L` strictly below the diagonal, `U` on and above it.
    lu: Vec<f64>,
    /// Row exchanged with row `k` at elimination step `k`.
    pivots: Vec<usize>,
    /// Permutation parity, +1 or -1.
    sign: f64,
}

/// Factors a square matrix, `P A = L U`, choosing the largest-magnitude
/// pivot in each column.
///
/// A pivot of magnitude at most `1e-14 * ||A||_inf` is treated as singular
/// and reported with its elimination step, rather than letting garbage
/// propagate.
pub fn lu_factor(a: &DenseMatrix) -> Result<LuFactors> {
    assert_eq!(a.rows, a.cols, "lu_factor needs a square matrix");
    FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
    let n = a.rows;
    let tol = 1e-14 * a.inf_norm();
    let mut lu = a.data.clone();
    let mut pivots = vec![0usize; n];
    let mut sign = 1.0;

    for k in 0..n {
        let mut piv = k;
        let mut best = lu[k * n + k].abs();
        for i in k + 1..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best <= tol {
            return Err(Error::Singular { index: k });
        }
        pivots[k] = piv;
        if piv != k {
            sign = -sign;
            let (lo, hi) = lu.split_at_mut(piv * n);
            lo[k * n..k * n + n].swap_with_slice(&mut hi[..n]);
        }
        let (top, rest) = lu.split_at_mut((k + 1) * n);
        let pivot = top[k * n + k];
        let pivot_row = &top[k * n + k + 1..(k + 1) * n];
        for r in rest.chunks_exact_mut(n) {
            let f = r[k] / pivot;
            r[k] = f;
            if f != 0.0 {
                for (ri, pj) in r[k + 1..].iter_mut().zip(pivot_row) {
                    *ri -= f * pj;
                }
            }
        }
    }
    Ok(LuFactors {
        n,
        lu,
        pivots,
        sign,
    })
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    /// Packed factors and pivot sequence, mainly for reconstruction checks.
    pub fn packed(&self) -> (&[f64], &[usize]) {
        (&self.lu, &self.pivots)
    }

    /// Solves `A x = rhs` using the stored factors.
    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let n = self.n;
        let mut x = rhs.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
        }
        // L y = P rhs, unit lower triangle
        for i in 1..n {
            let (done, rest) = x.split_at_mut(i);
            rest[0] -= dot(&self.lu[i * n..i * n + i], done);
        }
        // U x = y
        for i in (0..n).rev() {
            let (head, tail) = x.split_at_mut(i + 1);
            head[i] = (head[i] - dot(&self.lu[i * n + i + 1..(i + 1) * n], tail)) / self.lu[i * n + i];
        }
        x
    }

    /// Solves for every column of `rhs`.
    pub fn solve_mat(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(rhs.rows, self.n);
        let mut out = DenseMatrix::zeros(rhs.rows, rhs.cols);
        let mut col = vec![0.0; self.n];
        for j in 0..rhs.cols {
            for i in 0..self.n {
                col[i] = rhs[(i, j)];
            }
            let x = self.solve_vec(&col);
            for i in 0..self.n {
                out[(i, j)] = x[i];
            }
        }
        out
    }
}

/// Whether `a + shift * I` admits a Cholesky factorization, i.e. is positive
/// definite. Used as a definiteness screen; the factors are discarded.
pub fn cholesky_shifted_ok(a: &DenseMatrix, shift: f64) -> bool {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut c = a.data.clone();
    for i in 0..n {
        c[i * n + i] += shift;
    }
    for k in 0..n {
        let mut d = c[k * n + k];
        for j in 0..k {
            d -= c[k * n + j] * c[k * n + j];
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        c[k * n + k] = d;
        for i in k + 1..n {
            let mut v = c[i * n + k];
            for j in 0..k {
                v -= c[i * n + j] * c[k * n + j];
            }
            c[i * n + k] = v / d;
        }
    }
    true
}

/// Numerical rank via Gaussian elimination with full pivoting; entries at or
/// below `rel_tol * max|a_ij|` count as zero.
pub fn rank(a: &DenseMatrix, rel_tol: f64) -> usize {
    let (m, n) = (a.rows, a.cols);
    if m == 0 || n == 0 {
        return 0;
    }
    let tol = rel_tol * a.max_abs();
    let mut w = a.data.clone();
    let mut r = 0;
    for k in 0..m.min(n) {
        let mut best = 0.0;
        let (mut pi, mut pj) = (k, k);
        for i in k..m {
            for j in k..n {
                let v = w[i * n + j].abs();
                if v > best {
                    best = v;
                    pi = i;
                    pj = j;
                }
            }
        }
        if best <= tol {
            break;
        }
        if pi != k {
            for j in 0..n {
                w.swap(k * n + j, pi * n + j);
            }
        }
        if pj != k {
            for i in 0..m {
                w.swap(i * n + k, i * n + pj);
            }
        }
        let pivot = w[k * n + k];
        for i in k + 1..m {
            let f = w[i * n + k] / pivot;
            for j in k..n {
                w[i * n + j] -= f * w[k * n + j];
            }
        }
        r += 1;
    }
    r
}

/// A batch of equally-shaped matrices in one contiguous allocation, batch
/// axis outermost. `slice(i)` is a view, not a copy.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMatrix {
    batch: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BatchMatrix {
    pub fn zeros(batch: usize, rows: usize, cols: usize) -> Self {
        BatchMatrix {
            batch,
            rows,
            cols,
            data: vec![0.0; batch * rows * cols],
        }
    }

    pub fn from_parts(batch: usize, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), batch * rows * cols);
        BatchMatrix {
            batch,
            rows,
            cols,
            data,
        }
    }

    /// Stacks equally-shaped matrices into one batch.
    pub fn from_matrices(mats: &[DenseMatrix]) -> Result<Self> {
        let (rows, cols) = match mats.first() {
            Some(m) => (m.rows(), m.cols()),
            None => (0, 0),
        };
        let mut data = Vec::with_capacity(mats.len() * rows * cols);
        for (i, m) in mats.iter().enumerate() {
            if (m.rows(), m.cols()) != (rows, cols) {
                return Err(Error::Shape(format!(
                    "batch element {i} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    rows,
                    cols
                )));
            }
            data.extend_from_slice(m.data());
        }
        Ok(BatchMatrix {
            batch: mats.len(),
            rows,
            cols,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let s = self.rows * self.cols;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn slice_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.rows * self.cols;
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Copies element `i` out into its own matrix.
    pub fn to_dense(&self, i: usize) -> DenseMatrix {
        DenseMatrix::from_vec(self.rows, self.cols, self.slice(i).to_vec())
    }

    pub fn set_slice(&mut self, i: usize, m: &DenseMatrix) {
        assert_eq!((m.rows(), m.cols()), (self.rows, self.cols));
        self.slice_mut(i).copy_from_slice(m.data());
    }
}

/// Applies `op` to every batch element, possibly in parallel, collecting
/// outputs in batch order.
///
/// Every element is computed independently and written to its own slot, so
/// the result is bitwise identical to the sequential loop no matter how many
/// threads the surrounding rayon pool has. A failing element aborts the whole
/// map and reports its batch index.
pub fn batch_map<F>(xs: &BatchMatrix, op: F) -> Result<BatchMatrix>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix> + Sync,
{
    let outs: Vec<Result<DenseMatrix>> = (0..xs.batch())
        .into_par_iter()
        .map(|i| op(&xs.to_dense(i)))
        .collect();
    collect_batch(outs)
}

/// Two-input variant of [`batch_map`]; `xs` and `ys` must have equal batch
/// counts.
pub fn batch_map2<F>(xs: &BatchMatrix, ys: &BatchMatrix, op: F) -> Result<BatchMatrix>
where
    F: Fn(&DenseMatrix, &DenseMatrix) -> Result<DenseMatrix> + Sync,
{
    if xs.batch() != ys.batch() {
        return Err(Error::Shape(format!(
            "batch count mismatch: {} vs {}",
            xs.batch(),
            ys.batch()
        )));
    }
    let outs: Vec<Result<DenseMatrix>> = (0..xs.batch())
        .into_par_iter()
        .map(|i| op(&xs.to_dense(i), &ys.to_dense(i)))
        .collect();
    collect_batch(outs)
}

fn collect_batch(outs: Vec<Result<DenseMatrix>>) -> Result<BatchMatrix> {
    let mut mats = Vec::with_capacity(outs.len());
    for (i, o) in outs.into_iter().enumerate() {
        match o {
            Ok(m) => mats.push(m),
            Err(e) => {
                return Err(Error::BatchElement {
                    index: i,
                    source: Box::new(e),
                })
            }
        }
    }
    BatchMatrix::from_matrices(&mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        DenseMatrix::from_vec(r, c, data)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data)
    }

    /// Independent oracle: naive i-j-k product with a local accumulator.
    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Rebuilds `P A` from packed LU factors.
    fn lu_reconstruct(f: &LuFactors) -> DenseMatrix {
        let n = f.dim();
        let (lu, _) = f.packed();
        let mut l = DenseMatrix::identity(n);
        let mut u = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if j < i {
                    l[(i, j)] = lu[i * n + j];
                } else {
                    u[(i, j)] = lu[i * n + j];
                }
            }
        }
        l.matmul(&u)
    }

    fn permute_rows(a: &DenseMatrix, pivots: &[usize]) -> DenseMatrix {
        let mut p = a.clone();
        for k in 0..pivots.len() {
            if pivots[k] != k {
                for j in 0..p.cols() {
                    let t = p[(k, j)];
                    p[(k, j)] = p[(pivots[k], j)];
                    p[(pivots[k], j)] = t;
                }
            }
        }
        p
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 7, 5);
        let b = random_matrix(&mut rng, 5, 3);
        let got = a.matmul(&b);
        let want = naive_matmul(&a, &b);
        assert!(max_abs_diff(&got, &want) <= 1e-13);
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 6, 6);
        let i = DenseMatrix::identity(6);
        assert_eq!(a.matmul(&i), a);
        assert_eq!(i.matmul(&a), a);
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 5, 8);
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = a.matvec(&x);
        let aty = a.tr_matvec(&y);
        // <Ax, y> == <x, A'y>
        let lhs = dot(&ax, &y);
        let rhs = dot(&x, &aty);
        assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn lu_identity_is_trivial() {
        let f = lu_factor(&DenseMatrix::identity(4)).unwrap();
        let (lu, pivots) = f.packed();
        assert_eq!(lu, DenseMatrix::identity(4).data());
        assert_eq!(pivots, &[0, 1, 2, 3]);
        assert_eq!(f.sign(), 1.0);
    }

    #[test]
    fn lu_multiply_back_small_and_large() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &n in &[3usize, 8, 17, 40] {
            let a = random_matrix(&mut rng, n, n);
            let f = lu_factor(&a).unwrap();
            let (_, pivots) = f.packed();
            let pa = permute_rows(&a, pivots);
            let rebuilt = lu_reconstruct(&f);
            assert!(
                max_abs_diff(&pa, &rebuilt) <= 1e-12 * a.inf_norm(),
                "multiply-back residual too large at n={n}"
            );
        }
    }

    #[test]
    fn lu_reports_singular_with_pivot_index() {
        // rank 2: third row is the sum of the first two
        let a = mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[5.0, 7.0, 9.0]]);
        match lu_factor(&a) {
            Err(Error::Singular { index }) => assert_eq!(index, 2),
            other => panic!("expected Singular, got {other:?}"),
        }
    }

    #[test]
    fn lu_solve_residual_small_on_well_conditioned_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let mut a = random_matrix(&mut rng, 12, 12);
            for i in 0..12 {
                a[(i, i)] += 6.0; // diagonally dominant, condition well under 1e3
            }
            let b: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = lu_factor(&a).unwrap().solve_vec(&b);
            let mut r = a.matvec(&x);
            axpy(-1.0, &b, &mut r);
            assert!(vec_inf_norm(&r) <= 1e-10 * vec_inf_norm(&b).max(1.0));
        }
    }

    /// Hilbert matrices grow ill-conditioned fast. At n = 10 the solve still
    /// goes through with degraded but finite accuracy; by n = 12 the trailing
    /// pivot falls under the relative singularity threshold and the
    /// factorization reports it rather than returning garbage.
    #[test]
    fn lu_hilbert_ill_conditioning_behavior() {
        let hilbert = |n: usize| {
            let mut h = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] = 1.0 / (i + j + 1) as f64;
                }
            }
            h
        };
        let h10 = hilbert(10);
        let b = vec![1.0; 10];
        let x = lu_factor(&h10).unwrap().solve_vec(&b);
        assert!(x.iter().all(|v| v.is_finite()));
        // accuracy loss is expected; the residual stays moderate even though
        // the error in x is large
        let mut r = h10.matvec(&x);
        axpy(-1.0, &b, &mut r);
        assert!(vec_inf_norm(&r) <= 1e-7);

        assert!(matches!(
            lu_factor(&hilbert(12)),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn cholesky_screen_detects_indefiniteness() {
        let q = mat(&[&[1.0, 2.0], &[2.0, 1.0]]); // eigenvalues 3 and -1
        assert!(!cholesky_shifted_ok(&q, 1e-8));
        let spd = mat(&[&[2.0, 0.3], &[0.3, 1.0]]);
        assert!(cholesky_shifted_ok(&spd, 0.0));
    }

    #[test]
    fn rank_full_and_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 3, 7);
        assert_eq!(rank(&a, 1e-10), 3);
        let b = mat(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]]);
        assert_eq!(rank(&b, 1e-10), 1);
        assert_eq!(rank(&DenseMatrix::zeros(4, 4), 1e-10), 0);
    }

    #[test]
    fn batch_slices_are_views_into_one_allocation() {
        let mut b = BatchMatrix::zeros(3, 2, 2);
        b.slice_mut(1)[3] = 5.0;
        assert_eq!(b.data()[1 * 4 + 3], 5.0);
        let base = b.data().as_ptr() as usize;
        let s2 = b.slice(2).as_ptr() as usize;
        assert_eq!(s2 - base, 2 * 4 * std::mem::size_of::<f64>());
    }

    #[test]
    fn batch_map_matches_sequential_loop_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mats: Vec<DenseMatrix> = (0..16)
            .map(|_| {
                let mut a = random_matrix(&mut rng, 6, 6);
                for i in 0..6 {
                    a[(i, i)] += 4.0;
                }
                a
            })
            .collect();
        let rhs: Vec<DenseMatrix> = (0..16).map(|_| random_matrix(&mut rng, 6, 1)).collect();
        let xs = BatchMatrix::from_matrices(&mats).unwrap();
        let ys = BatchMatrix::from_matrices(&rhs).unwrap();

        let solve = |a: &DenseMatrix, b: &DenseMatrix| -> Result<DenseMatrix> {
            Ok(lu_factor(a)?.solve_mat(b))
        };
        let batched = batch_map2(&xs, &ys, solve).unwrap();
        let mut seq = Vec::new();
        for i in 0..16 {
            seq.push(solve(&xs.to_dense(i), &ys.to_dense(i)).unwrap());
        }
        let seq = BatchMatrix::from_matrices(&seq).unwrap();
        assert_eq!(batched.data(), seq.data());
    }

    #[test]
    fn batch_map_is_thread_count_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mats: Vec<DenseMatrix> = (0..12).map(|_| random_matrix(&mut rng, 5, 5)).collect();
        let xs = BatchMatrix::from_matrices(&mats).unwrap();
        let square = |a: &DenseMatrix| -> Result<DenseMatrix> { Ok(a.matmul(a)) };

        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let r1 = pool1.install(|| batch_map(&xs, square)).unwrap();
        let r4 = pool4.install(|| batch_map(&xs, square)).unwrap();
        assert_eq!(r1.data(), r4.data());
    }

    #[test]
    fn batch_map_reports_failing_element_index() {
        let mats = vec![
            DenseMatrix::identity(3),
            DenseMatrix::zeros(3, 3),
            DenseMatrix::identity(3),
        ];
        let xs = BatchMatrix::from_matrices(&mats).unwrap();
        let inv = |a: &DenseMatrix| -> Result<DenseMatrix> {
            Ok(lu_factor(a)?.solve_mat(&DenseMatrix::identity(3)))
        };
        match batch_map(&xs, inv) {
            Err(Error::BatchElement { index, source }) => {
                assert_eq!(index, 1);
                assert!(matches!(*source, Error::Singular { .. }));
            }
            other => panic!("expected BatchElement, got {other:?}"),
        }
    }

    #[test]
    fn factorization_counter_observes_new_factorizations() {
        let before = factorization_count();
        let _ = lu_factor(&DenseMatrix::identity(5)).unwrap();
        let _ = lu_factor(&DenseMatrix::identity(5)).unwrap();
        assert_eq!(factorization_count() - before, 2);
    }
}
