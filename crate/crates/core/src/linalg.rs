//! Sparse matrices, a sparse Cholesky wrapper, and symmetric eigensolvers.

use crate::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use nalgebra::{DMatrix, DVector};

/// Compressed sparse row matrix with sorted, unique column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` entries; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < nrows && c < ncols, "entry ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &t)
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[a..b].binary_search(&j) {
            Ok(k) => self.values[a + k],
            Err(_) => 0.0,
        }
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
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// `self · diag(d) · other`.
    pub fn mul_diag_mul(&self, d: &[f64], other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, d.len());
        assert_eq!(other.nrows, d.len());
        let mut t = Vec::new();
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                let s = a * d[k];
                for (j, b) in other.row(k) {
                    t.push((i, j, s * b));
                }
            }
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, &t)
    }

    /// `α·self + β·other`.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<_> = self.triplets().map(|(i, j, v)| (i, j, alpha * v)).collect();
        t.extend(other.triplets().map(|(i, j, v)| (i, j, beta * v)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }
}

/// Sparse `LLᵀ` factorization of a symmetric positive definite matrix.
pub struct SparseCholesky {
    n: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SparseCholesky {
    /// Fails with [`Error::Solver`] if the matrix is not positive definite.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Solver("matrix is not square".into()));
        }
        let n = a.nrows();
        let t: Vec<Triplet<usize, usize, f64>> = a
            .triplets()
            .filter(|&(i, j, _)| i >= j)
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        let llt = m
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Solver(format!("cholesky: {e:?}")))?;
        Ok(SparseCholesky { n, llt })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut m = faer::MatMut::from_column_major_slice_mut(b, self.n, 1);
        self.llt.solve_in_place(m.as_mut());
    }

    /// Solves for several right-hand sides stored column-major in `b`.
    pub fn solve_columns_in_place(&self, b: &mut [f64], ncols: usize) {
        assert_eq!(b.len(), self.n * ncols);
        let m = faer::MatMut::from_column_major_slice_mut(b, self.n, ncols);
        self.llt.solve_in_place(m);
    }
}

/// Eigenpairs of `A v = λ M v` for symmetric `A` and diagonal positive `M`,
/// sorted ascending, eigenvectors `M`-orthonormal.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// `‖A v − λ M v‖ / ‖M v‖` per pair (Euclidean norms).
    pub residuals: Vec<f64>,
}

fn generalized_residual(apply: &dyn Fn(&[f64]) -> Vec<f64>, mass: &[f64], lambda: f64, v: &[f64]) -> f64 {
    let av = apply(v);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..v.len() {
        let mv = mass[i] * v[i];
        num += (av[i] - lambda * mv).powi(2);
        den += mv * mv;
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Dense solver for the `k` smallest generalized eigenpairs.
pub fn dense_smallest(a: &DMatrix<f64>, mass: &[f64], k: usize) -> EigenPairs {
    let n = a.nrows();
    let s: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut c = a.clone();
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] *= s[i] * s[j];
        }
    }
    // Symmetrize against assembly roundoff.
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let k = k.min(n);
    let apply = |v: &[f64]| -> Vec<f64> {
        let x = DVector::from_column_slice(v);
        (a * x).as_slice().to_vec()
    };
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx];
        let v: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, idx)] * s[i]).collect();
        residuals.push(generalized_residual(&apply, mass, lambda, &v));
        values.push(lambda);
        vectors.push(v);
    }
    EigenPairs {
        values,
        vectors,
        residuals,
    }
}

/// Options for [`shift_invert_smallest`].
#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    pub max_steps: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            max_steps: 300,
            tolerance: 1e-10,
            seed: 7,
        }
    }
}

/// Shift-invert Lanczos for the `k` smallest eigenpairs of `A v = λ M v`.
///
/// `shift` must lie below the smallest eigenvalue; if `A − shift·M` is not
/// positive definite the shift is lowered until the factorization succeeds.
pub fn shift_invert_smallest(
    a: &CsrMatrix,
    mass: &[f64],
    k: usize,
    mut shift: f64,
    opts: LanczosOptions,
) -> Result<EigenPairs> {
    let n = a.nrows();
    let k = k.min(n);
    let chol = loop {
        let shifted = a.add_scaled(1.0, &CsrMatrix::diagonal(mass), -shift);
        match SparseCholesky::factor(&shifted) {
            Ok(c) => break c,
            Err(_) => {
                shift -= 1.0 + shift.abs();
                if !shift.is_finite() || shift < -1e12 {
                    return Err(Error::Solver("no admissible shift found".into()));
                }
            }
        }
    };
    let sqrt_m: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    // T = M^{1/2} (A − σM)^{-1} M^{1/2}, symmetric positive definite.
    let apply_t = |x: &[f64]| -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().zip(&sqrt_m).map(|(a, b)| a * b).collect();
        chol.solve_in_place(&mut y);
        y.iter_mut().zip(&sqrt_m).for_each(|(a, b)| *a *= b);
        y
    };

    // Restarted in the complement of the pairs found so far, which recovers
    // copies of repeated eigenvalues that a single Krylov run misses.
    let mut kept: Vec<(f64, Vec<f64>)> = Vec::new();
    for round in 0..=k {
        let locked: Vec<Vec<f64>> = kept.iter().map(|p| p.1.clone()).collect();
        let Some(found) = lanczos_run(&apply_t, n, k, &locked, opts.seed.wrapping_add(round as u64), &opts) else {
            break;
        };
        let bar = if kept.len() == k { kept[k - 1].0 } else { f64::INFINITY };
        let improves = kept.len() < k
            || found
                .iter()
                .any(|(t, _)| shift + 1.0 / t < bar - 1e-9 * bar.abs().max(1.0));
        kept.extend(found.into_iter().map(|(t, y)| (shift + 1.0 / t, y)));
        kept.sort_by(|x, y| x.0.total_cmp(&y.0));
        kept.truncate(k);
        if !improves {
            break;
        }
    }
    if kept.is_empty() {
        return Err(Error::EigenNonConvergence {
            residual: f64::INFINITY,
            iterations: opts.max_steps,
        });
    }
    let apply_a = |v: &[f64]| a.mul_vec(v);
    let vectors: Vec<Vec<f64>> = kept
        .iter()
        .map(|(_, y)| y.iter().zip(&sqrt_m).map(|(a, b)| a / b).collect())
        .collect();
    let residuals = kept
        .iter()
        .zip(&vectors)
        .map(|((l, _), v)| generalized_residual(&apply_a, mass, *l, v))
        .collect();
    let pairs = EigenPairs {
        values: kept.iter().map(|p| p.0).collect(),
        vectors,
        residuals,
    };
    Ok(refine_pairs(pairs, &chol, mass, shift, a))
}

/// Lanczos with full reorthogonalization for the `k` largest eigenpairs of
/// the symmetric operator `t`, restricted to the complement of `locked`
/// (orthonormal). Returns `(θ, y)` pairs.
fn lanczos_run(
    t: &dyn Fn(&[f64]) -> Vec<f64>,
    n: usize,
    k: usize,
    locked: &[Vec<f64>],
    seed: u64,
    opts: &LanczosOptions,
) -> Option<Vec<(f64, Vec<f64>)>> {
    use rand::{Rng, SeedableRng};
    let room = n.saturating_sub(locked.len());
    if room == 0 {
        return None;
    }
    let k = k.min(room);
    let deflate = |w: &mut Vec<f64>| {
        for b in locked {
            let c = dot(w, b);
            axpy(-c, b, w);
        }
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q0: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    deflate(&mut q0);
    normalize(&mut q0);
    let mut basis: Vec<Vec<f64>> = vec![q0];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let max_steps = opts.max_steps.min(room);
    for step in 0..max_steps {
        let mut w = t(&basis[step]);
        let alpha = dot(&w, &basis[step]);
        alphas.push(alpha);
        // Full reorthogonalization, twice.
        for _ in 0..2 {
            deflate(&mut w);
            for b in &basis {
                let c = dot(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let beta = dot(&w, &w).sqrt();
        let m = alphas.len();
        let last = m == max_steps || beta < 1e-14;
        if m >= k && (m.is_multiple_of(5) || last) {
            let (thetas, ritz) = tridiagonal_eigen(&alphas, &betas);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| thetas[j].total_cmp(&thetas[i]));
            let converged = order
                .iter()
                .take(k)
                .all(|&i| (beta * ritz[(m - 1, i)]).abs() <= opts.tolerance * thetas[i].abs());
            if converged || last {
                return Some(
                    order
                        .iter()
                        .take(k)
                        .map(|&i| {
                            let mut y = vec![0.0; n];
                            for (j, b) in basis.iter().enumerate().take(m) {
                                axpy(ritz[(j, i)], b, &mut y);
                            }
                            (thetas[i], y)
                        })
                        .collect(),
                );
            }
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    None
}

/// One step of inverse iteration per pair, then Rayleigh quotient update.
fn refine_pairs(mut pairs: EigenPairs, chol: &SparseCholesky, mass: &[f64], shift: f64, a: &CsrMatrix) -> EigenPairs {
    let n = mass.len();
    // Rayleigh–Ritz on the refined block keeps the pairs M-orthonormal.
    let k = pairs.values.len();
    let mut block: Vec<Vec<f64>> = pairs
        .vectors
        .iter()
        .map(|v| {
            let mut y: Vec<f64> = v.iter().zip(mass).map(|(a, m)| a * m).collect();
            chol.solve_in_place(&mut y);
            y
        })
        .collect();
    // M-orthonormalize.
    for i in 0..k {
        for j in 0..i {
            let c = m_dot(&block[i], &block[j], mass);
            let bj = block[j].clone();
            axpy(-c, &bj, &mut block[i]);
        }
        let nrm = m_dot(&block[i], &block[i], mass).sqrt();
        block[i].iter_mut().for_each(|x| *x /= nrm);
    }
    let mut small = DMatrix::zeros(k, k);
    let av: Vec<Vec<f64>> = block.iter().map(|v| a.mul_vec(v)).collect();
    for i in 0..k {
        for j in 0..k {
            small[(i, j)] = dot(&block[i], &av[j]);
        }
    }
    let small = (&small + small.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let apply_a = |v: &[f64]| a.mul_vec(v);
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for &i in &order {
        let mut v = vec![0.0; n];
        for j in 0..k {
            axpy(eig.eigenvectors[(j, i)], &block[j], &mut v);
        }
        let l = eig.eigenvalues[i];
        residuals.push(generalized_residual(&apply_a, mass, l, &v));
        values.push(l);
        vectors.push(v);
    }
    let _ = shift;
    pairs.values = values;
    pairs.vectors = vectors;
    pairs.residuals = residuals;
    pairs
}

fn tridiagonal_eigen(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    (eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors)
}

/// Gershgorin lower bound `min_i (A_ii − Σ_{j≠i}|A_ij|)/M_i` on the
/// spectrum of `A v = λ M v`.
pub fn gershgorin_lower(a: &CsrMatrix, mass: &[f64]) -> f64 {
    (0..a.nrows())
        .map(|i| {
            let mut d = 0.0;
            let mut off = 0.0;
            for (j, v) in a.row(i) {
                if i == j {
                    d += v;
                } else {
                    off += v.abs();
                }
            }
            (d - off) / mass[i]
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn m_dot(a: &[f64], b: &[f64], m: &[f64]) -> f64 {
    a.iter().zip(b).zip(m).map(|((x, y), w)| x * y * w).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cholesky_solves_and_rejects_indefinite() {
        let a = path_laplacian(20);
        let chol = SparseCholesky::factor(&a).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut b = a.mul_vec(&x);
        chol.solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10);
        }
        let indefinite = a.add_scaled(1.0, &CsrMatrix::identity(20), -3.0);
        assert!(SparseCholesky::factor(&indefinite).is_err());
    }

    #[test]
    fn shift_invert_matches_dense() {
        let n = 60;
        let a = path_laplacian(n).add_scaled(1.0, &CsrMatrix::identity(n), -1.5);
        let mass: Vec<f64> = (0..n).map(|i| 1.0 + 0.3 * ((i as f64) * 0.7).cos()).collect();
        let dense = dense_smallest(&a.to_dense(), &mass, 5);
        let sparse = shift_invert_smallest(&a, &mass, 5, -3.0, LanczosOptions::default()).unwrap();
        for i in 0..5 {
            assert!((dense.values[i] - sparse.values[i]).abs() < 1e-9);
            assert!(sparse.residuals[i] < 1e-8, "{:?}", sparse.residuals);
            assert!(dense.residuals[i] < 1e-8);
        }
    }
}
