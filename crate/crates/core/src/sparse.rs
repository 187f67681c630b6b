//! Compressed-row matrices assembled from triplets, plus thin wrappers over
//! faer's sparse and dense factorizations.

use faer::c64;
use faer::linalg::solvers::{Solve, SolveCore};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};

use crate::error::{Error, Result};

/// Triplet accumulator; duplicates are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(rows: usize, cols: usize) -> Self {
        Triplets { rows, cols, entries: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols, "triplet ({r}, {c}) outside {}x{}", self.rows, self.cols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn to_csr(&self) -> Csr {
        Csr::from_triplets(self.rows, self.cols, &self.entries)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut data: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Csr { rows, cols, indptr, indices, data }
    }

    pub fn identity(n: usize) -> Self {
        Csr { rows: n, cols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), data: vec![1.0; n] }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Csr { rows, cols, indptr: vec![0; rows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).filter(|&(j, _)| j == c).map(|(_, v)| v).sum()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.push((r, c, v));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn matvec_c(&self, x: &[c64]) -> Vec<c64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|r| self.row(r).fold(c64::new(0.0, 0.0), |acc, (c, v)| acc + x[c] * v))
            .collect()
    }

    /// `y = A^T x`.
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "transpose matvec dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Csr::from_triplets(self.cols, self.rows, &t)
    }

    pub fn scale(&self, s: f64) -> Csr {
        Csr { data: self.data.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    /// `a A + b B`.
    pub fn lincomb(a: f64, x: &Csr, b: f64, y: &Csr) -> Csr {
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "lincomb shape mismatch");
        let mut t: Vec<_> = x.triplets().into_iter().map(|(r, c, v)| (r, c, a * v)).collect();
        t.extend(y.triplets().into_iter().map(|(r, c, v)| (r, c, b * v)));
        Csr::from_triplets(x.rows, x.cols, &t)
    }

    pub fn add(&self, other: &Csr) -> Csr {
        Csr::lincomb(1.0, self, 1.0, other)
    }

    /// Rows scaled by `d[r]`.
    pub fn row_scaled(&self, d: &[f64]) -> Csr {
        let mut out = self.clone();
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.data[k] *= d[r];
            }
        }
        out
    }

    /// Sub-block with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Csr {
        let mut cmap = vec![usize::MAX; self.cols];
        for (k, &c) in cols.iter().enumerate() {
            cmap[c] = k;
        }
        let mut t = Vec::new();
        for (rk, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if cmap[c] != usize::MAX {
                    t.push((rk, cmap[c], v));
                }
            }
        }
        Csr::from_triplets(rows.len(), cols.len(), &t)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn from_dense(m: &Mat<f64>, drop_tol: f64) -> Csr {
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v.abs() > drop_tol {
                    t.push((r, c, v));
                }
            }
        }
        Csr::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.rows, self.cols, &t)
            .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))
    }

    /// `shift I - A` as a complex sparse matrix.
    fn shifted_complex(&self, shift: c64) -> Result<SparseColMat<usize, c64>> {
        assert_eq!(self.rows, self.cols, "shift of a non-square matrix");
        let mut t: Vec<_> =
            self.triplets().into_iter().map(|(r, c, v)| Triplet::new(r, c, c64::new(-v, 0.0))).collect();
        t.extend((0..self.rows).map(|i| Triplet::new(i, i, shift)));
        SparseColMat::try_new_from_triplets(self.rows, self.cols, &t)
            .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))
    }
}

/// Sparse LU of a real square matrix, factored once and reused.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SparseLu(n = {})", self.n)
    }
}

impl SparseLu {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Solver(format!("LU of non-square {}x{} matrix", a.rows, a.cols)));
        }
        let lu = a.to_faer()?.sp_lu().map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(SparseLu { n: a.rows, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let mut m = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

/// Sparse LU of `shift I - A` over the complex numbers, with adjoint solves.
pub struct ShiftedLu {
    n: usize,
    shift: c64,
    lu: faer::sparse::linalg::solvers::Lu<usize, c64>,
}

impl ShiftedLu {
    pub fn new(a: &Csr, shift: c64) -> Result<Self> {
        let m = a.shifted_complex(shift)?;
        let lu = m.sp_lu().map_err(|_| Error::Singular { re: shift.re, im: shift.im, residual: f64::INFINITY })?;
        Ok(ShiftedLu { n: a.rows, shift, lu })
    }

    pub fn shift(&self) -> c64 {
        self.shift
    }

    pub fn solve(&self, b: &[c64]) -> Vec<c64> {
        let mut m = Mat::<c64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    /// Solves with the conjugate transpose `(shift I - A)^H`.
    pub fn solve_adjoint(&self, b: &[c64]) -> Vec<c64> {
        let mut m = Mat::<c64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_transpose_in_place_with_conj(Conj::Yes, m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

/// Dense LU with partial pivoting.
pub struct DenseLu {
    n: usize,
    lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl DenseLu {
    pub fn new(a: &Mat<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "dense LU of non-square matrix");
        DenseLu { n: a.nrows(), lu: a.partial_piv_lu() }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

pub fn dense_matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

/// Eigenvalues of a dense real matrix.
pub fn eigenvalues(a: &Mat<f64>) -> Result<Vec<c64>> {
    a.eigenvalues().map_err(|e| Error::Numerical(format!("dense eigensolver failed: {e:?}")))
}

/// Singular values of a dense real matrix, in nonincreasing order.
pub fn singular_values(a: &Mat<f64>) -> Result<Vec<f64>> {
    let mut s = a.singular_values().map_err(|e| Error::Numerical(format!("dense SVD failed: {e:?}")))?;
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn cnorm2(a: &[c64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0), (1, 1, 4.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![3.0, 3.0]);
        assert_eq!(a.tmatvec(&[1.0, 1.0]), vec![2.0, 4.0]);
    }

    #[test]
    fn lu_solves_tridiagonal() {
        let n = 50;
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 4.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
                t.push(i - 1, i, -1.0);
            }
        }
        let a = t.to_csr();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x);
        let y = SparseLu::new(&a).unwrap().solve(&b);
        for i in 0..n {
            assert!((x[i] - y[i]).abs() < 1e-12);
        }
        let lu = ShiftedLu::new(&a, c64::new(0.5, 2.0)).unwrap();
        let bc: Vec<c64> = (0..n).map(|i| c64::new(1.0, i as f64)).collect();
        let z = lu.solve(&bc);
        let r: Vec<c64> = a.matvec_c(&z).iter().zip(&z).map(|(az, zi)| zi * lu.shift() - az).collect();
        for i in 0..n {
            assert!((r[i] - bc[i]).norm() < 1e-10);
        }
        let w = lu.solve_adjoint(&bc);
        let r: Vec<c64> = a.matvec_c(&w).iter().zip(&w).map(|(aw, wi)| wi * lu.shift().conj() - aw).collect();
        for i in 0..n {
            assert!((r[i] - bc[i]).norm() < 1e-10);
        }
    }
}
