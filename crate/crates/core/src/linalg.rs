//! Minimal dense linear algebra over a generic scalar.
//!
//! Row-major matrices backed by `Vec`, sized for desk-scale models
//! (dimensions in the tens to low thousands). Everything here is
//! deterministic: no threading, no blocked kernels.

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { S::one() } else { S::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T * x`.
    pub fn matvec_t(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![S::zero(); self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * xi;
            }
        }
        out
    }

    pub fn scale(&mut self, c: S) {
        for v in &mut self.data {
            *v = *v * c;
        }
    }

    pub fn frobenius_norm(&self) -> S {
        self.data
            .iter()
            .fold(S::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn norm2<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| *x - *y).collect()
}

pub fn add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

pub fn scaled<S: Scalar>(a: &[S], c: S) -> Vec<S> {
    a.iter().map(|x| *x * c).collect()
}

pub fn axpy<S: Scalar>(y: &mut [S], c: S, x: &[S]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + c * *xi;
    }
}

pub fn normalize<S: Scalar>(v: &mut [S]) -> S {
    let n = norm2(v);
    if n > S::zero() {
        let inv = S::one() / n;
        for x in v.iter_mut() {
            *x = *x * inv;
        }
    }
    n
}

/// Relative tolerance for the power iteration.
pub const OP_NORM_TOL: f64 = 1e-8;
/// Iteration cap for the power iteration.
pub const OP_NORM_MAX_ITERS: usize = 1000;

/// Largest singular value via power iteration on `A^T A`.
///
/// Zero matrices return 0 without iterating. The deterministic start vector
/// is biased toward the dominant row so convergence does not depend on RNG
/// state.
pub fn operator_norm<S: Scalar>(a: &Mat<S>) -> S {
    if a.rows == 0 || a.cols == 0 {
        return S::zero();
    }
    let fro = a.frobenius_norm();
    if fro == S::zero() {
        return S::zero();
    }

    // Start from the largest-norm row direction plus a small uniform component
    // so we never start orthogonal to the top singular vector.
    let mut v: Vec<S> = {
        let (best, _) = (0..a.rows)
            .map(|i| (i, norm2(a.row(i))))
            .fold((0, S::neg_infinity()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let eps = S::from_f64_lossy(1e-3);
        let mut v: Vec<S> = a.row(best).iter().map(|x| *x + eps).collect();
        if norm2(&v) == S::zero() {
            v = vec![S::one(); a.cols];
        }
        v
    };
    normalize(&mut v);

    let tol = S::from_f64_lossy(OP_NORM_TOL);
    let mut sigma = S::zero();
    for _ in 0..OP_NORM_MAX_ITERS {
        let av = a.matvec(&v);
        let mut atav = a.matvec_t(&av);
        let new_sigma = norm2(&av);
        normalize(&mut atav);
        v = atav;
        let delta = (new_sigma - sigma).abs();
        sigma = new_sigma;
        if delta <= tol * sigma.max(S::one()) {
            break;
        }
    }
    sigma
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when the matrix is numerically singular.
pub fn solve<S: Scalar>(a: &Mat<S>, b: &[S]) -> Option<Vec<S>> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(b.len(), a.rows);
    let n = a.rows;
    let mut m = a.clone();
    let mut rhs = b.to_vec();

    for col in 0..n {
        let (pivot, pmax) = (col..n)
            .map(|r| (r, m.get(r, col).abs()))
            .fold((col, S::zero()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pmax == S::zero() || !pmax.is_finite() {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(pivot, j));
                m.set(pivot, j, tmp);
            }
            rhs.swap(col, pivot);
        }
        let diag = m.get(col, col);
        for r in col + 1..n {
            let factor = m.get(r, col) / diag;
            if factor == S::zero() {
                continue;
            }
            for j in col..n {
                let v = m.get(r, j) - factor * m.get(col, j);
                m.set(r, j, v);
            }
            rhs[r] = rhs[r] - factor * rhs[col];
        }
    }

    let mut x = vec![S::zero(); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for j in row + 1..n {
            acc = acc - m.get(row, j) * x[j];
        }
        x[row] = acc / m.get(row, row);
    }
    Some(x)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in the columns of
/// the returned matrix, unsorted.
pub fn jacobi_eigen<S: Scalar>(a: &Mat<S>, sweeps: usize) -> (Vec<S>, Mat<S>) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let tiny = S::from_f64_lossy(1e-14);

    for _ in 0..sweeps {
        let mut off = S::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off + m.get(p, q).abs();
            }
        }
        if off <= tiny {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= tiny {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (S::from_f64_lossy(2.0) * apq);
                let t = {
                    let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                    sign / (theta.abs() + (theta * theta + S::one()).sqrt())
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigs = (0..n).map(|i| m.get(i, i)).collect();
    (eigs, v)
}

/// All singular values of `A` via the Jacobi eigendecomposition of `A^T A`.
///
/// Slow and dense; intended as an independent oracle for `operator_norm`.
pub fn singular_values_jacobi<S: Scalar>(a: &Mat<S>) -> Vec<S> {
    let n = a.cols;
    let mut ata = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = S::zero();
            for r in 0..a.rows {
                acc = acc + a.get(r, i) * a.get(r, j);
            }
            ata.set(i, j, acc);
        }
    }
    let (eigs, _) = jacobi_eigen(&ata, 60);
    let mut svs: Vec<S> = eigs
        .into_iter()
        .map(|e| if e > S::zero() { e.sqrt() } else { S::zero() })
        .collect();
    svs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    svs
}
