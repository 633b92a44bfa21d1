//! Dense row-major matrix helpers small enough to hand-roll: solves,
//! inverses, random orthogonal matrices, and a Jacobi eigensolver for the
//! symmetric matrices the Fréchet metric needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Mat<S: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let data = rows.into_iter().flatten().collect();
        Self { rows: r, cols: c, data }
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.cols, "matvec shape");
        let mut y = vec![S::zero(); self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = S::zero();
            for c in 0..self.cols {
                acc = acc + row[c] * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// yᵀ = xᵀ·A, i.e. multiply by the transpose without forming it.
    pub fn tr_matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.rows, "tr_matvec shape");
        let mut y = vec![S::zero(); self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            let row = self.row(r);
            for c in 0..self.cols {
                y[c] = y[c] + row[c] * xr;
            }
        }
        y
    }

    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == S::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] =
                        out.data[i * other.cols + j] + a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat<S> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.at(r, c));
            }
        }
        out
    }

    pub fn scale(&self, c: S) -> Mat<S> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| *x * c).collect() }
    }

    pub fn add(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect(),
        }
    }

    pub fn trace(&self) -> S {
        let n = self.rows.min(self.cols);
        (0..n).fold(S::zero(), |acc, i| acc + self.at(i, i))
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Mat<S>> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch("inverse of non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let mut pivot = col;
            let mut best = a.at(col, col).abs();
            for r in col + 1..n {
                if a.at(r, col).abs() > best {
                    best = a.at(r, col).abs();
                    pivot = r;
                }
            }
            if best == S::zero() {
                return Err(Error::InvalidArg("singular matrix".into()));
            }
            if pivot != col {
                for c in 0..n {
                    a.data.swap(col * n + c, pivot * n + c);
                    inv.data.swap(col * n + c, pivot * n + c);
                }
            }
            let d = a.at(col, col);
            let dinv = S::one() / d;
            for c in 0..n {
                a.data[col * n + c] = a.at(col, c) * dinv;
                inv.data[col * n + c] = inv.at(col, c) * dinv;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.at(r, col);
                if f == S::zero() {
                    continue;
                }
                for c in 0..n {
                    a.data[r * n + c] = a.at(r, c) - f * a.at(col, c);
                    inv.data[r * n + c] = inv.at(r, c) - f * inv.at(col, c);
                }
            }
        }
        Ok(inv)
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn norm2<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Solves `A x = b` for small symmetric positive-definite systems
/// (Gauss-Jordan through the generic inverse; sizes here are ≤ 3).
pub fn solve<S: Scalar>(a: &Mat<S>, b: &[S]) -> Result<Vec<S>> {
    Ok(a.inverse()?.matvec(b))
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian sample.
pub fn random_orthogonal<S: Scalar>(n: usize, rng: &mut SeededRng) -> Mat<S> {
    loop {
        let mut cols: Vec<Vec<S>> = Vec::with_capacity(n);
        let mut ok = true;
        'outer: for _ in 0..n {
            let mut v: Vec<S> = crate::rng::normal_vec(rng, n);
            for _pass in 0..2 {
                for q in &cols {
                    let proj = dot(&v, q);
                    for i in 0..n {
                        v[i] = v[i] - proj * q[i];
                    }
                }
            }
            let nv = norm2(&v);
            if nv.cast_f64() < 1e-8 {
                ok = false;
                break 'outer;
            }
            let inv = S::one() / nv;
            for x in &mut v {
                *x = *x * inv;
            }
            cols.push(v);
        }
        if !ok {
            continue;
        }
        // cols hold columns; assemble row-major.
        let mut m = Mat::zeros(n, n);
        for (c, col) in cols.iter().enumerate() {
            for r in 0..n {
                m.set(r, c, col[r]);
            }
        }
        return m;
    }
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns (eigenvalues,
/// eigenvectors as columns).
pub fn sym_eig<S: Scalar>(m: &Mat<S>) -> Result<(Vec<S>, Mat<S>)> {
    if m.rows != m.cols {
        return Err(Error::ShapeMismatch("sym_eig of non-square matrix".into()));
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = Mat::identity(n);
    let eps = S::cast_from(1e-14);
    for _sweep in 0..100 {
        let mut off = S::zero();
        for r in 0..n {
            for c in r + 1..n {
                off = off + a.at(r, c) * a.at(r, c);
            }
        }
        if off.sqrt() <= eps * (S::one() + a.trace().abs()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.at(p, q);
                if apq.abs().cast_f64() < 1e-300 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let tau = (aqq - app) / (S::cast_from(2.0) * apq);
                let t = if tau >= S::zero() {
                    S::one() / (tau + (S::one() + tau * tau).sqrt())
                } else {
                    -S::one() / (-tau + (S::one() + tau * tau).sqrt())
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a.at(i, i)).collect();
    Ok((eigvals, v))
}

/// Symmetric PSD square root through the eigendecomposition; eigenvalues
/// below zero are clipped and the clipped mass is reported.
pub fn sym_sqrt<S: Scalar>(m: &Mat<S>) -> Result<(Mat<S>, S)> {
    let n = m.rows;
    let (vals, vecs) = sym_eig(m)?;
    let mut clipped = S::zero();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        let v = vals[i];
        let root = if v > S::zero() {
            v.sqrt()
        } else {
            clipped = clipped + v.abs();
            S::zero()
        };
        d.set(i, i, root);
    }
    let out = vecs.matmul(&d).matmul(&vecs.transpose());
    Ok((out, clipped))
}
