//! Dense complex helpers and the Hermitian positive-definite solver used by
//! every precoder.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// `‖M‖_F²`, which is also `tr(M·M^H)`.
pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    frobenius_sq(m).sqrt()
}

/// `Ĝ*·Ĝ^T` for an `N×K` channel; an `N×N` Hermitian PSD matrix.
pub fn outer_gram(g: &CMatrix) -> CMatrix {
    let gc = g.conjugate();
    let mut gram = &gc * g.transpose();
    hermitize(&mut gram);
    gram
}

/// `Ĝ^T·Ĝ*` for an `N×K` channel; a `K×K` Hermitian PSD matrix.
pub fn inner_gram(g: &CMatrix) -> CMatrix {
    let mut gram = g.transpose() * g.conjugate();
    hermitize(&mut gram);
    gram
}

/// Forces exact Hermitian symmetry on a matrix that is Hermitian up to rounding.
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Real part of the trace of a square matrix.
pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Outcome of a Hermitian solve.
#[derive(Debug, Clone)]
pub struct HermitianSolve {
    pub x: CMatrix,
    /// Diagonal shift that had to be added before the factorization succeeded.
    pub jitter: f64,
}

/// Solves `A·X = B` for Hermitian `A` with one Cholesky factorization shared
/// by all columns of `B`. If `A` is not numerically positive definite, the
/// diagonal is shifted by `jitter` once and the factorization retried.
pub fn solve_hermitian(mut a: CMatrix, b: &CMatrix, jitter: f64) -> Result<HermitianSolve> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::domain(format!(
            "solve_hermitian: {}x{} system with {}x{} right-hand side",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite entry in system matrix".into()));
    }
    hermitize(&mut a);

    if let Some(x) = factor_and_solve(a.clone(), b) {
        return Ok(HermitianSolve { x, jitter: 0.0 });
    }
    if jitter > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)].re += jitter;
        }
        if let Some(x) = factor_and_solve(a, b) {
            return Ok(HermitianSolve { x, jitter });
        }
    }
    Err(Error::Numerical(format!(
        "regularized {n}x{n} system is not positive definite (jitter {jitter:e})",
        n = b.nrows()
    )))
}

fn factor_and_solve(a: CMatrix, b: &CMatrix) -> Option<CMatrix> {
    let l = cholesky_lower(a)?;
    let x = cholesky_solve(&l, b);
    x.iter()
        .all(|z| z.re.is_finite() && z.im.is_finite())
        .then_some(x)
}

/// `A = L·L^H` for Hermitian `A`. Returns `None` unless every pivot is real
/// and clearly positive.
fn cholesky_lower(mut a: CMatrix) -> Option<CMatrix> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max);
    let floor = max_diag * f64::EPSILON * n as f64;
    for j in 0..n {
        let mut pivot = a[(j, j)].re;
        for k in 0..j {
            pivot -= a[(j, k)].norm_sqr();
        }
        if !(pivot > floor) {
            return None;
        }
        let d = pivot.sqrt();
        a[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)].conj();
            }
            a[(i, j)] = s / d;
        }
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    Some(a)
}

/// Solves `L·L^H·X = B` column by column.
fn cholesky_solve(l: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.column_iter_mut() {
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[(i, k)] * col[k];
            }
            col[i] = s / l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * col[k];
            }
            col[i] = s / l[(i, i)].re;
        }
    }
    x
}
