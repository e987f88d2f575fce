//! Dense linear algebra glue around `faer`, plus a few tiny row-major helpers
//! for the d×d blocks that appear in flows and wave packets.

use std::sync::Once;

use faer::{Mat, Side};

use crate::{Error, Result, C64};

pub type CMat = Mat<C64>;

static SEQUENTIAL: Once = Once::new();

/// Pins faer to sequential kernels. Parallel BLAS-style reductions change the
/// floating-point summation order with the thread count, which would break
/// bitwise reproducibility; parallelism is applied at a coarser level instead.
pub fn ensure_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    ensure_sequential();
    a * b
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn sub(a: &CMat, b: &CMat) -> CMat {
    a - b
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

/// max |A - A^*|
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

pub fn frobenius(a: &CMat) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Symmetrised copy (A + A^*)/2.
pub fn hermitian_part(a: &CMat) -> CMat {
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    ensure_sequential();
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Linalg(format!("{e:?}")))?;
    let vals = evd.S().column_vector().iter().map(|v| v.re).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn eigvalsh(a: &CMat) -> Result<Vec<f64>> {
    ensure_sequential();
    a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Linalg(format!("{e:?}")))
}

/// V diag(f) V^*.
pub fn reconstruct(vecs: &CMat, vals: &[C64]) -> CMat {
    let n = vecs.nrows();
    let scaled = Mat::from_fn(n, vals.len(), |i, j| vecs[(i, j)] * vals[j]);
    matmul(&scaled, &adjoint(vecs))
}

pub fn inverse(a: &CMat) -> CMat {
    ensure_sequential();
    use faer::linalg::solvers::DenseSolveCore;
    a.partial_piv_lu().inverse()
}

/// Spectral norm (largest singular value).
///
/// Small matrices use a full singular value decomposition; larger ones use
/// power iteration on A^*A from a fixed start vector, which is deterministic
/// and accurate to far better than the relative precision the rate fits need.
pub fn op_norm(a: &CMat) -> f64 {
    ensure_sequential();
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return 0.0;
    }
    if m.min(n) <= 160 {
        return a.singular_values().map(|s| s.first().copied().unwrap_or(0.0)).unwrap_or_else(|_| power_norm(a));
    }
    power_norm(a)
}

fn power_norm(a: &CMat) -> f64 {
    let n = a.ncols();
    let mut v = Mat::<C64>::from_fn(n, 1, |i, _| {
        let t = i as f64;
        C64::new(1.0 + 0.5 * (0.37 * t).sin(), 0.25 * (1.3 * t).cos())
    });
    normalize(&mut v);
    let ah = a.adjoint();
    let mut est = 0.0f64;
    for it in 0..2000 {
        let av = a * &v;
        let sigma = col_norm(&av);
        let mut w = ah * &av;
        let wn = col_norm(&w);
        if wn == 0.0 {
            return sigma;
        }
        w.col_mut(0).iter_mut().for_each(|x| *x /= wn);
        v = w;
        if it > 4 && (sigma - est).abs() <= 1e-11 * sigma {
            return sigma.max(est);
        }
        est = est.max(sigma);
    }
    est
}

fn col_norm(v: &CMat) -> f64 {
    v.col(0).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(v: &mut CMat) {
    let n = col_norm(v);
    v.col_mut(0).iter_mut().for_each(|x| *x /= n);
}

/// Row-major helpers for small dense blocks.
pub mod small {
    use crate::{Error, Result, C64};

    pub fn eye(d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        m
    }

    pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..k {
                let ail = a[i * k + l];
                for j in 0..m {
                    c[i * m + j] += ail * b[l * m + j];
                }
            }
        }
        c
    }

    pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
        let mut t = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                t[j * n + i] = a[i * m + j];
            }
        }
        t
    }

    pub fn cmatmul(a: &[C64], b: &[C64], d: usize) -> Vec<C64> {
        let mut c = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for l in 0..d {
                let ail = a[i * d + l];
                for j in 0..d {
                    c[i * d + j] += ail * b[l * d + j];
                }
            }
        }
        c
    }

    /// LU with partial pivoting; returns (lu, perm, sign) or None if singular.
    fn lu(a: &[C64], d: usize) -> Option<(Vec<C64>, Vec<usize>, f64)> {
        let mut m = a.to_vec();
        let mut perm: Vec<usize> = (0..d).collect();
        let mut sign = 1.0;
        for k in 0..d {
            let p = (k..d).max_by(|&i, &j| m[i * d + k].norm().total_cmp(&m[j * d + k].norm()))?;
            if m[p * d + k].norm() == 0.0 {
                return None;
            }
            if p != k {
                for j in 0..d {
                    m.swap(k * d + j, p * d + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            for i in k + 1..d {
                let f = m[i * d + k] / m[k * d + k];
                m[i * d + k] = f;
                for j in k + 1..d {
                    let v = m[k * d + j];
                    m[i * d + j] -= f * v;
                }
            }
        }
        Some((m, perm, sign))
    }

    pub fn cdet(a: &[C64], d: usize) -> C64 {
        match lu(a, d) {
            None => C64::new(0.0, 0.0),
            Some((m, _, sign)) => (0..d).fold(C64::new(sign, 0.0), |acc, i| acc * m[i * d + i]),
        }
    }

    pub fn cinverse(a: &[C64], d: usize) -> Result<Vec<C64>> {
        let (m, perm, _) = lu(a, d).ok_or_else(|| Error::Linalg("singular matrix".into()))?;
        let mut inv = vec![C64::new(0.0, 0.0); d * d];
        for col in 0..d {
            let mut x: Vec<C64> =
                (0..d).map(|i| if perm[i] == col { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect();
            for i in 0..d {
                for k in 0..i {
                    let v = x[k];
                    x[i] -= m[i * d + k] * v;
                }
            }
            for i in (0..d).rev() {
                for k in i + 1..d {
                    let v = x[k];
                    x[i] -= m[i * d + k] * v;
                }
                x[i] /= m[i * d + i];
            }
            for i in 0..d {
                inv[i * d + col] = x[i];
            }
        }
        Ok(inv)
    }

    /// 1-norm condition number estimate by explicit inversion (d is tiny).
    pub fn ccond(a: &[C64], d: usize) -> f64 {
        let norm1 = |m: &[C64]| (0..d).map(|j| (0..d).map(|i| m[i * d + j].norm()).sum::<f64>()).fold(0.0, f64::max);
        match cinverse(a, d) {
            Ok(inv) => norm1(a) * norm1(&inv),
            Err(_) => f64::INFINITY,
        }
    }

    /// Cholesky factor of a symmetric positive-definite real matrix.
    pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        Some(l)
    }

    pub fn solve_real(a: &[f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
        let ac: Vec<C64> = a.iter().map(|&v| C64::new(v, 0.0)).collect();
        let inv = cinverse(&ac, d)?;
        Ok((0..d).map(|i| (0..d).map(|j| inv[i * d + j].re * b[j]).sum()).collect())
    }
}
