//! Small dense linear algebra on row-major slices.
//!
//! Matrices here are tiny (state dimension, or the size of a regression basis),
//! so plain loops beat pulling in a matrix library for them.

use crate::scalar::Real;

/// In-place Cholesky factorisation `A = L Lᵀ` of a symmetric positive definite
/// `n × n` matrix. On success the lower triangle holds `L`.
/// Returns `None` if a pivot is not strictly positive.
pub fn cholesky_in_place<S: Real>(a: &mut [S], n: usize) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut diag = a[j * n + j];
        for p in 0..j {
            diag -= a[j * n + p] * a[j * n + p];
        }
        if !(diag > S::zero()) || !diag.is_finite() {
            return None;
        }
        let l_jj = diag.sqrt();
        a[j * n + j] = l_jj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for p in 0..j {
                v -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = v / l_jj;
        }
        for i in 0..j {
            a[i * n + j] = S::zero();
        }
    }
    Some(())
}

/// Solves `L Lᵀ x = b` given the factor from [`cholesky_in_place`]; `b` is overwritten by `x`.
pub fn cholesky_solve<S: Real>(l: &[S], n: usize, b: &mut [S]) {
    for i in 0..n {
        let mut v = b[i];
        for p in 0..i {
            v -= l[i * n + p] * b[p];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for p in (i + 1)..n {
            v -= l[p * n + i] * b[p];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Solves the square system `A x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` for a (numerically) singular matrix.
pub fn solve_dense<S: Real>(a: &[S], b: &[S], n: usize) -> Option<Vec<S>> {
    if n == 1 {
        return if a[0] != S::zero() {
            Some(vec![b[0] / a[0]])
        } else {
            None
        };
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[i * n + col]
                    .abs()
                    .partial_cmp(&m[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if m[pivot * n + col] == S::zero() {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                m.swap(pivot * n + c, col * n + c);
            }
            x.swap(pivot, col);
        }
        let p = m[col * n + col];
        for r in (col + 1)..n {
            let factor = m[r * n + col] / p;
            if factor == S::zero() {
                continue;
            }
            for c in col..n {
                let v = m[col * n + c];
                m[r * n + c] -= factor * v;
            }
            let v = x[col];
            x[r] -= factor * v;
        }
    }
    for r in (0..n).rev() {
        let mut v = x[r];
        for c in (r + 1)..n {
            v -= m[r * n + c] * x[c];
        }
        x[r] = v / m[r * n + r];
    }
    Some(x)
}

/// `out = A v` for a row-major `n × n` matrix.
pub fn mat_vec<S: Real>(a: &[S], v: &[S], out: &mut [S]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = crate::scalar::dot(&a[i * n..(i + 1) * n], v);
    }
}

/// Quadratic form `xᵀ A x`.
pub fn quad_form<S: Real>(a: &[S], x: &[S]) -> S {
    let n = x.len();
    let mut acc = S::zero();
    for i in 0..n {
        for j in 0..n {
            acc += x[i] * a[i * n + j] * x[j];
        }
    }
    acc
}

/// Checks symmetry and positive semi-definiteness of a small matrix
/// by factorising `A + εI`.
pub fn is_psd<S: Real>(a: &[S], n: usize) -> bool {
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a[i * n + j], a[j * n + i]);
            if (x - y).abs() > S::of(1e-10) * (S::one() + x.abs()) {
                return false;
            }
        }
    }
    let scale = (0..n).fold(S::zero(), |acc, i| acc.max(a[i * n + i].abs()));
    let mut shifted = a.to_vec();
    for i in 0..n {
        shifted[i * n + i] += S::of(1e-9) * (S::one() + scale);
    }
    cholesky_in_place(&mut shifted, n).is_some()
}
