//! Small register-blocked matrix products. All matrices are dense row-major.
//! Summation order is fixed, so results do not depend on anything but the
//! inputs.

use super::{dot, Real};

const MR: usize = 4;
const NR: usize = 8;

/// `c[m x n] += a[m x k] * b[k x n]`.
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    product::<T, true>(m, k, n, a, b, c);
}

/// `c[m x n] = a[m x k] * b[k x n]`; `c` need not be initialized.
pub(crate) fn gemm_nn_store<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    product::<T, false>(m, k, n, a, b, c);
}

fn product<T: Real, const ACC: bool>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let mut i = 0;
    while i < m {
        let (a, c) = (&a[i * k..], &mut c[i * n..]);
        match m - i {
            1 => panel::<T, 1, ACC>(k, n, a, b, c),
            2 => panel::<T, 2, ACC>(k, n, a, b, c),
            3 => panel::<T, 3, ACC>(k, n, a, b, c),
            _ => panel::<T, MR, ACC>(k, n, a, b, c),
        }
        i += MR;
    }
}

/// `R` rows of `a` against all of `b`.
#[inline(always)]
fn panel<T: Real, const R: usize, const ACC: bool>(
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    let mut j = 0;
    while j + NR <= n {
        let mut acc = [[T::zero(); NR]; R];
        for p in 0..k {
            let brow: &[T; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
            for (ii, row) in acc.iter_mut().enumerate() {
                let av = a[ii * k + p];
                for jj in 0..NR {
                    row[jj] += av * brow[jj];
                }
            }
        }
        for (ii, row) in acc.iter().enumerate() {
            for (d, &v) in c[ii * n + j..ii * n + j + NR].iter_mut().zip(row) {
                *d = if ACC { *d + v } else { v };
            }
        }
        j += NR;
    }
    if j < n {
        let nr = n - j;
        let mut acc = [[T::zero(); NR]; R];
        for p in 0..k {
            let brow = &b[p * n + j..p * n + n];
            for (ii, row) in acc.iter_mut().enumerate() {
                let av = a[ii * k + p];
                for jj in 0..nr {
                    row[jj] += av * brow[jj];
                }
            }
        }
        for (ii, row) in acc.iter().enumerate() {
            for (d, &v) in c[ii * n + j..ii * n + n].iter_mut().zip(row) {
                *d = if ACC { *d + v } else { v };
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[n x k]^T` (row-wise dot products).
pub(crate) fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m x n] += a[k x m]^T * b[k x n]`.
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    gemm_nn(m, k, n, &transpose(k, m, a), b, c);
}

/// `c[m x n] = a[k x m]^T * b[k x n]`; `c` need not be initialized.
pub(crate) fn gemm_tn_store<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    gemm_nn_store(m, k, n, &transpose(k, m, a), b, c);
}

/// Transposes a `rows x cols` matrix.
fn transpose<T: Real>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    out[c * rows + r] = x[r * cols + c];
                }
            }
        }
    }
    out
}
