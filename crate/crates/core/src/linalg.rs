//! Small dense kernels used by the network code and the exact tabular solvers.

use crate::error::{Error, Result};
use alloc::format;

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible across runs.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    let split = n - n % 4;
    let mut acc = [0.0f64; 4];
    for (cx, cy) in x[..split].chunks_exact(4).zip(y[..split].chunks_exact(4)) {
        acc[0] += cx[0] * cy[0];
        acc[1] += cx[1] * cy[1];
        acc[2] += cx[2] * cy[2];
        acc[3] += cx[3] * cy[3];
    }
    let mut tail = 0.0;
    for i in split..n {
        tail += x[i] * y[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += x · w` for row-major `x: rows x inner`, `w: inner x cols` and
/// `y: rows x cols`. Each output accumulates its `inner` products in
/// ascending order, independent of the tiling.
pub fn matmul_acc(x: &[f64], w: &[f64], y: &mut [f64], rows: usize, inner: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * inner);
    debug_assert_eq!(w.len(), inner * cols);
    debug_assert_eq!(y.len(), rows * cols);
    const R: usize = 4;
    const C: usize = 16;
    let mut r0 = 0;
    while r0 < rows {
        let nr = R.min(rows - r0);
        let mut c0 = 0;
        while c0 < cols {
            let nc = C.min(cols - c0);
            if nr == R && nc == C {
                let mut acc = [[0.0f64; C]; R];
                for (r, a) in acc.iter_mut().enumerate() {
                    a.copy_from_slice(&y[(r0 + r) * cols + c0..][..C]);
                }
                for k in 0..inner {
                    let wk: &[f64; C] = w[k * cols + c0..][..C].try_into().expect("tile width");
                    for (r, a) in acc.iter_mut().enumerate() {
                        let xv = x[(r0 + r) * inner + k];
                        for c in 0..C {
                            a[c] += xv * wk[c];
                        }
                    }
                }
                for (r, a) in acc.iter().enumerate() {
                    y[(r0 + r) * cols + c0..][..C].copy_from_slice(a);
                }
            } else {
                for r in r0..r0 + nr {
                    let yr = &mut y[r * cols + c0..r * cols + c0 + nc];
                    for k in 0..inner {
                        let xv = x[r * inner + k];
                        for (yv, wv) in yr.iter_mut().zip(&w[k * cols + c0..k * cols + c0 + nc]) {
                            *yv += xv * wv;
                        }
                    }
                }
            }
            c0 += C;
        }
        r0 += R;
    }
}

/// Row-major transpose of a `rows x cols` matrix.
pub fn transpose(m: &[f64], rows: usize, cols: usize) -> alloc::vec::Vec<f64> {
    let mut t = alloc::vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Solves `A x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is `n x n` row-major and is destroyed; the solution is left in `b`.
pub fn solve_in_place(a: &mut [f64], b: &mut [f64]) -> Result<()> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Shape { expected: n * n, got: a.len() });
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numeric(format!("singular system at column {col}")));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    Ok(())
}
