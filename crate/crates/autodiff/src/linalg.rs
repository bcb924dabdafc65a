//! Plain dense kernels shared by the graph ops and by inference code that
//! does not need a tape.

use crate::error::{AutodiffError, Result};

/// Row-major strided view used to describe GEMM operands.
#[derive(Clone, Copy, Debug)]
pub struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        MatLayout {
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` buffer.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        MatLayout {
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c = alpha * a * b + beta * c` with `c` row-major `a.rows x b.cols`.
pub fn gemm(alpha: f64, a: &[f64], la: MatLayout, b: &[f64], lb: MatLayout, beta: f64, c: &mut [f64]) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    let (m, k, n) = (la.rows, la.cols, lb.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: layouts describe in-bounds accesses of `a`, `b` and `c` (checked above
    // for `c`; callers construct `a`/`b` layouts from their own buffer shapes).
    debug_assert!(max_offset(la) < a.len());
    debug_assert!(max_offset(lb) < b.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            la.row_stride,
            la.col_stride,
            b.as_ptr(),
            lb.row_stride,
            lb.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn max_offset(l: MatLayout) -> usize {
    ((l.rows.saturating_sub(1)) as isize * l.row_stride + (l.cols.saturating_sub(1)) as isize * l.col_stride)
        as usize
}

/// Row-major product of `m x k` and `k x n` buffers.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(1.0, a, MatLayout::row_major(m, k), b, MatLayout::row_major(k, n), 0.0, &mut c);
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Lower Cholesky factor of a symmetric positive definite `n x n` matrix.
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(AutodiffError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L` (`n x n`) and `B` (`n x m`).
pub fn solve_lower(l: &[f64], b: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let (done, rest) = x.split_at_mut(i * m);
        let xi = &mut rest[..m];
        for j in 0..i {
            let lij = l[i * n + j];
            if lij != 0.0 {
                let xj = &done[j * m..(j + 1) * m];
                for (a, b) in xi.iter_mut().zip(xj) {
                    *a -= lij * b;
                }
            }
        }
        let inv = 1.0 / l[i * n + i];
        for a in xi.iter_mut() {
            *a *= inv;
        }
    }
    x
}

/// Solves `L^T X = B` for lower-triangular `L` (`n x n`) and `B` (`n x m`).
pub fn solve_lower_transposed(l: &[f64], b: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let (head, tail) = x.split_at_mut((i + 1) * m);
        let xi = &mut head[i * m..];
        for j in (i + 1)..n {
            let lji = l[j * n + i];
            if lji != 0.0 {
                let xj = &tail[(j - i - 1) * m..(j - i) * m];
                for (a, b) in xi.iter_mut().zip(xj) {
                    *a -= lji * b;
                }
            }
        }
        let inv = 1.0 / l[i * n + i];
        for a in xi.iter_mut() {
            *a *= inv;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs_input() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = cholesky(&a, 3).unwrap();
        let lt = transpose(&l, 3, 3);
        let back = matmul(&l, &lt, 3, 3, 3);
        for (x, y) in back.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(matches!(
            cholesky(&a, 2),
            Err(AutodiffError::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn triangular_solves_invert_products() {
        let l = [2.0, 0.0, 0.0, 0.5, 1.5, 0.0, -1.0, 0.3, 0.7];
        let x = [1.0, -2.0, 0.5, 3.0, 0.25, 1.0];
        let b = matmul(&l, &x, 3, 3, 2);
        let solved = solve_lower(&l, &b, 3, 2);
        for (a, b) in solved.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        let lt = transpose(&l, 3, 3);
        let bt = matmul(&lt, &x, 3, 3, 2);
        let solved = solve_lower_transposed(&l, &bt, 3, 2);
        for (a, b) in solved.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_handles_transposed_layouts() {
        // a is 2x3, b is 2x3; a * b^T is 2x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, -1.0, 2.0, 1.0, 0.0];
        let mut c = vec![0.0; 4];
        gemm(1.0, &a, MatLayout::row_major(2, 3), &b, MatLayout::transposed(2, 3), 0.0, &mut c);
        assert_eq!(c, vec![-2.0, 4.0, -2.0, 13.0]);
    }
}
