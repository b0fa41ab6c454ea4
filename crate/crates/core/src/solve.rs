//! Dense least-squares machinery for the latency fits.
//!
//! Ridge systems are solved through the normal equations with a blocked
//! Cholesky factorization. All reductions run over a fixed chunking summed
//! in a fixed order, so results are bit-identical regardless of the rayon
//! thread count.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

const GRAM_CHUNKS: usize = 4;
const CHOL_BLOCK: usize = 256;

/// Gram matrix `X^T X` and cross products `X^T Y` (one column per target).
pub fn gram_and_cross(x: &Array2<f64>, ys: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = x.nrows();
    let d = x.ncols();
    assert_eq!(ys.nrows(), n, "row count mismatch between X and Y");

    let chunk = n.div_ceil(GRAM_CHUNKS).max(1);
    let partials: Vec<Array2<f64>> = (0..n)
        .step_by(chunk)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + chunk).min(n);
            let rows = x.slice(s![start..end, ..]);
            let mut part = Array2::<f64>::zeros((d, d));
            ndarray::linalg::general_mat_mul(1.0, &rows.t(), &rows, 0.0, &mut part);
            part
        })
        .collect();
    let mut xtx = Array2::<f64>::zeros((d, d));
    for p in partials {
        xtx += &p;
    }

    let mut xty = Array2::<f64>::zeros((d, ys.ncols()));
    ndarray::linalg::general_mat_mul(1.0, &x.t(), ys, 0.0, &mut xty);
    (xtx, xty)
}

/// Relative pivot threshold below which a direction counts as linearly
/// dependent and is dropped (its column of L becomes zero).
const PIVOT_DROP: f64 = 1e-12;

fn unblocked_cholesky(mut a: ArrayViewMut2<f64>, orig_diag: &[f64]) -> Result<()> {
    let n = a.nrows();
    for k in 0..n {
        let mut diag = a[(k, k)];
        for j in 0..k {
            diag -= a[(k, j)] * a[(k, j)];
        }
        if !diag.is_finite() {
            return Err(Error::SolveFailed(format!(
                "non-finite pivot {k} ({diag})"
            )));
        }
        let tol = PIVOT_DROP * orig_diag[k].abs() + f64::MIN_POSITIVE;
        if diag <= tol {
            if diag < -1e-6 * orig_diag[k].abs() - 1e-12 {
                return Err(Error::SolveFailed(format!(
                    "matrix not positive semidefinite at pivot {k} ({diag})"
                )));
            }
            // Numerically dependent direction: zero its column.
            a[(k, k)] = 0.0;
            for i in (k + 1)..n {
                a[(i, k)] = 0.0;
            }
            continue;
        }
        let lkk = diag.sqrt();
        a[(k, k)] = lkk;
        for i in (k + 1)..n {
            let mut v = a[(i, k)];
            for j in 0..k {
                v -= a[(i, j)] * a[(k, j)];
            }
            a[(i, k)] = v / lkk;
        }
    }
    Ok(())
}

/// In-place lower Cholesky factorization `A = L L^T` for positive
/// semidefinite matrices.
///
/// Only the lower triangle is read; on success it holds `L` (the upper
/// triangle is left untouched). Numerically dependent pivots are dropped:
/// their L column is zeroed, and [`cholesky_solve`] assigns those
/// coordinates zero. Blocked with parallel trailing updates.
pub fn cholesky_in_place(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let orig_diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let bs = CHOL_BLOCK;
    let mut k = 0;
    while k < n {
        let kend = (k + bs).min(n);
        unblocked_cholesky(a.slice_mut(s![k..kend, k..kend]), &orig_diag[k..kend])?;

        if kend < n {
            // Panel solve: A21 <- A21 * L11^{-T}, row by row.
            let (diag_block, mut panel) = a
                .slice_mut(s![k.., k..kend])
                .split_at(Axis(0), kend - k);
            let l11 = diag_block;
            for mut row in panel.rows_mut() {
                for j in 0..(kend - k) {
                    if l11[(j, j)] == 0.0 {
                        row[j] = 0.0;
                        continue;
                    }
                    let mut v = row[j];
                    for p in 0..j {
                        v -= row[p] * l11[(j, p)];
                    }
                    row[j] = v / l11[(j, j)];
                }
            }

            // Trailing update: A22 -= L21 L21^T, lower block pairs only.
            // Each (i, j) block is written by exactly one task.
            let (left, mut trailing) = a.view_mut().split_at(Axis(1), kend);
            let panel_cols = left.slice(s![.., k..kend]);
            let mut row_blocks: Vec<(usize, ArrayViewMut2<f64>)> = Vec::new();
            let mut rest = trailing.view_mut();
            let mut row = 0;
            // Skip rows above the trailing square.
            let (_, below) = rest.split_at(Axis(0), kend);
            rest = below;
            row += kend;
            while row < n {
                let take = bs.min(n - row);
                let (blk, tail) = rest.split_at(Axis(0), take);
                row_blocks.push((row, blk));
                rest = tail;
                row += take;
            }
            row_blocks
                .into_par_iter()
                .for_each(|(i_start, mut block_row)| {
                    let i_end = i_start + block_row.nrows();
                    let li = panel_cols.slice(s![i_start..i_end, ..]);
                    let mut j_start = kend;
                    while j_start < i_end {
                        let j_end = (j_start + bs).min(n);
                        let lj = panel_cols.slice(s![j_start..j_end, ..]);
                        let mut target =
                            block_row.slice_mut(s![.., (j_start - kend)..(j_end - kend)]);
                        ndarray::linalg::general_mat_mul(-1.0, &li, &lj.t(), 1.0, &mut target);
                        j_start = j_end;
                    }
                });
        }
        k = kend;
    }
    Ok(())
}

/// Solve `L L^T x = b` given the lower factor. Coordinates of dropped
/// (zero-pivot) directions solve to zero.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        if l[(i, i)] == 0.0 {
            x[i] = 0.0;
            continue;
        }
        let mut v = x[i];
        for j in 0..i {
            v -= l[(i, j)] * x[j];
        }
        x[i] = v / l[(i, i)];
    }
    for i in (0..n).rev() {
        if l[(i, i)] == 0.0 {
            x[i] = 0.0;
            continue;
        }
        let mut v = x[i];
        for j in (i + 1)..n {
            v -= l[(j, i)] * x[j];
        }
        x[i] = v / l[(i, i)];
    }
    x
}

/// Ridge regression for several targets sharing one design matrix.
///
/// Minimizes `|X c - y|^2 + ridge * |c|^2` per target column, excluding
/// `unpenalized_col` (the intercept) from the penalty. Returns one
/// coefficient column per target.
pub fn ridge_fit_multi(
    x: &Array2<f64>,
    ys: &Array2<f64>,
    ridge: f64,
    unpenalized_col: Option<usize>,
) -> Result<Array2<f64>> {
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("no rows in design matrix".into()));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::InvalidConfig(format!("invalid ridge {ridge}")));
    }
    if x.iter().any(|v| !v.is_finite()) || ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression input"));
    }
    let (mut xtx, xty) = gram_and_cross(x, ys);
    if ridge > 0.0 {
        for i in 0..xtx.nrows() {
            if Some(i) != unpenalized_col {
                xtx[(i, i)] += ridge;
            }
        }
    }
    cholesky_in_place(&mut xtx)?;
    let mut coefs = Array2::<f64>::zeros((x.ncols(), ys.ncols()));
    for (j, col) in xty.columns().into_iter().enumerate() {
        let solved = cholesky_solve(&xtx, &col.to_owned());
        coefs.column_mut(j).assign(&solved);
    }
    Ok(coefs)
}

/// Ordinary least squares for a two-column design (no intercept).
pub fn least_squares_2(rows: &[[f64; 2]], ys: &[f64]) -> Result<[f64; 2]> {
    assert_eq!(rows.len(), ys.len());
    let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (row, y) in rows.iter().zip(ys) {
        s00 += row[0] * row[0];
        s01 += row[0] * row[1];
        s11 += row[1] * row[1];
        r0 += row[0] * y;
        r1 += row[1] * y;
    }
    let det = s00 * s11 - s01 * s01;
    let scale = s00.max(s11).max(1e-300);
    if det.abs() <= 1e-12 * scale * scale {
        return Err(Error::SolveFailed(
            "two-column design is singular".into(),
        ));
    }
    Ok([(s11 * r0 - s01 * r1) / det, (s00 * r1 - s01 * r0) / det])
}

/// Mean squared residual of predictions `X c` against `y`.
pub fn mse(x: &Array2<f64>, coef: &Array1<f64>, y: &Array1<f64>) -> f64 {
    let pred = x.dot(coef);
    let diff = &pred - y;
    diff.iter().map(|r| r * r).sum::<f64>() / y.len().max(1) as f64
}

/// View of a matrix product computed naively; used by tests as an oracle.
#[doc(hidden)]
pub fn naive_gram(x: &ArrayView2<f64>) -> Array2<f64> {
    let d = x.ncols();
    let mut out = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for r in 0..x.nrows() {
                acc += x[(r, i)] * x[(r, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}
