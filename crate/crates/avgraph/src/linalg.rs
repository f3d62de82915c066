//! Small dense linear-algebra kernels shared across the crate.
//!
//! All matrices involved are tiny (n <= 64), so the routines below favour
//! deterministic full pivoting and explicit rank handling over speed. Pivots
//! are always chosen as the largest remaining magnitude, scanning rows then
//! columns in index order, which makes every solve reproducible bit-for-bit.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold: entries below `PIVOT_RTOL * max|A|` are treated as zero.
const PIVOT_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (step {step}, pivot {pivot:e})")]
    Singular { step: usize, pivot: f64 },
    #[error("unexpected null-space dimension (expected {expected}, found {found})")]
    WrongNullity { expected: usize, found: usize },
}

/// Gauss-Jordan elimination with full pivoting, run in place on `a` and `rhs`.
/// Performs pivot steps until either every column is used or no remaining entry
/// exceeds the threshold. Returns the pivot list in elimination order.
fn gauss_jordan(a: &mut DMatrix<f64>, rhs: &mut DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = a.shape();
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
    let tol = PIVOT_RTOL * scale;
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pivots = Vec::with_capacity(cols.min(rows));

    for _ in 0..cols.min(rows) {
        let mut best = (0usize, 0usize, 0.0_f64);
        for r in 0..rows {
            if row_used[r] {
                continue;
            }
            for c in 0..cols {
                if col_used[c] {
                    continue;
                }
                let v = a[(r, c)].abs();
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        let (pr, pc, _) = best;
        row_used[pr] = true;
        col_used[pc] = true;
        pivots.push((pr, pc));
        let pivot = a[(pr, pc)];
        for r in 0..rows {
            if r == pr {
                continue;
            }
            let factor = a[(r, pc)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in 0..cols {
                a[(r, c)] -= factor * a[(pr, c)];
            }
            a[(r, pc)] = 0.0;
            for c in 0..rhs.ncols() {
                rhs[(r, c)] -= factor * rhs[(pr, c)];
            }
        }
    }
    pivots
}

/// Solves the square nonsingular system `A x = b`.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut rhs = DMatrix::from_column_slice(n, 1, b.as_slice());
    let pivots = gauss_jordan(&mut m, &mut rhs);
    if pivots.len() < n {
        return Err(LinalgError::Singular {
            step: pivots.len(),
            pivot: 0.0,
        });
    }
    let mut x = DVector::zeros(n);
    for &(r, c) in &pivots {
        x[c] = rhs[(r, 0)] / m[(r, c)];
    }
    Ok(x)
}

/// Solves `A X = B` column-wise for a square nonsingular `A`.
pub fn solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut rhs = b.clone();
    let pivots = gauss_jordan(&mut m, &mut rhs);
    if pivots.len() < n {
        return Err(LinalgError::Singular {
            step: pivots.len(),
            pivot: 0.0,
        });
    }
    let mut x = DMatrix::zeros(n, b.ncols());
    for &(r, c) in &pivots {
        let pivot = m[(r, c)];
        for j in 0..b.ncols() {
            x[(c, j)] = rhs[(r, j)] / pivot;
        }
    }
    Ok(x)
}

/// Solves `A x = 0, sum(x) = 1` for a square `A` whose null space is expected to
/// be one-dimensional. The system is stacked with the normalization row and
/// eliminated with full pivoting; the one row left without a pivot provides a
/// consistency residual that is returned alongside the solution.
pub fn unit_sum_null_space(a: &DMatrix<f64>) -> Result<(DVector<f64>, f64), LinalgError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "unit_sum_null_space needs a square matrix");
    let mut stacked = DMatrix::zeros(n + 1, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(a);
    for c in 0..n {
        stacked[(n, c)] = 1.0;
    }
    let mut rhs = DMatrix::zeros(n + 1, 1);
    rhs[(n, 0)] = 1.0;
    let pivots = gauss_jordan(&mut stacked, &mut rhs);
    if pivots.len() < n {
        return Err(LinalgError::Singular {
            step: pivots.len(),
            pivot: 0.0,
        });
    }
    let mut x = DVector::zeros(n);
    for &(r, c) in &pivots {
        x[c] = rhs[(r, 0)] / stacked[(r, c)];
    }
    let leftover = (0..=n).find(|r| !pivots.iter().any(|&(pr, _)| pr == *r));
    let residual = leftover.map_or(0.0, |r| rhs[(r, 0)].abs());
    Ok((x, residual))
}

/// Extracts a basis of the null space of a square matrix whose rank defect is
/// `nullity`. Basis vectors are produced one per free column, each normalized to
/// unit infinity norm with its largest-magnitude entry positive.
pub fn null_space_basis(
    a: &DMatrix<f64>,
    nullity: usize,
) -> Result<Vec<DVector<f64>>, LinalgError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "null_space_basis needs a square matrix");
    let mut m = a.clone();
    let mut rhs = DMatrix::zeros(n, 0);
    let pivots = gauss_jordan(&mut m, &mut rhs);
    let found = n - pivots.len();
    if found != nullity {
        return Err(LinalgError::WrongNullity {
            expected: nullity,
            found,
        });
    }
    let mut free_cols: Vec<usize> = (0..n)
        .filter(|c| !pivots.iter().any(|&(_, pc)| pc == *c))
        .collect();
    free_cols.sort_unstable();
    let mut basis = Vec::with_capacity(nullity);
    for &fc in &free_cols {
        let mut v = DVector::zeros(n);
        v[fc] = 1.0;
        for &(r, c) in &pivots {
            v[c] = -m[(r, fc)] / m[(r, c)];
        }
        normalize_inf(&mut v);
        basis.push(v);
    }
    Ok(basis)
}

/// Null-space vector of a matrix with a one-dimensional kernel.
pub fn null_space_vector(a: &DMatrix<f64>) -> Result<DVector<f64>, LinalgError> {
    Ok(null_space_basis(a, 1)?.pop().expect("one basis vector"))
}

/// Scales `v` to unit infinity norm and flips the sign so that the entry of
/// largest magnitude (lowest index on ties) is positive.
pub fn normalize_inf(v: &mut DVector<f64>) {
    let mut idx = 0;
    let mut best = 0.0_f64;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if best > 0.0 {
        let s = 1.0 / v[idx];
        for x in v.iter_mut() {
            *x *= s;
        }
    }
}

/// Pairwise summation in a fixed order; used wherever ensemble statistics must
/// not depend on accumulation order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let x_true = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let b = &a * &x_true;
        let x = solve(&a, &b).unwrap();
        assert!((x - x_true).amax() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        assert!(solve(&a, &b).is_err());
    }

    #[test]
    fn unit_sum_null_space_of_symmetric_generator() {
        // Transpose of the generator [[-q, q], [q, -q]] has kernel (1, 1)/2.
        let q = 0.5;
        let a = DMatrix::from_row_slice(2, 2, &[-q, q, q, -q]);
        let (x, res) = unit_sum_null_space(&a).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!((x[1] - 0.5).abs() < 1e-15);
        assert!(res < 1e-15);
    }

    #[test]
    fn null_space_vector_matches_hand_computation() {
        // K = [[-1, 1], [1/2, -1/2]]; kernel along (1, 1).
        let k = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.5, -0.5]);
        let v = null_space_vector(&k).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14);
        assert!((v[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_well_scaled_data() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }
}
