//! Dense least-squares helpers built on nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Exact least-squares solution of `X b = y` via singular value
/// decomposition.
///
/// Errors with `RankDeficient` when `X` does not have full column rank.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    let k = x.ncols();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "least_squares: X has {} rows but y has {} entries",
            n,
            y.len()
        )));
    }
    if n < k {
        return Err(Error::RankDeficient(format!("{} rows < {} columns", n, k)));
    }
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = max_sv * 1e-12 * (n.max(k) as f64);
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::RankDeficient("negligible singular value".into()));
    }
    svd.solve(y, tol)
        .map_err(|e| Error::RankDeficient(e.to_string()))
}

/// Builds a design matrix from column slices (each of length n).
pub fn design_from_columns(columns: &[&[f64]]) -> DMatrix<f64> {
    assert!(!columns.is_empty());
    let n = columns[0].len();
    let k = columns.len();
    let mut m = DMatrix::zeros(n, k);
    for (j, col) in columns.iter().enumerate() {
        assert_eq!(col.len(), n, "ragged design columns");
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_exact_system() {
        // y = 3x
        let x = design_from_columns(&[&[1.0, 2.0, 3.0]]);
        let y = DVector::from_vec(vec![3.0, 6.0, 9.0]);
        let b = least_squares(&x, &y).unwrap();
        assert_relative_eq!(b[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_collinear_columns() {
        let c1 = [1.0, 2.0, 3.0, 4.0];
        let c2 = [2.0, 4.0, 6.0, 8.0];
        let x = design_from_columns(&[&c1, &c2]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(least_squares(&x, &y), Err(crate::error::Error::RankDeficient(_))));
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        // Random-ish 50x5 system with deterministic entries.
        let n = 50;
        let k = 5;
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for j in 0..k {
            cols.push(
                (0..n)
                    .map(|i| ((i * 31 + j * 17 + 7) % 101) as f64 / 10.0 - 5.0)
                    .collect(),
            );
        }
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let x = design_from_columns(&refs);
        let y = DVector::from_iterator(n, (0..n).map(|i| ((i * 53 + 11) % 97) as f64 / 7.0));
        let b = least_squares(&x, &y).unwrap();
        let resid = &y - &x * &b;
        for j in 0..k {
            let dot: f64 = (0..n).map(|i| x[(i, j)] * resid[i]).sum();
            assert!(dot.abs() < 1e-10, "column {} not orthogonal: {}", j, dot);
        }
    }
}
