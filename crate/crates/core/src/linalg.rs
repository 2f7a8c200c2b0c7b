//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending order.
///
/// Real-valued input takes the real symmetric path, which is both faster and
/// yields real eigenvectors.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let n = m.nrows();
    let real = m.iter().all(|c| c.im == 0.0);
    let (values, vectors): (Vec<f64>, DMatrix<Complex64>) = if real {
        let re = m.map(|c| c.re);
        let eig = SymmetricEigen::new(re);
        (
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors.map(|x| Complex64::new(x, 0.0)),
        )
    } else {
        let eig = SymmetricEigen::new(m.clone());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let sorted_vectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    (sorted_values, sorted_vectors)
}

/// Solves `(m + delta I) x = v` for symmetric positive semidefinite `m`.
///
/// Cholesky is tried first; an LU solve is the fallback when the shifted
/// matrix is not numerically positive definite.
pub fn regularized_solve(m: &DMatrix<f64>, v: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    if m.ncols() != n || v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: v.len(),
        });
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut k = m.clone();
    for i in 0..n {
        k[(i, i)] += delta;
    }
    if let Some(chol) = k.clone().cholesky() {
        let x = chol.solve(v);
        if x.iter().all(|z| z.is_finite()) {
            return Ok(x);
        }
    }
    let x = k
        .lu()
        .solve(v)
        .ok_or_else(|| Error::Solver(format!("regularized {n}x{n} metric is singular")))?;
    if !x.iter().all(|z| z.is_finite()) {
        return Err(Error::Solver("non-finite solution of the equations of motion".into()));
    }
    Ok(x)
}

/// Largest absolute entry.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
