//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::num::Float;

/// Solves `lhs · X = rhs` for symmetric positive (semi)definite `lhs`.
///
/// Cholesky first; LU as a fallback for systems that are only numerically
/// indefinite.
pub fn solve_spd<T: Float>(lhs: DMatrix<T>, rhs: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    if lhs.nrows() != rhs.nrows() {
        return Err(Error::dims(
            "system matrix",
            lhs.shape(),
            "right-hand side",
            rhs.shape(),
        ));
    }
    if let Some(chol) = lhs.clone().cholesky() {
        let x = chol.solve(rhs);
        if all_finite(&x) {
            return Ok(x);
        }
    }
    lhs.lu()
        .solve(rhs)
        .filter(all_finite)
        .ok_or_else(|| Error::Numeric(format!("{what}: linear system is singular")))
}

/// `(AᵀA + ridge·I)⁻¹ Aᵀ B`.
pub fn ridge_lstsq<T: Float>(
    design: &DMatrix<T>,
    target: &DMatrix<T>,
    ridge: T,
) -> Result<DMatrix<T>> {
    if design.nrows() != target.nrows() {
        return Err(Error::dims(
            "design",
            design.shape(),
            "target",
            target.shape(),
        ));
    }
    let mut gram = design.tr_mul(design);
    add_diag(&mut gram, ridge);
    solve_spd(gram, &design.tr_mul(target), "ridge least squares")
}

/// Minimum-norm least-squares solution of `design · X ≈ target`.
pub fn lstsq<T: Float>(design: &DMatrix<T>, target: &DMatrix<T>) -> Result<DMatrix<T>> {
    if design.nrows() != target.nrows() {
        return Err(Error::dims(
            "design",
            design.shape(),
            "target",
            target.shape(),
        ));
    }
    let svd = design.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * T::lit(1e-12);
    svd.solve(target, cutoff)
        .map_err(|e| Error::Numeric(format!("least squares: {e}")))
        .and_then(|x| {
            if all_finite(&x) {
                Ok(x)
            } else {
                Err(Error::Numeric(
                    "least squares produced non-finite values".into(),
                ))
            }
        })
}

pub fn add_diag<T: Float>(m: &mut DMatrix<T>, value: T) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += value;
    }
}

pub fn all_finite<T: Float>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Squared Frobenius norm, accumulated in `f64`.
pub fn frob_sq<T: Float>(m: &DMatrix<T>) -> f64 {
    m.iter()
        .map(|x| {
            let x = x.wide();
            x * x
        })
        .sum()
}

/// Squared Frobenius norm of `a - b`, accumulated in `f64`.
pub fn frob_sq_diff<T: Float>(a: &DMatrix<T>, b: &DMatrix<T>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x.wide() - y.wide();
            d * d
        })
        .sum()
}

/// Euclidean norm of every row.
pub fn row_norms<T: Float>(m: &DMatrix<T>) -> Vec<T> {
    (0..m.nrows()).map(|i| m.row(i).norm()).collect()
}

/// Orthogonal polar factor `U·Vᵀ` of `c = UΣVᵀ`: the orthogonal matrix
/// maximizing `tr(Qᵀc)`.
pub fn polar_orthogonal<T: Float>(c: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !c.is_square() {
        return Err(Error::InvalidArgument(format!(
            "polar factor needs a square matrix, got {:?}",
            c.shape()
        )));
    }
    if !all_finite(c) {
        return Err(Error::Numeric(
            "non-finite entries in Procrustes cross-covariance".into(),
        ));
    }
    let svd = c.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::Numeric("SVD did not converge".into())),
    }
}

/// `‖QᵀQ − I‖_F`.
pub fn orthogonality_residual<T: Float>(q: &DMatrix<T>) -> f64 {
    let gram = q.tr_mul(q);
    let eye = DMatrix::<T>::identity(gram.nrows(), gram.ncols());
    frob_sq_diff(&gram, &eye).sqrt()
}
