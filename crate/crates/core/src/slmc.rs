//! Soft large-margin clustering: a linear projection that pulls every sample
//! toward the one-hot vector of its soft cluster.
//!
//! Objective, for a regularization weight `λ > 0`:
//!
//! ```text
//! ½‖W‖²_F + (λ/2) Σ_k Σ_i u²_{ki} ‖Wᵀx_i − l_k‖²,   u_{·i} on the simplex
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{add_diag, frob_sq, frob_sq_diff, solve_spd};
use crate::num::Float;
use crate::source::kmeans;
use crate::types::{label_distances, membership_fit, Dataset, SolverConfig};

/// Added to every label-space distance so samples sitting exactly on a
/// one-hot vertex do not divide by zero.
pub const MEMBERSHIP_EPS: f64 = 1e-12;

/// Hard K-means assignment mass used to seed the memberships.
const INIT_CONFIDENCE: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct SlmcModel<T: Float> {
    /// `d × K`
    pub w: DMatrix<T>,
    /// `K × N`
    pub u: DMatrix<T>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iters: usize,
}

/// Exact minimizer of `Σ_k u_k² d_k` over the simplex, column by column:
/// `u_k ∝ 1/d_k`.
pub fn memberships_from_distances<T: Float>(dist: &DMatrix<T>) -> DMatrix<T> {
    let eps = T::lit(MEMBERSHIP_EPS);
    let mut u = dist.map(|d| d + eps);
    for mut col in u.column_iter_mut() {
        // scale by the column minimum so the reciprocals stay in range
        let min = col
            .iter()
            .copied()
            .fold(T::max_value().unwrap(), |a, b| a.min(b));
        col.apply(|d| *d = min / *d);
        let total = col.sum();
        col.apply(|x| *x /= total);
    }
    u
}

/// Membership step: the closed-form simplex minimizer for the current projection.
pub fn update_memberships<T: Float>(w: &DMatrix<T>, data: &Dataset<T>) -> DMatrix<T> {
    memberships_from_distances(&label_distances(w, &data.features))
}

/// Data-dependent parts of the projection normal equations:
/// `X·diag(s)·Xᵀ` and `X·Aᵀ`, with `A = u∘u` and `s` its column sums.
pub(crate) fn projection_normal_equations<T: Float>(
    u: &DMatrix<T>,
    x: &DMatrix<T>,
) -> (DMatrix<T>, DMatrix<T>) {
    let a = u.map(|v| v * v);
    let mut scaled = x.clone();
    for (mut col, s) in scaled
        .column_iter_mut()
        .zip(a.column_iter().map(|c| c.sum()))
    {
        col *= s;
    }
    let lhs = &scaled * x.transpose();
    let rhs = x * a.transpose();
    (lhs, rhs)
}

/// Projection step: solves `(X·diag(s)·Xᵀ + (1/λ)·I)·W = X·Aᵀ`.
pub fn update_projection_slmc<T: Float>(
    u: &DMatrix<T>,
    data: &Dataset<T>,
    lambda_reg: f64,
) -> Result<DMatrix<T>> {
    if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "regularization weight must be positive, got {lambda_reg}"
        )));
    }
    if u.ncols() != data.len() {
        return Err(Error::dims("U", u.shape(), "X", data.features.shape()));
    }
    let (mut lhs, rhs) = projection_normal_equations(u, &data.features);
    add_diag(&mut lhs, T::lit(1.0 / lambda_reg));
    solve_spd(lhs, &rhs, "projection update")
}

pub fn slmc_objective<T: Float>(
    w: &DMatrix<T>,
    u: &DMatrix<T>,
    data: &Dataset<T>,
    lambda_reg: f64,
) -> f64 {
    0.5 * frob_sq(w) + lambda_reg * membership_fit(w, u, &data.features)
}

/// Softened one-hot memberships from hard assignments.
pub(crate) fn soften_assignments<T: Float>(assign: &[usize], k: usize) -> DMatrix<T> {
    let rest = T::lit((1.0 - INIT_CONFIDENCE) / (k - 1) as f64);
    let mut u = DMatrix::from_element(k, assign.len(), rest);
    for (i, &a) in assign.iter().enumerate() {
        u[(a, i)] = T::lit(INIT_CONFIDENCE);
    }
    u
}

/// Alternates membership and projection steps from a K-means start until the
/// relative objective change drops below `cfg.tol_objective` and the relative
/// projection step below `cfg.tol_step`, or `cfg.max_outer_iters` is reached.
pub fn fit_slmc<T: Float>(
    data: &Dataset<T>,
    k: usize,
    lambda_reg: f64,
    cfg: &SolverConfig,
) -> Result<SlmcModel<T>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 clusters, got {k}"
        )));
    }
    if data.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill {k} clusters",
            data.len()
        )));
    }
    let clusters = kmeans(data, k, cfg.seed, KMEANS_ITERS)?;
    let mut u = soften_assignments::<T>(&clusters.assign, k);
    let mut w = DMatrix::zeros(data.dim(), k);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    while iters < cfg.max_outer_iters {
        iters += 1;
        let next = update_projection_slmc(&u, data, lambda_reg)?;
        let step = relative_step(&w, &next);
        w = next;
        u = update_memberships(&w, data);
        let obj = slmc_objective(&w, &u, data, lambda_reg);
        if !obj.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became {obj} at iteration {iters}"
            )));
        }
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| relative_change(prev, obj) < cfg.tol_objective)
            && step <= cfg.tol_step;
        trace.push(obj);
        if done {
            converged = true;
            break;
        }
    }
    Ok(SlmcModel {
        w,
        u,
        objective_trace: trace,
        converged,
        iters,
    })
}

pub(crate) const KMEANS_ITERS: usize = 300;

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// `‖new − old‖_F / max(‖old‖_F, 1)`. The objective flattens at round-off
/// while the iterates can still be moving, so convergence checks both.
pub(crate) fn relative_step<T: Float>(old: &DMatrix<T>, new: &DMatrix<T>) -> f64 {
    frob_sq_diff(old, new).sqrt() / frob_sq(old).sqrt().max(1.0)
}
