//! Alternating minimization of the joint multi-target objective.
//!
//! Every cycle visits the blocks in a fixed order:
//! memberships `U^m` → projections `W_T^m` → source components `V^m` →
//! dictionary codes `V_T^m` → dictionary `D` → transform `Q`.
//! Each block step is an exact minimizer or a monotone (majorize-minimize)
//! step, so the objective never rises from one cycle to the next.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::{add_diag, frob_sq_diff, lstsq, polar_orthogonal, solve_spd};
use crate::num::Float;
use crate::slmc::{
    fit_slmc, projection_normal_equations, relative_change, relative_step, update_memberships,
};
use crate::types::{
    check_target_dims, objective_value, Dataset, SharedState, SolverConfig, SourceModel,
    TargetState,
};

/// Upper bound on projected column sweeps in the constrained dictionary step.
const DICT_SWEEPS: usize = 500;

#[derive(Clone, Debug)]
pub struct SktrResult<T: Float> {
    pub shared: SharedState<T>,
    pub targets: Vec<TargetState<T>>,
    /// Objective after initialization, then after every full cycle.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Completed cycles.
    pub iters: usize,
}

#[derive(Debug, Error)]
pub enum AdaptError<T: Float> {
    #[error(transparent)]
    Invalid(#[from] Error),

    /// A block update failed mid-run; `last` holds the state after the last
    /// completed cycle.
    #[error("numeric failure in cycle {iteration}: {error}")]
    Numeric {
        iteration: usize,
        error: Error,
        last: Box<SktrResult<T>>,
    },
}

/// Membership step for one target; identical to the standalone clustering
/// membership step with `W = W_T`.
pub fn update_memberships_m<T: Float>(target: &TargetState<T>, data: &Dataset<T>) -> DMatrix<T> {
    update_memberships(&target.w_t, data)
}

/// Projection step: solves
/// `(X·diag(s)·Xᵀ + (λ1+λ2+λ3)·I)·W = X·Aᵀ + λ2·Q·W_S·V + λ3·D·V_T`.
pub fn update_w_t<T: Float>(
    target: &TargetState<T>,
    data: &Dataset<T>,
    source: &SourceModel<T>,
    shared: &SharedState<T>,
    cfg: &SolverConfig,
) -> Result<DMatrix<T>> {
    check_target_dims(source, shared, data, target)?;
    let (mut lhs, mut rhs) = projection_normal_equations(&target.u, &data.features);
    add_diag(&mut lhs, T::lit(cfg.lambda1 + cfg.lambda2 + cfg.lambda3));
    if cfg.lambda2 != 0.0 {
        rhs += (&shared.q * &source.w_s * &target.v_src) * T::lit(cfg.lambda2);
    }
    if cfg.lambda3 != 0.0 {
        rhs += (&shared.dict * &target.v_dict) * T::lit(cfg.lambda3);
    }
    solve_spd(lhs, &rhs, "target projection update")
}

/// `min_V (fit/2)·‖W − B·V‖²_F + sparsity·Σ_j ‖v_j‖`, stated through
/// `gram = BᵀB` and `cross = BᵀW`. `eps` floors the row norms in the weights.
pub struct RowSparseLeastSquares<'a, T: Float> {
    pub gram: &'a DMatrix<T>,
    pub cross: &'a DMatrix<T>,
    pub fit: f64,
    pub sparsity: f64,
    pub eps: f64,
}

impl<T: Float> RowSparseLeastSquares<'_, T> {
    /// Subproblem objective, dropping the constant `(fit/2)·‖W‖²`.
    pub fn objective(&self, v: &DMatrix<T>) -> f64 {
        let gv = self.gram * v;
        let quad: f64 = v
            .iter()
            .zip(gv.iter())
            .map(|(a, b)| a.wide() * b.wide())
            .sum();
        let lin: f64 = v
            .iter()
            .zip(self.cross.iter())
            .map(|(a, b)| a.wide() * b.wide())
            .sum();
        let penalty: f64 = v
            .row_iter()
            .map(|row| {
                let sq: f64 = row.iter().map(|x| x.wide() * x.wide()).sum();
                sq.sqrt()
            })
            .sum();
        0.5 * self.fit * (quad - 2.0 * lin) + self.sparsity * penalty
    }

    /// One reweighted solve. Rows with norm at most `eps` are pruned to zero;
    /// on the rest the quadratic majorizer is tight, so the step is exact MM.
    fn irls_step(&self, v: &DMatrix<T>) -> Option<DMatrix<T>> {
        let norms: Vec<f64> = v
            .row_iter()
            .map(|row| row.iter().map(|x| x.wide() * x.wide()).sum::<f64>().sqrt())
            .collect();
        let active: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] > self.eps).collect();
        let mut next = DMatrix::zeros(v.nrows(), v.ncols());
        if active.is_empty() {
            return Some(next);
        }
        let mut lhs = self.gram.select_rows(&active).select_columns(&active) * T::lit(self.fit);
        for (a, &j) in active.iter().enumerate() {
            lhs[(a, a)] += T::lit(self.sparsity / norms[j]);
        }
        let rhs = self.cross.select_rows(&active) * T::lit(self.fit);
        let reduced = solve_spd(lhs, &rhs, "reweighted least squares").ok()?;
        for (a, &j) in active.iter().enumerate() {
            next.set_row(j, &reduced.row(a));
        }
        Some(next)
    }

    /// Iteratively reweighted least squares from `init`. Steps that raise
    /// [`Self::objective`] beyond round-off end the loop, and the result never
    /// scores worse than `init`.
    pub fn solve(&self, init: DMatrix<T>, max_iters: usize, tol: f64) -> DMatrix<T> {
        let start = self.objective(&init);
        let mut v = init.clone();
        let mut obj = start;
        for _ in 0..max_iters {
            let Some(next) = self.irls_step(&v) else {
                break;
            };
            let next_obj = self.objective(&next);
            // near the optimum the true gain sinks below evaluation round-off
            if next_obj.is_nan() || next_obj > obj + ROUNDOFF_SLACK * obj.abs().max(1.0) {
                break;
            }
            let change = frob_sq_diff(&next, &v).sqrt();
            let scale = crate::linalg::frob_sq(&v).sqrt().max(f64::MIN_POSITIVE);
            v = next;
            obj = next_obj;
            if change / scale < tol {
                break;
            }
        }
        if obj <= start {
            v
        } else {
            init
        }
    }
}

/// Relative slack on the IRLS acceptance test.
const ROUNDOFF_SLACK: f64 = 1e-12;

/// Shared logic of the two row-sparse code updates. `design` is the matrix
/// the codes multiply; `gram` may be supplied when it is cheaper than
/// `designᵀ·design`.
fn row_sparse_codes<T: Float>(
    design: &DMatrix<T>,
    gram: DMatrix<T>,
    w_t: &DMatrix<T>,
    current: &DMatrix<T>,
    fit: f64,
    cfg: &SolverConfig,
) -> DMatrix<T> {
    let plain = || lstsq(design, w_t).unwrap_or_else(|_| current.clone());
    if cfg.lambda4 == 0.0 {
        return plain();
    }
    if fit == 0.0 {
        return DMatrix::zeros(current.nrows(), current.ncols());
    }
    let cross = design.tr_mul(w_t);
    let problem = RowSparseLeastSquares {
        gram: &gram,
        cross: &cross,
        fit,
        sparsity: cfg.lambda4,
        eps: cfg.epsilon_irls,
    };
    // warm start from whichever of the current codes and the unpenalized fit is better
    let ls = plain();
    let init = if problem.objective(&ls) < problem.objective(current) {
        ls
    } else {
        current.clone()
    };
    problem.solve(init, cfg.inner_irls_iters, cfg.tol_param)
}

/// Source-component step: row-sparse fit of `W_T` by `Q·W_S·V`. Uses
/// `(Q·W_S)ᵀ(Q·W_S) = W_SᵀW_S`.
pub fn update_v_src<T: Float>(
    target: &TargetState<T>,
    source: &SourceModel<T>,
    shared: &SharedState<T>,
    cfg: &SolverConfig,
) -> DMatrix<T> {
    let design = &shared.q * &source.w_s;
    let gram = source.w_s.tr_mul(&source.w_s);
    row_sparse_codes(&design, gram, &target.w_t, &target.v_src, cfg.lambda2, cfg)
}

/// Dictionary-code step: row-sparse fit of `W_T` by `D·V_T`.
pub fn update_v_dict<T: Float>(
    target: &TargetState<T>,
    shared: &SharedState<T>,
    cfg: &SolverConfig,
) -> DMatrix<T> {
    let gram = shared.dict.tr_mul(&shared.dict);
    row_sparse_codes(
        &shared.dict,
        gram,
        &target.w_t,
        &target.v_dict,
        cfg.lambda3,
        cfg,
    )
}

#[derive(Clone, Debug)]
pub struct DictionaryUpdate<T: Float> {
    pub dict: DMatrix<T>,
    /// Every code matrix was zero, so the data carry no information on `D`.
    pub degenerate: bool,
}

/// `Σ_m ‖W_T^m − D·V_T^m‖²_F`.
pub fn dictionary_residual<T: Float>(targets: &[TargetState<T>], dict: &DMatrix<T>) -> f64 {
    targets
        .iter()
        .map(|t| frob_sq_diff(&t.w_t, &(dict * &t.v_dict)))
        .sum()
}

/// Dictionary step over the atoms of norm at most one.
///
/// Tries the closed form `D = (Σ W_T·V_Tᵀ)·(Σ V_T·V_Tᵀ + ridge·I)⁻¹` first; when
/// it leaves the unit ball (or leaves an atom empty) the constrained problem
/// is solved by projected block-coordinate sweeps over the atoms, warm
/// started from `current`.
pub fn update_dictionary<T: Float>(
    targets: &[TargetState<T>],
    current: &DMatrix<T>,
    cfg: &SolverConfig,
) -> DictionaryUpdate<T> {
    let (d, r) = current.shape();
    let mut gram = DMatrix::<T>::zeros(r, r);
    let mut cross = DMatrix::<T>::zeros(d, r);
    for t in targets {
        gram += &t.v_dict * t.v_dict.transpose();
        cross += &t.w_t * t.v_dict.transpose();
    }
    if gram.iter().all(|x| *x == T::zero()) {
        return DictionaryUpdate {
            dict: DMatrix::zeros(d, r),
            degenerate: true,
        };
    }

    let before = dictionary_residual(targets, current);
    let mut ridged = gram.clone();
    add_diag(&mut ridged, T::lit(cfg.ridge_eps));
    // D·G = C  ⇔  G·Dᵀ = Cᵀ (G symmetric)
    if let Ok(dt) = solve_spd(ridged, &cross.transpose(), "dictionary update") {
        let closed = dt.transpose();
        let feasible = closed.column_iter().all(|c| {
            let n = c.norm();
            n <= T::one() && n > T::zero()
        });
        if feasible && dictionary_residual(targets, &closed) <= before {
            return DictionaryUpdate {
                dict: closed,
                degenerate: false,
            };
        }
    }

    let mut dict = current.clone();
    for _ in 0..DICT_SWEEPS {
        let mut moved = T::zero();
        for j in 0..r {
            let a_jj = gram[(j, j)];
            if a_jj <= T::zero() {
                continue;
            }
            // unconstrained minimizer in atom j with the others fixed
            let residual = cross.column(j) - &dict * gram.column(j);
            let mut atom = dict.column(j) + residual / a_jj;
            let norm = atom.norm();
            if norm > T::one() {
                atom /= norm;
            }
            moved = moved.max((&atom - dict.column(j)).norm());
            dict.set_column(j, &atom);
        }
        if moved <= T::lit(cfg.tol_param) {
            break;
        }
    }
    DictionaryUpdate {
        dict,
        degenerate: false,
    }
}

/// `Σ_m ‖W_T^m − Q·W_S·V^m‖²_F`.
pub fn transfer_residual<T: Float>(
    targets: &[TargetState<T>],
    source: &SourceModel<T>,
    q: &DMatrix<T>,
) -> f64 {
    let qw = q * &source.w_s;
    targets
        .iter()
        .map(|t| frob_sq_diff(&t.w_t, &(&qw * &t.v_src)))
        .sum()
}

/// Orthogonal Procrustes step: `Q = U·Vᵀ` from the SVD of
/// `Σ_m W_T^m·(W_S·V^m)ᵀ`.
pub fn update_q<T: Float>(
    targets: &[TargetState<T>],
    source: &SourceModel<T>,
) -> Result<DMatrix<T>> {
    let d = source.dim();
    let mut cross = DMatrix::<T>::zeros(d, d);
    for t in targets {
        if t.w_t.nrows() != d || t.v_src.nrows() != source.k {
            return Err(Error::dims(
                "W_T",
                t.w_t.shape(),
                "W_S·V",
                (d, t.v_src.ncols()),
            ));
        }
        cross += &t.w_t * (&source.w_s * &t.v_src).transpose();
    }
    polar_orthogonal(&cross)
}

fn validate_problem<T: Float>(
    source: &SourceModel<T>,
    targets: &[Dataset<T>],
    cfg: &SolverConfig,
) -> Result<()> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one target domain is required".into(),
        ));
    }
    if let Some(kt) = &cfg.target_classes {
        if kt.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} target class counts given for {} targets",
                kt.len(),
                targets.len()
            )));
        }
    }
    for (m, data) in targets.iter().enumerate() {
        if data.dim() != source.dim() {
            return Err(Error::dims(
                "W_S",
                source.w_s.shape(),
                &format!("target {m} features"),
                data.features.shape(),
            ));
        }
        let kt = cfg.classes_for(m, source.k);
        if kt < 2 {
            return Err(Error::InvalidArgument(format!(
                "target {m}: need at least 2 clusters"
            )));
        }
        if data.len() < kt {
            return Err(Error::InvalidArgument(format!(
                "target {m} has {} samples for {kt} clusters",
                data.len()
            )));
        }
        if cfg.r < kt {
            return Err(Error::InvalidArgument(format!(
                "dictionary size r = {} is smaller than K_T = {kt} of target {m}",
                cfg.r
            )));
        }
    }
    Ok(())
}

/// Regularization weight of the standalone clustering warm start. Its
/// objective is the joint one divided by `λ1` when the transfer weights vanish.
pub fn warm_start_lambda(cfg: &SolverConfig) -> f64 {
    if cfg.lambda1 > 0.0 {
        1.0 / cfg.lambda1
    } else {
        1.0
    }
}

fn random_unit<T: Float>(d: usize, rng: &mut ChaCha8Rng) -> nalgebra::DVector<T> {
    loop {
        let v = nalgebra::DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-8 {
            return v.map(|x| T::lit(x / n));
        }
    }
}

/// Initial state: independent clustering warm starts per target, `Q = I`,
/// least-squares source components, a dictionary seeded with the first
/// target's projection columns plus random unit atoms, least-squares codes.
pub fn initialize<T: Float>(
    source: &SourceModel<T>,
    targets: &[Dataset<T>],
    cfg: &SolverConfig,
) -> Result<(SharedState<T>, Vec<TargetState<T>>)> {
    validate_problem(source, targets, cfg)?;
    let d = source.dim();
    let warm = warm_start_lambda(cfg);
    let slmc: Vec<_> = targets
        .par_iter()
        .enumerate()
        .map(|(m, data)| fit_slmc(data, cfg.classes_for(m, source.k), warm, cfg))
        .collect::<Result<_>>()?;

    let q = DMatrix::<T>::identity(d, d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d1c7);
    let mut dict = DMatrix::<T>::zeros(d, cfg.r);
    let first = &slmc[0].w;
    for j in 0..cfg.r {
        let atom = if j < first.ncols() && first.column(j).norm() > T::lit(1e-12) {
            let col = first.column(j).into_owned();
            let n = col.norm();
            if n > T::one() {
                col / n
            } else {
                col
            }
        } else {
            random_unit(d, &mut rng)
        };
        dict.set_column(j, &atom);
    }

    let states = slmc
        .into_iter()
        .map(|model| {
            let v_src = lstsq(&(&q * &source.w_s), &model.w)?;
            let v_dict = lstsq(&dict, &model.w)?;
            Ok(TargetState {
                w_t: model.w,
                u: model.u,
                v_src,
                v_dict,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((SharedState { q, dict }, states))
}

/// One full cycle over all blocks. Returns the new state; the inputs are left
/// untouched so a failure leaves the previous state intact.
pub fn cycle<T: Float>(
    source: &SourceModel<T>,
    datasets: &[Dataset<T>],
    shared: &SharedState<T>,
    targets: &[TargetState<T>],
    cfg: &SolverConfig,
) -> Result<(SharedState<T>, Vec<TargetState<T>>)> {
    let next: Vec<TargetState<T>> = targets
        .par_iter()
        .zip(datasets.par_iter())
        .map(|(t, data)| {
            let mut t = t.clone();
            t.u = update_memberships_m(&t, data);
            t.w_t = update_w_t(&t, data, source, shared, cfg)?;
            t.v_src = update_v_src(&t, source, shared, cfg);
            t.v_dict = update_v_dict(&t, shared, cfg);
            Ok(t)
        })
        .collect::<Result<_>>()?;

    let mut dict = shared.dict.clone();
    let proposal = update_dictionary(&next, &shared.dict, cfg);
    if !proposal.degenerate
        && dictionary_residual(&next, &proposal.dict) < dictionary_residual(&next, &dict)
    {
        dict = proposal.dict;
    }

    let mut q = shared.q.clone();
    let candidate = update_q(&next, source)?;
    // ties keep the current Q: with rank-deficient V the polar factor is not unique
    if transfer_residual(&next, source, &candidate) < transfer_residual(&next, source, &q) {
        q = candidate;
    }
    Ok((SharedState { q, dict }, next))
}

/// Largest relative step of any target's cluster model (`W_T`, `U`). The
/// shared factors are left out: `D·V_T` has a scale direction along which
/// they creep long after the clustering has settled.
fn cluster_step<T: Float>(targets: &[TargetState<T>], next: &[TargetState<T>]) -> f64 {
    targets
        .iter()
        .zip(next)
        .map(|(a, b)| relative_step(&a.w_t, &b.w_t).max(relative_step(&a.u, &b.u)))
        .fold(0.0, f64::max)
}

/// Runs the alternating solver until the relative objective change is below
/// `tol_objective` and no target's `W_T` or `U` moves by more than
/// `tol_step` (relative), or the cycle cap is reached.
pub fn adapt<T: Float>(
    source: &SourceModel<T>,
    targets: &[Dataset<T>],
    cfg: &SolverConfig,
) -> std::result::Result<SktrResult<T>, AdaptError<T>> {
    adapt_observed(source, targets, cfg, |_, _, _, _| {})
}

/// [`adapt`] with a callback invoked after initialization (cycle 0) and after
/// every completed cycle with the current state and objective.
pub fn adapt_observed<T, F>(
    source: &SourceModel<T>,
    targets: &[Dataset<T>],
    cfg: &SolverConfig,
    mut observe: F,
) -> std::result::Result<SktrResult<T>, AdaptError<T>>
where
    T: Float,
    F: FnMut(usize, &SharedState<T>, &[TargetState<T>], f64),
{
    let (shared, states) = initialize(source, targets, cfg)?;
    let mut result = SktrResult {
        shared,
        targets: states,
        objective_trace: Vec::new(),
        converged: false,
        iters: 0,
    };
    let eval = |shared: &SharedState<T>, states: &[TargetState<T>]| {
        let pairs: Vec<_> = targets.iter().zip(states).collect();
        objective_value(source, shared, &pairs, cfg)
    };
    let initial = eval(&result.shared, &result.targets)?;
    result.objective_trace.push(initial);
    observe(0, &result.shared, &result.targets, initial);

    while result.iters < cfg.max_outer_iters {
        let iteration = result.iters + 1;
        let step = cycle(source, targets, &result.shared, &result.targets, cfg)
            .and_then(|(shared, states)| eval(&shared, &states).map(|obj| (shared, states, obj)));
        let (shared, states, obj) = match step {
            Ok(s) => s,
            Err(error) => {
                return Err(AdaptError::Numeric {
                    iteration,
                    error,
                    last: Box::new(result),
                })
            }
        };
        let prev = *result
            .objective_trace
            .last()
            .expect("trace holds the initial value");
        let step = cluster_step(&result.targets, &states);
        result.shared = shared;
        result.targets = states;
        result.objective_trace.push(obj);
        result.iters = iteration;
        observe(iteration, &result.shared, &result.targets, obj);
        if (relative_change(prev, obj) < cfg.tol_objective && step <= cfg.tol_step) || obj <= 0.0 {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: [f64; 4]) -> SolverConfig {
        SolverConfig {
            lambda1: l[0],
            lambda2: l[1],
            lambda3: l[2],
            lambda4: l[3],
            ..SolverConfig::default()
        }
    }

    #[test]
    fn procrustes_of_identity_cross_covariance() {
        // W_T = W_S·V with W_S = I, V = I ⇒ cross-covariance I
        let source = SourceModel::new(DMatrix::<f64>::identity(3, 3), 0, 0.0).unwrap();
        let t = TargetState {
            w_t: DMatrix::identity(3, 3),
            u: DMatrix::zeros(3, 1),
            v_src: DMatrix::identity(3, 3),
            v_dict: DMatrix::zeros(3, 3),
        };
        let q = update_q(&[t], &source).unwrap();
        assert!((q - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn zero_codes_flag_degenerate_dictionary() {
        let t = TargetState {
            w_t: DMatrix::<f64>::from_element(2, 2, 0.3),
            u: DMatrix::zeros(2, 1),
            v_src: DMatrix::zeros(2, 2),
            v_dict: DMatrix::zeros(3, 2),
        };
        let upd = update_dictionary(&[t], &DMatrix::identity(2, 3), &cfg([0.0; 4]));
        assert!(upd.degenerate);
        assert_eq!(upd.dict, DMatrix::zeros(2, 3));
    }

    #[test]
    fn sparse_codes_vanish_without_fit_weight() {
        let t = TargetState {
            w_t: DMatrix::<f64>::from_element(2, 2, 0.3),
            u: DMatrix::zeros(2, 1),
            v_src: DMatrix::from_element(2, 2, 1.0),
            v_dict: DMatrix::from_element(2, 2, 1.0),
        };
        let shared = SharedState {
            q: DMatrix::identity(2, 2),
            dict: DMatrix::identity(2, 2),
        };
        let v = update_v_dict(&t, &shared, &cfg([0.0, 0.0, 0.0, 1.0]));
        assert_eq!(v, DMatrix::zeros(2, 2));
    }

    #[test]
    fn warm_start_lambda_inverts_lambda1() {
        assert_eq!(warm_start_lambda(&cfg([0.25, 0.0, 0.0, 0.0])), 4.0);
        assert_eq!(warm_start_lambda(&cfg([0.0, 1.0, 0.0, 0.0])), 1.0);
    }
}
