//! Domain types, dimension bookkeeping and the joint objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_sq, frob_sq_diff};
use crate::num::Float;

/// Samples of one domain. Features are stored `d × N`: one column per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Float> {
    pub features: DMatrix<T>,
    pub labels: Option<Vec<usize>>,
    pub domain_id: String,
}

impl<T: Float> Dataset<T> {
    pub fn new(
        features: DMatrix<T>,
        labels: Option<Vec<usize>>,
        domain_id: impl Into<String>,
    ) -> Result<Self> {
        let (d, n) = features.shape();
        if d == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset must have at least one feature and one sample, got {d}x{n}"
            )));
        }
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite feature {} of sample {}",
                idx % d,
                idx / d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::dims("features", (d, n), "labels", (labels.len(), 1)));
            }
            let k = labels.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; k];
            for &l in labels {
                seen[l] = true;
            }
            if let Some(empty) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidArgument(format!(
                    "class {empty} has no samples (labels span 0..{k})"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            domain_id: domain_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.features.ncols() == 0
    }

    /// Number of classes implied by the labels, if any.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Copy with every feature shifted to zero mean over the samples.
    ///
    /// The projections carry no intercept, so uncentered domains let a single
    /// cluster absorb every sample.
    pub fn centered(&self) -> Self {
        let mean = self.features.column_mean();
        let mut features = self.features.clone();
        for mut col in features.column_iter_mut() {
            col -= &mean;
        }
        Self {
            features,
            labels: self.labels.clone(),
            domain_id: self.domain_id.clone(),
        }
    }

    pub fn without_labels(&self) -> Self {
        Self {
            features: self.features.clone(),
            labels: None,
            domain_id: self.domain_id.clone(),
        }
    }
}

/// Projection learned on the source domain; the only source artifact the
/// adaptation stage ever sees.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceModel<T: Float> {
    /// `d × K`
    pub w_s: DMatrix<T>,
    pub k: usize,
    pub seed: u64,
    pub ridge: f64,
}

impl<T: Float> SourceModel<T> {
    pub fn new(w_s: DMatrix<T>, seed: u64, ridge: f64) -> Result<Self> {
        let k = w_s.ncols();
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "source model needs k >= 2, got {k}"
            )));
        }
        if !crate::linalg::all_finite(&w_s) {
            return Err(Error::Numeric(
                "source projection has non-finite entries".into(),
            ));
        }
        Ok(Self {
            w_s,
            k,
            seed,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_s.nrows()
    }
}

/// Per-target block of unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetState<T: Float> {
    /// Target projection, `d × K_T`.
    pub w_t: DMatrix<T>,
    /// Soft memberships, `K_T × N_T`, columns on the simplex.
    pub u: DMatrix<T>,
    /// Source-transfer components, `K × K_T`.
    pub v_src: DMatrix<T>,
    /// Dictionary codes, `r × K_T`.
    pub v_dict: DMatrix<T>,
}

impl<T: Float> TargetState<T> {
    pub fn classes(&self) -> usize {
        self.w_t.ncols()
    }

    /// Largest deviation of a membership column sum from one, and whether
    /// every entry lies in `[0, 1]`.
    pub fn simplex_violation(&self) -> (f64, bool) {
        membership_violation(&self.u)
    }
}

pub(crate) fn membership_violation<T: Float>(u: &DMatrix<T>) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut in_box = true;
    for col in u.column_iter() {
        let s: f64 = col.iter().map(|x| x.wide()).sum();
        worst = worst.max((s - 1.0).abs());
        in_box &= col.iter().all(|&x| x >= T::zero() && x <= T::one());
    }
    (worst, in_box)
}

/// Blocks shared by all targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedState<T: Float> {
    /// Orthogonal transform, `d × d`.
    pub q: DMatrix<T>,
    /// Dictionary, `d × r`.
    pub dict: DMatrix<T>,
}

/// Solver hyperparameters. Kept in `f64` regardless of the working scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Weight on `‖W_T‖²_F`.
    pub lambda1: f64,
    /// Weight on the source-transfer residual `‖W_T − Q·W_S·V‖²_F`.
    pub lambda2: f64,
    /// Weight on the dictionary residual `‖W_T − D·V_T‖²_F`.
    pub lambda3: f64,
    /// Weight on the row-sparsity penalties of `V` and `V_T`.
    pub lambda4: f64,
    /// Dictionary size.
    pub r: usize,
    /// Per-target cluster counts; every target uses the source `K` when unset.
    pub target_classes: Option<Vec<usize>>,
    pub max_outer_iters: usize,
    pub inner_irls_iters: usize,
    pub tol_objective: f64,
    /// Outer loops also wait until the cluster model's relative step is at
    /// most this; the objective alone goes flat at round-off first.
    #[serde(default = "default_tol_step")]
    pub tol_step: f64,
    /// Inner (row-sparse) solves.
    pub tol_param: f64,
    pub epsilon_irls: f64,
    pub ridge_eps: f64,
    pub seed: u64,
}

fn default_tol_step() -> f64 {
    1e-6
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 0.1,
            lambda4: 0.01,
            r: 8,
            target_classes: None,
            max_outer_iters: 200,
            inner_irls_iters: 50,
            tol_objective: 1e-7,
            tol_step: default_tol_step(),
            tol_param: 1e-9,
            epsilon_irls: 1e-8,
            ridge_eps: 1e-10,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tradeoff weights must be finite and nonnegative, got {lambdas:?}"
            )));
        }
        for (name, v) in [
            ("tol_objective", self.tol_objective),
            ("tol_step", self.tol_step),
            ("tol_param", self.tol_param),
            ("epsilon_irls", self.epsilon_irls),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.ridge_eps >= 0.0 && self.ridge_eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ridge_eps must be >= 0, got {}",
                self.ridge_eps
            )));
        }
        if let Some(kt) = &self.target_classes {
            if let Some(&max_kt) = kt.iter().max() {
                if self.r < max_kt {
                    return Err(Error::InvalidArgument(format!(
                        "dictionary size r = {} is smaller than the largest target class count {max_kt}",
                        self.r
                    )));
                }
            }
            if kt.iter().any(|&k| k < 2) {
                return Err(Error::InvalidArgument(
                    "target class counts must be >= 2".into(),
                ));
            }
        }
        Ok(())
    }

    /// Class count of target `m` given the source class count.
    pub fn classes_for(&self, m: usize, source_k: usize) -> usize {
        self.target_classes
            .as_ref()
            .and_then(|kt| kt.get(m).copied())
            .unwrap_or(source_k)
    }
}

/// One-hot indicator of class `class` among `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneHotLabel {
    pub k: usize,
    pub class: usize,
}

impl OneHotLabel {
    pub fn new(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for k = {k}"
            )));
        }
        Ok(Self { k, class })
    }

    pub fn to_vector<T: Float>(self) -> DVector<T> {
        let mut v = DVector::zeros(self.k);
        v[self.class] = T::one();
        v
    }
}

/// `Σ_rows ‖row‖₂`.
pub fn l21_norm<T: Float>(mat: &DMatrix<T>) -> f64 {
    mat.row_iter()
        .map(|row| row.iter().map(|x| x.wide() * x.wide()).sum::<f64>().sqrt())
        .sum()
}

/// Squared label-space distances `‖l_k − Wᵀx_i‖²`, as a `K × N` matrix.
pub fn label_distances<T: Float>(w: &DMatrix<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let proj = w.tr_mul(x);
    let (k, n) = proj.shape();
    DMatrix::from_fn(k, n, |c, i| {
        let mut acc = T::zero();
        for j in 0..k {
            let target = if j == c { T::one() } else { T::zero() };
            let diff = proj[(j, i)] - target;
            acc += diff * diff;
        }
        acc
    })
}

/// `½ Σ_k Σ_i u²_{ki} ‖l_k − Wᵀx_i‖²`.
pub fn membership_fit<T: Float>(w: &DMatrix<T>, u: &DMatrix<T>, x: &DMatrix<T>) -> f64 {
    let dist = label_distances(w, x);
    0.5 * dist
        .iter()
        .zip(u.iter())
        .map(|(d, u)| u.wide() * u.wide() * d.wide())
        .sum::<f64>()
}

/// Individual terms of the joint objective, already weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub clustering: f64,
    pub projection_norm: f64,
    pub source_transfer: f64,
    pub target_relatedness: f64,
    pub sparsity: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.clustering
            + self.projection_norm
            + self.source_transfer
            + self.target_relatedness
            + self.sparsity
    }
}

fn check_shape(
    name: &str,
    shape: (usize, usize),
    other: &str,
    expected: (usize, usize),
) -> Result<()> {
    if shape != expected {
        return Err(Error::dims(name, shape, other, expected));
    }
    Ok(())
}

/// Validates every block shape of one target against the shared blocks.
pub(crate) fn check_target_dims<T: Float>(
    source: &SourceModel<T>,
    shared: &SharedState<T>,
    data: &Dataset<T>,
    target: &TargetState<T>,
) -> Result<()> {
    let d = source.dim();
    let k = source.k;
    let r = shared.dict.ncols();
    let kt = target.w_t.ncols();
    let n = data.len();
    check_shape("Q", shared.q.shape(), "W_S rows", (d, d))?;
    check_shape("D", shared.dict.shape(), "feature dimension", (d, r))?;
    check_shape("X", data.features.shape(), "W_S", (d, n))?;
    check_shape("W_T", target.w_t.shape(), "X", (d, kt))?;
    check_shape("U", target.u.shape(), "W_T/X", (kt, n))?;
    check_shape("V", target.v_src.shape(), "W_S/W_T", (k, kt))?;
    check_shape("V_T", target.v_dict.shape(), "D/W_T", (r, kt))?;
    Ok(())
}

/// Evaluates every term of the joint objective.
pub fn objective_terms<T: Float>(
    source: &SourceModel<T>,
    shared: &SharedState<T>,
    targets: &[(&Dataset<T>, &TargetState<T>)],
    cfg: &SolverConfig,
) -> Result<ObjectiveTerms> {
    let mut terms = ObjectiveTerms::default();
    for (data, target) in targets {
        check_target_dims(source, shared, data, target)?;
        terms.clustering += membership_fit(&target.w_t, &target.u, &data.features);
        terms.projection_norm += 0.5 * cfg.lambda1 * frob_sq(&target.w_t);
        if cfg.lambda2 != 0.0 {
            let anchor = &shared.q * &source.w_s * &target.v_src;
            terms.source_transfer += 0.5 * cfg.lambda2 * frob_sq_diff(&target.w_t, &anchor);
        }
        if cfg.lambda3 != 0.0 {
            let recon = &shared.dict * &target.v_dict;
            terms.target_relatedness += 0.5 * cfg.lambda3 * frob_sq_diff(&target.w_t, &recon);
        }
        if cfg.lambda4 != 0.0 {
            terms.sparsity += cfg.lambda4 * (l21_norm(&target.v_src) + l21_norm(&target.v_dict));
        }
    }
    let total = terms.total();
    if !total.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {total}")));
    }
    Ok(terms)
}

/// The joint multi-target objective.
pub fn objective_value<T: Float>(
    source: &SourceModel<T>,
    shared: &SharedState<T>,
    targets: &[(&Dataset<T>, &TargetState<T>)],
    cfg: &SolverConfig,
) -> Result<f64> {
    objective_terms(source, shared, targets, cfg).map(|t| t.total())
}
