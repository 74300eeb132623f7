//! Evaluation of solver runs and the transfer-channel ablation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{ari, extract_labels, hungarian_accuracy, nmi};
use crate::num::Float;
use crate::solver::{adapt, AdaptError, SktrResult};
use crate::types::{Dataset, SolverConfig, SourceModel, TargetState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClusterScores {
    pub accuracy: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn score_state<T: Float>(state: &TargetState<T>, truth: &[usize]) -> Result<ClusterScores> {
    let pred = extract_labels(&state.u);
    Ok(ClusterScores {
        accuracy: hungarian_accuracy(&pred, truth)?,
        nmi: nmi(&pred, truth)?.value,
        ari: ari(&pred, truth)?,
    })
}

/// Scores every target that has ground truth; `None` for the rest.
pub fn score_targets<T: Float>(
    states: &[TargetState<T>],
    truths: &[Option<Vec<usize>>],
) -> Result<Vec<Option<ClusterScores>>> {
    states
        .iter()
        .zip(truths)
        .map(|(s, t)| t.as_deref().map(|t| score_state(s, t)).transpose())
        .collect()
}

/// Which transfer channels are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    Full,
    NoSourceTransfer,
    NoTargetRelatedness,
    ClusteringOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoSourceTransfer,
        Variant::NoTargetRelatedness,
        Variant::ClusteringOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSourceTransfer => "no_source",
            Variant::NoTargetRelatedness => "no_relatedness",
            Variant::ClusteringOnly => "clustering_only",
        }
    }

    pub fn apply(self, cfg: &SolverConfig) -> SolverConfig {
        let mut cfg = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoSourceTransfer => cfg.lambda2 = 0.0,
            Variant::NoTargetRelatedness => cfg.lambda3 = 0.0,
            Variant::ClusteringOnly => {
                cfg.lambda2 = 0.0;
                cfg.lambda3 = 0.0;
            }
        }
        cfg
    }
}

/// Weights used by the ablation when none are given.
pub fn ablation_preset() -> SolverConfig {
    SolverConfig {
        lambda1: 0.1,
        lambda2: 1.0,
        lambda3: 1.0,
        lambda4: 0.1,
        r: 5,
        ..SolverConfig::default()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub config: SolverConfig,
    pub objective: f64,
    pub iters: usize,
    pub converged: bool,
    /// Per target; `None` where no ground truth exists.
    pub scores: Vec<Option<ClusterScores>>,
}

impl AblationRow {
    pub fn mean_accuracy(&self) -> Option<f64> {
        mean(self.scores.iter().map(|s| s.map(|s| s.accuracy)))
    }

    pub fn mean_nmi(&self) -> Option<f64> {
        mean(self.scores.iter().map(|s| s.map(|s| s.nmi)))
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn numeric<T: Float>(e: AdaptError<T>) -> Error {
    match e {
        AdaptError::Invalid(e) => e,
        AdaptError::Numeric {
            iteration, error, ..
        } => Error::Numeric(format!("cycle {iteration}: {error}")),
    }
}

/// Runs every [`Variant`] with the same seed and scores it against the
/// targets' labels, when present.
pub fn run_ablation<T: Float>(
    source: &SourceModel<T>,
    targets: &[Dataset<T>],
    cfg: &SolverConfig,
) -> Result<Vec<AblationRow>> {
    let truths: Vec<_> = targets.iter().map(|t| t.labels.clone()).collect();
    Variant::ALL
        .iter()
        .map(|&variant| {
            let cfg = variant.apply(cfg);
            let result: SktrResult<T> = adapt(source, targets, &cfg).map_err(numeric)?;
            Ok(AblationRow {
                variant,
                objective: *result.objective_trace.last().expect("non-empty trace"),
                iters: result.iters,
                converged: result.converged,
                scores: score_targets(&result.targets, &truths)?,
                config: cfg,
            })
        })
        .collect()
}
