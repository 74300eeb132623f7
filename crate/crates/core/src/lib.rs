//! Multi-target unsupervised domain adaptation.
//!
//! Several unlabeled target domains are clustered jointly with soft
//! large-margin clustering. Knowledge flows in from a source domain through
//! its learned projection only (never its samples), mapped by an orthogonal
//! transform `Q` and row-sparse components `V^m`, and between targets through
//! a shared dictionary `D` with row-sparse codes `V_T^m`.
//!
//! The solvers are generic over [`Float`]; the `*64` aliases below are the
//! usual entry points.

pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod num;
pub mod slmc;
pub mod solver;
pub mod source;
pub mod types;

pub use error::{Error, Result};
pub use num::Float;
pub use slmc::{fit_slmc, SlmcModel};
pub use solver::{adapt, adapt_observed, AdaptError, SktrResult};
pub use source::{fit_source, kmeans, KMeans};
pub use types::{
    l21_norm, objective_value, Dataset, OneHotLabel, SharedState, SolverConfig, SourceModel,
    TargetState,
};

pub type Dataset64 = Dataset<f64>;
pub type SourceModel64 = SourceModel<f64>;
pub type TargetState64 = TargetState<f64>;
pub type SharedState64 = SharedState<f64>;
pub type SktrResult64 = SktrResult<f64>;
pub type SlmcModel64 = SlmcModel<f64>;

pub type Dataset32 = Dataset<f32>;
pub type SourceModel32 = SourceModel<f32>;
pub type SktrResult32 = SktrResult<f32>;
