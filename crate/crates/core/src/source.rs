//! Source-side training: K-means for class structure, ridge regression for
//! the projection that is handed to the adaptation stage.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_diag, solve_spd};
use crate::num::Float;
use crate::types::{Dataset, SolverConfig, SourceModel};

#[derive(Clone, Debug)]
pub struct KMeans<T: Float> {
    /// `d × k`
    pub centroids: DMatrix<T>,
    pub assign: Vec<usize>,
    /// Within-cluster sum of squares after every Lloyd iteration.
    pub wcss_trace: Vec<f64>,
    pub iters: usize,
}

impl<T: Float> KMeans<T> {
    pub fn wcss(&self) -> f64 {
        self.wcss_trace.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn sq_dist<T: Float>(x: &DMatrix<T>, i: usize, c: &DMatrix<T>, j: usize) -> f64 {
    x.column(i)
        .iter()
        .zip(c.column(j).iter())
        .map(|(a, b)| {
            let d = a.wide() - b.wide();
            d * d
        })
        .sum()
}

fn nearest<T: Float>(x: &DMatrix<T>, i: usize, c: &DMatrix<T>) -> (usize, f64) {
    (0..c.ncols())
        .map(|j| (j, sq_dist(x, i, c, j)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

fn kmeans_plus_plus<T: Float>(x: &DMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<T> {
    let n = x.ncols();
    let mut centroids = DMatrix::zeros(x.nrows(), k);
    centroids.set_column(0, &x.column(rng.random_range(0..n)));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centroids, 0)).collect();
    for j in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.set_column(j, &x.column(pick));
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(x, i, &centroids, j));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// A cluster that loses all its members takes over the sample farthest from
/// its current centroid, so the within-cluster sum of squares never rises.
pub fn kmeans<T: Float>(
    data: &Dataset<T>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeans<T>> {
    let x = &data.features;
    let (d, n) = x.shape();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(x, k, &mut rng);
    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let mut cost: Vec<f64> = vec![0.0; n];
        let mut changed = false;
        for i in 0..n {
            let (j, dist) = nearest(x, i, &centroids);
            changed |= assign[i] != j;
            assign[i] = j;
            cost[i] = dist;
        }
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a cluster with two members");
            counts[assign[far]] -= 1;
            assign[far] = empty;
            counts[empty] = 1;
            cost[far] = 0.0;
            changed = true;
        }
        let mut sums = DMatrix::<f64>::zeros(d, k);
        for (i, &a) in assign.iter().enumerate() {
            for r in 0..d {
                sums[(r, a)] += x[(r, i)].wide();
            }
        }
        for j in 0..k {
            let inv = 1.0 / counts[j] as f64;
            for r in 0..d {
                centroids[(r, j)] = T::lit(sums[(r, j)] * inv);
            }
        }
        let wcss = (0..n).map(|i| sq_dist(x, i, &centroids, assign[i])).sum();
        trace.push(wcss);
        if !changed {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assign,
        wcss_trace: trace,
        iters,
    })
}

/// `K × N` one-hot indicator matrix.
pub fn one_hot<T: Float>(labels: &[usize], k: usize) -> DMatrix<T> {
    let mut y = DMatrix::zeros(k, labels.len());
    for (i, &l) in labels.iter().enumerate() {
        y[(l, i)] = T::one();
    }
    y
}

/// Fits the source projection, clustering with K-means when the source is
/// unlabeled.
pub fn fit_source<T: Float>(
    data: &Dataset<T>,
    k: usize,
    ridge: f64,
    cfg: &SolverConfig,
) -> Result<SourceModel<T>> {
    fit_source_with(data, k, ridge, cfg, |data, k, seed| {
        kmeans(data, k, seed, crate::slmc::KMEANS_ITERS).map(|km| km.assign)
    })
}

/// [`fit_source`] with a caller-supplied clustering routine, used only when
/// the dataset carries no labels.
pub fn fit_source_with<T, F>(
    data: &Dataset<T>,
    k: usize,
    ridge: f64,
    cfg: &SolverConfig,
    mut cluster: F,
) -> Result<SourceModel<T>>
where
    T: Float,
    F: FnMut(&Dataset<T>, usize, u64) -> Result<Vec<usize>>,
{
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "source needs k >= 2, got {k}"
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let labels = match &data.labels {
        Some(labels) => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::InvalidArgument(format!(
                    "source label {bad} out of range for k = {k}"
                )));
            }
            labels.clone()
        }
        None => cluster(data, k, cfg.seed)?,
    };
    let x = &data.features;
    let y = one_hot::<T>(&labels, k);
    let mut gram = x * x.transpose();
    add_diag(&mut gram, T::lit(ridge));
    let w_s = solve_spd(gram, &(x * y.transpose()), "source projection").map_err(|_| {
        Error::Numeric(format!(
            "X·Xᵀ is rank deficient (d = {}, N = {}) and ridge = {ridge} does not regularize it",
            data.dim(),
            data.len()
        ))
    })?;
    SourceModel::new(w_s, cfg.seed, ridge)
}

/// Argmax over `W_Sᵀx` for every sample, lowest index on ties.
pub fn predict<T: Float>(model: &SourceModel<T>, data: &Dataset<T>) -> Vec<usize> {
    let scores = model.w_s.tr_mul(&data.features);
    crate::metrics::extract_labels(&scores)
}

#[derive(Serialize, Deserialize)]
struct SourceMetaFile {
    seed: u64,
    ridge: f64,
}

#[derive(Serialize, Deserialize)]
struct SourceModelFile {
    d: usize,
    k: usize,
    /// Row-major.
    w_s: Vec<f64>,
    meta: SourceMetaFile,
}

impl<T: Float> SourceModel<T> {
    pub fn to_json(&self) -> Result<String> {
        let file = SourceModelFile {
            d: self.dim(),
            k: self.k,
            w_s: row_major(&self.w_s),
            meta: SourceMetaFile {
                seed: self.seed,
                ridge: self.ridge,
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SourceModelFile = serde_json::from_str(text)?;
        let w_s = from_row_major(file.d, file.k, &file.w_s)?;
        SourceModel::new(w_s, file.meta.seed, file.meta.ridge)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub(crate) fn row_major<T: Float>(m: &DMatrix<T>) -> Vec<f64> {
    m.transpose().iter().map(|x| x.wide()).collect()
}

pub(crate) fn from_row_major<T: Float>(
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<DMatrix<T>> {
    if data.len() != rows * cols {
        return Err(Error::dims(
            "declared shape",
            (rows, cols),
            "payload",
            (data.len(), 1),
        ));
    }
    Ok(DMatrix::from_row_iterator(
        rows,
        cols,
        data.iter().map(|&x| T::lit(x)),
    ))
}
