//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the solver code paths it is used to check.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use domain_adapt::{Dataset64, SharedState64, SolverConfig, SourceModel64, TargetState64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn random_simplex(k: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut u = DMatrix::from_fn(k, n, |_, _| rng.random::<f64>() + 1e-3);
    for mut c in u.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    u
}

/// Random orthogonal matrix (rotation or reflection) by Gram-Schmidt.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian(d, d, rng);
    let mut q = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut v = g.column(j).into_owned();
        for p in 0..j {
            let proj = q.column(p).dot(&v);
            v -= q.column(p) * proj;
        }
        let n = v.norm();
        q.set_column(j, &(v / n));
    }
    q
}

/// Gaussian blobs, `per` samples around each center (centers are columns).
pub fn blobs(centers: &DMatrix<f64>, per: usize, std: f64, seed: u64) -> Dataset64 {
    let mut r = rng(seed);
    let (d, k) = centers.shape();
    let mut x = DMatrix::zeros(d, k * per);
    let mut labels = Vec::new();
    for c in 0..k {
        for s in 0..per {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut r);
                x[(j, c * per + s)] = centers[(j, c)] + std * z;
            }
            labels.push(c);
        }
    }
    Dataset64::new(x, Some(labels), "blobs").unwrap()
}

/// Joint objective by explicit loops over targets, clusters and samples.
pub fn naive_objective(
    source: &SourceModel64,
    shared: &SharedState64,
    targets: &[(&Dataset64, &TargetState64)],
    cfg: &SolverConfig,
) -> f64 {
    let mut total = 0.0;
    for (data, t) in targets {
        let x = &data.features;
        let (d, n) = x.shape();
        let kt = t.w_t.ncols();
        for k in 0..kt {
            for i in 0..n {
                let mut dist = 0.0;
                for c in 0..kt {
                    let mut p = 0.0;
                    for j in 0..d {
                        p += t.w_t[(j, c)] * x[(j, i)];
                    }
                    let l = if c == k { 1.0 } else { 0.0 };
                    dist += (l - p) * (l - p);
                }
                total += 0.5 * t.u[(k, i)] * t.u[(k, i)] * dist;
            }
        }
        let mut wnorm = 0.0;
        let mut src = 0.0;
        let mut dict = 0.0;
        for j in 0..d {
            for c in 0..kt {
                let w = t.w_t[(j, c)];
                wnorm += w * w;
                // (Q W_S V)_{jc}
                let mut a = 0.0;
                for p in 0..d {
                    for s in 0..source.k {
                        a += shared.q[(j, p)] * source.w_s[(p, s)] * t.v_src[(s, c)];
                    }
                }
                src += (w - a) * (w - a);
                let mut b = 0.0;
                for a_idx in 0..shared.dict.ncols() {
                    b += shared.dict[(j, a_idx)] * t.v_dict[(a_idx, c)];
                }
                dict += (w - b) * (w - b);
            }
        }
        total += 0.5 * cfg.lambda1 * wnorm + 0.5 * cfg.lambda2 * src + 0.5 * cfg.lambda3 * dict;
        total += cfg.lambda4 * (naive_l21(&t.v_src) + naive_l21(&t.v_dict));
    }
    total
}

pub fn naive_l21(m: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..m.nrows() {
        let mut r = 0.0;
        for j in 0..m.ncols() {
            r += m[(i, j)] * m[(i, j)];
        }
        s += r.sqrt();
    }
    s
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(
    x: &DMatrix<f64>,
    h: f64,
    mut f: impl FnMut(&DMatrix<f64>) -> f64,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Minimizes `Σ u_k² d_k` over the simplex by projected gradient descent.
pub fn simplex_pgd(d: &[f64], iters: usize) -> Vec<f64> {
    let k = d.len();
    let lip = 2.0 * d.iter().cloned().fold(0.0, f64::max);
    let mut u = vec![1.0 / k as f64; k];
    for _ in 0..iters {
        let step: Vec<f64> = u
            .iter()
            .zip(d)
            .map(|(u, d)| u - 2.0 * u * d / lip)
            .collect();
        u = project_simplex(&step);
    }
    u
}

/// FISTA with group soft-thresholding on
/// `(fit/2)‖W − B·V‖² + λ Σ_rows ‖v_j‖`. Returns the minimizer.
pub fn prox_grad_l21(
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    fit: f64,
    lambda: f64,
    iters: usize,
) -> DMatrix<f64> {
    let gram = b.transpose() * b;
    let lip = fit * gram.clone().symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lip;
    let mut v = DMatrix::zeros(b.ncols(), w.ncols());
    let mut y = v.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = (&gram * &y - b.transpose() * w) * fit;
        let mut z = &y - grad * step;
        for mut row in z.row_iter_mut() {
            let n = row.norm();
            let shrink = if n > 0.0 {
                (1.0 - step * lambda / n).max(0.0)
            } else {
                0.0
            };
            row *= shrink;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &z + (&z - &v) * ((t - 1.0) / t_next);
        v = z;
        t = t_next;
    }
    v
}

pub fn l21_subproblem(
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    fit: f64,
    lambda: f64,
) -> f64 {
    0.5 * fit * (w - b * v).norm_squared() + lambda * naive_l21(v)
}

/// All permutations of `0..k` (Heap's algorithm).
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
        heap(k - 1, a, out);
    }
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    heap(k, &mut a, &mut out);
    out
}

/// Best accuracy over every injective relabeling of the predicted clusters.
pub fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().unwrap() + 1;
    permutations(k)
        .into_iter()
        .map(|p| {
            pred.iter()
                .zip(truth)
                .filter(|(a, b)| p[**a] == **b)
                .count()
        })
        .max()
        .unwrap() as f64
        / pred.len() as f64
}

pub fn small_config(l: [f64; 4], r: usize) -> SolverConfig {
    SolverConfig {
        lambda1: l[0],
        lambda2: l[1],
        lambda3: l[2],
        lambda4: l[3],
        r,
        ..SolverConfig::default()
    }
}
