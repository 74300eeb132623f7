mod common;

use common::*;
use domain_adapt::slmc::update_projection_slmc;
use domain_adapt::solver::*;
use domain_adapt::*;
use nalgebra::DMatrix;

struct Instance {
    source: SourceModel64,
    shared: SharedState64,
    data: Dataset64,
    target: TargetState64,
}

fn instance(d: usize, k: usize, kt: usize, r: usize, n: usize, seed: u64) -> Instance {
    let mut g = rng(seed);
    Instance {
        source: SourceModel64::new(gaussian(d, k, &mut g), seed, 1e-3).unwrap(),
        shared: SharedState64 {
            q: random_orthogonal(d, &mut g),
            dict: gaussian(d, r, &mut g),
        },
        data: Dataset64::new(gaussian(d, n, &mut g), None, "t").unwrap(),
        target: TargetState64 {
            w_t: gaussian(d, kt, &mut g),
            u: random_simplex(kt, n, &mut g),
            v_src: gaussian(k, kt, &mut g),
            v_dict: gaussian(r, kt, &mut g),
        },
    }
}

// ---- memberships ------------------------------------------------------------

#[test]
fn target_memberships_are_on_the_simplex() {
    let inst = instance(4, 3, 3, 4, 25, 1);
    let u = update_memberships_m(&inst.target, &inst.data);
    for col in u.column_iter() {
        assert!((col.sum() - 1.0).abs() < 1e-12);
        assert!(col.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}

// ---- W_T ----------------------------------------------------------------------

#[test]
fn projection_without_anchors_equals_clustering_step() {
    let inst = instance(4, 3, 3, 4, 25, 2);
    let cfg = small_config([0.4, 0.0, 0.0, 0.3], 4);
    let w = update_w_t(&inst.target, &inst.data, &inst.source, &inst.shared, &cfg).unwrap();
    let slmc = update_projection_slmc(&inst.target.u, &inst.data, 1.0 / 0.4).unwrap();
    assert!((w - slmc).amax() < 1e-12);
}

#[test]
fn zero_data_projection_is_the_anchor() {
    let mut inst = instance(4, 3, 2, 4, 10, 3);
    inst.data = Dataset64::new(DMatrix::zeros(4, 10), None, "z").unwrap();
    let cfg = small_config([0.0, 1.0, 0.0, 0.0], 4);
    let w = update_w_t(&inst.target, &inst.data, &inst.source, &inst.shared, &cfg).unwrap();
    let anchor = &inst.shared.q * &inst.source.w_s * &inst.target.v_src;
    assert!((w - anchor).amax() < 1e-12);
}

#[test]
fn projection_passes_finite_difference_check() {
    let inst = instance(4, 3, 3, 5, 20, 4);
    let cfg = small_config([0.3, 0.5, 0.7, 0.2], 5);
    let mut target = inst.target.clone();
    target.w_t = update_w_t(&inst.target, &inst.data, &inst.source, &inst.shared, &cfg).unwrap();
    let grad = fd_gradient(&target.w_t, 1e-6, |w| {
        let mut t = target.clone();
        t.w_t = w.clone();
        naive_objective(&inst.source, &inst.shared, &[(&inst.data, &t)], &cfg)
    });
    assert!(
        grad.amax() <= 1e-5,
        "max gradient component {}",
        grad.amax()
    );
}

#[test]
fn projection_solves_its_linear_system() {
    let inst = instance(5, 3, 4, 6, 30, 5);
    let cfg = small_config([0.2, 0.3, 0.4, 0.1], 6);
    let w = update_w_t(&inst.target, &inst.data, &inst.source, &inst.shared, &cfg).unwrap();
    let x = &inst.data.features;
    let a = inst.target.u.map(|v| v * v);
    let mut lhs = DMatrix::<f64>::identity(5, 5) * 0.9;
    for i in 0..x.ncols() {
        lhs += x.column(i) * x.column(i).transpose() * a.column(i).sum();
    }
    let rhs = x * a.transpose()
        + (&inst.shared.q * &inst.source.w_s * &inst.target.v_src) * 0.3
        + (&inst.shared.dict * &inst.target.v_dict) * 0.4;
    let residual = (&lhs * &w - &rhs).norm() / rhs.norm();
    assert!(residual <= 1e-8, "relative residual {residual}");
}

// ---- V (source components) -------------------------------------------------------

#[test]
fn source_components_without_penalty_are_least_squares() {
    let inst = instance(6, 3, 3, 4, 5, 6);
    let cfg = small_config([0.1, 0.5, 0.0, 0.0], 4);
    let v = update_v_src(&inst.target, &inst.source, &inst.shared, &cfg);
    let ws = &inst.source.w_s;
    let mut gram = ws.transpose() * ws;
    for i in 0..3 {
        gram[(i, i)] += 1e-12;
    }
    let reference =
        gram.try_inverse().unwrap() * ws.transpose() * inst.shared.q.transpose() * &inst.target.w_t;
    assert!((v - reference).amax() < 1e-8);
}

#[test]
fn exact_reconstruction_gives_identity_components() {
    let mut inst = instance(5, 3, 3, 4, 5, 7);
    inst.target.w_t = &inst.shared.q * &inst.source.w_s;
    let cfg = small_config([0.1, 1.0, 0.0, 0.0], 4);
    let v = update_v_src(&inst.target, &inst.source, &inst.shared, &cfg);
    assert!((v - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
}

#[test]
fn heavy_penalty_zeroes_every_row() {
    let inst = instance(5, 3, 3, 4, 5, 8);
    let scale = (inst.source.w_s.transpose() * inst.shared.q.transpose() * &inst.target.w_t).norm();
    let cfg = SolverConfig {
        inner_irls_iters: 500,
        ..small_config([0.1, 1.0, 0.0, 2.0 * scale], 4)
    };
    let v = update_v_src(&inst.target, &inst.source, &inst.shared, &cfg);
    for row in v.row_iter() {
        assert!(row.norm() < 1e-3, "row norm {}", row.norm());
    }
    let oracle = prox_grad_l21(
        &(&inst.shared.q * &inst.source.w_s),
        &inst.target.w_t,
        1.0,
        cfg.lambda4,
        5000,
    );
    assert!(oracle.amax() == 0.0);
}

fn assert_matches_prox_oracle(
    design: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    fit: f64,
    lambda: f64,
) {
    let oracle = prox_grad_l21(design, w, fit, lambda, 10_000);
    let ours = l21_subproblem(design, w, v, fit, lambda);
    let reference = l21_subproblem(design, w, &oracle, fit, lambda);
    assert!(
        (ours - reference).abs() <= 1e-6,
        "irls {ours} vs proximal gradient {reference}"
    );
}

#[test]
fn source_components_match_proximal_gradient() {
    for seed in 0..5 {
        let inst = instance(5, 3, 3, 4, 5, 100 + seed);
        let cfg = SolverConfig {
            inner_irls_iters: 1000,
            tol_param: 1e-14,
            ..small_config([0.1, 0.8, 0.0, 0.3], 4)
        };
        let v = update_v_src(&inst.target, &inst.source, &inst.shared, &cfg);
        let design = &inst.shared.q * &inst.source.w_s;
        assert_matches_prox_oracle(&design, &inst.target.w_t, &v, 0.8, 0.3);
    }
}

#[test]
fn irls_descends_every_step() {
    let inst = instance(5, 4, 3, 4, 5, 9);
    let design = &inst.shared.q * &inst.source.w_s;
    let gram = design.transpose() * &design;
    let cross = design.transpose() * &inst.target.w_t;
    let problem = RowSparseLeastSquares {
        gram: &gram,
        cross: &cross,
        fit: 1.0,
        sparsity: 0.5,
        eps: 1e-8,
    };
    let mut v = inst.target.v_src.clone();
    let mut prev = problem.objective(&v);
    for _ in 0..30 {
        v = problem.solve(v, 1, 0.0);
        let cur = problem.objective(&v);
        assert!(cur <= prev + 1e-9, "{prev} -> {cur}");
        prev = cur;
    }
}

// ---- V_T (dictionary codes) ------------------------------------------------------

#[test]
fn codes_with_square_dictionary_invert_it() {
    let mut inst = instance(4, 3, 3, 4, 5, 10);
    inst.shared.dict = gaussian(4, 4, &mut rng(99)) + DMatrix::identity(4, 4) * 3.0;
    let cfg = small_config([0.1, 0.0, 1.0, 0.0], 4);
    let v = update_v_dict(&inst.target, &inst.shared, &cfg);
    let reference = inst.shared.dict.clone().try_inverse().unwrap() * &inst.target.w_t;
    assert!((v - reference).amax() < 1e-10);
}

#[test]
fn codes_select_matching_atoms() {
    let mut inst = instance(6, 3, 2, 4, 5, 11);
    inst.target.w_t = inst.shared.dict.columns(0, 2).into_owned();
    let cfg = small_config([0.1, 0.0, 1.0, 0.0], 4);
    let v = update_v_dict(&inst.target, &inst.shared, &cfg);
    assert!((v - DMatrix::<f64>::identity(4, 2)).amax() < 1e-10);
}

#[test]
fn codes_match_proximal_gradient() {
    for seed in 0..5 {
        let inst = instance(5, 3, 3, 6, 5, 200 + seed);
        let cfg = SolverConfig {
            inner_irls_iters: 1000,
            tol_param: 1e-14,
            ..small_config([0.1, 0.0, 1.3, 0.4], 6)
        };
        let v = update_v_dict(&inst.target, &inst.shared, &cfg);
        assert_matches_prox_oracle(&inst.shared.dict, &inst.target.w_t, &v, 1.3, 0.4);
    }
}

// ---- D ---------------------------------------------------------------------------

#[test]
fn identity_codes_recover_the_projection() {
    let mut inst = instance(4, 3, 3, 3, 5, 12);
    inst.target.w_t *= 0.2; // columns inside the unit ball
    inst.target.v_dict = DMatrix::identity(3, 3);
    let cfg = SolverConfig {
        ridge_eps: 1e-14,
        ..small_config([0.1; 4], 3)
    };
    let upd = update_dictionary(std::slice::from_ref(&inst.target), &inst.shared.dict, &cfg);
    assert!(!upd.degenerate);
    assert!((upd.dict - &inst.target.w_t).amax() < 1e-10);
}

#[test]
fn dictionary_step_descends_and_stays_in_unit_ball() {
    for seed in 0..10 {
        let a = instance(4, 3, 3, 5, 5, 300 + seed);
        let b = instance(4, 3, 2, 5, 5, 400 + seed);
        let targets = vec![a.target.clone(), b.target.clone()];
        // feasible starting dictionary
        let mut start = a.shared.dict.clone();
        for mut c in start.column_iter_mut() {
            let n = c.norm();
            c /= n.max(1.0);
        }
        let cfg = small_config([0.1; 4], 5);
        let upd = update_dictionary(&targets, &start, &cfg);
        let before = dictionary_residual(&targets, &start);
        let after = dictionary_residual(&targets, &upd.dict);
        assert!(after <= before + 1e-12, "seed {seed}: {before} -> {after}");
        for c in upd.dict.column_iter() {
            assert!(c.norm() <= 1.0 + 1e-12 && c.norm() > 0.0);
        }
    }
}

// ---- Q ---------------------------------------------------------------------------

#[test]
fn procrustes_recovers_a_planted_rotation() {
    let inst = instance(4, 4, 3, 4, 5, 13);
    let rotation = random_orthogonal(4, &mut rng(14));
    let mut target = inst.target.clone();
    target.w_t = &rotation * &inst.source.w_s * &target.v_src;
    let q = update_q(std::slice::from_ref(&target), &inst.source).unwrap();
    let err = (&q * &inst.source.w_s * &target.v_src - &target.w_t).norm();
    assert!(err <= 1e-8, "reconstruction error {err}");
    assert!(domain_adapt::linalg::orthogonality_residual(&q) <= 1e-10);
}

fn procrustes_beats_sampling(d: usize, seed: u64) {
    let inst = instance(d, 3, 3, 3, 5, seed);
    let other = instance(d, 3, 2, 3, 5, seed + 1);
    let mut t2 = other.target.clone();
    t2.v_src = gaussian(3, 2, &mut rng(seed + 2));
    let targets = vec![inst.target.clone(), t2];
    let q = update_q(&targets, &inst.source).unwrap();
    let ours = transfer_residual(&targets, &inst.source, &q);
    let mut g = rng(seed + 3);
    for _ in 0..10_000 {
        let candidate = random_orthogonal(d, &mut g);
        assert!(ours <= transfer_residual(&targets, &inst.source, &candidate) + 1e-12);
    }
    assert!(domain_adapt::linalg::orthogonality_residual(&q) <= 1e-10);
}

#[test]
fn procrustes_beats_random_orthogonal_2d() {
    procrustes_beats_sampling(2, 500);
}

#[test]
fn procrustes_beats_random_orthogonal_3d() {
    procrustes_beats_sampling(3, 600);
}

#[test]
fn procrustes_tangent_gradient_vanishes() {
    let inst = instance(4, 3, 3, 4, 5, 15);
    let targets = vec![inst.target.clone()];
    let q = update_q(&targets, &inst.source).unwrap();
    // Q·exp(tA) for skew A: derivative along every basis skew direction
    let h = 1e-6;
    for i in 0..4 {
        for j in (i + 1)..4 {
            let mut a = DMatrix::<f64>::zeros(4, 4);
            a[(i, j)] = 1.0;
            a[(j, i)] = -1.0;
            let up = &q * (&a * h).exp();
            let down = &q * (&a * -h).exp();
            let deriv = (transfer_residual(&targets, &inst.source, &up)
                - transfer_residual(&targets, &inst.source, &down))
                / (2.0 * h);
            assert!(deriv.abs() <= 1e-4, "tangent derivative {deriv}");
        }
    }
}
