use super::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn settings() -> QpSettings {
    QpSettings::default()
}

fn dense_qp(h: &Matrix, q: &Vector, a: &Matrix, b: &Vector, g: &Matrix, hin: &Vector) -> QpSolution {
    let p = QpProblem::from_dense(h, q, a, b, g, hin).unwrap();
    solve(&p, &settings()).unwrap()
}

fn box_rows(n: usize, lo: f64, hi: f64) -> (Matrix, Vector) {
    let mut g = Matrix::zeros(2 * n, n);
    let mut h = Vector::zeros(2 * n);
    for i in 0..n {
        g[(2 * i, i)] = 1.0;
        h[2 * i] = hi;
        g[(2 * i + 1, i)] = -1.0;
        h[2 * i + 1] = -lo;
    }
    (g, h)
}

#[test]
fn scalar_projection_onto_halfline() {
    let g = DMatrix::from_row_slice(1, 1, &[-1.0]);
    let sol = dense_qp(&Matrix::identity(1, 1), &Vector::zeros(1), &Matrix::zeros(0, 1), &Vector::zeros(0), &g, &Vector::from_vec(vec![-1.0]));
    assert!(sol.is_optimal());
    assert!((sol.z[0] - 1.0).abs() < 1e-6);
    assert!((sol.objective - 0.5).abs() < 1e-6);
}

#[test]
fn unconstrained_normal_equations() {
    let h = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 2.0]));
    let q = Vector::from_vec(vec![-2.0, -4.0]);
    let sol = dense_qp(&h, &q, &Matrix::zeros(0, 2), &Vector::zeros(0), &Matrix::zeros(0, 2), &Vector::zeros(0));
    assert!(sol.is_optimal());
    assert!((sol.z[0] - 1.0).abs() < 1e-6 && (sol.z[1] - 2.0).abs() < 1e-6);
}

#[test]
fn scalar_contradiction_is_certified() {
    let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let p = QpProblem::from_dense(&Matrix::identity(1, 1), &Vector::zeros(1), &Matrix::zeros(0, 1), &Vector::zeros(0), &g, &Vector::from_vec(vec![-1.0, -1.0])).unwrap();
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    assert!(sol.certificate.unwrap().verify(&p, 1e-6));
}

#[test]
fn lp_spec_examples() {
    let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let sol = solve_lp(&Vector::from_vec(vec![1.0]), &g, &Vector::from_vec(vec![3.0, 0.0]), LpSense::Maximize).unwrap();
    assert_eq!(sol.objective, 3.0);
    let (g, h) = box_rows(2, 0.0, 1.0);
    let sol = solve_lp(&Vector::from_vec(vec![1.0, 1.0]), &g, &h, LpSense::Maximize).unwrap();
    assert!((sol.objective - 2.0).abs() < 1e-12);
    assert!((sol.z[0] - 1.0).abs() < 1e-12 && (sol.z[1] - 1.0).abs() < 1e-12);
}

#[test]
fn projection_onto_box_is_clipping() {
    let p = Vector::from_vec(vec![2.0, -0.3, -5.0]);
    let (g, hin) = box_rows(3, -1.0, 1.0);
    let sol = dense_qp(&Matrix::identity(3, 3), &(-&p), &Matrix::zeros(0, 3), &Vector::zeros(0), &g, &hin);
    assert!(sol.is_optimal());
    let expected = [1.0, -0.3, -1.0];
    for i in 0..3 {
        assert!((sol.z[i] - expected[i]).abs() < 1e-6, "{:?}", sol.z);
    }
    assert!(sol.primal_residual <= 1e-6 && sol.dual_residual <= 1e-6);
    assert!(sol.y_in.iter().all(|v| *v >= 0.0));
}

#[test]
fn equality_constrained_least_squares_matches_kkt_solve() {
    let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 3.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    let b = Vector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    let e = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 2.0]);
    let f = Vector::from_vec(vec![0.7]);
    let h = a.transpose() * &a;
    let q = -(a.transpose() * &b);

    let mut kkt = Matrix::zeros(4, 4);
    kkt.view_mut((0, 0), (3, 3)).copy_from(&h);
    kkt.view_mut((0, 3), (3, 1)).copy_from(&e.transpose());
    kkt.view_mut((3, 0), (1, 3)).copy_from(&e);
    let mut rhs = Vector::zeros(4);
    rhs.rows_mut(0, 3).copy_from(&(-&q));
    rhs[3] = f[0];
    let oracle = kkt.lu().solve(&rhs).unwrap();

    let sol = dense_qp(&h, &q, &e, &f, &Matrix::zeros(0, 3), &Vector::zeros(0));
    assert!(sol.is_optimal());
    for i in 0..3 {
        assert!((sol.z[i] - oracle[i]).abs() < 1e-6);
    }
    assert!((sol.y_eq[0] - oracle[3]).abs() < 1e-5);
}

#[test]
fn contradictory_bounds_yield_verified_certificate() {
    let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
    let hin = Vector::from_vec(vec![-1.0, -1.0]);
    let p = QpProblem::from_dense(&Matrix::identity(2, 2), &Vector::zeros(2), &Matrix::zeros(0, 2), &Vector::zeros(0), &g, &hin).unwrap();
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    let cert = sol.certificate.expect("certificate");
    assert!(cert.verify(&p, 1e-6));
}

#[test]
fn unbounded_qp_yields_direction() {
    let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let q = Vector::from_vec(vec![0.0, -1.0]);
    let g = DMatrix::from_row_slice(1, 2, &[0.0, -1.0]);
    let p = QpProblem::from_dense(&h, &q, &Matrix::zeros(0, 2), &Vector::zeros(0), &g, &Vector::from_vec(vec![0.0])).unwrap();
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, QpStatus::Unbounded);
    assert!(sol.certificate.unwrap().verify(&p, 1e-6));
}

#[test]
fn rejects_indefinite_hessian_and_bad_dims() {
    let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let z = Vector::zeros(2);
    let e = Matrix::zeros(0, 2);
    assert!(matches!(QpProblem::from_dense(&h, &z, &e, &Vector::zeros(0), &e, &Vector::zeros(0)), Err(Error::Domain(_))));
    assert!(matches!(
        QpProblem::from_dense(&Matrix::identity(3, 3), &z, &e, &Vector::zeros(0), &e, &Vector::zeros(0)),
        Err(Error::Dimension(_))
    ));
    let nan = Vector::from_vec(vec![f64::NAN, 0.0]);
    assert!(QpProblem::from_dense(&Matrix::identity(2, 2), &nan, &e, &Vector::zeros(0), &e, &Vector::zeros(0)).is_err());
}

#[test]
fn warm_start_from_solution_converges_quickly() {
    let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
    let q = Vector::from_vec(vec![-8.0, 3.0, -1.0]);
    let (g, hin) = box_rows(3, -0.5, 0.5);
    let p = QpProblem::from_dense(&h, &q, &Matrix::zeros(0, 3), &Vector::zeros(0), &g, &hin).unwrap();
    let cold = solve(&p, &settings()).unwrap();
    assert!(cold.is_optimal());
    let warm = solve_warm(&p, &settings(), &cold).unwrap();
    assert!(warm.is_optimal());
    assert!(warm.iterations <= cold.iterations);
    assert!((warm.z - &cold.z).amax() < 1e-8);
}

#[test]
fn cached_solver_tracks_vector_updates() {
    let h = Matrix::identity(2, 2);
    let (g, hin) = box_rows(2, -1.0, 1.0);
    let p = QpProblem::from_dense(&h, &Vector::zeros(2), &Matrix::zeros(0, 2), &Vector::zeros(0), &g, &hin).unwrap();
    let mut solver = QpSolver::new(&p, settings()).unwrap();
    for target in [[0.5, 0.2], [3.0, -0.1], [-2.0, -2.0]] {
        let q = -Vector::from_row_slice(&target);
        solver.update_vectors(&q, &Vector::zeros(0), &hin).unwrap();
        let sol = solver.solve();
        assert!(sol.is_optimal());
        for i in 0..2 {
            assert!((sol.z[i] - target[i].clamp(-1.0, 1.0)).abs() < 1e-6);
        }
    }
}

#[test]
fn lp_simple_vertex() {
    // max x + y s.t. x ≤ 1, y ≤ 2, x + y ≤ 2.5, x,y ≥ 0.
    let g = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
    let h = Vector::from_vec(vec![1.0, 2.0, 2.5, 0.0, 0.0]);
    let c = Vector::from_vec(vec![1.0, 1.0]);
    let sol = solve_lp(&c, &g, &h, LpSense::Maximize).unwrap();
    assert!(sol.is_optimal());
    assert!((sol.objective - 2.5).abs() < 1e-12);
    assert!(sol.primal_residual < 1e-12 && sol.dual_residual < 1e-12);
    let min = solve_lp(&c, &g, &h, LpSense::Minimize).unwrap();
    assert!(min.objective.abs() < 1e-12);
}

#[test]
fn lp_infeasible_and_unbounded() {
    let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let h = Vector::from_vec(vec![-1.0, -1.0]);
    let c = Vector::from_vec(vec![1.0]);
    let sol = solve_lp(&c, &g, &h, LpSense::Maximize).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    let p = QpProblem::lp(&(-&c), &g, &h).unwrap();
    assert!(sol.certificate.unwrap().verify(&p, 1e-9));

    let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let h = Vector::from_vec(vec![1.0]);
    let c = Vector::from_vec(vec![0.0, 1.0]);
    let sol = solve_lp(&c, &g, &h, LpSense::Maximize).unwrap();
    assert_eq!(sol.status, QpStatus::Unbounded);
    let p = QpProblem::lp(&(-&c), &g, &h).unwrap();
    assert!(sol.certificate.unwrap().verify(&p, 1e-9));

    // Infeasible and dual infeasible at once.
    let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0]);
    let h = Vector::from_vec(vec![-1.0, -1.0, 0.0]);
    let sol = solve_lp(&Vector::from_vec(vec![0.0, -1.0]), &g, &h, LpSense::Maximize).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
}

#[test]
fn lp_zero_rows() {
    let g = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, -1.0]);
    let c = Vector::from_vec(vec![1.0]);
    let ok = solve_lp(&c, &g, &Vector::from_vec(vec![0.0, 1.0, 1.0]), LpSense::Maximize).unwrap();
    assert!((ok.objective - 1.0).abs() < 1e-12);
    let bad = solve_lp(&c, &g, &Vector::from_vec(vec![-1.0, 1.0, 1.0]), LpSense::Maximize).unwrap();
    assert_eq!(bad.status, QpStatus::Infeasible);
}

#[test]
fn lp_handles_degenerate_vertex() {
    // Many constraints through the optimal vertex (1, 1).
    let mut rows = vec![];
    let mut rhs = vec![];
    for k in 0..20 {
        let a = 0.05 * k as f64;
        rows.extend_from_slice(&[1.0 - a, a]);
        rhs.push(1.0);
    }
    rows.extend_from_slice(&[-1.0, 0.0, 0.0, -1.0]);
    rhs.extend_from_slice(&[5.0, 5.0]);
    let g = DMatrix::from_row_slice(rhs.len(), 2, &rows);
    let h = Vector::from_vec(rhs);
    let sol = solve_lp(&Vector::from_vec(vec![1.0, 1.0]), &g, &h, LpSense::Maximize).unwrap();
    assert!(sol.is_optimal());
    assert!((sol.objective - 2.0).abs() < 1e-10);
}

/// Exhaustive vertex enumeration for small bounded LPs.
fn lp_vertex_oracle(c: &Vector, g: &Matrix, h: &Vector) -> Option<f64> {
    let (m, n) = (g.nrows(), g.ncols());
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let sub = Matrix::from_fn(n, n, |i, j| g[(idx[i], j)]);
        let rhs = Vector::from_fn(n, |i, _| h[idx[i]]);
        if sub.determinant().abs() > 1e-9 {
            if let Some(x) = sub.lu().solve(&rhs) {
                if (g * &x - h).max() <= 1e-9 {
                    let v = c.dot(&x);
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
        // Next combination.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < m - n + i {
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Active-set enumeration oracle for box-constrained QPs.
fn box_qp_oracle(h: &Matrix, q: &Vector, lo: f64, hi: f64) -> Vector {
    let n = q.len();
    let mut best: Option<(f64, Vector)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut x = Vector::from_fn(n, |i, _| match state[i] {
            1 => lo,
            2 => hi,
            _ => 0.0,
        });
        if !free.is_empty() {
            let hff = Matrix::from_fn(free.len(), free.len(), |i, j| h[(free[i], free[j])]);
            let hx = h * &x;
            let rhs = Vector::from_fn(free.len(), |i, _| -(q[free[i]] + hx[free[i]]));
            let Some(xf) = hff.cholesky().map(|c| c.solve(&rhs)) else { continue };
            for (k, &i) in free.iter().enumerate() {
                x[i] = xf[k];
            }
        }
        if x.iter().any(|v| *v < lo - 1e-12 || *v > hi + 1e-12) {
            continue;
        }
        let val = 0.5 * x.dot(&(h * &x)) + q.dot(&x);
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, x));
        }
    }
    best.unwrap().1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_qp_matches_enumeration(
        entries in proptest::collection::vec(-2.0f64..2.0, 25),
        q in proptest::collection::vec(-5.0f64..5.0, 5),
    ) {
        let l = DMatrix::from_row_slice(5, 5, &entries);
        let h = &l * l.transpose() + Matrix::identity(5, 5) * 0.1;
        let q = Vector::from_vec(q);
        let oracle = box_qp_oracle(&h, &q, -1.0, 1.0);
        let (g, hin) = box_rows(5, -1.0, 1.0);
        let sol = dense_qp(&h, &q, &Matrix::zeros(0, 5), &Vector::zeros(0), &g, &hin);
        prop_assert!(sol.is_optimal());
        prop_assert!((&sol.z - &oracle).amax() < 1e-5, "{} vs {}", sol.z, oracle);
        prop_assert!(sol.primal_residual <= 1e-6 && sol.dual_residual <= 1e-6);
    }

    #[test]
    fn lp_matches_vertex_enumeration_and_strong_duality(
        rows in proptest::collection::vec(-1.0f64..1.0, 12),
        rhs in proptest::collection::vec(0.1f64..2.0, 4),
        c in proptest::collection::vec(-1.0f64..1.0, 2),
    ) {
        // Four random half-planes containing the origin plus a box keep the
        // feasible set bounded and non-empty.
        let mut data = rows[..8].to_vec();
        data.extend_from_slice(&[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let g = DMatrix::from_row_slice(8, 2, &data);
        let mut hv = rhs.clone();
        hv.extend_from_slice(&[3.0, 3.0, 3.0, 3.0]);
        let h = Vector::from_vec(hv);
        let c = Vector::from_vec(c);
        let sol = solve_lp(&c, &g, &h, LpSense::Maximize).unwrap();
        prop_assert!(sol.is_optimal());
        let oracle = lp_vertex_oracle(&c, &g, &h).unwrap();
        prop_assert!((sol.objective - oracle).abs() < 1e-9);
        // min (-c)ᵀx = -(hᵀy) at optimum; any feasible y bounds it from below.
        prop_assert!((-sol.objective + h.dot(&sol.y_in)).abs() < 1e-9);
        prop_assert!(sol.y_in.iter().all(|v| *v >= 0.0));
        prop_assert!(sol.primal_residual < 1e-9 && sol.dual_residual < 1e-9);
    }

    #[test]
    fn row_scaling_leaves_qp_solution_unchanged(
        q in proptest::collection::vec(-4.0f64..4.0, 2),
        s in proptest::collection::vec(0.01f64..100.0, 4),
    ) {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let q = Vector::from_vec(q);
        let (g, hin) = box_rows(2, -0.7, 0.7);
        let base = dense_qp(&h, &q, &Matrix::zeros(0, 2), &Vector::zeros(0), &g, &hin);
        let d = Matrix::from_diagonal(&Vector::from_vec(s));
        let scaled = dense_qp(&h, &q, &Matrix::zeros(0, 2), &Vector::zeros(0), &(&d * &g), &(&d * &hin));
        prop_assert!(base.is_optimal() && scaled.is_optimal());
        prop_assert!((&base.z - &scaled.z).amax() < 1e-5);
        prop_assert!((base.objective - scaled.objective).abs() < 1e-6);
    }

    #[test]
    fn objective_scaling_leaves_argmin_unchanged(
        q in proptest::collection::vec(-4.0f64..4.0, 3),
        lambda in 0.001f64..1000.0,
    ) {
        let h = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.0, 0.5, 2.0, 0.2, 0.0, 0.2, 1.0]);
        let q = Vector::from_vec(q);
        let (g, hin) = box_rows(3, -0.5, 0.5);
        let e = Matrix::zeros(0, 3);
        let base = dense_qp(&h, &q, &e, &Vector::zeros(0), &g, &hin);
        let scaled = dense_qp(&(&h * lambda), &(&q * lambda), &e, &Vector::zeros(0), &g, &hin);
        prop_assert!((&base.z - &scaled.z).amax() < 1e-6);
    }

    #[test]
    fn optimum_beats_random_feasible_points(
        q in proptest::collection::vec(-4.0f64..4.0, 3),
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.0, 0.1, 0.0, 0.5]);
        let q = Vector::from_vec(q);
        let g = DMatrix::from_row_slice(7, 3, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0]);
        let hin = Vector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let p = QpProblem::from_dense(&h, &q, &Matrix::zeros(0, 3), &Vector::zeros(0), &g, &hin).unwrap();
        let sol = solve(&p, &settings()).unwrap();
        prop_assert!(sol.is_optimal());
        prop_assert!((&g * &sol.z - &hin).max() <= 1e-6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tested = 0;
        while tested < 100 {
            let x = Vector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            if (&g * &x - &hin).max() > 0.0 {
                continue;
            }
            tested += 1;
            prop_assert!(sol.objective <= p.objective(&x) + 1e-6);
        }
    }

    #[test]
    fn admm_agrees_with_simplex_on_lps(
        c in proptest::collection::vec(-1.0f64..1.0, 2),
        rows in proptest::collection::vec(-1.0f64..1.0, 6),
    ) {
        let mut data = rows.clone();
        data.extend_from_slice(&[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let g = DMatrix::from_row_slice(7, 2, &data);
        let h = Vector::from_vec(vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let c = Vector::from_vec(c);
        let lp = solve_lp(&c, &g, &h, LpSense::Minimize).unwrap();
        let qp = solve(&QpProblem::lp(&c, &g, &h).unwrap(), &settings()).unwrap();
        prop_assert!(lp.is_optimal() && qp.is_optimal());
        prop_assert!((lp.objective - qp.objective).abs() < 1e-5);
    }
}

