//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the solver or set code under test.

#![allow(dead_code)]

use std::path::PathBuf;

use quadmpc::model::{dynamics_continuous, InputVector, QuadrotorParams, StateVector};
use quadmpc::sim::ScenarioConfig;
use quadmpc::{Matrix, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub fn load_scenario(name: &str) -> ScenarioConfig {
    let path = scenario_path(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ScenarioConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Central-difference Jacobians of the continuous dynamics at hover.
pub fn fd_jacobians(p: &QuadrotorParams, h: f64) -> (Matrix, Matrix) {
    let x0 = StateVector::zeros();
    let u0 = InputVector::zeros();
    let mut a = Matrix::zeros(12, 12);
    let mut b = Matrix::zeros(12, 4);
    for j in 0..12 {
        let mut e = StateVector::zeros();
        e[j] = h;
        let d = (dynamics_continuous(&(x0 + e), &u0, p) - dynamics_continuous(&(x0 - e), &u0, p)) / (2.0 * h);
        a.column_mut(j).copy_from(&d);
    }
    for j in 0..4 {
        let mut e = InputVector::zeros();
        e[j] = h;
        let d = (dynamics_continuous(&x0, &(u0 + e), p) - dynamics_continuous(&x0, &(u0 - e), p)) / (2.0 * h);
        b.column_mut(j).copy_from(&d);
    }
    (a, b)
}

/// `exp(A s)` by its Taylor series, adequate for `‖A s‖` of order one.
pub fn exp_series(a: &Matrix, s: f64) -> Matrix {
    let n = a.nrows();
    let mut term = Matrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * a * (s / k as f64);
        sum += &term;
    }
    sum
}

/// `Γ = ∫₀^dt exp(A s) ds · B` by composite Simpson quadrature.
pub fn zoh_gamma_quadrature(a: &Matrix, b: &Matrix, dt: f64, panels: usize) -> Matrix {
    let h = dt / (2 * panels) as f64;
    let mut acc = Matrix::zeros(a.nrows(), a.ncols());
    for i in 0..=2 * panels {
        let w = if i == 0 || i == 2 * panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += exp_series(a, i as f64 * h) * w;
    }
    acc * (h / 3.0) * b
}

/// Minimizer of `½zᵀHz + qᵀz` s.t. `A z = b`, `G z ≤ h` for positive definite
/// `H`, by enumerating every active set. `None` when infeasible.
pub fn kkt_enumeration(h: &Matrix, q: &Vector, a: &Matrix, b: &Vector, g: &Matrix, hv: &Vector) -> Option<Vector> {
    let n = q.len();
    let (me, mi) = (a.nrows(), g.nrows());
    let mut best: Option<(f64, Vector)> = None;
    for mask in 0u32..(1 << mi) {
        let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let k = me + active.len();
        if k > n {
            continue;
        }
        let mut kkt = Matrix::zeros(n + k, n + k);
        let mut rhs = Vector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        rhs.rows_mut(0, n).copy_from(&-q);
        for r in 0..me {
            for c in 0..n {
                kkt[(n + r, c)] = a[(r, c)];
                kkt[(c, n + r)] = a[(r, c)];
            }
            rhs[n + r] = b[r];
        }
        for (j, &i) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + me + j, c)] = g[(i, c)];
                kkt[(c, n + me + j)] = g[(i, c)];
            }
            rhs[n + me + j] = hv[i];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        let feasible = (g * &z - hv).iter().all(|v| *v <= 1e-9);
        let dual_ok = (0..active.len()).all(|j| sol[n + me + j] >= -1e-9);
        if feasible && dual_ok {
            let f = 0.5 * z.dot(&(h * &z)) + q.dot(&z);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, z));
            }
        }
    }
    best.map(|(_, z)| z)
}

/// Random small QP: `H` positive definite, up to one equality, a few
/// inequalities. About a fifth of the instances are made infeasible by a
/// contradictory pair of rows.
pub fn random_qp(rng: &mut ChaCha8Rng) -> (Matrix, Vector, Matrix, Vector, Matrix, Vector) {
    let n = rng.gen_range(2..=4);
    let me = rng.gen_range(0..=1);
    let mi = rng.gen_range(1..=5);
    let l = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &l * l.transpose() + Matrix::identity(n, n) * 0.2;
    let q = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let a = Matrix::from_fn(me, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = Vector::from_fn(me, |_, _| rng.gen_range(-0.5..0.5));
    let mut g = Matrix::from_fn(mi, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut hv = Vector::from_fn(mi, |_, _| rng.gen_range(0.1..1.0));
    if rng.gen_bool(0.2) && mi >= 2 {
        let row = g.row(0).into_owned();
        g.set_row(1, &(-row));
        hv[1] = -hv[0] - rng.gen_range(0.5..1.5);
    }
    (h, q, a, b, g, hv)
}

/// True when the closed loop `x⁺ = A_K x` from `x0` satisfies `|x| ≤ x_max`
/// and `|Kx| ≤ u_max` over `steps` samples.
pub fn rollout_admissible(a_k: &Matrix, k: &Matrix, x0: &Vector, x_max: f64, u_max: f64, steps: usize) -> bool {
    let mut x = x0.clone();
    for _ in 0..steps {
        if x.amax() > x_max + 1e-12 || (k * &x).amax() > u_max + 1e-12 {
            return false;
        }
        x = a_k * x;
    }
    true
}

/// Double integrator sampled at 1 with unit state and input bounds, with
/// the LQR gain for identity weights.
pub fn double_integrator() -> (Matrix, Matrix) {
    (Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), Matrix::from_row_slice(2, 1, &[0.5, 1.0]))
}
