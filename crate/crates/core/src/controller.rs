//! Receding-horizon controller, optimal target selection and LQR baselines.
//!
//! The finite-horizon problem is posed in sparse form over
//! `z = (x_1, …, x_N, u_0, …, u_{N−1})`:
//!
//! ```text
//! minimize   Σ_{k<N} ½|x_k − x_r|²_Q + ½|u_k − u_r|²_R + ½|x_N − x_r|²_P
//! subject to x_{k+1} = Φx_k + Γu_k + w,  x_k ∈ X (1 ≤ k < N),  u_k ∈ U,
//!            x_N ∈ X_f (optionally shifted to x_r)
//! ```
//!
//! where `w` is the constant disturbance contribution `Γ_d d̂` (zero for
//! regulation). Only the vectors of this QP change between sampling
//! instants, so [`Mpc`] keeps one factorized [`QpSolver`] for its lifetime.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use crate::estimator::AugmentedModel;
use crate::invariant_sets::{max_admissible_invariant_set, ConstraintSpec, InvariantSet, Polyhedron, DEFAULT_T_MAX};
use crate::model::LtiModel;
use crate::numerics::{finite_horizon_gains, riccati_operator, solve_dare, spectral_radius, max_abs, Matrix, Vector};
use crate::par::Parallelism;
use crate::qpsolve::{csr_from_triplets, QpProblem, QpSettings, QpSolution, QpSolver, QpStatus};

pub const DEFAULT_HORIZON: usize = 10;
const DARE_TOL: f64 = 1e-10;
const DARE_MAX_ITER: usize = 10_000;
/// Largest DARE residual accepted for the terminal weight.
pub const DARE_RESIDUAL_LIMIT: f64 = 1e-8;
/// Weight of the state regularizer in the target-selection objective.
pub const OTS_STATE_WEIGHT: f64 = 1e-6;

/// `diag(10, 10, 100, 10, 10, 10, 1, 1, 1, 1, 1, 1)`.
pub fn default_q() -> Matrix {
    Matrix::from_diagonal(&Vector::from_vec(vec![10.0, 10.0, 100.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]))
}

/// `diag(0.1, 1, 1, 1)`.
pub fn default_r() -> Matrix {
    Matrix::from_diagonal(&Vector::from_vec(vec![0.1, 1.0, 1.0, 1.0]))
}

/// Solver settings used for the horizon problem.
pub fn mpc_qp_settings() -> QpSettings {
    QpSettings { eps_primal: 1e-7, eps_dual: 1e-7, max_iter: 40_000, ..QpSettings::default() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    /// `x_N ∈ X_f` is enforced.
    #[default]
    Set,
    /// Only the terminal cost is kept; `x_N ∈ X` replaces the terminal set.
    CostOnly,
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: Matrix,
    pub r: Matrix,
    /// Terminal weight, the stabilizing DARE solution for `(Φ, Γ, Q, R)`.
    pub p: Matrix,
    /// LQR gain belonging to `p` (`u = −Kx`).
    pub k: Matrix,
    pub state_set: Polyhedron,
    pub input_set: Polyhedron,
    pub terminal_set: Polyhedron,
    pub terminal_mode: TerminalMode,
    pub shift_terminal_set: bool,
}

impl MpcConfig {
    /// Computes `P` and `K` from the DARE and takes the terminal set as given.
    pub fn new(
        model: &LtiModel,
        spec: &ConstraintSpec,
        horizon: usize,
        q: Matrix,
        r: Matrix,
        terminal_set: Polyhedron,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        spec.validate()?;
        let n = model.state_dim();
        ensure_dims(spec.state_dim() == n && spec.input_dim() == model.input_dim(), || {
            "constraint spec does not match the model".into()
        })?;
        ensure_dims(terminal_set.dim() == n, || format!("terminal set must live in R^{n}"))?;
        let dare = solve_dare(&model.phi, &model.gamma, &q, &r, DARE_TOL, DARE_MAX_ITER)?;
        if dare.residual > DARE_RESIDUAL_LIMIT {
            return Err(Error::Convergence { iterations: dare.iterations, residual: dare.residual });
        }
        Ok(Self {
            horizon,
            q,
            r,
            p: dare.p,
            k: dare.k,
            state_set: spec.state_set()?,
            input_set: spec.input_set()?,
            terminal_set,
            terminal_mode: TerminalMode::Set,
            shift_terminal_set: false,
        })
    }

    /// Like [`MpcConfig::new`] with `X_f` computed as the maximal admissible
    /// invariant set of the LQR loop (redundant rows removed).
    pub fn with_invariant_terminal_set(
        model: &LtiModel,
        spec: &ConstraintSpec,
        horizon: usize,
        q: Matrix,
        r: Matrix,
        par: Parallelism,
    ) -> Result<(Self, InvariantSet)> {
        let k = lqr_gain(model, &q, &r)?;
        let xf = max_admissible_invariant_set(&model.phi, &model.gamma, &k, spec, DEFAULT_T_MAX, par)?;
        let pruned = xf.set.prune(par)?;
        Ok((Self::new(model, spec, horizon, q, r, pruned)?, xf))
    }

    pub fn stage_cost(&self, x: &Vector, u: &Vector) -> f64 {
        0.5 * (quad_form(&self.q, x) + quad_form(&self.r, u))
    }

    /// `V_f(x) = ½xᵀPx`.
    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        0.5 * quad_form(&self.p, x)
    }
}

fn quad_form(m: &Matrix, x: &Vector) -> f64 {
    x.dot(&(m * x))
}

/// Steady-state pair the controller steers to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTarget {
    pub x_ref: Vector,
    pub u_ref: Vector,
    pub y_ref: Vector,
    pub d_hat: f64,
    /// Constant term `Γ_d d̂` added to every predicted state update.
    pub offset: Vector,
}

impl TrackingTarget {
    /// Regulation to the origin.
    pub fn origin(model: &LtiModel) -> Self {
        Self {
            x_ref: Vector::zeros(model.state_dim()),
            u_ref: Vector::zeros(model.input_dim()),
            y_ref: Vector::zeros(model.output_dim()),
            d_hat: 0.0,
            offset: Vector::zeros(model.state_dim()),
        }
    }

    /// Undisturbed target at a given steady state.
    pub fn fixed(model: &LtiModel, x_ref: Vector, u_ref: Vector) -> Self {
        Self { y_ref: &model.c * &x_ref, x_ref, u_ref, d_hat: 0.0, offset: Vector::zeros(model.state_dim()) }
    }
}

/// Index bookkeeping for the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcpLayout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

impl OcpLayout {
    pub fn num_vars(&self) -> usize {
        self.horizon * (self.n + self.m)
    }

    /// Offset of `x_k` for `1 ≤ k ≤ N`.
    pub fn x(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.horizon);
        (k - 1) * self.n
    }

    /// Offset of `u_k` for `0 ≤ k < N`.
    pub fn u(&self, k: usize) -> usize {
        debug_assert!(k < self.horizon);
        self.horizon * self.n + k * self.m
    }

    pub fn state(&self, z: &Vector, k: usize) -> Vector {
        z.rows(self.x(k), self.n).into_owned()
    }

    pub fn input(&self, z: &Vector, k: usize) -> Vector {
        z.rows(self.u(k), self.m).into_owned()
    }
}

fn terminal_polyhedron(cfg: &MpcConfig) -> &Polyhedron {
    match cfg.terminal_mode {
        TerminalMode::Set => &cfg.terminal_set,
        TerminalMode::CostOnly => &cfg.state_set,
    }
}

/// Vectors `(q, b_eq, h_in)` of the horizon QP for a given initial state and
/// target. The matrices depend on the configuration only.
fn ocp_vectors(model: &LtiModel, cfg: &MpcConfig, x0: &Vector, target: &TrackingTarget) -> (Vector, Vector, Vector) {
    let lay = OcpLayout { n: model.state_dim(), m: model.input_dim(), horizon: cfg.horizon };
    let (n, m, big_n) = (lay.n, lay.m, lay.horizon);

    let mut q = Vector::zeros(lay.num_vars());
    let qx = -(&cfg.q * &target.x_ref);
    let px = -(&cfg.p * &target.x_ref);
    let ru = -(&cfg.r * &target.u_ref);
    for k in 1..=big_n {
        let block = if k == big_n { &px } else { &qx };
        q.rows_mut(lay.x(k), n).copy_from(block);
    }
    for k in 0..big_n {
        q.rows_mut(lay.u(k), m).copy_from(&ru);
    }

    let mut b_eq = Vector::zeros(big_n * n);
    b_eq.rows_mut(0, n).copy_from(&(&model.phi * x0 + &target.offset));
    for k in 1..big_n {
        b_eq.rows_mut(k * n, n).copy_from(&target.offset);
    }

    let term = terminal_polyhedron(cfg);
    let (su, sx, sf) = (cfg.input_set.num_rows(), cfg.state_set.num_rows(), term.num_rows());
    let mut h_in = Vector::zeros(big_n * su + (big_n - 1) * sx + sf);
    for k in 0..big_n {
        h_in.rows_mut(k * su, su).copy_from(cfg.input_set.h_vec());
    }
    let base = big_n * su;
    for k in 0..big_n - 1 {
        h_in.rows_mut(base + k * sx, sx).copy_from(cfg.state_set.h_vec());
    }
    let base = base + (big_n - 1) * sx;
    let mut hf = term.h_vec().clone();
    if cfg.terminal_mode == TerminalMode::Set && cfg.shift_terminal_set {
        hf += term.h_mat() * &target.x_ref;
    }
    h_in.rows_mut(base, sf).copy_from(&hf);
    (q, b_eq, h_in)
}

/// Sparse horizon QP for initial state `x0`.
pub fn build_ocp(model: &LtiModel, cfg: &MpcConfig, x0: &Vector, target: &TrackingTarget) -> Result<QpProblem> {
    let lay = OcpLayout { n: model.state_dim(), m: model.input_dim(), horizon: cfg.horizon };
    let (n, m, big_n) = (lay.n, lay.m, lay.horizon);
    ensure_dims(x0.len() == n, || format!("x0 must have {n} entries"))?;
    ensure_dims(
        target.x_ref.len() == n && target.u_ref.len() == m && target.offset.len() == n,
        || "target dimensions do not match the model".into(),
    )?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("x0 must be finite".into()));
    }

    let mut hess = Vec::new();
    let push_block = |t: &mut Vec<(usize, usize, f64)>, off: usize, b: &Matrix| {
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                if b[(i, j)] != 0.0 {
                    t.push((off + i, off + j, b[(i, j)]));
                }
            }
        }
    };
    for k in 1..=big_n {
        push_block(&mut hess, lay.x(k), if k == big_n { &cfg.p } else { &cfg.q });
    }
    for k in 0..big_n {
        push_block(&mut hess, lay.u(k), &cfg.r);
    }

    // x_{k+1} − Φx_k − Γu_k = w, with x_0 moved to the right-hand side.
    let mut eq = Vec::new();
    for k in 0..big_n {
        let row = k * n;
        for i in 0..n {
            eq.push((row + i, lay.x(k + 1) + i, 1.0));
            if k > 0 {
                for j in 0..n {
                    if model.phi[(i, j)] != 0.0 {
                        eq.push((row + i, lay.x(k) + j, -model.phi[(i, j)]));
                    }
                }
            }
            for j in 0..m {
                if model.gamma[(i, j)] != 0.0 {
                    eq.push((row + i, lay.u(k) + j, -model.gamma[(i, j)]));
                }
            }
        }
    }

    let term = terminal_polyhedron(cfg);
    let mut ineq = Vec::new();
    let mut row = 0;
    let push_rows = |t: &mut Vec<(usize, usize, f64)>, row: &mut usize, h: &Matrix, col: usize| {
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                if h[(i, j)] != 0.0 {
                    t.push((*row + i, col + j, h[(i, j)]));
                }
            }
        }
        *row += h.nrows();
    };
    for k in 0..big_n {
        push_rows(&mut ineq, &mut row, cfg.input_set.h_mat(), lay.u(k));
    }
    for k in 1..big_n {
        push_rows(&mut ineq, &mut row, cfg.state_set.h_mat(), lay.x(k));
    }
    push_rows(&mut ineq, &mut row, term.h_mat(), lay.x(big_n));

    let (q, b_eq, h_in) = ocp_vectors(model, cfg, x0, target);
    let nv = lay.num_vars();
    QpProblem::new(
        csr_from_triplets(nv, nv, &hess),
        q,
        csr_from_triplets(big_n * n, nv, &eq),
        b_eq,
        csr_from_triplets(row, nv, &ineq),
        h_in,
    )
}

/// Cost of the sequence encoded in `z` started from `x0`, including the
/// stage cost at `k = 0`.
pub fn sequence_cost(cfg: &MpcConfig, lay: &OcpLayout, x0: &Vector, z: &Vector, target: &TrackingTarget) -> f64 {
    let mut total = 0.0;
    for k in 0..lay.horizon {
        let x = if k == 0 { x0.clone() } else { lay.state(z, k) };
        total += cfg.stage_cost(&(x - &target.x_ref), &(lay.input(z, k) - &target.u_ref));
    }
    total + cfg.terminal_cost(&(lay.state(z, lay.horizon) - &target.x_ref))
}

/// Result of one receding-horizon step.
#[derive(Debug, Clone)]
pub struct MpcStep {
    /// First input of the optimal sequence, present when the QP was solved.
    pub u0: Option<Vector>,
    /// Optimal value `V_N⁰(x)`, present with `u0`.
    pub value: Option<f64>,
    pub solution: QpSolution,
}

impl MpcStep {
    pub fn status(&self) -> QpStatus {
        self.solution.status
    }
}

/// Receding-horizon controller with warm-started QP solves.
pub struct Mpc {
    model: LtiModel,
    cfg: MpcConfig,
    layout: OcpLayout,
    solver: QpSolver,
    previous: Option<QpSolution>,
}

impl Mpc {
    pub fn new(model: &LtiModel, cfg: MpcConfig) -> Result<Self> {
        Self::with_settings(model, cfg, mpc_qp_settings())
    }

    pub fn with_settings(model: &LtiModel, cfg: MpcConfig, settings: QpSettings) -> Result<Self> {
        let target = TrackingTarget::origin(model);
        let problem = build_ocp(model, &cfg, &Vector::zeros(model.state_dim()), &target)?;
        let layout = OcpLayout { n: model.state_dim(), m: model.input_dim(), horizon: cfg.horizon };
        Ok(Self { model: model.clone(), cfg, layout, solver: QpSolver::new(&problem, settings)?, previous: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn layout(&self) -> OcpLayout {
        self.layout
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.previous = None;
        self.solver.cold_start();
    }

    /// Solves the horizon problem at `x` and returns the first input.
    pub fn step(&mut self, x: &Vector, target: &TrackingTarget) -> Result<MpcStep> {
        ensure_dims(x.len() == self.layout.n, || format!("state must have {} entries", self.layout.n))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("state must be finite".into()));
        }
        let (q, b_eq, h_in) = ocp_vectors(&self.model, &self.cfg, x, target);
        self.solver.update_vectors(&q, &b_eq, &h_in)?;
        match &self.previous {
            Some(prev) => {
                let (z, y_eq, y_in) = self.shifted(prev);
                self.solver.warm_start(&z, &y_eq, &y_in)?;
            }
            None => self.solver.cold_start(),
        }
        let solution = self.solver.solve();
        if solution.is_optimal() {
            let u0 = self.layout.input(&solution.z, 0);
            let value = sequence_cost(&self.cfg, &self.layout, x, &solution.z, target);
            self.previous = Some(solution.clone());
            Ok(MpcStep { u0: Some(u0), value: Some(value), solution })
        } else {
            self.previous = None;
            Ok(MpcStep { u0: None, value: None, solution })
        }
    }

    /// Previous solution advanced by one sample, with the last stage repeated.
    fn shifted(&self, prev: &QpSolution) -> (Vector, Vector, Vector) {
        let lay = self.layout;
        let (n, m, big_n) = (lay.n, lay.m, lay.horizon);
        let mut z = prev.z.clone();
        for k in 1..big_n {
            z.rows_mut(lay.x(k), n).copy_from(&prev.z.rows(lay.x(k + 1), n));
        }
        for k in 0..big_n - 1 {
            z.rows_mut(lay.u(k), m).copy_from(&prev.z.rows(lay.u(k + 1), m));
        }
        let shift_blocks = |v: &Vector, start: usize, width: usize, count: usize| {
            let mut out = v.clone();
            for k in 0..count.saturating_sub(1) {
                out.rows_mut(start + k * width, width).copy_from(&v.rows(start + (k + 1) * width, width));
            }
            out
        };
        let y_eq = shift_blocks(&prev.y_eq, 0, n, big_n);
        let su = self.cfg.input_set.num_rows();
        let sx = self.cfg.state_set.num_rows();
        let y_in = shift_blocks(&prev.y_in, 0, su, big_n);
        let y_in = shift_blocks(&y_in, big_n * su, sx, big_n - 1);
        (z, y_eq, y_in)
    }
}

/// Infinite-horizon LQR gain `K` (law `u = −Kx`), checked to stabilize.
pub fn lqr_gain(model: &LtiModel, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let dare = solve_dare(&model.phi, &model.gamma, q, r, DARE_TOL, DARE_MAX_ITER)?;
    let rho = spectral_radius(&(&model.phi - &model.gamma * &dare.k))?;
    if rho >= 1.0 {
        return Err(Error::Domain(format!("LQR loop is not stable (spectral radius {rho})")));
    }
    Ok(dare.k)
}

/// Max-abs residual of `P = F(P)` for the given weights.
pub fn dare_residual(model: &LtiModel, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    Ok(max_abs(&(p - riccati_operator(&model.phi, &model.gamma, q, r, p)?)))
}

/// Unconstrained finite-horizon LQR policy `u_t = L_t x_t`.
#[derive(Debug, Clone)]
pub struct FiniteLqr {
    pub gains: Vec<Matrix>,
}

impl FiniteLqr {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Input at stage `t` of the horizon.
    pub fn input(&self, t: usize, x: &Vector) -> Vector {
        &self.gains[t] * x
    }

    /// Receding-horizon use: the first gain applied at every sample.
    pub fn receding_input(&self, x: &Vector) -> Vector {
        self.input(0, x)
    }
}

pub fn finite_lqr_controller(model: &LtiModel, q: &Matrix, r: &Matrix, q_terminal: &Matrix, horizon: usize) -> Result<FiniteLqr> {
    let g = finite_horizon_gains(&model.phi, &model.gamma, q, r, q_terminal, horizon)?;
    Ok(FiniteLqr { gains: g.gains })
}

/// Optimal target selection: the steady state `(x_r, u_r)` with
/// `x_r = Φx_r + Γu_r + Γ_d d̂` and `Cx_r + C_d d̂ = y_ref` inside the
/// constraint box that minimizes `½|u_r|² + ½·10⁻⁶|x_r|²`.
pub fn solve_ots(model: &LtiModel, aug: &AugmentedModel, d_hat: f64, y_ref: &Vector, spec: &ConstraintSpec) -> Result<TrackingTarget> {
    let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());
    ensure_dims(aug.n == n && aug.nd == 1, || "augmented model must carry one disturbance".into())?;
    ensure_dims(y_ref.len() == p, || format!("y_ref must have {p} entries"))?;
    if y_ref.iter().any(|v| !v.is_finite()) || !d_hat.is_finite() {
        return Err(Error::Domain("OTS data must be finite".into()));
    }
    let nv = n + m;
    let mut h = Matrix::zeros(nv, nv);
    for i in 0..n {
        h[(i, i)] = OTS_STATE_WEIGHT;
    }
    for i in n..nv {
        h[(i, i)] = 1.0;
    }
    let mut a_eq = Matrix::zeros(n + p, nv);
    a_eq.view_mut((0, 0), (n, n)).copy_from(&(Matrix::identity(n, n) - &model.phi));
    a_eq.view_mut((0, n), (n, m)).copy_from(&(-&model.gamma));
    a_eq.view_mut((n, 0), (p, n)).copy_from(&model.c);
    let offset: Vector = aug.gamma_d.column(0) * d_hat;
    let mut b_eq = Vector::zeros(n + p);
    b_eq.rows_mut(0, n).copy_from(&offset);
    b_eq.rows_mut(n, p).copy_from(&(y_ref - &aug.c_d * d_hat));

    // Box on (x_r, u_r).
    let lower: Vec<f64> = spec.state_lower.iter().chain(&spec.input_lower).copied().collect();
    let upper: Vec<f64> = spec.state_upper.iter().chain(&spec.input_upper).copied().collect();
    let bx = Polyhedron::from_box(&Vector::from_vec(lower), &Vector::from_vec(upper))?;

    let problem = QpProblem::from_dense(&h, &Vector::zeros(nv), &a_eq, &b_eq, bx.h_mat(), bx.h_vec())?;
    let settings = QpSettings { eps_primal: 1e-10, eps_dual: 1e-10, max_iter: 100_000, ..QpSettings::default() };
    let sol = crate::qpsolve::solve(&problem, &settings)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(Error::InfeasibleTarget(format!("no admissible steady state reaches y_ref = {}", y_ref.transpose())))
        }
        other => return Err(Error::Numeric(format!("target selection ended with status {}", other.as_str()))),
    }
    Ok(TrackingTarget {
        x_ref: sol.z.rows(0, n).into_owned(),
        u_ref: sol.z.rows(n, m).into_owned(),
        y_ref: y_ref.clone(),
        d_hat,
        offset,
    })
}

/// Residual of the target equations `[I−Φ, −Γ; C, 0](x_r; u_r) = (Γ_d d̂; y_ref − C_d d̂)`.
pub fn ots_residual(model: &LtiModel, aug: &AugmentedModel, target: &TrackingTarget) -> f64 {
    let dyn_res = &target.x_ref - &model.phi * &target.x_ref - &model.gamma * &target.u_ref - &aug.gamma_d * target.d_hat;
    let out_res = &model.c * &target.x_ref + &aug.c_d * target.d_hat - &target.y_ref;
    dyn_res.amax().max(out_res.amax())
}
