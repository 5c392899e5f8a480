//! Closed-loop scenarios: configuration, the simulation loop, sweeps, the
//! MPC/LQR comparison and numerical stability certificates.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{
    default_q, default_r, finite_lqr_controller, solve_ots, Mpc, MpcConfig, TerminalMode, TrackingTarget,
};
use crate::error::{ensure_dims, Error, Result};
use crate::estimator::{augment, check_detectability, kalman_gain, observer_step, AugmentedModel, DisturbanceModel, ObserverState};
use crate::invariant_sets::{sample_interior, ConstraintSpec, InvariantSet, CONTAINS_TOL};
use crate::model::{pose_output, step_nonlinear, InputVector, LtiModel, QuadrotorParams, StateVector, INPUT_DIM, STATE_DIM};
use crate::numerics::{controllability_matrix, numerical_rank, Matrix, Vector, RANK_TOL};
use crate::par::Parallelism;
use crate::qpsolve::QpStatus;

/// `‖x‖∞` below which a state counts as settled.
pub const SETTLE_BAND: f64 = 0.1;
/// Consecutive samples inside the band required for settling.
pub const SETTLE_HOLD: usize = 10;
/// Input constraint slack tolerated in the log.
pub const INPUT_TOL: f64 = 1e-6;
/// State excursion past the box that still does not count as divergence.
/// Solutions are only accurate to the QP tolerance.
pub const BOX_SLACK: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    #[default]
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    #[default]
    FullState,
    /// Pose measurements, disturbance observer and online target selection.
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Mpc,
    /// Unconstrained finite-horizon LQR (horizon `N`, terminal weight `P`),
    /// saturated by the actuators.
    FiniteLqr,
}

/// Standard deviations of the optional Gaussian noises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-state process noise, 12 entries.
    pub process_std: Vec<f64>,
    /// Per-output measurement noise, 6 entries.
    pub measurement_std: Vec<f64>,
}

/// One closed-loop experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub plant: PlantKind,
    #[serde(default)]
    pub feedback: FeedbackKind,
    #[serde(default)]
    pub controller: ControllerKind,
    pub x0: Vec<f64>,
    /// Initial observer state (12 states then `d̂`); zero when absent.
    #[serde(default)]
    pub xhat0: Option<Vec<f64>>,
    /// Output reference for output feedback; zero when absent.
    #[serde(default)]
    pub y_ref: Option<Vec<f64>>,
    /// Fixed steady state for full-state feedback; zero when absent.
    #[serde(default)]
    pub x_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub d_true: f64,
    #[serde(default)]
    pub disturbance: DisturbanceModel,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Diagonal of `Q`, 12 entries.
    #[serde(default)]
    pub q_diag: Option<Vec<f64>>,
    /// Diagonal of `R`, 4 entries.
    #[serde(default)]
    pub r_diag: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub q_scale: f64,
    #[serde(default = "one")]
    pub r_scale: f64,
    #[serde(default)]
    pub terminal_mode: TerminalMode,
    #[serde(default = "yes")]
    pub shift_terminal_set: bool,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: QuadrotorParams,
    #[serde(default)]
    pub constraints: Option<ConstraintSpec>,
}

fn default_horizon() -> usize {
    crate::controller::DEFAULT_HORIZON
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl ScenarioConfig {
    /// Minimal regulation scenario from `x0`.
    pub fn regulation(x0: Vec<f64>, steps: usize) -> Self {
        Self {
            name: String::new(),
            plant: PlantKind::Linear,
            feedback: FeedbackKind::FullState,
            controller: ControllerKind::Mpc,
            x0,
            xhat0: None,
            y_ref: None,
            x_ref: None,
            d_true: 0.0,
            disturbance: DisturbanceModel::default(),
            noise: None,
            horizon: default_horizon(),
            q_diag: None,
            r_diag: None,
            q_scale: 1.0,
            r_scale: 1.0,
            terminal_mode: TerminalMode::Set,
            shift_terminal_set: true,
            steps,
            seed: 0,
            params: QuadrotorParams::default(),
            constraints: None,
        }
    }

    /// Parses and validates a TOML scenario. Errors name the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Scenario(format!("at `{path}`: {}", e.inner().message().trim()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn q(&self) -> Matrix {
        let q = self.q_diag.as_ref().map_or_else(default_q, |d| Matrix::from_diagonal(&Vector::from_column_slice(d)));
        q * self.q_scale
    }

    pub fn r(&self) -> Matrix {
        let r = self.r_diag.as_ref().map_or_else(default_r, |d| Matrix::from_diagonal(&Vector::from_column_slice(d)));
        r * self.r_scale
    }

    pub fn constraint_spec(&self) -> ConstraintSpec {
        self.constraints.clone().unwrap_or_else(|| ConstraintSpec::quadrotor(&self.params))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Scenario(format!("at `{field}`: {msg}")));
        let check_len = |field: &str, v: &[f64], n: usize| -> Result<()> {
            if v.len() != n {
                return bad(field, format!("expected {n} entries, got {}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(field, "entries must be finite".into());
            }
            Ok(())
        };
        check_len("x0", &self.x0, STATE_DIM)?;
        if let Some(v) = &self.xhat0 {
            check_len("xhat0", v, STATE_DIM + 1)?;
        }
        if let Some(v) = &self.y_ref {
            check_len("y_ref", v, 6)?;
        }
        if let Some(v) = &self.x_ref {
            check_len("x_ref", v, STATE_DIM)?;
        }
        if let Some(v) = &self.q_diag {
            check_len("q_diag", v, STATE_DIM)?;
            if v.iter().any(|x| *x < 0.0) {
                return bad("q_diag", "entries must be non-negative".into());
            }
        }
        if let Some(v) = &self.r_diag {
            check_len("r_diag", v, INPUT_DIM)?;
            if v.iter().any(|x| *x <= 0.0) {
                return bad("r_diag", "entries must be positive".into());
            }
        }
        if let Some(n) = &self.noise {
            check_len("noise.process_std", &n.process_std, STATE_DIM)?;
            check_len("noise.measurement_std", &n.measurement_std, 6)?;
            if n.process_std.iter().chain(&n.measurement_std).any(|s| *s < 0.0) {
                return bad("noise", "standard deviations must be non-negative".into());
            }
        }
        if !(self.q_scale > 0.0 && self.q_scale.is_finite()) {
            return bad("q_scale", "must be positive".into());
        }
        if !(self.r_scale > 0.0 && self.r_scale.is_finite()) {
            return bad("r_scale", "must be positive".into());
        }
        if !self.d_true.is_finite() {
            return bad("d_true", "must be finite".into());
        }
        if self.horizon == 0 {
            return bad("horizon", "must be at least 1".into());
        }
        if self.steps == 0 {
            return bad("steps", "must be at least 1".into());
        }
        if self.feedback == FeedbackKind::Output && self.controller == ControllerKind::FiniteLqr {
            return bad("controller", "the LQR baseline needs full-state feedback".into());
        }
        self.params.validate().map_err(|e| Error::Scenario(format!("at `params`: {e}")))?;
        if let Some(c) = &self.constraints {
            c.validate().map_err(|e| Error::Scenario(format!("at `constraints`: {e}")))?;
            if c.state_dim() != STATE_DIM || c.input_dim() != INPUT_DIM {
                return bad("constraints", "bounds must have 12 state and 4 input entries".into());
            }
        }
        Ok(())
    }
}

/// Everything derived from a scenario that does not change during a run.
#[derive(Debug, Clone)]
pub struct Setup {
    /// Linear model with the 6-output pose measurement.
    pub model: LtiModel,
    pub spec: ConstraintSpec,
    pub cfg: MpcConfig,
    pub xf: InvariantSet,
}

impl Setup {
    pub fn new(s: &ScenarioConfig, par: Parallelism) -> Result<Self> {
        s.validate()?;
        let model = LtiModel::quadrotor(&s.params)?.with_output(pose_output())?;
        let spec = s.constraint_spec();
        let (mut cfg, xf) = MpcConfig::with_invariant_terminal_set(&model, &spec, s.horizon, s.q(), s.r(), par)?;
        cfg.terminal_mode = s.terminal_mode;
        cfg.shift_terminal_set = s.shift_terminal_set;
        Ok(Self { model, spec, cfg, xf })
    }

    /// Same setup with another horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut out = self.clone();
        out.cfg.horizon = horizon;
        out
    }
}

/// Outcome of the controller at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Optimal,
    /// The horizon QP was infeasible; the previous input, saturated, was held.
    InfeasibleFallback,
    /// The QP hit its iteration limit; same fallback as above.
    MaxIterFallback,
    /// LQR baseline, demand within the input box.
    Lqr,
    /// LQR baseline, demand clipped by the actuators.
    LqrSaturated,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::InfeasibleFallback => "infeasible_fallback",
            StepStatus::MaxIterFallback => "max_iter_fallback",
            StepStatus::Lqr => "lqr",
            StepStatus::LqrSaturated => "lqr_saturated",
        }
    }

    pub fn is_fallback(self) -> bool {
        matches!(self, StepStatus::InfeasibleFallback | StepStatus::MaxIterFallback)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    /// True plant state.
    pub x: Vector,
    /// Observer state used by the controller (output feedback only).
    pub xhat: Option<Vector>,
    /// Input applied to the plant.
    pub u: Vector,
    /// Input requested by the controller before saturation.
    pub u_demand: Vector,
    pub x_ref: Vector,
    pub u_ref: Vector,
    pub status: StepStatus,
    /// Solve time, seconds.
    pub solve_time: f64,
    /// Stage cost `l(x − x_r, u − u_r)`.
    pub cost: f64,
    /// Optimal value of the horizon problem, when solved.
    pub value: Option<f64>,
}

/// Full record of a run: rows `k = 0..=steps`; the plant is advanced after
/// every row except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub feedback: FeedbackKind,
    pub records: Vec<StepRecord>,
    /// Non-finite state or a state outside the constraint box was reached.
    pub diverged: bool,
    /// Samples at which target selection failed and the previous target was kept.
    pub target_holds: usize,
}

impl TrajectoryLog {
    pub fn final_state(&self) -> &Vector {
        &self.records.last().expect("non-empty log").x
    }

    /// First step after which `‖x‖∞ < band` holds for `SETTLE_HOLD` samples
    /// in a row, measured relative to the logged target.
    pub fn settling_step(&self, band: f64) -> Option<usize> {
        let mut run = 0;
        for (i, r) in self.records.iter().enumerate() {
            if (&r.x - &r.x_ref).amax() < band {
                run += 1;
                if run >= SETTLE_HOLD {
                    return Some(i + 1 - SETTLE_HOLD);
                }
            } else {
                run = 0;
            }
        }
        None
    }

    pub fn settling_time(&self) -> Option<f64> {
        self.settling_step(SETTLE_BAND).map(|k| k as f64 * self.dt)
    }

    pub fn settled(&self) -> bool {
        !self.diverged && self.settling_step(SETTLE_BAND).is_some()
    }

    pub fn fallback_count(&self) -> usize {
        self.records.iter().filter(|r| r.status.is_fallback()).count()
    }

    /// Largest applied `|u_i|`.
    pub fn peak_input(&self) -> f64 {
        self.records.iter().map(|r| r.u.amax()).fold(0.0, f64::max)
    }

    /// Largest `|x_i(k)|` over the run for state `i`.
    pub fn peak_state(&self, i: usize) -> f64 {
        self.records.iter().map(|r| r.x[i].abs()).fold(0.0, f64::max)
    }

    pub fn solve_times(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.status == StepStatus::Optimal).map(|r| r.solve_time).collect()
    }

    pub fn mean_solve_time(&self) -> f64 {
        let t = self.solve_times();
        if t.is_empty() {
            0.0
        } else {
            t.iter().sum::<f64>() / t.len() as f64
        }
    }

    pub fn median_solve_time(&self) -> f64 {
        let mut t = self.solve_times();
        if t.is_empty() {
            return 0.0;
        }
        t.sort_by(f64::total_cmp);
        let n = t.len();
        if n % 2 == 1 {
            t[n / 2]
        } else {
            0.5 * (t[n / 2 - 1] + t[n / 2])
        }
    }

    /// Copy without wall-clock fields, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.records.iter_mut().for_each(|r| r.solve_time = 0.0);
        out
    }
}

struct NoiseSource {
    rng: ChaCha8Rng,
    process: Vec<Normal<f64>>,
    measurement: Vec<Normal<f64>>,
}

impl NoiseSource {
    fn new(cfg: &Option<NoiseConfig>, seed: u64) -> Result<Option<Self>> {
        let Some(cfg) = cfg else { return Ok(None) };
        let make = |s: &[f64]| -> Result<Vec<Normal<f64>>> {
            s.iter().map(|sd| Normal::new(0.0, *sd).map_err(|e| Error::Scenario(e.to_string()))).collect()
        };
        Ok(Some(Self { rng: ChaCha8Rng::seed_from_u64(seed), process: make(&cfg.process_std)?, measurement: make(&cfg.measurement_std)? }))
    }

    fn draw(rng: &mut ChaCha8Rng, d: &[Normal<f64>]) -> Vector {
        Vector::from_iterator(d.len(), d.iter().map(|n| n.sample(rng)))
    }

    fn process(&mut self) -> Vector {
        Self::draw(&mut self.rng, &self.process)
    }

    fn measurement(&mut self) -> Vector {
        Self::draw(&mut self.rng, &self.measurement)
    }
}

fn plant_step(s: &ScenarioConfig, setup: &Setup, aug_gd: &Matrix, x: &Vector, u: &Vector) -> Vector {
    match s.plant {
        PlantKind::Linear => setup.model.step(x, u) + aug_gd * s.d_true,
        PlantKind::Nonlinear => {
            let xs = StateVector::from_column_slice(x.as_slice());
            let mut us = InputVector::from_column_slice(u.as_slice());
            if let Some(off) = s.disturbance.input_offset(s.d_true) {
                us += off;
            }
            let mut next = Vector::from_column_slice(step_nonlinear(&xs, &us, &s.params).as_slice());
            if s.disturbance.input_offset(0.0).is_none() {
                next += aug_gd * s.d_true;
            }
            next
        }
    }
}

fn state_out_of_box(spec: &ConstraintSpec, x: &Vector) -> bool {
    x.iter()
        .enumerate()
        .any(|(i, v)| !v.is_finite() || *v < spec.state_lower[i] - BOX_SLACK || *v > spec.state_upper[i] + BOX_SLACK)
}

/// Observer for output feedback: augmented model and steady-state gain.
pub fn design_observer(model: &LtiModel, disturbance: DisturbanceModel) -> Result<(AugmentedModel, Matrix)> {
    let (gd, cd) = disturbance.matrices(model);
    let rank = check_detectability(model, &gd, &cd)?;
    let need = model.state_dim() + gd.ncols();
    if rank != need {
        return Err(Error::Domain(format!("disturbance model is not detectable (rank {rank} < {need})")));
    }
    let aug = augment(model, &gd, &cd)?;
    let nt = aug.dim();
    let l = kalman_gain(&aug, &Matrix::identity(nt, nt), &Matrix::identity(aug.output_dim(), aug.output_dim()))?;
    Ok((aug, l))
}

/// Runs a scenario with a freshly computed setup.
pub fn run_closed_loop(s: &ScenarioConfig) -> Result<TrajectoryLog> {
    let setup = Setup::new(s, Parallelism::Sequential)?;
    run_with_setup(s, &setup)
}

/// Runs a scenario on a precomputed setup (the scenario's horizon and
/// weights are taken from `setup`).
pub fn run_with_setup(s: &ScenarioConfig, setup: &Setup) -> Result<TrajectoryLog> {
    s.validate()?;
    let model = &setup.model;
    let (n, m) = (model.state_dim(), model.input_dim());
    let (gd, _) = s.disturbance.matrices(model);
    let mut noise = NoiseSource::new(&s.noise, s.seed)?;

    let mut observer = match s.feedback {
        FeedbackKind::Output => {
            let (aug, l) = design_observer(model, s.disturbance)?;
            let xhat0 = s.xhat0.clone().map_or_else(|| Vector::zeros(n + 1), Vector::from_vec);
            let obs = ObserverState::new(&aug, xhat0, l)?;
            Some((aug, obs))
        }
        FeedbackKind::FullState => None,
    };
    let y_ref = s.y_ref.clone().map_or_else(|| Vector::zeros(model.output_dim()), Vector::from_vec);
    let fixed_target = match &s.x_ref {
        Some(x_ref) => {
            let x_ref = Vector::from_column_slice(x_ref);
            let drift = (&model.phi * &x_ref - &x_ref).amax();
            if drift > 1e-9 {
                return Err(Error::InfeasibleTarget(format!("x_ref is not a steady state (drift {drift:e})")));
            }
            TrackingTarget::fixed(model, x_ref, Vector::zeros(m))
        }
        None => TrackingTarget::origin(model),
    };

    let mut mpc = match s.controller {
        ControllerKind::Mpc => Some(Mpc::new(model, setup.cfg.clone())?),
        ControllerKind::FiniteLqr => None,
    };
    let lqr = match s.controller {
        ControllerKind::FiniteLqr => {
            Some(finite_lqr_controller(model, &setup.cfg.q, &setup.cfg.r, &setup.cfg.p, setup.cfg.horizon)?)
        }
        ControllerKind::Mpc => None,
    };

    let mut x = Vector::from_column_slice(&s.x0);
    let mut last_u = Vector::zeros(m);
    let mut last_target: Option<TrackingTarget> = None;
    let mut target_holds = 0;
    let mut records = Vec::with_capacity(s.steps + 1);
    let mut diverged = false;
    for k in 0..=s.steps {
        if state_out_of_box(&setup.spec, &x) {
            diverged = true;
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
        let (x_ctrl, xhat, target) = match &observer {
            Some((aug, obs)) => {
                let d_hat = obs.xhat[n];
                // A transient estimate may admit no steady state; only the
                // first selection is allowed to fail the run.
                let target = match (solve_ots(model, aug, d_hat, &y_ref, &setup.spec), &last_target) {
                    (Ok(t), _) => t,
                    (Err(Error::InfeasibleTarget(_)), Some(prev)) => {
                        target_holds += 1;
                        prev.clone()
                    }
                    (Err(e), _) => return Err(e),
                };
                last_target = Some(target.clone());
                (aug.plant_part(&obs.xhat), Some(obs.xhat.clone()), target)
            }
            None => (x.clone(), None, fixed_target.clone()),
        };

        let (u_demand, status, solve_time, value) = if let Some(mpc) = mpc.as_mut() {
            let start = Instant::now();
            let step = mpc.step(&x_ctrl, &target)?;
            let elapsed = start.elapsed().as_secs_f64();
            match step.u0 {
                Some(u) => (u, StepStatus::Optimal, elapsed, step.value),
                None => {
                    let status = if step.status() == QpStatus::Infeasible {
                        StepStatus::InfeasibleFallback
                    } else {
                        StepStatus::MaxIterFallback
                    };
                    (setup.spec.clamp_input(&last_u), status, elapsed, None)
                }
            }
        } else {
            let lqr = lqr.as_ref().expect("LQR controller");
            let start = Instant::now();
            let u = lqr.receding_input(&(&x_ctrl - &target.x_ref)) + &target.u_ref;
            (u, StepStatus::Lqr, start.elapsed().as_secs_f64(), None)
        };
        let u = setup.spec.clamp_input(&u_demand);
        let status = if status == StepStatus::Lqr && (&u - &u_demand).amax() > 0.0 { StepStatus::LqrSaturated } else { status };
        let cost = setup.cfg.stage_cost(&(&x - &target.x_ref), &(&u - &target.u_ref));

        records.push(StepRecord {
            k,
            t: k as f64 * model.dt,
            x: x.clone(),
            xhat,
            u: u.clone(),
            u_demand,
            x_ref: target.x_ref.clone(),
            u_ref: target.u_ref.clone(),
            status,
            solve_time,
            cost,
            value,
        });
        last_u = u.clone();
        if k == s.steps {
            break;
        }

        if let Some((aug, obs)) = observer.as_mut() {
            let mut y = &model.c * &x;
            if let Some(ns) = noise.as_mut() {
                y += ns.measurement();
            }
            *obs = observer_step(obs, aug, &u, &y);
        }
        x = plant_step(s, setup, &gd, &x, &u);
        if let Some(ns) = noise.as_mut() {
            x += ns.process();
        }
    }
    Ok(TrajectoryLog { dt: model.dt, feedback: s.feedback, records, diverged, target_holds })
}

/// Per-horizon results of [`sweep_horizon`].
#[derive(Debug, Clone)]
pub struct HorizonRun {
    pub horizon: usize,
    pub log: TrajectoryLog,
    pub mean_solve_time: f64,
    pub median_solve_time: f64,
}

/// Runs the same scenario for every horizon in `ns`. Runs fan out over
/// `par`; use [`Parallelism::Sequential`] when the timings matter.
pub fn sweep_horizon(base: &ScenarioConfig, ns: &[usize], par: Parallelism) -> Result<Vec<HorizonRun>> {
    if ns.is_empty() {
        return Err(Error::Domain("horizon list is empty".into()));
    }
    let setup = Setup::new(base, par)?;
    par.map(ns, |&n| -> Result<HorizonRun> {
        let mut s = base.clone();
        s.horizon = n;
        let log = run_with_setup(&s, &setup.with_horizon(n))?;
        Ok(HorizonRun { horizon: n, mean_solve_time: log.mean_solve_time(), median_solve_time: log.median_solve_time(), log })
    })
    .into_iter()
    .collect()
}

/// Least-squares fit `t ≈ a + bN`; returns `(a, b, R²)`.
pub fn affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Q,
    R,
}

/// The multipliers applied to the default weight in a sweep.
pub const WEIGHT_SCALES: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone)]
pub struct WeightRun {
    pub scale: f64,
    pub log: TrajectoryLog,
    pub settling_time: Option<f64>,
    pub peak_input: f64,
}

/// Scales `Q` or `R` of `base` by each entry of `scales` and reruns.
pub fn sweep_weights(base: &ScenarioConfig, kind: WeightKind, scales: &[f64], par: Parallelism) -> Result<Vec<WeightRun>> {
    if scales.is_empty() {
        return Err(Error::Domain("weight list is empty".into()));
    }
    par.map(scales, |&lambda| -> Result<WeightRun> {
        let mut s = base.clone();
        match kind {
            WeightKind::Q => s.q_scale *= lambda,
            WeightKind::R => s.r_scale *= lambda,
        }
        let log = run_closed_loop(&s)?;
        Ok(WeightRun { scale: lambda, settling_time: log.settling_time(), peak_input: log.peak_input(), log })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub mpc: TrajectoryLog,
    pub lqr: TrajectoryLog,
}

impl Comparison {
    /// Largest state difference between the two runs.
    pub fn max_state_gap(&self) -> f64 {
        self.mpc.records.iter().zip(&self.lqr.records).map(|(a, b)| (&a.x - &b.x).amax()).fold(0.0, f64::max)
    }
}

/// MPC and the saturated finite-horizon LQR from the same initial state.
pub fn compare_mpc_lqr(s: &ScenarioConfig, par: Parallelism) -> Result<Comparison> {
    if s.feedback != FeedbackKind::FullState {
        return Err(Error::Scenario("the LQR comparison needs full-state feedback".into()));
    }
    let setup = Setup::new(s, par)?;
    let kinds = [ControllerKind::Mpc, ControllerKind::FiniteLqr];
    let mut logs = par
        .map(&kinds, |&c| {
            let mut sc = s.clone();
            sc.controller = c;
            run_with_setup(&sc, &setup)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let lqr = logs.pop().expect("two runs");
    let mpc = logs.pop().expect("two runs");
    Ok(Comparison { mpc, lqr })
}

/// Outcome of [`certify_stability`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub controllability_rank: usize,
    pub state_dim: usize,
    pub detectability_rank: usize,
    pub augmented_dim: usize,
    pub samples: usize,
    pub invariance_failures: usize,
    pub admissibility_failures: usize,
    /// Largest `|V_f(x⁺) − V_f(x) + l(x, u)|` over the samples.
    pub max_decrease_residual: f64,
    /// Smallest `−[V_f(x⁺) − V_f(x) + l(x, u)]`.
    pub min_decrease_margin: f64,
    pub stage_bound_failures: usize,
    pub terminal_bound_failures: usize,
    pub origin_in_state_set: bool,
    pub origin_in_input_set: bool,
    pub origin_in_terminal_set: bool,
    pub terminal_rows: usize,
    pub t_star: usize,
}

/// Tolerance of the decrease identity.
pub const DECREASE_TOL: f64 = 1e-7;

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.controllability_rank == self.state_dim
            && self.detectability_rank == self.augmented_dim
            && self.invariance_failures == 0
            && self.admissibility_failures == 0
            && self.max_decrease_residual <= DECREASE_TOL
            && self.min_decrease_margin >= -DECREASE_TOL
            && self.stage_bound_failures == 0
            && self.terminal_bound_failures == 0
            && self.origin_in_state_set
            && self.origin_in_input_set
            && self.origin_in_terminal_set
    }
}

/// Numerical stability certificates on `n_samples` points of `X_f` under
/// the law `u = −Kx`, using the gain `k` (normally `setup.cfg.k`).
pub fn certify_stability(
    setup: &Setup,
    disturbance: DisturbanceModel,
    k: &Matrix,
    n_samples: usize,
    seed: u64,
    par: Parallelism,
) -> Result<CertificateReport> {
    let model = &setup.model;
    let cfg = &setup.cfg;
    ensure_dims(k.shape() == (model.input_dim(), model.state_dim()), || "gain has the wrong shape".into())?;
    let n = model.state_dim();
    let controllability_rank = numerical_rank(&controllability_matrix(&model.phi, &model.gamma), RANK_TOL);
    let (gd, cd) = disturbance.matrices(model);
    let detectability_rank = check_detectability(model, &gd, &cd)?;

    let xf = &setup.xf.set;
    let samples = sample_interior(xf, n_samples, seed)?;
    let lam_min_q = cfg.q.clone().symmetric_eigenvalues().min();
    let lam_max_p = cfg.p.clone().symmetric_eigenvalues().max();
    let input_set = &cfg.input_set;

    struct Check {
        invariant: bool,
        admissible: bool,
        residual: f64,
        stage_ok: bool,
        terminal_ok: bool,
    }
    let checks = par.map(&samples, |x| {
        let u = -(k * x);
        let next = &model.phi * x + &model.gamma * &u;
        let vf = cfg.terminal_cost(x);
        let l = cfg.stage_cost(x, &u);
        let norm2 = x.norm_squared();
        Check {
            invariant: xf.contains(&next, CONTAINS_TOL),
            admissible: input_set.contains(&u, CONTAINS_TOL) && cfg.state_set.contains(x, CONTAINS_TOL),
            residual: cfg.terminal_cost(&next) - vf + l,
            stage_ok: l >= 0.5 * lam_min_q * norm2 - 1e-12 * (1.0 + norm2),
            terminal_ok: vf <= 0.5 * lam_max_p * norm2 + 1e-12 * (1.0 + norm2),
        }
    });
    let zero_x = Vector::zeros(n);
    Ok(CertificateReport {
        controllability_rank,
        state_dim: n,
        detectability_rank,
        augmented_dim: n + gd.ncols(),
        samples: samples.len(),
        invariance_failures: checks.iter().filter(|c| !c.invariant).count(),
        admissibility_failures: checks.iter().filter(|c| !c.admissible).count(),
        max_decrease_residual: checks.iter().map(|c| c.residual.abs()).fold(0.0, f64::max),
        min_decrease_margin: checks.iter().map(|c| -c.residual).fold(f64::INFINITY, f64::min),
        stage_bound_failures: checks.iter().filter(|c| !c.stage_ok).count(),
        terminal_bound_failures: checks.iter().filter(|c| !c.terminal_ok).count(),
        origin_in_state_set: cfg.state_set.contains(&zero_x, 0.0),
        origin_in_input_set: input_set.contains(&Vector::zeros(model.input_dim()), 0.0),
        origin_in_terminal_set: xf.contains(&zero_x, 0.0),
        terminal_rows: xf.num_rows(),
        t_star: setup.xf.t_star,
    })
}
