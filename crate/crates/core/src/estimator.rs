//! Disturbance-augmented model and steady-state Kalman/Luenberger observer.
//!
//! A constant disturbance `d` is appended to the state:
//!
//! ```text
//! [x; d]⁺ = [[Φ, Γ_d], [0, I]] [x; d] + [Γ; 0] u,     y = [C, C_d] [x; d]
//! ```
//!
//! and estimated with a predictor-form observer whose gain comes from the
//! filter Riccati equation.

use crate::error::{ensure_dims, Error, Result};
use serde::{Deserialize, Serialize};

use crate::model::{idx, InputVector, LtiModel};
use crate::numerics::{numerical_rank, solve_dare, spectral_radius, Matrix, Vector, RANK_TOL};

const KALMAN_TOL: f64 = 1e-10;
const KALMAN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub phi_t: Matrix,
    pub gamma_t: Matrix,
    pub c_t: Matrix,
    pub gamma_d: Matrix,
    pub c_d: Matrix,
    /// Plant state dimension `n`.
    pub n: usize,
    /// Disturbance dimension `n_d`.
    pub nd: usize,
}

impl AugmentedModel {
    pub fn dim(&self) -> usize {
        self.n + self.nd
    }

    pub fn output_dim(&self) -> usize {
        self.c_t.nrows()
    }

    /// Plant part of an augmented vector.
    pub fn plant_part(&self, xhat: &Vector) -> Vector {
        xhat.rows(0, self.n).into_owned()
    }

    pub fn disturbance_part(&self, xhat: &Vector) -> Vector {
        xhat.rows(self.n, self.nd).into_owned()
    }
}

/// Where the constant disturbance enters the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceModel {
    /// `d` shifts the discrete X-position update by `dt·d`. The pose output
    /// cannot tell this apart from a steady X velocity of `−d`, so the
    /// augmented pair is not detectable.
    PositionUpdate,
    /// `d` acts as an extra pitching moment, i.e. it enters through the `T_y`
    /// column of `Γ`. Its visible effect is a drift along X, and it keeps the
    /// augmented pair detectable.
    #[default]
    PitchMoment,
}

impl DisturbanceModel {
    /// `(Γ_d, C_d)` for a single scalar disturbance with `C_d = 0`.
    pub fn matrices(self, model: &LtiModel) -> (Matrix, Matrix) {
        let gamma_d = match self {
            DisturbanceModel::PositionUpdate => {
                let mut g = Matrix::zeros(model.state_dim(), 1);
                g[(idx::X, 0)] = model.dt;
                g
            }
            DisturbanceModel::PitchMoment => model.gamma.columns(idx::TY, 1).into_owned(),
        };
        (gamma_d, Matrix::zeros(model.output_dim(), 1))
    }

    /// Input offset equivalent to `d` when the disturbance is matched.
    pub fn input_offset(self, d: f64) -> Option<InputVector> {
        match self {
            DisturbanceModel::PositionUpdate => None,
            DisturbanceModel::PitchMoment => {
                let mut u = InputVector::zeros();
                u[idx::TY] = d;
                Some(u)
            }
        }
    }
}

pub fn augment(model: &LtiModel, gamma_d: &Matrix, c_d: &Matrix) -> Result<AugmentedModel> {
    let n = model.state_dim();
    let m = model.input_dim();
    let p = model.output_dim();
    let nd = gamma_d.ncols();
    ensure_dims(gamma_d.nrows() == n, || format!("Gamma_d must have {n} rows"))?;
    ensure_dims(c_d.shape() == (p, nd), || format!("C_d must be {p}x{nd}"))?;

    let mut phi_t = Matrix::zeros(n + nd, n + nd);
    phi_t.view_mut((0, 0), (n, n)).copy_from(&model.phi);
    phi_t.view_mut((0, n), (n, nd)).copy_from(gamma_d);
    phi_t.view_mut((n, n), (nd, nd)).fill_with_identity();

    let mut gamma_t = Matrix::zeros(n + nd, m);
    gamma_t.view_mut((0, 0), (n, m)).copy_from(&model.gamma);

    let mut c_t = Matrix::zeros(p, n + nd);
    c_t.view_mut((0, 0), (p, n)).copy_from(&model.c);
    c_t.view_mut((0, n), (p, nd)).copy_from(c_d);

    Ok(AugmentedModel { phi_t, gamma_t, c_t, gamma_d: gamma_d.clone(), c_d: c_d.clone(), n, nd })
}

/// Rank of `[[I − Φ, −Γ_d], [C, C_d]]`; offset-free estimation needs
/// `n + n_d`.
pub fn check_detectability(model: &LtiModel, gamma_d: &Matrix, c_d: &Matrix) -> Result<usize> {
    let n = model.state_dim();
    let nd = gamma_d.ncols();
    let p = model.output_dim();
    ensure_dims(gamma_d.nrows() == n && c_d.shape() == (p, nd), || "disturbance model dimensions".into())?;
    let mut t = Matrix::zeros(n + p, n + nd);
    t.view_mut((0, 0), (n, n)).copy_from(&(Matrix::identity(n, n) - &model.phi));
    t.view_mut((0, n), (n, nd)).copy_from(&(-gamma_d));
    t.view_mut((n, 0), (p, n)).copy_from(&model.c);
    t.view_mut((n, n), (p, nd)).copy_from(c_d);
    Ok(numerical_rank(&t, RANK_TOL))
}

/// Steady-state predictor gain `L = Φ̃ Σ C̃ᵀ (C̃ Σ C̃ᵀ + R_K)⁻¹`, with `Σ` the
/// stabilizing solution of the filter Riccati equation.
pub fn kalman_gain(aug: &AugmentedModel, q_k: &Matrix, r_k: &Matrix) -> Result<Matrix> {
    let sol = solve_dare(&aug.phi_t.transpose(), &aug.c_t.transpose(), q_k, r_k, KALMAN_TOL, KALMAN_MAX_ITER)
        .map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!("augmented system is not detectable: {msg}")),
            other => other,
        })?;
    Ok(sol.k.transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub xhat: Vector,
    pub l: Matrix,
}

impl ObserverState {
    /// Checks dimensions and that the error dynamics `Φ̃ − L C̃` are stable.
    pub fn new(aug: &AugmentedModel, xhat: Vector, l: Matrix) -> Result<Self> {
        ensure_dims(xhat.len() == aug.dim(), || format!("xhat must have {} entries", aug.dim()))?;
        ensure_dims(l.shape() == (aug.dim(), aug.output_dim()), || "observer gain has wrong shape".into())?;
        let rho = spectral_radius(&(&aug.phi_t - &l * &aug.c_t))?;
        if rho >= 1.0 {
            return Err(Error::Domain(format!("observer error dynamics unstable (spectral radius {rho})")));
        }
        Ok(Self { xhat, l })
    }

    pub fn error_dynamics_radius(&self, aug: &AugmentedModel) -> Result<f64> {
        spectral_radius(&(&aug.phi_t - &self.l * &aug.c_t))
    }
}

/// `x̂⁺ = Φ̃x̂ + Γ̃u + L(y − C̃x̂)`.
pub fn observer_step(obs: &ObserverState, aug: &AugmentedModel, u: &Vector, y: &Vector) -> ObserverState {
    let innovation = y - &aug.c_t * &obs.xhat;
    let xhat = &aug.phi_t * &obs.xhat + &aug.gamma_t * u + &obs.l * innovation;
    ObserverState { xhat, l: obs.l.clone() }
}
