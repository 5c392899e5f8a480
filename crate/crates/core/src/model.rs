//! Quadrotor rigid-body model, hover linearization and discretization.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use crate::numerics::{expm, Matrix, Vector};

pub const STATE_DIM: usize = 12;
pub const INPUT_DIM: usize = 4;

/// Canonical state ordering.
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const Z: usize = 2;
    pub const PHI: usize = 3;
    pub const THETA: usize = 4;
    pub const PSI: usize = 5;
    pub const DX: usize = 6;
    pub const DY: usize = 7;
    pub const DZ: usize = 8;
    pub const DPHI: usize = 9;
    pub const DTHETA: usize = 10;
    pub const DPSI: usize = 11;

    pub const F: usize = 0;
    pub const TX: usize = 1;
    pub const TY: usize = 2;
    pub const TZ: usize = 3;
}

pub const STATE_NAMES: [&str; STATE_DIM] = [
    "X", "Y", "Z", "phi", "theta", "psi", "dX", "dY", "dZ", "dphi", "dtheta", "dpsi",
];
pub const INPUT_NAMES: [&str; INPUT_DIM] = ["F", "Tx", "Ty", "Tz"];

/// `(X, Y, Z, φ, θ, ψ, Ẋ, Ẏ, Ż, φ̇, θ̇, ψ̇)`.
pub type StateVector = SVector<f64, STATE_DIM>;
/// `(F, T_x, T_y, T_z)`, with `F` measured as deviation from hover thrust.
pub type InputVector = SVector<f64, INPUT_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadrotorParams {
    /// Mass, kg.
    pub m: f64,
    /// Gravitational acceleration, m/s².
    pub g: f64,
    /// Arm length, m.
    pub l: f64,
    pub ix: f64,
    pub iy: f64,
    pub iz: f64,
    /// Sampling interval, s.
    pub dt: f64,
    /// RK4 substeps per sampling interval for the nonlinear plant.
    pub substeps: usize,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self { m: 1.0, g: 9.81, l: 0.2, ix: 0.11, iy: 0.11, iz: 0.04, dt: 0.1, substeps: 1 }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m", self.m),
            ("g", self.g),
            ("l", self.l),
            ("ix", self.ix),
            ("iy", self.iy),
            ("iz", self.iz),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("parameter {name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Domain("substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Thrust needed to hover, N.
    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g
    }
}

/// Continuous-time rigid-body dynamics `ẋ = f(x, u)`.
///
/// Euler-angle model with the Ÿ equation carrying `+ sin φ cos ψ`. The
/// total thrust is `u.F + m g`.
pub fn dynamics_continuous(x: &StateVector, u: &InputVector, p: &QuadrotorParams) -> StateVector {
    let (phi, theta, psi) = (x[idx::PHI], x[idx::THETA], x[idx::PSI]);
    let (dphi, dtheta, dpsi) = (x[idx::DPHI], x[idx::DTHETA], x[idx::DPSI]);
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (spsi, cpsi) = psi.sin_cos();
    let thrust = u[idx::F] + p.m * p.g;

    let mut dx = StateVector::zeros();
    for i in 0..6 {
        dx[i] = x[i + 6];
    }
    dx[idx::DX] = thrust * (cphi * sth * cpsi + sphi * spsi) / p.m;
    dx[idx::DY] = thrust * (cphi * sth * spsi + sphi * cpsi) / p.m;
    dx[idx::DZ] = thrust * cphi * cth / p.m - p.g;
    dx[idx::DPHI] = (u[idx::TX] * p.l + dtheta * dpsi * (p.iy - p.iz)) / p.ix;
    dx[idx::DTHETA] = (u[idx::TY] * p.l + dpsi * dphi * (p.iz - p.ix)) / p.iy;
    dx[idx::DPSI] = (u[idx::TZ] * p.l + dphi * dtheta * (p.ix - p.iy)) / p.iz;
    dx
}

/// Linear model in continuous and discrete (zero-order hold) form.
#[derive(Debug, Clone)]
pub struct LtiModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub phi: Matrix,
    pub gamma: Matrix,
    pub dt: f64,
}

impl LtiModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Builds the discrete part from `(A, B)` and attaches the output map.
    pub fn from_continuous(a: Matrix, b: Matrix, c: Matrix, d: Matrix, dt: f64) -> Result<Self> {
        ensure_dims(c.ncols() == a.nrows(), || "C columns must match state dimension".into())?;
        ensure_dims(d.shape() == (c.nrows(), b.ncols()), || "D must be p x m".into())?;
        let (phi, gamma) = discretize_zoh(&a, &b, dt)?;
        Ok(Self { a, b, c, d, phi, gamma, dt })
    }

    /// Same plant, different measured outputs.
    pub fn with_output(&self, c: Matrix) -> Result<Self> {
        ensure_dims(c.ncols() == self.state_dim(), || "C columns must match state dimension".into())?;
        let d = Matrix::zeros(c.nrows(), self.input_dim());
        Ok(Self { c, d, ..self.clone() })
    }

    /// Quadrotor linearized at hover with full-state output.
    pub fn quadrotor(p: &QuadrotorParams) -> Result<Self> {
        p.validate()?;
        let (a, b) = linearize(p);
        Self::from_continuous(
            a,
            b,
            Matrix::identity(STATE_DIM, STATE_DIM),
            Matrix::zeros(STATE_DIM, INPUT_DIM),
            p.dt,
        )
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.phi * x + &self.gamma * u
    }
}

/// Selector for the measured pose `(X, Y, Z, φ, θ, ψ)`.
pub fn pose_output() -> Matrix {
    let mut c = Matrix::zeros(6, STATE_DIM);
    for i in 0..6 {
        c[(i, i)] = 1.0;
    }
    c
}

/// Analytic Jacobians of [`dynamics_continuous`] at hover, `(A, B)`.
pub fn linearize(p: &QuadrotorParams) -> (Matrix, Matrix) {
    let mut a = Matrix::zeros(STATE_DIM, STATE_DIM);
    for i in 0..6 {
        a[(i, i + 6)] = 1.0;
    }
    a[(idx::DX, idx::THETA)] = p.g;
    a[(idx::DY, idx::PHI)] = p.g;

    let mut b = Matrix::zeros(STATE_DIM, INPUT_DIM);
    b[(idx::DZ, idx::F)] = 1.0 / p.m;
    b[(idx::DPHI, idx::TX)] = p.l / p.ix;
    b[(idx::DTHETA, idx::TY)] = p.l / p.iy;
    b[(idx::DPSI, idx::TZ)] = p.l / p.iz;
    (a, b)
}

/// Exact zero-order-hold discretization via the exponential of
/// `[[A, B], [0, 0]] dt`.
pub fn discretize_zoh(a: &Matrix, b: &Matrix, dt: f64) -> Result<(Matrix, Matrix)> {
    ensure_dims(a.is_square(), || "A must be square".into())?;
    ensure_dims(b.nrows() == a.nrows(), || "B rows must match A".into())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let (n, m) = (a.nrows(), b.ncols());
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = expm(&aug)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

fn rk4(x: &StateVector, u: &InputVector, p: &QuadrotorParams, h: f64) -> StateVector {
    let k1 = dynamics_continuous(x, u, p);
    let k2 = dynamics_continuous(&(x + k1 * (h / 2.0)), u, p);
    let k3 = dynamics_continuous(&(x + k2 * (h / 2.0)), u, p);
    let k4 = dynamics_continuous(&(x + k3 * h), u, p);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One sampling interval of the nonlinear plant (classical RK4).
pub fn step_nonlinear(x: &StateVector, u: &InputVector, p: &QuadrotorParams) -> StateVector {
    let h = p.dt / p.substeps as f64;
    (0..p.substeps).fold(*x, |x, _| rk4(&x, u, p, h))
}

pub fn state_from_slice(v: &[f64]) -> Result<StateVector> {
    ensure_dims(v.len() == STATE_DIM, || format!("state must have {STATE_DIM} entries, got {}", v.len()))?;
    Ok(StateVector::from_column_slice(v))
}

pub fn input_from_slice(v: &[f64]) -> Result<InputVector> {
    ensure_dims(v.len() == INPUT_DIM, || format!("input must have {INPUT_DIM} entries, got {}", v.len()))?;
    Ok(InputVector::from_column_slice(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs, spectral_radius};
    use std::f64::consts::PI;

    #[test]
    fn hover_is_equilibrium() {
        let p = QuadrotorParams::default();
        let dx = dynamics_continuous(&StateVector::zeros(), &InputVector::zeros(), &p);
        assert!(dx.iter().all(|v| *v == 0.0));
        assert_eq!(step_nonlinear(&StateVector::zeros(), &InputVector::zeros(), &p), StateVector::zeros());
    }

    #[test]
    fn free_fall_and_tilt() {
        let p = QuadrotorParams::default();
        let u = InputVector::new(-p.m * p.g, 0.0, 0.0, 0.0);
        let dx = dynamics_continuous(&StateVector::zeros(), &u, &p);
        assert_eq!(dx[idx::DZ], -p.g);
        assert_eq!(dx.iter().filter(|v| **v != 0.0).count(), 1);

        let mut x = StateVector::zeros();
        x[idx::THETA] = PI / 6.0;
        let dx = dynamics_continuous(&x, &InputVector::zeros(), &p);
        assert!((dx[idx::DX] - p.g / 2.0).abs() < 1e-15);
        assert!((dx[idx::DZ] - p.g * ((PI / 6.0).cos() - 1.0)).abs() < 1e-15);

        let x1 = step_nonlinear(&StateVector::zeros(), &u, &p);
        assert!((x1[idx::Z] + 0.5 * p.g * p.dt * p.dt).abs() < 1e-15);
        assert!((x1[idx::Z] + 0.04905).abs() < 1e-15);
    }

    #[test]
    fn jacobian_entries() {
        let p = QuadrotorParams::default();
        let (a, b) = linearize(&p);
        assert_eq!(a[(idx::DX, idx::THETA)], p.g);
        assert_eq!(a[(idx::DY, idx::PHI)], p.g);
        assert!((b[(idx::DPHI, idx::TX)] - 0.2 / 0.11).abs() < 1e-15);
        assert!((b[(idx::DPHI, idx::TX)] - 1.8182).abs() < 1e-4);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let p = QuadrotorParams::default();
        let (a, b) = linearize(&p);
        let h = 1e-6;
        let x0 = StateVector::zeros();
        let u0 = InputVector::zeros();
        for j in 0..STATE_DIM {
            let mut e = StateVector::zeros();
            e[j] = h;
            let col = (dynamics_continuous(&(x0 + e), &u0, &p) - dynamics_continuous(&(x0 - e), &u0, &p)) / (2.0 * h);
            for i in 0..STATE_DIM {
                assert!((col[i] - a[(i, j)]).abs() < 1e-6, "A[{i},{j}]");
            }
        }
        for j in 0..INPUT_DIM {
            let mut e = InputVector::zeros();
            e[j] = h;
            let col = (dynamics_continuous(&x0, &(u0 + e), &p) - dynamics_continuous(&x0, &(u0 - e), &p)) / (2.0 * h);
            for i in 0..STATE_DIM {
                assert!((col[i] - b[(i, j)]).abs() < 1e-6, "B[{i},{j}]");
            }
        }
    }

    #[test]
    fn linearization_error_is_second_order() {
        use rand::{Rng, SeedableRng};
        let p = QuadrotorParams::default();
        let (a, b) = linearize(&p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v = StateVector::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let w = InputVector::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let err = |eps: f64| {
                let f = dynamics_continuous(&(v * eps), &(w * eps), &p);
                let lin = &a * Vector::from_column_slice((v * eps).as_slice())
                    + &b * Vector::from_column_slice((w * eps).as_slice());
                (Vector::from_column_slice(f.as_slice()) - lin).norm()
            };
            let (e3, e4) = (err(1e-3), err(1e-4));
            // Quadratic remainder: shrinking eps by 10 shrinks the error by ~100.
            assert!(e4 <= e3 / 50.0 + 1e-14, "{e3:e} -> {e4:e}");
        }
    }

    #[test]
    fn zoh_closed_forms() {
        let (phi, gamma) = discretize_zoh(&Matrix::zeros(2, 2), &Matrix::identity(2, 2), 0.1).unwrap();
        assert!(max_abs(&(phi - Matrix::identity(2, 2))) < 1e-15);
        assert!(max_abs(&(gamma - Matrix::identity(2, 2) * 0.1)) < 1e-15);

        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (phi, gamma) = discretize_zoh(&a, &b, 0.1).unwrap();
        assert!(max_abs(&(phi - Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]))) < 1e-12);
        assert!(max_abs(&(gamma - Matrix::from_column_slice(2, 1, &[0.005, 0.1]))) < 1e-12);

        assert!(matches!(discretize_zoh(&a, &Matrix::zeros(3, 1), 0.1), Err(Error::Dimension(_))));
        assert!(matches!(discretize_zoh(&a, &b, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn quadrotor_phi_has_unit_spectral_radius() {
        let m = LtiModel::quadrotor(&QuadrotorParams::default()).unwrap();
        assert!((spectral_radius(&m.phi).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rk4_matches_fine_euler() {
        let p = QuadrotorParams::default();
        let mut x = StateVector::zeros();
        x[idx::PHI] = 0.1;
        let u = InputVector::zeros();
        let mut rk = x;
        for _ in 0..10 {
            rk = step_nonlinear(&rk, &u, &p);
        }
        // Fine explicit Euler, h = 1e-5, then Richardson-extrapolated with h = 2e-5
        // to cancel the first-order error term.
        let euler = |h: f64| {
            let steps = (1.0 / h).round() as usize;
            (0..steps).fold(x, |s, _| s + dynamics_continuous(&s, &u, &p) * h)
        };
        let reference = euler(1e-5) * 2.0 - euler(2e-5);
        assert!((rk - reference).amax() < 1e-5, "{:e}", (rk - reference).amax());
    }

    #[test]
    fn yaw_rotation_maps_roll_free_trajectories() {
        // Family with φ ≡ 0 (no roll torque, no initial roll or yaw rate); on it
        // the translational dynamics rotate rigidly with ψ.
        let p = QuadrotorParams::default();
        let psi0 = 0.83_f64;
        let mut x = StateVector::zeros();
        x[idx::X] = 1.0;
        x[idx::Y] = -2.0;
        x[idx::THETA] = 0.3;
        x[idx::DX] = 0.4;
        x[idx::DY] = 0.1;
        x[idx::DTHETA] = -0.2;
        x[idx::PSI] = 0.2;
        let rotate = |s: &StateVector| {
            let (sn, cs) = psi0.sin_cos();
            let mut r = *s;
            r[idx::X] = cs * s[idx::X] - sn * s[idx::Y];
            r[idx::Y] = sn * s[idx::X] + cs * s[idx::Y];
            r[idx::DX] = cs * s[idx::DX] - sn * s[idx::DY];
            r[idx::DY] = sn * s[idx::DX] + cs * s[idx::DY];
            r[idx::PSI] = s[idx::PSI] + psi0;
            r
        };
        let u = InputVector::new(0.5, 0.0, 0.05, 0.0);
        let (mut a, mut b) = (x, rotate(&x));
        for _ in 0..30 {
            a = step_nonlinear(&a, &u, &p);
            b = step_nonlinear(&b, &u, &p);
        }
        assert!((rotate(&a) - b).amax() < 1e-8);
    }
}
