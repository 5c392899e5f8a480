mod common;

use quadmpc::model::{
    discretize_zoh, dynamics_continuous, linearize, step_nonlinear, InputVector, LtiModel, QuadrotorParams, StateVector,
};
use quadmpc::numerics::Matrix;
use quadmpc::Vector;

#[test]
fn hover_is_an_exact_equilibrium() {
    let p = QuadrotorParams::default();
    let f = dynamics_continuous(&StateVector::zeros(), &InputVector::zeros(), &p);
    assert_eq!(f.amax(), 0.0);
    assert_eq!(step_nonlinear(&StateVector::zeros(), &InputVector::zeros(), &p).amax(), 0.0);
}

#[test]
fn analytic_jacobians_match_central_differences() {
    let p = QuadrotorParams::default();
    let (a, b) = linearize(&p);
    let (a_fd, b_fd) = common::fd_jacobians(&p, 1e-5);
    assert!((a - a_fd).amax() < 1e-6);
    assert!((b - b_fd).amax() < 1e-6);
}

#[test]
fn quadrotor_zoh_matches_quadrature() {
    let p = QuadrotorParams::default();
    let m = LtiModel::quadrotor(&p).unwrap();
    let gamma = common::zoh_gamma_quadrature(&m.a, &m.b, p.dt, 200);
    assert!((&m.gamma - gamma).amax() < 1e-9);
    assert!((&m.phi - common::exp_series(&m.a, p.dt)).amax() < 1e-12);
}

#[test]
fn double_integrator_zoh_closed_form() {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
    for dt in [0.01, 0.1, 0.5, 2.0] {
        let (phi, gamma) = discretize_zoh(&a, &b, dt).unwrap();
        assert!((phi - Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0])).amax() < 1e-12);
        assert!((gamma - Matrix::from_row_slice(2, 1, &[dt * dt / 2.0, dt])).amax() < 1e-12);
    }
}

#[test]
fn nonlinear_and_linear_steps_agree_to_second_order() {
    let p = QuadrotorParams::default();
    let m = LtiModel::quadrotor(&p).unwrap();
    let dir_x = StateVector::from_column_slice(&[0.3, -0.2, 0.1, 0.2, -0.1, 0.4, 0.5, 0.1, -0.3, 0.2, 0.1, -0.2]);
    let dir_u = InputVector::from_column_slice(&[1.0, 0.2, -0.1, 0.01]);
    let gap = |eps: f64| {
        let x = dir_x * eps;
        let u = dir_u * eps;
        let lin = m.step(&Vector::from_column_slice(x.as_slice()), &Vector::from_column_slice(u.as_slice()));
        let nl = step_nonlinear(&x, &u, &p);
        (Vector::from_column_slice(nl.as_slice()) - lin).amax()
    };
    let (g1, g2) = (gap(1e-2), gap(5e-3));
    assert!(g1 < 1e-3);
    let ratio = g1 / g2;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}
