//! Dense linear algebra used across the control stack.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dims, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative tolerance for [`numerical_rank`].
pub const RANK_TOL: f64 = 1e-9;

pub(crate) fn ensure_finite(m: &Matrix, name: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} contains non-finite entries")))
    }
}

fn ensure_square(m: &Matrix, name: &str) -> Result<()> {
    ensure_dims(m.is_square(), || {
        format!("{name} must be square, got {}x{}", m.nrows(), m.ncols())
    })
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Matrix exponential by scaling and squaring around a diagonal Padé(8,8)
/// approximant.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    ensure_square(m, "expm argument")?;
    ensure_finite(m, "expm argument")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    // Scale so that the 1-norm is below 0.5.
    let norm = m.column_iter().map(|c| c.abs().sum()).fold(0.0_f64, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m / 2f64.powi(squarings);

    const ORDER: usize = 8;
    let mut c = 1.0;
    let mut num = Matrix::identity(n, n);
    let mut den = Matrix::identity(n, n);
    let mut power = Matrix::identity(n, n);
    for k in 1..=ORDER {
        c *= (ORDER - k + 1) as f64 / (k * (2 * ORDER - k + 1)) as f64;
        power = &power * &a;
        num += &power * c;
        if k % 2 == 0 {
            den += &power * c;
        } else {
            den -= &power * c;
        }
    }
    let lu = den.lu();
    let mut e = lu
        .solve(&num)
        .ok_or_else(|| Error::Numeric("singular Pade denominator".into()))?;
    for _ in 0..squarings {
        e = &e * &e;
    }
    Ok(e)
}

/// Solution of the discrete algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct DareSolution {
    /// Cost-to-go matrix.
    pub p: Matrix,
    /// Feedback gain for the law `u = -K x`.
    pub k: Matrix,
    pub iterations: usize,
    /// Max-abs entry of `P - F(P)`, evaluated after the loop finished.
    pub residual: f64,
}

/// One application of the Riccati operator
/// `F(P) = Q + Aᵀ (P - P B (BᵀPB + R)⁻¹ BᵀP) A`.
pub fn riccati_operator(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let bt_p = b.transpose() * p;
    let s = &bt_p * b + r;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("B'PB + R is not positive definite".into()))?;
    let gain_rhs = &bt_p * a;
    let x = chol.solve(&gain_rhs);
    let next = q + a.transpose() * p * a - gain_rhs.transpose() * x;
    Ok(symmetrize(&next))
}

fn check_lqr_dims(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<()> {
    ensure_square(a, "A")?;
    let n = a.nrows();
    ensure_dims(b.nrows() == n, || format!("B has {} rows, expected {n}", b.nrows()))?;
    let m = b.ncols();
    ensure_dims(q.shape() == (n, n), || format!("Q must be {n}x{n}"))?;
    ensure_dims(r.shape() == (m, m), || format!("R must be {m}x{m}"))?;
    for (mat, name) in [(a, "A"), (b, "B"), (q, "Q"), (r, "R")] {
        ensure_finite(mat, name)?;
    }
    if m > 0 && symmetrize(r).cholesky().is_none() {
        return Err(Error::Domain("R must be positive definite".into()));
    }
    Ok(())
}

/// Gain `(BᵀPB + R)⁻¹ BᵀPA`.
pub fn lqr_gain_from_cost(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let bt_p = b.transpose() * p;
    let s = &bt_p * b + r;
    s.cholesky()
        .map(|c| c.solve(&(&bt_p * a)))
        .ok_or_else(|| Error::Numeric("B'PB + R is not positive definite".into()))
}

/// Fixed-point iteration of the Riccati operator, started from `P = Q`.
///
/// Fails with [`Error::Convergence`] when the step size stays above `tol`
/// for `max_iter` iterations, and with [`Error::Domain`] when the limit is
/// not a stabilizing solution.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, tol: f64, max_iter: usize) -> Result<DareSolution> {
    check_lqr_dims(a, b, q, r)?;
    let q = symmetrize(q);
    let r = symmetrize(r);
    let mut p = q.clone();
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = riccati_operator(a, b, &q, &r, &p)?;
        step = max_abs(&(&next - &p));
        p = next;
        iterations += 1;
        if !step.is_finite() {
            break;
        }
        if step <= tol {
            break;
        }
    }
    let residual = max_abs(&(&p - riccati_operator(a, b, &q, &r, &p)?));
    if !(step <= tol && residual <= tol) {
        return Err(Error::Convergence {
            iterations,
            residual: if residual.is_finite() { residual } else { step },
        });
    }
    let k = lqr_gain_from_cost(a, b, &r, &p)?;
    let min_eig = p.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-8 {
        return Err(Error::Domain(format!("DARE limit is indefinite (min eigenvalue {min_eig:e})")));
    }
    let rho = spectral_radius(&(a - b * &k))?;
    if rho >= 1.0 {
        return Err(Error::Domain(format!(
            "DARE limit does not stabilize (closed-loop spectral radius {rho})"
        )));
    }
    Ok(DareSolution { p, k, iterations, residual })
}

/// Time-varying LQR gains from backward dynamic programming.
#[derive(Debug, Clone)]
pub struct FiniteHorizonGains {
    /// `L_0 .. L_{T-1}`; the applied input is `u_t = L_t x_t`.
    pub gains: Vec<Matrix>,
    /// `K_0 .. K_T`, with `K_T = Q_T`.
    pub cost_to_go: Vec<Matrix>,
}

pub fn finite_horizon_gains(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    q_terminal: &Matrix,
    horizon: usize,
) -> Result<FiniteHorizonGains> {
    check_lqr_dims(a, b, q, r)?;
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let n = a.nrows();
    ensure_dims(q_terminal.shape() == (n, n), || format!("Q_T must be {n}x{n}"))?;
    let q = symmetrize(q);
    let r = symmetrize(r);

    let mut cost_to_go = vec![symmetrize(q_terminal)];
    let mut gains = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = cost_to_go.last().expect("non-empty");
        gains.push(-lqr_gain_from_cost(a, b, &r, next)?);
        let k = riccati_operator(a, b, &q, &r, next)?;
        cost_to_go.push(k);
    }
    gains.reverse();
    cost_to_go.reverse();
    Ok(FiniteHorizonGains { gains, cost_to_go })
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Largest eigenvalue magnitude.
///
/// Rows and columns that isolate an eigenvalue (zero off-diagonal row or
/// column) are peeled off first, as LAPACK's balancing does; the remaining
/// core goes through a real Schur decomposition. Peeling keeps the exact
/// unit eigenvalues of integrator chains exact.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    ensure_square(m, "spectral_radius argument")?;
    ensure_finite(m, "spectral_radius argument")?;
    let mut active: Vec<usize> = (0..m.nrows()).collect();
    let mut radius = 0.0_f64;
    loop {
        let isolated = active.iter().position(|&i| {
            let row_clear = active.iter().all(|&j| j == i || m[(i, j)] == 0.0);
            let col_clear = active.iter().all(|&j| j == i || m[(j, i)] == 0.0);
            row_clear || col_clear
        });
        match isolated {
            Some(pos) => {
                let i = active.remove(pos);
                radius = radius.max(m[(i, i)].abs());
            }
            None => break,
        }
    }
    if !active.is_empty() {
        let core = m.select_rows(active.iter()).select_columns(active.iter());
        let eig = nalgebra::linalg::Schur::try_new(core, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numeric("eigenvalue iteration did not converge".into()))?
            .complex_eigenvalues();
        radius = eig.iter().map(|z| z.norm()).fold(radius, f64::max);
    }
    Ok(radius)
}

/// Controllability matrix `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = Matrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    out
}
