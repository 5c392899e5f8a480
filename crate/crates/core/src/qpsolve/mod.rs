//! Convex QP and LP backend.
//!
//! Quadratic programs
//!
//! ```text
//! minimize   ½ zᵀHz + qᵀz
//! subject to A_eq z = b_eq,  G_in z ≤ h_in
//! ```
//!
//! are solved by an operator-splitting (ADMM) method with Ruiz scaling,
//! adaptive step size and active-set polishing ([`QpSolver`]). Linear
//! programs in inequality form go through a dense two-phase simplex on the
//! dual ([`solve_lp`]). Both report through [`QpSolution`].

mod admm;
mod simplex;
pub(crate) mod sparse;

pub use admm::QpSolver;
pub use simplex::solve_lp;

use sprs::{CsMat, TriMat};

use crate::error::{ensure_dims, Error, Result};
use crate::numerics::{Matrix, Vector};
use sparse::{csr_from_dense, matvec, matvec_t, symmetric_part};

/// Minimum eigenvalue accepted for the Hessian.
const PSD_SLACK: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct QpProblem {
    h: CsMat<f64>,
    q: Vector,
    a_eq: CsMat<f64>,
    b_eq: Vector,
    g_in: CsMat<f64>,
    h_in: Vector,
}

impl QpProblem {
    /// Builds a problem from sparse data. `h` is symmetrized and checked for
    /// positive semi-definiteness.
    pub fn new(
        h: CsMat<f64>,
        q: Vector,
        a_eq: CsMat<f64>,
        b_eq: Vector,
        g_in: CsMat<f64>,
        h_in: Vector,
    ) -> Result<Self> {
        let n = q.len();
        ensure_dims(h.rows() == n && h.cols() == n, || format!("H must be {n}x{n}, got {}x{}", h.rows(), h.cols()))?;
        ensure_dims(a_eq.cols() == n, || format!("A_eq must have {n} columns, got {}", a_eq.cols()))?;
        ensure_dims(a_eq.rows() == b_eq.len(), || "A_eq rows must match b_eq".into())?;
        ensure_dims(g_in.cols() == n, || format!("G_in must have {n} columns, got {}", g_in.cols()))?;
        ensure_dims(g_in.rows() == h_in.len(), || "G_in rows must match h_in".into())?;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(h.data()) && finite(a_eq.data()) && finite(g_in.data()) && finite(q.as_slice()) && finite(b_eq.as_slice()) && finite(h_in.as_slice())) {
            return Err(Error::Domain("QP data must be finite".into()));
        }
        let h = symmetric_part(&h);
        if n > 0 && !sparse::is_psd(&h, PSD_SLACK) {
            return Err(Error::Domain("H is not positive semi-definite".into()));
        }
        Ok(Self { h, q, a_eq: a_eq.to_csr(), b_eq, g_in: g_in.to_csr(), h_in })
    }

    pub fn from_dense(h: &Matrix, q: &Vector, a_eq: &Matrix, b_eq: &Vector, g_in: &Matrix, h_in: &Vector) -> Result<Self> {
        Self::new(
            csr_from_dense(h),
            q.clone(),
            csr_from_dense(a_eq),
            b_eq.clone(),
            csr_from_dense(g_in),
            h_in.clone(),
        )
    }

    /// Linear program `min cᵀz s.t. G z ≤ h` as a QP with zero Hessian.
    pub fn lp(c: &Vector, g: &Matrix, h: &Vector) -> Result<Self> {
        let n = c.len();
        Self::from_dense(&Matrix::zeros(n, n), c, &Matrix::zeros(0, n), &Vector::zeros(0), g, h)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }
    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }
    pub fn num_in(&self) -> usize {
        self.h_in.len()
    }
    pub fn hessian(&self) -> &CsMat<f64> {
        &self.h
    }
    pub fn linear(&self) -> &Vector {
        &self.q
    }
    pub fn a_eq(&self) -> &CsMat<f64> {
        &self.a_eq
    }
    pub fn b_eq(&self) -> &Vector {
        &self.b_eq
    }
    pub fn g_in(&self) -> &CsMat<f64> {
        &self.g_in
    }
    pub fn h_in(&self) -> &Vector {
        &self.h_in
    }

    /// Replaces the vectors while keeping the matrices.
    pub fn set_vectors(&mut self, q: Vector, b_eq: Vector, h_in: Vector) -> Result<()> {
        ensure_dims(
            q.len() == self.q.len() && b_eq.len() == self.b_eq.len() && h_in.len() == self.h_in.len(),
            || "vector update changes problem dimensions".into(),
        )?;
        self.q = q;
        self.b_eq = b_eq;
        self.h_in = h_in;
        Ok(())
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        let hz = matvec(&self.h, z.as_slice());
        0.5 * z.iter().zip(&hz).map(|(a, b)| a * b).sum::<f64>() + self.q.dot(z)
    }

    /// Worst equality or inequality violation.
    pub fn primal_residual(&self, z: &Vector) -> f64 {
        let eq = matvec(&self.a_eq, z.as_slice());
        let ineq = matvec(&self.g_in, z.as_slice());
        let r_eq = eq.iter().zip(self.b_eq.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let r_in = ineq.iter().zip(self.h_in.iter()).map(|(a, b)| (a - b).max(0.0)).fold(0.0, f64::max);
        r_eq.max(r_in)
    }

    /// Stationarity residual `‖Hz + q + A_eqᵀy_eq + G_inᵀy_in‖∞`.
    pub fn dual_residual(&self, z: &Vector, y_eq: &Vector, y_in: &Vector) -> f64 {
        let mut g = matvec(&self.h, z.as_slice());
        for (gi, qi) in g.iter_mut().zip(self.q.iter()) {
            *gi += qi;
        }
        let ae = matvec_t(&self.a_eq, y_eq.as_slice());
        let gi = matvec_t(&self.g_in, y_in.as_slice());
        g.iter().zip(&ae).zip(&gi).map(|((a, b), c)| (a + b + c).abs()).fold(0.0, f64::max)
    }
}

/// Builds a CSR matrix from `(row, col, value)` triplets, summing duplicates.
pub fn csr_from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> CsMat<f64> {
    let mut tri = TriMat::with_capacity((rows, cols), triplets.len());
    for &(r, c, v) in triplets {
        tri.add_triplet(r, c, v);
    }
    tri.to_csr()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::Unbounded => "unbounded",
            QpStatus::MaxIter => "max_iter",
        }
    }
}

/// Evidence attached to non-optimal terminations.
#[derive(Debug, Clone)]
pub enum Certificate {
    /// `y_in ≥ 0`, `A_eqᵀy_eq + G_inᵀy_in = 0` and `b_eqᵀy_eq + h_inᵀy_in < 0`.
    PrimalInfeasible { y_eq: Vector, y_in: Vector },
    /// Recession direction `d` with `Hd = 0`, `A_eq d = 0`, `G_in d ≤ 0`, `qᵀd < 0`.
    DualInfeasible { direction: Vector },
}

impl Certificate {
    /// Checks the defining relations for a certificate normalized to unit
    /// max-norm, each to within `tol`.
    pub fn verify(&self, p: &QpProblem, tol: f64) -> bool {
        match self {
            Certificate::PrimalInfeasible { y_eq, y_in } => {
                if y_eq.len() != p.num_eq() || y_in.len() != p.num_in() {
                    return false;
                }
                let scale = y_eq.amax().max(y_in.amax());
                if scale == 0.0 {
                    return false;
                }
                let ae = matvec_t(&p.a_eq, y_eq.as_slice());
                let gi = matvec_t(&p.g_in, y_in.as_slice());
                let stat = ae.iter().zip(&gi).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max) / scale;
                let gap = (p.b_eq.dot(y_eq) + p.h_in.dot(y_in)) / scale;
                y_in.iter().all(|v| *v >= -tol * scale) && stat <= tol && gap < -tol
            }
            Certificate::DualInfeasible { direction } => {
                let d = direction;
                if d.len() != p.num_vars() {
                    return false;
                }
                let scale = d.amax();
                if scale == 0.0 {
                    return false;
                }
                let hd = matvec(&p.h, d.as_slice());
                let ad = matvec(&p.a_eq, d.as_slice());
                let gd = matvec(&p.g_in, d.as_slice());
                hd.iter().all(|v| v.abs() <= tol * scale)
                    && ad.iter().all(|v| v.abs() <= tol * scale)
                    && gd.iter().all(|v| *v <= tol * scale)
                    && p.q.dot(d) < -tol * scale
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: Vector,
    /// Multipliers of the equality rows.
    pub y_eq: Vector,
    /// Multipliers of the inequality rows (non-negative).
    pub y_in: Vector,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Wall-clock time in seconds.
    pub solve_time: f64,
    /// True when the returned point came from the active-set polish step.
    pub polished: bool,
    pub certificate: Option<Certificate>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub eps_primal: f64,
    pub eps_dual: f64,
    /// Threshold for the normalized infeasibility tests.
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Residuals are evaluated every `check_every` iterations.
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_primal: 1e-6,
            eps_dual: 1e-6,
            eps_infeasible: 1e-7,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            polish: true,
            check_every: 10,
        }
    }
}

/// One-shot solve from a cold start.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    let mut solver = QpSolver::new(problem, *settings)?;
    Ok(solver.solve())
}

/// One-shot solve starting from a previous primal/dual point.
pub fn solve_warm(problem: &QpProblem, settings: &QpSettings, warm: &QpSolution) -> Result<QpSolution> {
    let mut solver = QpSolver::new(problem, *settings)?;
    solver.warm_start(&warm.z, &warm.y_eq, &warm.y_in)?;
    Ok(solver.solve())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpSense {
    Maximize,
    Minimize,
}

#[cfg(test)]
mod tests;
