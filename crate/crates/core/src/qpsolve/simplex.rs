//! Dense two-phase simplex for `opt cᵀx s.t. Gx ≤ h` with free `x`.
//!
//! The method runs on the dual standard form `min hᵀy s.t. Gᵀy = -c, y ≥ 0`
//! (written for the minimization sense). The primal point is recovered as the
//! simplex multipliers of the optimal basis.

use std::time::Instant;

use super::{Certificate, LpSense, QpProblem, QpSolution, QpStatus};
use crate::error::{ensure_dims, Error, Result};
use crate::numerics::{Matrix, Vector};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const PHASE1_TOL: f64 = 1e-9;
const DEGENERATE_SWITCH: usize = 50;
const MAX_PIVOTS: usize = 100_000;

struct Tableau {
    rows: usize,
    cols: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
}

enum PhaseOutcome {
    Optimal,
    Unbounded(usize),
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= f * self.t[r * w + j];
                }
                self.t[i * w + c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64], allowed: usize) -> Vec<f64> {
        let mut d: Vec<f64> = cost[..allowed].to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.at(i, j);
                }
            }
        }
        d
    }

    /// Minimizes `costᵀv` over the columns `0..allowed`.
    fn run(&mut self, cost: &[f64], allowed: usize, pivots: &mut usize) -> Result<PhaseOutcome> {
        let mut degenerate = 0usize;
        loop {
            if *pivots >= MAX_PIVOTS {
                return Err(Error::Convergence { iterations: *pivots, residual: f64::NAN });
            }
            let d = self.reduced_costs(cost, allowed);
            let bland = degenerate >= DEGENERATE_SWITCH;
            let entering = if bland {
                (0..allowed).find(|&j| d[j] < -COST_TOL)
            } else {
                (0..allowed)
                    .filter(|&j| d[j] < -COST_TOL)
                    .min_by(|&a, &b| d[a].total_cmp(&d[b]))
            };
            let Some(c) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(PhaseOutcome::Unbounded(c));
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
            *pivots += 1;
        }
    }
}

/// Solves `opt cᵀx s.t. Gx ≤ h`.
///
/// Multipliers follow the minimization convention: with `c' = c` for
/// [`LpSense::Minimize`] and `c' = -c` for [`LpSense::Maximize`], an optimal
/// pair satisfies `c' + Gᵀy = 0`, `y ≥ 0`. The reported objective is `cᵀx`.
/// Infeasible and unbounded problems carry a [`Certificate`] for the
/// minimization form.
pub fn solve_lp(c: &Vector, g: &Matrix, h: &Vector, sense: LpSense) -> Result<QpSolution> {
    let start = Instant::now();
    let n = c.len();
    let m = g.nrows();
    ensure_dims(g.ncols() == n, || format!("G must have {n} columns, got {}", g.ncols()))?;
    ensure_dims(h.len() == m, || format!("h must have {m} entries, got {}", h.len()))?;
    let cmin = match sense {
        LpSense::Minimize => c.clone(),
        LpSense::Maximize => -c,
    };
    let problem = QpProblem::lp(&cmin, g, h)?;

    let norms: Vec<f64> = (0..m).map(|j| g.row(j).amax()).collect();
    for j in 0..m {
        if norms[j] == 0.0 && h[j] < 0.0 {
            let mut y = Vector::zeros(m);
            y[j] = 1.0;
            let cert = Certificate::PrimalInfeasible { y_eq: Vector::zeros(0), y_in: y };
            return Ok(report(&problem, c, QpStatus::Infeasible, Vector::zeros(n), Vector::zeros(m), 0, start, Some(cert)));
        }
    }
    let kept: Vec<usize> = (0..m).filter(|&j| norms[j] > 0.0).collect();

    match dual_simplex(g, h, &cmin, &kept, &norms)? {
        DualResult::Optimal { x, y, pivots } => {
            Ok(report(&problem, c, QpStatus::Optimal, x, y, pivots, start, None))
        }
        DualResult::DualUnbounded { ray, pivots } => {
            let scale = ray.amax();
            let cert = Certificate::PrimalInfeasible { y_eq: Vector::zeros(0), y_in: ray / scale };
            Ok(report(&problem, c, QpStatus::Infeasible, Vector::zeros(n), Vector::zeros(m), pivots, start, Some(cert)))
        }
        DualResult::DualInfeasible { farkas, pivots } => {
            // The primal is either unbounded or infeasible; a zero objective
            // separates the two cases.
            match dual_simplex(g, h, &Vector::zeros(n), &kept, &norms)? {
                DualResult::DualUnbounded { ray, pivots: p2 } => {
                    let scale = ray.amax();
                    let cert = Certificate::PrimalInfeasible { y_eq: Vector::zeros(0), y_in: ray / scale };
                    Ok(report(&problem, c, QpStatus::Infeasible, Vector::zeros(n), Vector::zeros(m), pivots + p2, start, Some(cert)))
                }
                DualResult::Optimal { x, pivots: p2, .. } => {
                    let scale = farkas.amax();
                    let cert = Certificate::DualInfeasible { direction: farkas / scale };
                    Ok(report(&problem, c, QpStatus::Unbounded, x, Vector::zeros(m), pivots + p2, start, Some(cert)))
                }
                DualResult::DualInfeasible { .. } => Err(Error::Numeric("simplex phase 1 failed on a feasible system".into())),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    problem: &QpProblem,
    c: &Vector,
    status: QpStatus,
    z: Vector,
    y: Vector,
    iterations: usize,
    start: Instant,
    certificate: Option<Certificate>,
) -> QpSolution {
    let y_eq = Vector::zeros(0);
    QpSolution {
        status,
        objective: c.dot(&z),
        primal_residual: problem.primal_residual(&z),
        dual_residual: if status == QpStatus::Optimal { problem.dual_residual(&z, &y_eq, &y) } else { f64::NAN },
        z,
        y_eq,
        y_in: y,
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
        polished: false,
        certificate,
    }
}

enum DualResult {
    Optimal { x: Vector, y: Vector, pivots: usize },
    /// Ray of the dual feasible set along which `hᵀy → -∞`.
    DualUnbounded { ray: Vector, pivots: usize },
    /// Direction `d` with `Gd ≤ 0`, `cᵀd < 0`.
    DualInfeasible { farkas: Vector, pivots: usize },
}

fn dual_simplex(g: &Matrix, h: &Vector, cmin: &Vector, kept: &[usize], norms: &[f64]) -> Result<DualResult> {
    let n = cmin.len();
    let m = g.nrows();
    let k = kept.len();
    let cols = k + n;
    // Row i of the tableau is the i-th coordinate of Gᵀy = -c, sign-flipped so
    // the right-hand side is non-negative.
    let b: Vec<f64> = (0..n).map(|i| -cmin[i]).collect();
    let sign: Vec<f64> = b.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut tab = Tableau { rows: n, cols, t: vec![0.0; n * (cols + 1)], basis: (k..k + n).collect() };
    let w = cols + 1;
    for i in 0..n {
        for (jj, &j) in kept.iter().enumerate() {
            tab.t[i * w + jj] = sign[i] * g[(j, i)] / norms[j];
        }
        tab.t[i * w + k + i] = 1.0;
        tab.t[i * w + cols] = sign[i] * b[i];
    }
    let mut pivots = 0;

    let mut cost1 = vec![0.0; cols];
    cost1[k..].iter_mut().for_each(|v| *v = 1.0);
    tab.run(&cost1, cols, &mut pivots)?;
    let infeas: f64 = (0..n).filter(|&i| tab.basis[i] >= k).map(|i| tab.rhs(i)).sum();
    if infeas > PHASE1_TOL * (1.0 + b.iter().fold(0.0_f64, |a, v| a.max(v.abs()))) {
        let pi = multipliers(&tab, g, kept, norms, &sign, &cost1, k, n)?;
        return Ok(DualResult::DualInfeasible { farkas: pi, pivots });
    }

    // Drive remaining artificials out of the basis where possible; rows where
    // that fails are redundant and keep their artificial at zero.
    for i in 0..n {
        if tab.basis[i] >= k {
            if let Some(j) = (0..k).max_by(|&a, &b| tab.at(i, a).abs().total_cmp(&tab.at(i, b).abs())) {
                if tab.at(i, j).abs() > PIVOT_TOL {
                    tab.pivot(i, j);
                    pivots += 1;
                }
            }
        }
    }

    let mut cost2 = vec![0.0; cols];
    for (jj, &j) in kept.iter().enumerate() {
        cost2[jj] = h[j] / norms[j];
    }
    match tab.run(&cost2, k, &mut pivots)? {
        PhaseOutcome::Unbounded(c) => {
            let mut ray = Vector::zeros(m);
            ray[kept[c]] = 1.0 / norms[kept[c]];
            for i in 0..n {
                let bi = tab.basis[i];
                if bi < k {
                    ray[kept[bi]] -= tab.at(i, c) / norms[kept[bi]];
                }
            }
            ray.iter_mut().for_each(|v| *v = v.max(0.0));
            Ok(DualResult::DualUnbounded { ray, pivots })
        }
        PhaseOutcome::Optimal => {
            let x = multipliers(&tab, g, kept, norms, &sign, &cost2, k, n)?;
            let y = basic_solution(&tab, g, cmin, kept, norms, &sign, k, n)?;
            Ok(DualResult::Optimal { x, y, pivots })
        }
    }
}

/// Basis matrix in scaled, sign-flipped coordinates.
fn basis_matrix(tab: &Tableau, g: &Matrix, kept: &[usize], norms: &[f64], sign: &[f64], k: usize, n: usize) -> Matrix {
    let mut bm = Matrix::zeros(n, n);
    for (col, &bj) in tab.basis.iter().enumerate() {
        if bj < k {
            let j = kept[bj];
            for i in 0..n {
                bm[(i, col)] = sign[i] * g[(j, i)] / norms[j];
            }
        } else {
            bm[(bj - k, col)] = 1.0;
        }
    }
    bm
}

/// Simplex multipliers `π` with `Bᵀπ = c_B`, mapped back to unflipped rows.
#[allow(clippy::too_many_arguments)]
fn multipliers(tab: &Tableau, g: &Matrix, kept: &[usize], norms: &[f64], sign: &[f64], cost: &[f64], k: usize, n: usize) -> Result<Vector> {
    let bm = basis_matrix(tab, g, kept, norms, sign, k, n);
    let cb = Vector::from_iterator(n, tab.basis.iter().map(|&b| cost[b]));
    let pi = bm
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or_else(|| Error::Numeric("singular simplex basis".into()))?;
    Ok(Vector::from_iterator(n, (0..n).map(|i| sign[i] * pi[i])))
}

/// Basic dual solution `y` in original (unscaled) row coordinates.
#[allow(clippy::too_many_arguments)]
fn basic_solution(tab: &Tableau, g: &Matrix, cmin: &Vector, kept: &[usize], norms: &[f64], sign: &[f64], k: usize, n: usize) -> Result<Vector> {
    let bm = basis_matrix(tab, g, kept, norms, sign, k, n);
    let rhs = Vector::from_iterator(n, (0..n).map(|i| -sign[i] * cmin[i]));
    let yb = bm.lu().solve(&rhs).ok_or_else(|| Error::Numeric("singular simplex basis".into()))?;
    let mut y = Vector::zeros(g.nrows());
    for (col, &bj) in tab.basis.iter().enumerate() {
        if bj < k {
            let j = kept[bj];
            y[j] = yb[col].max(0.0) / norms[j];
        }
    }
    Ok(y)
}
