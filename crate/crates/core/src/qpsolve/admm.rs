use std::time::Instant;

use sprs::{CsMat, TriMat};

use super::sparse::{factor, inf_norm, Factor};
use super::{Certificate, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::error::{ensure_dims, Error, Result};
use crate::numerics::Vector;

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
/// Relative residual below which polishing is attempted.
const POLISH_GATE: f64 = 1e-2;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE_STEPS: usize = 10;
/// Checks between step-size adaptations.
const ADAPT_EVERY_CHECKS: usize = 5;

/// Plain CSR storage used in the iteration hot loop.
#[derive(Debug, Clone)]
struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    fn from_sprs(m: &CsMat<f64>) -> Self {
        let m = m.to_csr();
        let mut indptr = Vec::with_capacity(m.rows() + 1);
        let mut indices = Vec::with_capacity(m.nnz());
        let mut data = Vec::with_capacity(m.nnz());
        indptr.push(0);
        for row in m.outer_iterator() {
            for (j, v) in row.iter() {
                indices.push(j);
                data.push(*v);
            }
            indptr.push(indices.len());
        }
        Self { rows: m.rows(), cols: m.cols(), indptr, indices, data }
    }

    /// Vertical concatenation.
    fn stack(top: &Csr, bottom: &Csr) -> Self {
        debug_assert_eq!(top.cols, bottom.cols);
        let mut out = top.clone();
        let offset = top.indices.len();
        out.indptr.extend(bottom.indptr[1..].iter().map(|p| p + offset));
        out.indices.extend_from_slice(&bottom.indices);
        out.data.extend_from_slice(&bottom.data);
        out.rows += bottom.rows;
        out
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e].iter().copied().zip(self.data[s..e].iter().copied())
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    fn mul_t(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &yi) in y.iter().enumerate().take(self.rows) {
            if yi != 0.0 {
                for (j, v) in self.row(i) {
                    out[j] += v * yi;
                }
            }
        }
    }

    /// `M ← diag(r) M diag(c)`.
    fn scale(&mut self, r: &[f64], c: &[f64]) {
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                self.data[k] *= r[i] * c[self.indices[k]];
            }
        }
    }

    fn col_inf_norms(&self, out: &mut [f64]) {
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out[j] = out[j].max(v.abs());
            }
        }
    }

    fn row_inf_norm(&self, i: usize) -> f64 {
        self.row(i).fold(0.0, |acc, (_, v)| acc.max(v.abs()))
    }
}

/// Fixed sparsity pattern of `P + σI + Aᵀ diag(ρ) A`, refilled when ρ changes.
#[derive(Debug, Clone)]
struct ReducedPattern {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl ReducedPattern {
    fn new(p: &Csr, a: &Csr) -> Self {
        let n = p.cols;
        let mut tri = TriMat::new((n, n));
        for i in 0..n {
            tri.add_triplet(i, i, 1.0);
        }
        for i in 0..p.rows {
            for (j, _) in p.row(i) {
                tri.add_triplet(i, j, 1.0);
            }
        }
        for r in 0..a.rows {
            for (j, _) in a.row(r) {
                for (k, _) in a.row(r) {
                    tri.add_triplet(j, k, 1.0);
                }
            }
        }
        let pattern: CsMat<f64> = tri.to_csr();
        let mut indptr = vec![0];
        let mut indices = Vec::with_capacity(pattern.nnz());
        for row in pattern.outer_iterator() {
            indices.extend(row.indices().iter().copied());
            indptr.push(indices.len());
        }
        Self { n, indptr, indices }
    }

    fn position(&self, i: usize, j: usize) -> usize {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        s + self.indices[s..e].binary_search(&j).expect("entry in pattern")
    }

    fn fill(&self, p: &Csr, a: &Csr, sigma: f64, rho: &[f64]) -> CsMat<f64> {
        let mut data = vec![0.0; self.indices.len()];
        for i in 0..self.n {
            data[self.position(i, i)] += sigma;
        }
        for i in 0..p.rows {
            for (j, v) in p.row(i) {
                data[self.position(i, j)] += v;
            }
        }
        for r in 0..a.rows {
            for (j, vj) in a.row(r) {
                let w = rho[r] * vj;
                for (k, vk) in a.row(r) {
                    data[self.position(j, k)] += w * vk;
                }
            }
        }
        CsMat::new((self.n, self.n), self.indptr.clone(), self.indices.clone(), data)
    }
}

/// ADMM solver workspace.
///
/// The factorization of the reduced system is cached, so repeated solves
/// with new vectors (see [`QpSolver::update_vectors`]) only pay for the
/// iterations.
pub struct QpSolver {
    settings: QpSettings,
    problem: QpProblem,
    n: usize,
    m_eq: usize,
    // Scaled data.
    p: Csr,
    a: Csr,
    q: Vec<f64>,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
    rho: f64,
    rho_vec: Vec<f64>,
    pattern: ReducedPattern,
    kkt: Factor,
    // Iterates (scaled).
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

impl QpSolver {
    pub fn new(problem: &QpProblem, settings: QpSettings) -> Result<Self> {
        let n = problem.num_vars();
        let m_eq = problem.num_eq();
        let mut p = Csr::from_sprs(problem.hessian());
        let mut a = Csr::stack(&Csr::from_sprs(problem.a_eq()), &Csr::from_sprs(problem.g_in()));
        let m = a.rows;
        let mut q = problem.linear().as_slice().to_vec();

        // Ruiz equilibration of [[P, Aᵀ], [A, 0]].
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut col = vec![0.0; n];
        for _ in 0..settings.scaling_iters {
            col.iter_mut().for_each(|v| *v = 0.0);
            p.col_inf_norms(&mut col);
            a.col_inf_norms(&mut col);
            let dd: Vec<f64> = col.iter().map(|&v| limit_scaling(v)).collect();
            let ee: Vec<f64> = (0..m).map(|i| limit_scaling(a.row_inf_norm(i))).collect();
            p.scale(&dd, &dd);
            a.scale(&ee, &dd);
            for j in 0..n {
                q[j] *= dd[j];
                d[j] *= dd[j];
            }
            for i in 0..m {
                e[i] *= ee[i];
            }
        }
        let mut c = 1.0;
        if settings.scaling_iters > 0 && n > 0 {
            col.iter_mut().for_each(|v| *v = 0.0);
            p.col_inf_norms(&mut col);
            let mean = col.iter().sum::<f64>() / n as f64;
            let scale = mean.max(inf_norm(&q));
            c = if scale < MIN_SCALING { 1.0 } else { 1.0 / scale.min(MAX_SCALING) };
            p.data.iter_mut().for_each(|v| *v *= c);
            q.iter_mut().for_each(|v| *v *= c);
        }

        let (l, u) = scaled_bounds(problem, &e);
        let rho = settings.rho;
        let rho_vec = rho_vector(&l, &u, rho);
        let pattern = ReducedPattern::new(&p, &a);
        let kkt = factor(&pattern.fill(&p, &a, settings.sigma, &rho_vec))
            .ok_or_else(|| Error::Numeric("ADMM system factorization failed".into()))?;
        Ok(Self {
            settings,
            problem: problem.clone(),
            n,
            m_eq,
            p,
            a,
            q,
            l,
            u,
            d,
            e,
            c,
            rho,
            rho_vec,
            pattern,
            kkt,
            x: vec![0.0; n],
            z: vec![0.0; m],
            y: vec![0.0; m],
        })
    }

    pub fn problem(&self) -> &QpProblem {
        &self.problem
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    /// Swaps in new `q`, `b_eq`, `h_in` while keeping matrices, scaling and
    /// factorization.
    pub fn update_vectors(&mut self, q: &Vector, b_eq: &Vector, h_in: &Vector) -> Result<()> {
        self.problem.set_vectors(q.clone(), b_eq.clone(), h_in.clone())?;
        for j in 0..self.n {
            self.q[j] = self.c * self.d[j] * q[j];
        }
        let (l, u) = scaled_bounds(&self.problem, &self.e);
        self.l = l;
        self.u = u;
        Ok(())
    }

    /// Sets the starting point of the next [`QpSolver::solve`] call (unscaled
    /// primal and dual values).
    pub fn warm_start(&mut self, z: &Vector, y_eq: &Vector, y_in: &Vector) -> Result<()> {
        ensure_dims(
            z.len() == self.n && y_eq.len() == self.m_eq && y_in.len() == self.problem.num_in(),
            || "warm start dimensions do not match the problem".into(),
        )?;
        for j in 0..self.n {
            self.x[j] = z[j] / self.d[j];
        }
        let mut ax = vec![0.0; self.a.rows];
        self.a.mul(&self.x, &mut ax);
        for i in 0..self.a.rows {
            self.z[i] = ax[i].clamp(self.l[i], self.u[i]);
            let yu = if i < self.m_eq { y_eq[i] } else { y_in[i - self.m_eq] };
            self.y[i] = self.c * yu / self.e[i];
        }
        Ok(())
    }

    pub fn cold_start(&mut self) {
        self.x.iter_mut().for_each(|v| *v = 0.0);
        self.z.iter_mut().for_each(|v| *v = 0.0);
        self.y.iter_mut().for_each(|v| *v = 0.0);
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        self.rho = rho;
        self.rho_vec = rho_vector(&self.l, &self.u, rho);
        let m = self.pattern.fill(&self.p, &self.a, self.settings.sigma, &self.rho_vec);
        if self.kkt.update(&m) {
            Ok(())
        } else {
            Err(Error::Numeric("ADMM refactorization failed".into()))
        }
    }

    fn unscaled_x(&self, x: &[f64]) -> Vector {
        Vector::from_iterator(self.n, x.iter().zip(&self.d).map(|(v, d)| v * d))
    }

    fn unscaled_y(&self, y: &[f64]) -> (Vector, Vector) {
        let yu: Vec<f64> = y.iter().zip(&self.e).map(|(v, e)| v * e / self.c).collect();
        (
            Vector::from_column_slice(&yu[..self.m_eq]),
            Vector::from_column_slice(&yu[self.m_eq..]),
        )
    }

    fn finish(&self, status: QpStatus, x: &[f64], y: &[f64], iterations: usize, start: Instant) -> QpSolution {
        let z = self.unscaled_x(x);
        let (y_eq, y_in) = self.unscaled_y(y);
        QpSolution {
            status,
            objective: self.problem.objective(&z),
            primal_residual: self.problem.primal_residual(&z),
            dual_residual: self.problem.dual_residual(&z, &y_eq, &y_in),
            z,
            y_eq,
            y_in,
            iterations,
            solve_time: start.elapsed().as_secs_f64(),
            polished: false,
            certificate: None,
        }
    }

    /// Runs ADMM from the current starting point (zero after construction or
    /// [`QpSolver::cold_start`], otherwise the last warm start or solution).
    pub fn solve(&mut self) -> QpSolution {
        let start = Instant::now();
        let s = self.settings;
        let (n, m) = (self.n, self.a.rows);
        if self.rho != s.rho {
            if let Err(e) = self.set_rho(s.rho) {
                return self.failure(start, e);
            }
        }

        let mut rhs = vec![0.0; n];
        let mut tmp_m = vec![0.0; m];
        let mut x_tilde;
        let mut z_tilde = vec![0.0; m];
        let mut x_prev = vec![0.0; n];
        let mut y_prev = vec![0.0; m];
        let mut last_active: Option<Vec<bool>> = None;
        let mut checks = 0usize;

        let mut iter = 0;
        while iter < s.max_iter {
            iter += 1;
            x_prev.copy_from_slice(&self.x);
            y_prev.copy_from_slice(&self.y);

            for i in 0..m {
                tmp_m[i] = self.rho_vec[i] * self.z[i] - self.y[i];
            }
            self.a.mul_t(&tmp_m, &mut rhs);
            for j in 0..n {
                rhs[j] += s.sigma * self.x[j] - self.q[j];
            }
            x_tilde = self.kkt.solve(&rhs);
            self.a.mul(&x_tilde, &mut z_tilde);
            for j in 0..n {
                self.x[j] = s.alpha * x_tilde[j] + (1.0 - s.alpha) * self.x[j];
            }
            for i in 0..m {
                let relaxed = s.alpha * z_tilde[i] + (1.0 - s.alpha) * self.z[i];
                let z_new = (relaxed + self.y[i] / self.rho_vec[i]).clamp(self.l[i], self.u[i]);
                self.y[i] += self.rho_vec[i] * (relaxed - z_new);
                self.z[i] = z_new;
            }

            if iter % s.check_every.max(1) != 0 && iter != s.max_iter {
                continue;
            }
            checks += 1;

            let z_u = self.unscaled_x(&self.x);
            let (ye, yi) = self.unscaled_y(&self.y);
            let prim = self.problem.primal_residual(&z_u);
            let dual = self.problem.dual_residual(&z_u, &ye, &yi);
            if prim <= s.eps_primal && dual <= s.eps_dual {
                let admm = self.finish(QpStatus::Optimal, &self.x.clone(), &self.y.clone(), iter, start);
                if s.polish {
                    if let Some(mut pol) = self.polish(iter, start) {
                        if pol.primal_residual <= admm.primal_residual.max(s.eps_primal)
                            && pol.dual_residual <= admm.dual_residual.max(s.eps_dual)
                        {
                            pol.solve_time = start.elapsed().as_secs_f64();
                            return pol;
                        }
                    }
                }
                return admm;
            }

            if let Some(cert) = self.primal_infeasibility(&y_prev) {
                let mut sol = self.finish(QpStatus::Infeasible, &self.x.clone(), &self.y.clone(), iter, start);
                sol.certificate = Some(cert);
                return sol;
            }
            if let Some(cert) = self.dual_infeasibility(&x_prev) {
                let mut sol = self.finish(QpStatus::Unbounded, &self.x.clone(), &self.y.clone(), iter, start);
                sol.certificate = Some(cert);
                return sol;
            }

            let (rp_rel, rd_rel, rp_norm, rd_norm) = self.scaled_residuals();
            if s.polish && rp_rel <= POLISH_GATE && rd_rel <= POLISH_GATE {
                let active = self.active_set();
                if last_active.as_ref() != Some(&active) {
                    if let Some(mut pol) = self.polish(iter, start) {
                        if pol.primal_residual <= s.eps_primal && pol.dual_residual <= s.eps_dual {
                            pol.solve_time = start.elapsed().as_secs_f64();
                            return pol;
                        }
                    }
                    last_active = Some(active);
                }
            }

            if s.adaptive_rho && checks.is_multiple_of(ADAPT_EVERY_CHECKS) && rd_norm > 0.0 && rp_norm > 0.0 {
                let proposal = (self.rho * (rp_norm / rd_norm).sqrt()).clamp(RHO_MIN, RHO_MAX);
                if proposal > 5.0 * self.rho || proposal < 0.2 * self.rho {
                    if let Err(e) = self.set_rho(proposal) {
                        return self.failure(start, e);
                    }
                }
            }
        }
        self.finish(QpStatus::MaxIter, &self.x.clone(), &self.y.clone(), iter, start)
    }

    fn failure(&self, start: Instant, _e: Error) -> QpSolution {
        self.finish(QpStatus::MaxIter, &self.x.clone(), &self.y.clone(), 0, start)
    }

    /// Relative primal and dual residuals of the scaled iteration, plus the
    /// normalized ratios used for step-size adaptation.
    fn scaled_residuals(&self) -> (f64, f64, f64, f64) {
        let (n, m) = (self.n, self.a.rows);
        let mut ax = vec![0.0; m];
        self.a.mul(&self.x, &mut ax);
        let mut px = vec![0.0; n];
        self.p.mul(&self.x, &mut px);
        let mut aty = vec![0.0; n];
        self.a.mul_t(&self.y, &mut aty);
        let rp = ax.iter().zip(&self.z).fold(0.0_f64, |acc, (a, z)| acc.max((a - z).abs()));
        let rd = (0..n).fold(0.0_f64, |acc, j| acc.max((px[j] + self.q[j] + aty[j]).abs()));
        let p_scale = inf_norm(&ax).max(inf_norm(&self.z));
        let d_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&self.q));
        let rp_norm = rp / p_scale.max(1e-12);
        let rd_norm = rd / d_scale.max(1e-12);
        (rp / p_scale.max(1.0), rd / d_scale.max(1.0), rp_norm, rd_norm)
    }

    /// Inequality rows currently predicted to be active.
    fn active_set(&self) -> Vec<bool> {
        (self.m_eq..self.a.rows).map(|i| self.z[i] + self.y[i] > self.u[i]).collect()
    }

    /// Solves the equality-constrained problem on the guessed active set.
    fn polish(&self, iterations: usize, start: Instant) -> Option<QpSolution> {
        let n = self.n;
        let active = self.active_set();
        let rows: Vec<usize> = (0..self.m_eq)
            .chain(active.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i + self.m_eq))
            .collect();
        let k = rows.len();
        let dim = n + k;

        let mut tri = TriMat::new((dim, dim));
        for i in 0..n {
            tri.add_triplet(i, i, POLISH_DELTA);
            for (j, v) in self.p.row(i) {
                tri.add_triplet(i, j, v);
            }
        }
        for (r, &row) in rows.iter().enumerate() {
            for (j, v) in self.a.row(row) {
                tri.add_triplet(n + r, j, v);
                tri.add_triplet(j, n + r, v);
            }
            tri.add_triplet(n + r, n + r, -POLISH_DELTA);
        }
        let kkt = factor(&tri.to_csr())?;

        let mut rhs = vec![0.0; dim];
        for j in 0..n {
            rhs[j] = -self.q[j];
        }
        for (r, &row) in rows.iter().enumerate() {
            rhs[n + r] = self.u[row];
        }
        let mut sol = kkt.solve(&rhs);
        // Iterative refinement against the unregularized system.
        let mut resid = vec![0.0; dim];
        for _ in 0..POLISH_REFINE_STEPS {
            let (xs, ys) = sol.split_at(n);
            let mut px = vec![0.0; n];
            self.p.mul(xs, &mut px);
            for j in 0..n {
                resid[j] = rhs[j] - px[j];
            }
            for (r, &row) in rows.iter().enumerate() {
                let yr = ys[r];
                let mut ax = 0.0;
                for (j, v) in self.a.row(row) {
                    resid[j] -= v * yr;
                    ax += v * xs[j];
                }
                resid[n + r] = rhs[n + r] - ax;
            }
            if inf_norm(&resid) < 1e-14 * (1.0 + inf_norm(&rhs)) {
                break;
            }
            let corr = kkt.solve(&resid);
            sol.iter_mut().zip(&corr).for_each(|(s, c)| *s += c);
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }

        let mut y = vec![0.0; self.a.rows];
        for (r, &row) in rows.iter().enumerate() {
            y[row] = if row < self.m_eq { sol[n + r] } else { sol[n + r].max(0.0) };
        }
        let mut out = self.finish(QpStatus::Optimal, &sol[..n], &y, iterations, start);
        out.polished = true;
        Some(out)
    }

    fn primal_infeasibility(&self, y_prev: &[f64]) -> Option<Certificate> {
        let m = self.a.rows;
        if m == 0 {
            return None;
        }
        let dy: Vec<f64> = (0..m).map(|i| (self.y[i] - y_prev[i]) * self.e[i]).collect();
        let norm = inf_norm(&dy);
        if norm < 1e-30 {
            return None;
        }
        let mut y_eq = Vector::from_iterator(self.m_eq, dy[..self.m_eq].iter().map(|v| v / norm));
        let mut y_in = Vector::from_iterator(m - self.m_eq, dy[self.m_eq..].iter().map(|v| v / norm));
        let eps = self.settings.eps_infeasible;
        if y_in.iter().any(|v| *v < -eps) {
            return None;
        }
        y_in.iter_mut().for_each(|v| *v = v.max(0.0));
        let scale = y_eq.amax().max(y_in.amax());
        y_eq /= scale;
        y_in /= scale;
        let cert = Certificate::PrimalInfeasible { y_eq, y_in };
        cert.verify(&self.problem, eps).then_some(cert)
    }

    fn dual_infeasibility(&self, x_prev: &[f64]) -> Option<Certificate> {
        let dx: Vec<f64> = (0..self.n).map(|j| (self.x[j] - x_prev[j]) * self.d[j]).collect();
        let norm = inf_norm(&dx);
        if norm < 1e-30 {
            return None;
        }
        let direction = Vector::from_iterator(self.n, dx.iter().map(|v| v / norm));
        let cert = Certificate::DualInfeasible { direction };
        cert.verify(&self.problem, self.settings.eps_infeasible).then_some(cert)
    }
}

fn limit_scaling(norm: f64) -> f64 {
    if norm < MIN_SCALING {
        1.0
    } else {
        1.0 / norm.min(MAX_SCALING).sqrt()
    }
}

fn scaled_bounds(problem: &QpProblem, e: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m_eq = problem.num_eq();
    let mut l = Vec::with_capacity(e.len());
    let mut u = Vec::with_capacity(e.len());
    for (i, b) in problem.b_eq().iter().enumerate() {
        l.push(b * e[i]);
        u.push(b * e[i]);
    }
    for (i, h) in problem.h_in().iter().enumerate() {
        l.push(f64::NEG_INFINITY);
        u.push(h * e[m_eq + i]);
    }
    (l, u)
}

fn rho_vector(l: &[f64], u: &[f64], rho: f64) -> Vec<f64> {
    l.iter()
        .zip(u)
        .map(|(lo, hi)| if lo == hi { RHO_EQ_FACTOR * rho } else { rho })
        .collect()
}
