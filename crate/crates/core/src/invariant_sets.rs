//! Polyhedra in half-space form and the maximal constraint-admissible
//! invariant set of a closed loop `x⁺ = (Φ − ΓK)x`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dims, Error, Result};
use crate::model::QuadrotorParams;
use crate::numerics::{spectral_radius, Matrix, Vector};
use crate::par::Parallelism;
use crate::qpsolve::{solve_lp, LpSense, QpStatus};

/// Default membership tolerance.
pub const CONTAINS_TOL: f64 = 1e-9;
/// Slack allowed in the stopping test of the invariant-set iteration.
pub const STOP_TOL: f64 = 1e-8;
pub const DEFAULT_T_MAX: usize = 200;

/// `{x : Hx ≤ h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    h_mat: Matrix,
    h_vec: Vector,
}

impl Polyhedron {
    pub fn new(h_mat: Matrix, h_vec: Vector) -> Result<Self> {
        ensure_dims(h_mat.nrows() == h_vec.len(), || {
            format!("H has {} rows but h has {} entries", h_mat.nrows(), h_vec.len())
        })?;
        if h_mat.iter().chain(h_vec.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("polyhedron data must be finite".into()));
        }
        if let Some(i) = (0..h_mat.nrows()).find(|&i| h_mat.row(i).amax() == 0.0) {
            return Err(Error::Domain(format!("row {i} of H is zero")));
        }
        Ok(Self { h_mat, h_vec })
    }

    /// `lower ≤ x ≤ upper` as `[I; −I] x ≤ [upper; −lower]`.
    pub fn from_box(lower: &Vector, upper: &Vector) -> Result<Self> {
        let n = lower.len();
        ensure_dims(upper.len() == n, || "box bounds differ in length".into())?;
        if (0..n).any(|i| lower[i].partial_cmp(&upper[i]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Domain("box requires lower < upper componentwise".into()));
        }
        let mut h_mat = Matrix::zeros(2 * n, n);
        let mut h_vec = Vector::zeros(2 * n);
        for i in 0..n {
            h_mat[(i, i)] = 1.0;
            h_vec[i] = upper[i];
            h_mat[(n + i, i)] = -1.0;
            h_vec[n + i] = -lower[i];
        }
        Self::new(h_mat, h_vec)
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn h_mat(&self) -> &Matrix {
        &self.h_mat
    }

    pub fn h_vec(&self) -> &Vector {
        &self.h_vec
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        x.len() == self.dim() && (&self.h_mat * x - &self.h_vec).iter().all(|v| *v <= tol)
    }

    /// Cheap origin test: `0 ∈ P` iff `h ≥ 0`.
    pub fn contains_origin(&self) -> bool {
        self.h_vec.iter().all(|v| *v >= 0.0)
    }

    /// Largest violation `max_i (Hx − h)_i` (negative inside).
    pub fn max_violation(&self, x: &Vector) -> f64 {
        (&self.h_mat * x - &self.h_vec).max()
    }

    /// `{x : x − c ∈ P}`.
    pub fn translate(&self, c: &Vector) -> Result<Self> {
        ensure_dims(c.len() == self.dim(), || "translation has wrong dimension".into())?;
        Ok(Self { h_mat: self.h_mat.clone(), h_vec: &self.h_vec + &self.h_mat * c })
    }

    /// First `rows` half-spaces.
    pub fn head(&self, rows: usize) -> Self {
        let rows = rows.min(self.num_rows());
        Self { h_mat: self.h_mat.rows(0, rows).into_owned(), h_vec: self.h_vec.rows(0, rows).into_owned() }
    }

    /// `max dᵀx` over the set.
    pub fn support(&self, d: &Vector) -> Result<f64> {
        let sol = solve_lp(d, &self.h_mat, &self.h_vec, LpSense::Maximize)?;
        match sol.status {
            QpStatus::Optimal => Ok(sol.objective),
            QpStatus::Unbounded => Err(Error::UnboundedLp("support function is unbounded".into())),
            _ => Err(Error::Domain("support function of an empty polyhedron".into())),
        }
    }

    /// Tight axis-aligned bounding box.
    pub fn bounding_box(&self, par: Parallelism) -> Result<(Vector, Vector)> {
        let n = self.dim();
        let values = par.map_range(2 * n, |k| {
            let mut d = Vector::zeros(n);
            d[k % n] = if k < n { 1.0 } else { -1.0 };
            self.support(&d)
        });
        let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
        Ok((Vector::from_fn(n, |i, _| -values[n + i]), Vector::from_fn(n, |i, _| values[i])))
    }

    /// Largest `λ ≥ 0` with `λd ∈ P`; infinite when the ray never leaves.
    /// Requires `0 ∈ P`.
    pub fn ray_extent(&self, d: &Vector) -> f64 {
        let hd = &self.h_mat * d;
        (0..self.num_rows())
            .filter(|&i| hd[i] > 0.0)
            .map(|i| self.h_vec[i] / hd[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// Removes redundant rows. Duplicate half-spaces (up to positive
    /// scaling) are collapsed first; every remaining row is then tested
    /// against all the others, which keeps exactly the facet rows.
    pub fn prune(&self, par: Parallelism) -> Result<Self> {
        let n = self.dim();
        let mut unique: Vec<usize> = Vec::new();
        let normalized: Vec<Vector> = (0..self.num_rows())
            .map(|i| {
                let r = self.h_mat.row(i);
                let s = r.amax();
                let mut v = Vector::zeros(n + 1);
                v.rows_mut(0, n).copy_from(&(r.transpose() / s));
                v[n] = self.h_vec[i] / s;
                v
            })
            .collect();
        for i in 0..self.num_rows() {
            if !unique.iter().any(|&j| (&normalized[i] - &normalized[j]).amax() < 1e-12) {
                unique.push(i);
            }
        }
        let base = self.select(&unique);
        let keep = par.map_range(base.num_rows(), |i| -> Result<bool> {
            let others: Vec<usize> = (0..base.num_rows()).filter(|&j| j != i).collect();
            let rest = base.select(&others);
            let d = base.h_mat.row(i).transpose();
            let sol = solve_lp(&d, &rest.h_mat, &rest.h_vec, LpSense::Maximize)?;
            Ok(match sol.status {
                QpStatus::Optimal => sol.objective > base.h_vec[i] + 1e-9 * (1.0 + base.h_vec[i].abs()),
                _ => true,
            })
        });
        let keep: Vec<bool> = keep.into_iter().collect::<Result<_>>()?;
        let rows: Vec<usize> = (0..base.num_rows()).filter(|&i| keep[i]).collect();
        Ok(base.select(&rows))
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self {
            h_mat: self.h_mat.select_rows(rows.iter()),
            h_vec: Vector::from_iterator(rows.len(), rows.iter().map(|&i| self.h_vec[i])),
        }
    }
}

/// State and input boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
}

impl ConstraintSpec {
    /// Quadrotor defaults: positions ±100 m, velocities ±3 m/s, roll and
    /// pitch ±π/2, yaw ±2π, angular rates ±3π; thrust deviation in
    /// `[−mg, 3mg]` (maximum total thrust 4mg), roll/pitch torques ±1.47 N·m,
    /// yaw torque ±0.02 N·m.
    pub fn quadrotor(p: &QuadrotorParams) -> Self {
        use std::f64::consts::PI;
        let upper = vec![100.0, 100.0, 100.0, PI / 2.0, PI / 2.0, 2.0 * PI, 3.0, 3.0, 3.0, 3.0 * PI, 3.0 * PI, 3.0 * PI];
        let mg = p.hover_thrust();
        Self {
            state_lower: upper.iter().map(|v| -v).collect(),
            state_upper: upper,
            input_lower: vec![-mg, -1.47, -1.47, -0.02],
            input_upper: vec![4.0 * mg - mg, 1.47, 1.47, 0.02],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_lower.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi, what) in [
            (&self.state_lower, &self.state_upper, "state"),
            (&self.input_lower, &self.input_upper, "input"),
        ] {
            ensure_dims(lo.len() == hi.len(), || format!("{what} bounds differ in length"))?;
            if lo.iter().zip(hi).any(|(l, h)| !(*l < 0.0 && 0.0 < *h)) {
                return Err(Error::Domain(format!("{what} box must contain 0 strictly inside")));
            }
        }
        Ok(())
    }

    pub fn state_set(&self) -> Result<Polyhedron> {
        Polyhedron::from_box(&Vector::from_column_slice(&self.state_lower), &Vector::from_column_slice(&self.state_upper))
    }

    pub fn input_set(&self) -> Result<Polyhedron> {
        Polyhedron::from_box(&Vector::from_column_slice(&self.input_lower), &Vector::from_column_slice(&self.input_upper))
    }

    /// Combined set over the stacked vector `(u, x)`.
    pub fn combined_set(&self) -> Result<Polyhedron> {
        let lower: Vec<f64> = self.input_lower.iter().chain(&self.state_lower).copied().collect();
        let upper: Vec<f64> = self.input_upper.iter().chain(&self.state_upper).copied().collect();
        let n = lower.len();
        let (m, nx) = (self.input_dim(), self.state_dim());
        // Input rows first, then state rows, each as upper-then-lower blocks.
        let full = Polyhedron::from_box(&Vector::from_vec(lower), &Vector::from_vec(upper))?;
        let order: Vec<usize> = (0..m).chain(n..n + m).chain(m..m + nx).chain(n + m..n + m + nx).collect();
        Ok(full.select(&order))
    }

    pub fn clamp_input(&self, u: &Vector) -> Vector {
        Vector::from_fn(u.len(), |i, _| u[i].clamp(self.input_lower[i], self.input_upper[i]))
    }
}

/// Output of [`max_admissible_invariant_set`].
#[derive(Debug, Clone)]
pub struct InvariantSet {
    /// `s·(t*+1)` rows; the first `s·(t+1)` rows form the iterate at step `t`.
    pub set: Polyhedron,
    pub t_star: usize,
    /// Number of combined constraints `s`.
    pub rows_per_step: usize,
    pub lp_count: usize,
}

impl InvariantSet {
    /// Polyhedron obtained after iteration `t ≤ t*`.
    pub fn iterate(&self, t: usize) -> Polyhedron {
        self.set.head(self.rows_per_step * (t + 1))
    }
}

/// Maximal constraint-admissible invariant set of `x⁺ = (Φ − ΓK)x` under
/// `x ∈ X`, `−Kx ∈ U`.
///
/// With `K' = [−K; I]` mapping `x` to `(u, x)` and the combined constraints
/// `H_z (u, x) ≤ h_z`, iteration `t` maximizes each row of
/// `H_z K' A_K^{t+1}` over `{x : H_z K' A_K^k x ≤ h_z, k ≤ t}` and stops
/// when no row can exceed its bound.
pub fn max_admissible_invariant_set(
    phi: &Matrix,
    gamma: &Matrix,
    k: &Matrix,
    spec: &ConstraintSpec,
    t_max: usize,
    par: Parallelism,
) -> Result<InvariantSet> {
    let n = phi.nrows();
    let m = gamma.ncols();
    ensure_dims(phi.is_square() && gamma.nrows() == n, || "Phi/Gamma dimensions are inconsistent".into())?;
    ensure_dims(k.nrows() == m && k.ncols() == n, || format!("K must be {m}x{n}"))?;
    ensure_dims(spec.state_dim() == n && spec.input_dim() == m, || "constraint spec does not match the model".into())?;
    spec.validate()?;
    let a_k = phi - gamma * k;
    let rho = spectral_radius(&a_k)?;
    if rho >= 1.0 {
        return Err(Error::Domain(format!("closed loop is not stable (spectral radius {rho})")));
    }

    let z = spec.combined_set()?;
    let s = z.num_rows();
    let mut k_prime = Matrix::zeros(m + n, n);
    k_prime.view_mut((0, 0), (m, n)).copy_from(&(-k));
    k_prime.view_mut((m, 0), (n, n)).fill_with_identity();
    let hz_kp = z.h_mat() * &k_prime;

    let mut rows = hz_kp.clone();
    let mut rhs = z.h_vec().clone();
    let mut next = &hz_kp * &a_k;
    let mut lp_count = 0;
    for t in 0..=t_max {
        let current = Polyhedron::new(rows.clone(), rhs.clone())?;
        let optima = par.map_range(s, |i| -> Result<f64> {
            let c = next.row(i).transpose();
            let sol = solve_lp(&c, current.h_mat(), current.h_vec(), LpSense::Maximize)?;
            match sol.status {
                QpStatus::Optimal => Ok(sol.objective),
                QpStatus::Unbounded => Err(Error::UnboundedLp(format!("row {i} at iteration {t}"))),
                other => Err(Error::Numeric(format!("invariant-set LP ended with status {}", other.as_str()))),
            }
        });
        lp_count += s;
        let optima: Vec<f64> = optima.into_iter().collect::<Result<_>>()?;
        if optima.iter().zip(z.h_vec().iter()).all(|(v, h)| v - h <= STOP_TOL) {
            return Ok(InvariantSet { set: current, t_star: t, rows_per_step: s, lp_count });
        }
        let r = rows.nrows();
        rows = rows.insert_rows(r, s, 0.0);
        rows.view_mut((r, 0), (s, n)).copy_from(&next);
        rhs = rhs.insert_rows(r, s, 0.0);
        rhs.rows_mut(r, s).copy_from(z.h_vec());
        next = &next * &a_k;
    }
    Err(Error::NonTermination { t_max })
}

/// `n` points inside `P`, deterministic per seed.
///
/// Uniform rejection sampling from the bounding box is tried first; when
/// fewer than one draw in ten lands inside, the remaining points are drawn
/// as `u·λ_max(d)·d` along uniformly random directions `d`, which needs
/// `0 ∈ P`.
pub fn sample_interior(p: &Polyhedron, n: usize, seed: u64) -> Result<Vec<Vector>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let (lo, hi) = p.bounding_box(Parallelism::Sequential)?;
    let dim = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let budget = 20 * n.max(50);
    let mut tries = 0;
    while out.len() < n && tries < budget {
        tries += 1;
        let x = Vector::from_fn(dim, |i, _| if hi[i] > lo[i] { rng.gen_range(lo[i]..hi[i]) } else { lo[i] });
        if p.contains(&x, 0.0) {
            out.push(x);
        }
        if tries == budget / 4 && out.len() * 10 < tries {
            break;
        }
    }
    if out.len() < n {
        if !p.contains_origin() {
            return Err(Error::Domain("directional sampling requires the origin inside the set".into()));
        }
        while out.len() < n {
            let d = random_direction(&mut rng, dim);
            let lam = p.ray_extent(&d);
            if !lam.is_finite() {
                return Err(Error::UnboundedLp("sampling ray never leaves the set".into()));
            }
            let u: f64 = rng.gen_range(0.0..1.0);
            let x = d * (u * lam);
            if p.contains(&x, 0.0) {
                out.push(x);
            }
        }
    }
    Ok(out)
}

/// `n` points on the boundary of `P` (which must contain the origin),
/// along uniformly random directions.
pub fn sample_boundary(p: &Polyhedron, n: usize, seed: u64) -> Result<Vec<Vector>> {
    if !p.contains_origin() {
        return Err(Error::Domain("boundary sampling requires the origin inside the set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let d = random_direction(&mut rng, p.dim());
            let lam = p.ray_extent(&d);
            if lam.is_finite() {
                Ok(d * lam)
            } else {
                Err(Error::UnboundedLp("sampling ray never leaves the set".into()))
            }
        })
        .collect()
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    loop {
        let d = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let norm = d.norm();
        if norm > 1e-12 {
            return d / norm;
        }
    }
}
