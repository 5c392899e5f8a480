use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::numerics::Matrix;

pub(crate) fn csr_from_dense(m: &Matrix) -> CsMat<f64> {
    let mut tri = TriMat::new((m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 {
                tri.add_triplet(i, j, v);
            }
        }
    }
    tri.to_csr()
}

/// `(M + Mᵀ)/2` in CSR form.
pub(crate) fn symmetric_part(m: &CsMat<f64>) -> CsMat<f64> {
    let mut tri = TriMat::with_capacity((m.rows(), m.cols()), 2 * m.nnz());
    for (v, (i, j)) in m.iter() {
        tri.add_triplet(i, j, 0.5 * v);
        tri.add_triplet(j, i, 0.5 * v);
    }
    tri.to_csr()
}

/// `y = M x` for CSR `M`.
pub(crate) fn matvec(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    matvec_into(m, x, &mut out);
    out
}

pub(crate) fn matvec_into(m: &CsMat<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert!(m.is_csr());
    for (i, row) in m.outer_iterator().enumerate() {
        out[i] = row.iter().map(|(j, v)| v * x[j]).sum();
    }
}

/// `y = Mᵀ x` for CSR `M`.
pub(crate) fn matvec_t(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    matvec_t_into(m, x, &mut out);
    out
}

pub(crate) fn matvec_t_into(m: &CsMat<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert!(m.is_csr());
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, row) in m.outer_iterator().enumerate() {
        let xi = x[i];
        if xi != 0.0 {
            for (j, v) in row.iter() {
                out[j] += v * xi;
            }
        }
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Sparse LDLᵀ factorization with reverse Cuthill-McKee ordering.
pub(crate) enum Factor {
    Ldl(LdlNumeric<f64, usize>),
    /// The LDL routine needs at least two rows; 1x1 systems are kept here.
    Scalar(f64),
}

impl Factor {
    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Factor::Ldl(f) => f.solve(rhs),
            Factor::Scalar(d) => rhs.iter().map(|r| r / d).collect(),
        }
    }

    pub(crate) fn update(&mut self, m: &CsMat<f64>) -> bool {
        match self {
            Factor::Ldl(f) => f.update(m.view()).is_ok(),
            Factor::Scalar(d) => {
                *d = scalar_entry(m);
                *d != 0.0
            }
        }
    }

    pub(crate) fn pivots(&self) -> Vec<f64> {
        match self {
            Factor::Ldl(f) => f.d().to_vec(),
            Factor::Scalar(d) => vec![*d],
        }
    }
}

fn scalar_entry(m: &CsMat<f64>) -> f64 {
    m.iter().map(|(v, _)| *v).sum()
}

pub(crate) fn factor(m: &CsMat<f64>) -> Option<Factor> {
    match m.rows() {
        0 => Some(Factor::Scalar(1.0)),
        1 => {
            let d = scalar_entry(m);
            (d != 0.0).then_some(Factor::Scalar(d))
        }
        _ => Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .numeric(m.view())
            .ok()
            .map(Factor::Ldl),
    }
}

/// PSD test: `M + slack·I` must admit an LDLᵀ with positive pivots.
pub(crate) fn is_psd(m: &CsMat<f64>, slack: f64) -> bool {
    let n = m.rows();
    let mut tri = TriMat::with_capacity((n, n), m.nnz() + n);
    for (v, (i, j)) in m.iter() {
        tri.add_triplet(i, j, *v);
    }
    for i in 0..n {
        tri.add_triplet(i, i, 2.0 * slack);
    }
    match factor(&tri.to_csr()) {
        Some(f) => f.pivots().iter().all(|d| *d > 0.0),
        None => false,
    }
}
