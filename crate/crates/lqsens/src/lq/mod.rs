//! The stochastic linear-quadratic problem with deterministic coefficients:
//!
//!   minimize  ½ E( ∫ [x'Qx + u'Nu] dt + x(T)'M x(T) )
//!   subject to dx = [Ax + Bu + e] dt + Σ_j [C_j x + D_j u + f_j] dW_j
//!
//! Solved by backward Riccati integration plus closed-loop forward simulation;
//! cross-validated by a duality residual and an independent Picard solver.
#![allow(non_snake_case)]

mod moments;
mod picard;
mod riccati;
mod simulate;

pub use moments::{closed_loop_moments, expectation_affine_product, MomentPath};
pub(crate) use moments::{feedback_mid, hermite_mid_mat, hermite_mid_vec};
pub use picard::{fbsde_picard_oracle, fbsde_picard_oracle_damped, PicardSolution};
pub use riccati::{riccati_integrate, RiccatiSolution};
pub use simulate::{
    cost_functional, duality_residual_detail, solve_lq, value_duality_residual, LQSolution,
    ResidualStat,
};
pub(crate) use simulate::mean_stderr;

#[cfg(test)]
pub(crate) use tests::scalar_benchmark;

use nalgebra::{DMatrix, DVector};

use crate::grid::TimeGrid;
use crate::timefn::TimeFn;
use crate::{Error, Result};

/// Full parameter tuple of the problem. `C`, `D`, `f` have one entry per
/// noise component. `delta` is the stored lower bound on the eigenvalues of
/// the control weight `N`; it may be zero for problems whose solvability
/// comes from the kernel N + Σ D'PD being positive definite at runtime.
#[derive(Clone, Debug)]
pub struct LQSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub x0: DVector<f64>,
    pub A: TimeFn<DMatrix<f64>>,
    pub B: TimeFn<DMatrix<f64>>,
    pub C: Vec<TimeFn<DMatrix<f64>>>,
    pub D: Vec<TimeFn<DMatrix<f64>>>,
    pub e: TimeFn<DVector<f64>>,
    pub f: Vec<TimeFn<DVector<f64>>>,
    pub Q: TimeFn<DMatrix<f64>>,
    pub N: TimeFn<DMatrix<f64>>,
    pub M: DMatrix<f64>,
    pub delta: f64,
}

impl LQSpec {
    /// A spec with zero offsets (e, f), zero noise loadings (C, D) and zero
    /// weights, to be filled in field by field.
    pub fn zeroed(n: usize, m: usize, d: usize) -> Self {
        LQSpec {
            n,
            m,
            d,
            x0: DVector::zeros(n),
            A: TimeFn::constant(DMatrix::zeros(n, n)),
            B: TimeFn::constant(DMatrix::zeros(n, m)),
            C: vec![TimeFn::constant(DMatrix::zeros(n, n)); d],
            D: vec![TimeFn::constant(DMatrix::zeros(n, m)); d],
            e: TimeFn::constant(DVector::zeros(n)),
            f: vec![TimeFn::constant(DVector::zeros(n)); d],
            Q: TimeFn::constant(DMatrix::zeros(n, n)),
            N: TimeFn::constant(DMatrix::identity(m, m)),
            M: DMatrix::zeros(n, n),
            delta: 1.0,
        }
    }

    /// Checks every invariant on the grid: shapes, finiteness, symmetry and
    /// positive semidefiniteness of Q and M, and N ⪰ delta·I. Solvers only
    /// re-check shapes cheaply; call this on untrusted inputs.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::InvalidArgument(
                "state, control and noise dimensions must all be >= 1".into(),
            ));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidArgument("delta must be nonnegative".into()));
        }
        if self.C.len() != self.d || self.D.len() != self.d || self.f.len() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "need {} entries in each of C, D, f; got {}, {}, {}",
                self.d,
                self.C.len(),
                self.D.len(),
                self.f.len()
            )));
        }
        if self.x0.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "x0 has length {}, state dimension is {}",
                self.x0.len(),
                self.n
            )));
        }
        check_matrix("M", &self.M, self.n, self.n)?;
        check_symmetric_bounded_below("M", &self.M, 0.0)?;
        for k in 0..grid.steps() {
            let t = grid.t(k);
            self.check_shapes_at(t)?;
            let q = self.Q.eval(t);
            check_symmetric_bounded_below(&format!("Q(t={t})"), &q, 0.0)?;
            let nw = self.N.eval(t);
            check_symmetric_bounded_below(&format!("N(t={t})"), &nw, self.delta)?;
        }
        Ok(())
    }

    pub(crate) fn check_shapes_at(&self, t: f64) -> Result<()> {
        check_matrix("A", &self.A.eval(t), self.n, self.n)?;
        check_matrix("B", &self.B.eval(t), self.n, self.m)?;
        check_vector("e", &self.e.eval(t), self.n)?;
        check_matrix("Q", &self.Q.eval(t), self.n, self.n)?;
        check_matrix("N", &self.N.eval(t), self.m, self.m)?;
        for j in 0..self.d {
            check_matrix("C", &self.C[j].eval(t), self.n, self.n)?;
            check_matrix("D", &self.D[j].eval(t), self.n, self.m)?;
            check_vector("f", &self.f[j].eval(t), self.n)?;
        }
        Ok(())
    }
}

fn check_matrix(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} contains NaN or Inf")));
    }
    Ok(())
}

fn check_vector(name: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "{name} must have length {len}, got {}",
            v.len()
        )));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(format!("{name} contains NaN or Inf")));
    }
    Ok(())
}

fn check_symmetric_bounded_below(name: &str, m: &DMatrix<f64>, bound: f64) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * (1.0 + m.norm()) {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
    }
    let min_eig = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < bound - 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "{name} has smallest eigenvalue {min_eig:.6e}, below the required bound {bound:.6e}"
        )));
    }
    Ok(())
}

/// Left-node samples of all coefficient functions, shared by the simulators
/// and quadratures. Index k corresponds to the interval [t_k, t_{k+1}).
pub(crate) struct GridCoeffs {
    pub A: Vec<DMatrix<f64>>,
    pub B: Vec<DMatrix<f64>>,
    pub C: Vec<Vec<DMatrix<f64>>>,
    pub D: Vec<Vec<DMatrix<f64>>>,
    pub e: Vec<DVector<f64>>,
    pub f: Vec<Vec<DVector<f64>>>,
    pub Q: Vec<DMatrix<f64>>,
    pub N: Vec<DMatrix<f64>>,
}

pub(crate) fn sample_coeffs(spec: &LQSpec, grid: &TimeGrid) -> GridCoeffs {
    GridCoeffs {
        A: spec.A.sample(grid),
        B: spec.B.sample(grid),
        C: spec.C.iter().map(|c| c.sample(grid)).collect(),
        D: spec.D.iter().map(|d| d.sample(grid)).collect(),
        e: spec.e.sample(grid),
        f: spec.f.iter().map(|f| f.sample(grid)).collect(),
        Q: spec.Q.sample(grid),
        N: spec.N.sample(grid),
    }
}

/// Coefficient values of the problem at one time point.
#[derive(Clone)]
pub(crate) struct CoeffsAt {
    pub A: DMatrix<f64>,
    pub B: DMatrix<f64>,
    pub C: Vec<DMatrix<f64>>,
    pub D: Vec<DMatrix<f64>>,
    pub e: DVector<f64>,
    pub f: Vec<DVector<f64>>,
    pub Q: DMatrix<f64>,
    pub N: DMatrix<f64>,
}

pub(crate) fn coeffs_at(spec: &LQSpec, t: f64) -> CoeffsAt {
    CoeffsAt {
        A: spec.A.eval(t),
        B: spec.B.eval(t),
        C: spec.C.iter().map(|c| c.eval(t)).collect(),
        D: spec.D.iter().map(|d| d.eval(t)).collect(),
        e: spec.e.eval(t),
        f: spec.f.iter().map(|f| f.eval(t)).collect(),
        Q: spec.Q.eval(t),
        N: spec.N.eval(t),
    }
}

/// Feedback data on one interval: u = -(gain · x + offset), plus the
/// closed-loop drift/diffusion obtained by substituting the feedback.
#[derive(Clone)]
pub(crate) struct FeedbackAt {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub a_cl: DMatrix<f64>,
    pub e_cl: DVector<f64>,
    pub c_cl: Vec<DMatrix<f64>>,
    pub f_cl: Vec<DVector<f64>>,
}

/// Builds the optimal feedback at one time point from the Riccati pair (P, φ):
/// kernel K = N + Σ D'PD, gain K⁻¹(B'P + Σ D'PC), offset K⁻¹(B'φ + Σ D'Pf).
pub(crate) fn feedback_at(
    co: &CoeffsAt,
    P: &DMatrix<f64>,
    phi: &DVector<f64>,
    t: f64,
) -> Result<FeedbackAt> {
    let mut kernel = co.N.clone();
    for j in 0..co.D.len() {
        kernel += co.D[j].tr_mul(&(P * &co.D[j]));
    }
    // symmetrize before factoring; the assembly is symmetric only up to roundoff
    kernel = (&kernel + kernel.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(kernel).ok_or(Error::SingularKernel { t })?;
    let mut L = co.B.tr_mul(P);
    let mut h = co.B.tr_mul(phi);
    for j in 0..co.D.len() {
        let pd = co.D[j].tr_mul(P);
        L += &pd * &co.C[j];
        h += &pd * &co.f[j];
    }
    let gain = chol.solve(&L);
    let offset = chol.solve(&h);
    let a_cl = &co.A - &co.B * &gain;
    let e_cl = &co.e - &co.B * &offset;
    let c_cl = (0..co.D.len()).map(|j| &co.C[j] - &co.D[j] * &gain).collect();
    let f_cl = (0..co.D.len()).map(|j| &co.f[j] - &co.D[j] * &offset).collect();
    Ok(FeedbackAt { gain, offset, a_cl, e_cl, c_cl, f_cl })
}
