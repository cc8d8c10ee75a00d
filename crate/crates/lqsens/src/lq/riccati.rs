//! Backward integration of the coupled Riccati system that linearizes the
//! adjoint as p = P x + φ:
//!
//!   -Ṗ = A'P + PA + Σ C'PC + Q - L' K⁻¹ L,          P(T) = M
//!   -φ̇ = A'φ + Pe + Σ C'Pf - L' K⁻¹ h,              φ(T) = 0
//!   -ċ = e'φ + ½ Σ f'Pf - ½ h' K⁻¹ h,               c(T) = 0
//!
//! with K = N + Σ D'PD, L = B'P + Σ D'PC, h = B'φ + Σ D'Pf. The optimal value
//! is ½ x0'P(0)x0 + φ(0)'x0 + c(0) and the feedback is u = -K⁻¹(Lx + h).
//! Integration is classical RK4 on the solver grid, P symmetrized each step.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::grid::TimeGrid;
use crate::{Error, Result};

use super::{coeffs_at, feedback_at, FeedbackAt, LQSpec};

const BLOWUP_NORM: f64 = 1e12;

/// Grid-indexed (P, φ, c) together with node derivatives (for dense output)
/// and the left-node feedback gains.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// P(t_k), symmetric n×n, k = 0..=K.
    pub P: Vec<DMatrix<f64>>,
    /// φ(t_k), k = 0..=K.
    pub phi: Vec<DVector<f64>>,
    /// c(t_k), k = 0..=K.
    pub scalar_offset: Vec<f64>,
    /// d/dt of P at the nodes (the ODE right-hand side, for interpolation).
    pub dP: Vec<DMatrix<f64>>,
    /// d/dt of φ at the nodes.
    pub dphi: Vec<DVector<f64>>,
    /// Feedback gain G(t_k) with u = -(G x + g), k = 0..K-1.
    pub gains: Vec<DMatrix<f64>>,
    /// Feedback offset g(t_k), k = 0..K-1.
    pub offsets: Vec<DVector<f64>>,
}

impl RiccatiSolution {
    /// Optimal value ½ x0'P(0)x0 + φ(0)'x0 + c(0) for the given start state.
    pub fn value(&self, x0: &DVector<f64>) -> f64 {
        0.5 * (x0.tr_mul(&(&self.P[0] * x0)))[(0, 0)]
            + self.phi[0].dot(x0)
            + self.scalar_offset[0]
    }

    /// Adjoint initial value p(0) = P(0) x0 + φ(0).
    pub fn p0(&self, x0: &DVector<f64>) -> DVector<f64> {
        &self.P[0] * x0 + &self.phi[0]
    }
}

struct RState {
    P: DMatrix<f64>,
    phi: DVector<f64>,
    c: f64,
}

impl RState {
    fn axpy(&self, s: f64, d: &RState) -> RState {
        RState { P: &self.P + &d.P * s, phi: &self.phi + &d.phi * s, c: self.c + s * d.c }
    }
}

/// Time derivative of (P, φ, c) at time t. Errors if K(t) fails Cholesky.
fn rhs(spec: &LQSpec, t: f64, st: &RState) -> Result<RState> {
    let co = coeffs_at(spec, t);
    let P = &st.P;
    let mut kernel = co.N.clone();
    let mut L = co.B.tr_mul(P);
    let mut h = co.B.tr_mul(&st.phi);
    // Σ C'PC, Σ C'Pf, ½ Σ f'Pf accumulate alongside
    let mut cpc = DMatrix::zeros(spec.n, spec.n);
    let mut cpf = DVector::zeros(spec.n);
    let mut fpf = 0.0;
    for j in 0..spec.d {
        let pd = P * &co.D[j];
        kernel += co.D[j].tr_mul(&pd);
        let dp = co.D[j].tr_mul(P);
        L += &dp * &co.C[j];
        h += &dp * &co.f[j];
        let pc = P * &co.C[j];
        cpc += co.C[j].tr_mul(&pc);
        let pf = P * &co.f[j];
        cpf += co.C[j].tr_mul(&pf);
        fpf += co.f[j].dot(&pf);
    }
    kernel = (&kernel + kernel.transpose()) * 0.5;
    let chol = Cholesky::new(kernel).ok_or(Error::SingularKernel { t })?;
    let kinv_l = chol.solve(&L);
    let kinv_h = chol.solve(&h);

    let atp = co.A.tr_mul(P);
    let minus_dP = &atp + atp.transpose() + cpc + &co.Q - L.tr_mul(&kinv_l);
    let minus_dphi = co.A.tr_mul(&st.phi) + P * &co.e + cpf - L.tr_mul(&kinv_h);
    let minus_dc = co.e.dot(&st.phi) + 0.5 * fpf - 0.5 * h.dot(&kinv_h);
    Ok(RState { P: -minus_dP, phi: -minus_dphi, c: -minus_dc })
}

/// Integrates the Riccati system backward from t = T with RK4 on the grid.
pub fn riccati_integrate(spec: &LQSpec, grid: &TimeGrid) -> Result<RiccatiSolution> {
    spec.check_shapes_at(grid.t(0))?;
    super::check_matrix("M", &spec.M, spec.n, spec.n)?;
    let K = grid.steps();
    let dt = grid.dt();
    let mut P = vec![DMatrix::zeros(spec.n, spec.n); K + 1];
    let mut phi = vec![DVector::zeros(spec.n); K + 1];
    let mut c = vec![0.0; K + 1];
    P[K] = (&spec.M + spec.M.transpose()) * 0.5;
    let mut st = RState { P: P[K].clone(), phi: phi[K].clone(), c: 0.0 };
    let h = -dt;
    for k in (1..=K).rev() {
        let t = grid.t(k);
        let k1 = rhs(spec, t, &st)?;
        let k2 = rhs(spec, t + 0.5 * h, &st.axpy(0.5 * h, &k1))?;
        let k3 = rhs(spec, t + 0.5 * h, &st.axpy(0.5 * h, &k2))?;
        let k4 = rhs(spec, t + h, &st.axpy(h, &k3))?;
        let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
        st = st.axpy(h / 6.0, &incr);
        st.P = (&st.P + st.P.transpose()) * 0.5;
        let norm = st.P.norm();
        if !norm.is_finite() || norm > BLOWUP_NORM {
            return Err(Error::IntegrationFailure(format!(
                "Riccati state norm {norm:.3e} at t = {:.6} (grid too coarse or data ill-posed)",
                t + h
            )));
        }
        P[k - 1] = st.P.clone();
        phi[k - 1] = st.phi.clone();
        c[k - 1] = st.c;
    }

    // node derivatives (for dense output) and left-node feedback
    let mut dP = Vec::with_capacity(K + 1);
    let mut dphi = Vec::with_capacity(K + 1);
    for k in 0..=K {
        let node = RState { P: P[k].clone(), phi: phi[k].clone(), c: c[k] };
        let der = rhs(spec, grid.t(k), &node)?;
        dP.push(der.P);
        dphi.push(der.phi);
    }
    let mut gains = Vec::with_capacity(K);
    let mut offsets = Vec::with_capacity(K);
    for k in 0..K {
        let t = grid.t(k);
        let fb: FeedbackAt = feedback_at(&coeffs_at(spec, t), &P[k], &phi[k], t)?;
        gains.push(fb.gain);
        offsets.push(fb.offset);
    }
    Ok(RiccatiSolution { grid: *grid, P, phi, scalar_offset: c, dP, dphi, gains, offsets })
}
