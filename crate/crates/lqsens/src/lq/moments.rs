//! First and second moments of the closed-loop state as ODEs.
//!
//! Under the optimal feedback the state is linear-Gaussian, so E[x] and
//! E[xx'] satisfy closed ODEs driven by the closed-loop coefficients. We
//! integrate them with the same fourth-order scheme used for the Riccati
//! equations; midpoint values of P and φ come from cubic Hermite
//! interpolation of the stored nodes and node derivatives, which keeps the
//! whole pipeline at fourth order. Expectations of products of affine
//! functions of the state then evaluate in closed form, without Monte Carlo.

use nalgebra::{DMatrix, DVector};

use crate::grid::TimeGrid;
use crate::Result;

use super::{coeffs_at, feedback_at, FeedbackAt, LQSpec, RiccatiSolution};

/// E[x] and E[xx'] at the grid nodes, with node time-derivatives retained
/// for dense (midpoint) evaluation.
#[derive(Debug, Clone)]
pub struct MomentPath {
    pub mean: Vec<DVector<f64>>,
    pub second: Vec<DMatrix<f64>>,
    pub d_mean: Vec<DVector<f64>>,
    pub d_second: Vec<DMatrix<f64>>,
}

/// Cubic Hermite value at the interval midpoint from endpoint values and
/// derivatives. Exact for cubics.
pub(crate) fn hermite_mid_mat(
    y0: &DMatrix<f64>,
    y1: &DMatrix<f64>,
    dy0: &DMatrix<f64>,
    dy1: &DMatrix<f64>,
    dt: f64,
) -> DMatrix<f64> {
    (y0 + y1) * 0.5 + (dy0 - dy1) * (dt / 8.0)
}

pub(crate) fn hermite_mid_vec(
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    dy0: &DVector<f64>,
    dy1: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    (y0 + y1) * 0.5 + (dy0 - dy1) * (dt / 8.0)
}

/// Closed-loop feedback data at the midpoint of interval k, interpolated
/// from the Riccati nodes.
pub(crate) fn feedback_mid(
    spec: &LQSpec,
    grid: &TimeGrid,
    ric: &RiccatiSolution,
    k: usize,
) -> Result<FeedbackAt> {
    let dt = grid.dt();
    let t_mid = grid.t(k) + 0.5 * dt;
    let p_mid = hermite_mid_mat(&ric.P[k], &ric.P[k + 1], &ric.dP[k], &ric.dP[k + 1], dt);
    let phi_mid =
        hermite_mid_vec(&ric.phi[k], &ric.phi[k + 1], &ric.dphi[k], &ric.dphi[k + 1], dt);
    feedback_at(&coeffs_at(spec, t_mid), &p_mid, &phi_mid, t_mid)
}

fn moment_rhs(
    fb: &FeedbackAt,
    mean: &DVector<f64>,
    second: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let dm = &fb.a_cl * mean + &fb.e_cl;
    let mut ds = &fb.a_cl * second + second * fb.a_cl.transpose()
        + &fb.e_cl * mean.transpose()
        + mean * fb.e_cl.transpose();
    for (c, f) in fb.c_cl.iter().zip(fb.f_cl.iter()) {
        let cm = c * mean;
        ds += c * second * c.transpose()
            + &cm * f.transpose()
            + f * cm.transpose()
            + f * f.transpose();
    }
    (dm, ds)
}

/// Integrates the moment ODEs forward along the optimal closed loop.
pub fn closed_loop_moments(
    spec: &LQSpec,
    grid: &TimeGrid,
    ric: &RiccatiSolution,
) -> Result<MomentPath> {
    let steps = grid.steps();
    let dt = grid.dt();
    let mut mean = Vec::with_capacity(steps + 1);
    let mut second = Vec::with_capacity(steps + 1);
    let mut d_mean = Vec::with_capacity(steps + 1);
    let mut d_second = Vec::with_capacity(steps + 1);
    mean.push(spec.x0.clone());
    second.push(&spec.x0 * spec.x0.transpose());
    for k in 0..steps {
        let fb0 = feedback_at(&coeffs_at(spec, grid.t(k)), &ric.P[k], &ric.phi[k], grid.t(k))?;
        let fbm = feedback_mid(spec, grid, ric, k)?;
        let fb1 = feedback_at(
            &coeffs_at(spec, grid.t(k + 1)),
            &ric.P[k + 1],
            &ric.phi[k + 1],
            grid.t(k + 1),
        )?;
        let m0 = &mean[k];
        let s0 = &second[k];
        let (km1, ks1) = moment_rhs(&fb0, m0, s0);
        let (km2, ks2) = moment_rhs(&fbm, &(m0 + &km1 * (dt / 2.0)), &(s0 + &ks1 * (dt / 2.0)));
        let (km3, ks3) = moment_rhs(&fbm, &(m0 + &km2 * (dt / 2.0)), &(s0 + &ks2 * (dt / 2.0)));
        let (km4, ks4) = moment_rhs(&fb1, &(m0 + &km3 * dt), &(s0 + &ks3 * dt));
        let m1 = m0 + (&km1 + &km2 * 2.0 + &km3 * 2.0 + km4) * (dt / 6.0);
        let mut s1 = s0 + (&ks1 + &ks2 * 2.0 + &ks3 * 2.0 + ks4) * (dt / 6.0);
        s1 = (&s1 + s1.transpose()) * 0.5;
        d_mean.push(km1);
        d_second.push(ks1);
        mean.push(m1);
        second.push(s1);
    }
    let fb_t = feedback_at(
        &coeffs_at(spec, grid.t(steps)),
        &ric.P[steps],
        &ric.phi[steps],
        grid.t(steps),
    )?;
    let (dm_t, ds_t) = moment_rhs(&fb_t, &mean[steps], &second[steps]);
    d_mean.push(dm_t);
    d_second.push(ds_t);
    Ok(MomentPath { mean, second, d_mean, d_second })
}

/// E[(R1 x + s1)'(R2 x + s2)] for Gaussian-closed moments:
/// tr(R1'R2 S) + s1'R2 m + s2'R1 m + s1's2, with m = E[x], S = E[xx'].
pub fn expectation_affine_product(
    r1: &DMatrix<f64>,
    s1: &DVector<f64>,
    r2: &DMatrix<f64>,
    s2: &DVector<f64>,
    mean: &DVector<f64>,
    second: &DMatrix<f64>,
) -> f64 {
    (r1.transpose() * r2 * second).trace()
        + (s1.transpose() * r2 * mean)[(0, 0)]
        + (s2.transpose() * r1 * mean)[(0, 0)]
        + s1.dot(s2)
}
