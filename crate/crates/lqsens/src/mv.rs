//! Continuous-time mean-variance portfolio selection:
//!
//!   minimize Var(X(T))  subject to  E[X(T)] = A,
//!   dX = [r X + π'(μ - r·1)] dt + π'σ dW,   X(0) = x,
//!
//! with deterministic rate r(t), appreciation μ(t) and volatility σ(t)
//! (uniformly elliptic: σσ' ⪰ δI). The solver dualizes the mean constraint,
//! reduces to zero interest by discounting, and solves the inner quadratic
//! problem in closed exponential form. The Lagrange multiplier comes from a
//! two-point solve of the (exactly affine) stationarity equation. A second
//! solver keeps the r X drift in the dynamics and runs the generic Riccati
//! machinery instead, so the two routes share no numerics beyond the grid.
//!
//! Conventions: π is the vector of amounts held in the risky assets; the
//! adjoint pair (p̄, q̄) solves dp̄ = -r p̄ dt + q̄'dW with terminal value
//! p̄(T) = 2(X̄(T) - A) + λ; along the optimum, μ' p̄ + σ q̄ ≡ 0.
#![allow(non_snake_case)]

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand_distr::{Distribution, StandardNormal};

use crate::brownian::{path_rng, BrownianEnsemble};
use crate::grid::TimeGrid;
use crate::lq::{closed_loop_moments, riccati_integrate, solve_lq, LQSpec};
use crate::timefn::TimeFn;
use crate::{Error, Result};

/// Problem data. `A` is the required expected terminal wealth; `delta` is
/// the ellipticity bound σσ' ⪰ delta·I enforced by [`MVSpec::validate`].
#[derive(Clone, Debug)]
pub struct MVSpec {
    pub d: usize,
    pub x: f64,
    pub A: f64,
    pub r: TimeFn<f64>,
    pub mu: TimeFn<DVector<f64>>,
    pub sigma: TimeFn<DMatrix<f64>>,
    pub delta: f64,
}

impl MVSpec {
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("need at least one asset".into()));
        }
        if !(self.x.is_finite() && self.A.is_finite()) {
            return Err(Error::NonFinite("x and A must be finite".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Ellipticity(
                "ellipticity bound delta must be positive".into(),
            ));
        }
        for k in 0..grid.steps() {
            let t = grid.t(k);
            let r = self.r.eval(t);
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("r(t={t}) is not finite")));
            }
            let mu = self.mu.eval(t);
            if mu.len() != self.d {
                return Err(Error::ShapeMismatch(format!(
                    "mu(t={t}) has length {}, expected {}",
                    mu.len(),
                    self.d
                )));
            }
            if !mu.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("mu(t={t}) is not finite")));
            }
            let sigma = self.sigma.eval(t);
            if sigma.nrows() != self.d || sigma.ncols() != self.d {
                return Err(Error::ShapeMismatch(format!(
                    "sigma(t={t}) must be {0}x{0}",
                    self.d
                )));
            }
            if !sigma.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("sigma(t={t}) is not finite")));
            }
            let h = &sigma * sigma.transpose();
            let min_eig = h
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min_eig < self.delta - 1e-10 {
                return Err(Error::Ellipticity(format!(
                    "σσ' has smallest eigenvalue {min_eig:.6e} at t={t}, below delta = {:.6e}",
                    self.delta
                )));
            }
        }
        Ok(())
    }
}

/// Grid data of the zero-interest reduction. The discounted wealth
/// X̃ = e^{-∫r}X with strategy π̃ = e^{-∫r}π follows the driftless dynamics
/// dX̃ = π̃'μ' dt + π̃'σ dW and must hit the discounted target Ã = e^{-∫₀ᵀr}A;
/// the variance scales back by e^{2∫₀ᵀr}. Integrals of r are left Riemann
/// sums, matching the left-point discretization used everywhere else.
#[derive(Clone, Debug)]
pub struct Reduction {
    /// discounted target Ã
    pub target: f64,
    /// variance scale e^{2∫₀ᵀ r}
    pub scale: f64,
    /// R_k = ∫₀^{t_k} r (left sums), length K+1
    pub log_discount: Vec<f64>,
    /// θ_k = μ''(σσ')⁻¹μ' at left nodes, length K
    pub theta: Vec<f64>,
    /// S_k = Σ_{j<k} θ_j dt, length K+1
    pub s_cum: Vec<f64>,
    /// G_k = (σσ')⁻¹μ' at left nodes (the feedback direction), length K
    pub gain: Vec<DVector<f64>>,
    /// σ'G at left nodes (the diffusion loading direction), length K
    pub vol_gain: Vec<DVector<f64>>,
    /// μ' = μ - r·1 at left nodes, length K
    pub mu_excess: Vec<DVector<f64>>,
}

/// Builds the zero-interest reduction on the grid.
pub fn reduce(spec: &MVSpec, grid: &TimeGrid) -> Result<Reduction> {
    let steps = grid.steps();
    let dt = grid.dt();
    let ones = DVector::from_element(spec.d, 1.0);
    let mut log_discount = Vec::with_capacity(steps + 1);
    let mut theta = Vec::with_capacity(steps);
    let mut s_cum = Vec::with_capacity(steps + 1);
    let mut gain = Vec::with_capacity(steps);
    let mut vol_gain = Vec::with_capacity(steps);
    let mut mu_excess = Vec::with_capacity(steps);
    log_discount.push(0.0);
    s_cum.push(0.0);
    for k in 0..steps {
        let t = grid.t(k);
        let r = self_eval_finite(&spec.r, t)?;
        let mu = spec.mu.eval(t);
        let sigma = spec.sigma.eval(t);
        let mu_ex = &mu - &ones * r;
        let h = &sigma * sigma.transpose();
        let chol = Cholesky::new(h).ok_or_else(|| {
            Error::Ellipticity(format!("σσ' is not positive definite at t = {t}"))
        })?;
        let g = chol.solve(&mu_ex);
        let th = mu_ex.dot(&g);
        log_discount.push(log_discount[k] + r * dt);
        s_cum.push(s_cum[k] + th * dt);
        theta.push(th);
        vol_gain.push(sigma.transpose() * &g);
        gain.push(g);
        mu_excess.push(mu_ex);
    }
    let r_total = log_discount[steps];
    Ok(Reduction {
        target: (-r_total).exp() * spec.A,
        scale: (2.0 * r_total).exp(),
        log_discount,
        theta,
        s_cum,
        gain,
        vol_gain,
        mu_excess,
    })
}

fn self_eval_finite(f: &TimeFn<f64>, t: f64) -> Result<f64> {
    let v = f.eval(t);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("rate is not finite at t = {t}")))
    }
}

/// The optimal strategy and adjoint as affine functions of current wealth,
/// node by node: π_k(X) = intercept_k + slope_k·X and
/// p̄_k(X) = p_gain_k·X + p_shift_k, with q̄_{k,j} = p_gain_k·(σ'π)_j.
/// This is the compact representation used for out-of-sample simulation.
#[derive(Clone, Debug)]
pub struct MVPolicy {
    /// length K (left nodes)
    pub slope: Vec<DVector<f64>>,
    /// length K
    pub intercept: Vec<DVector<f64>>,
    /// length K+1
    pub p_gain: Vec<f64>,
    /// length K+1
    pub p_shift: Vec<f64>,
}

impl MVPolicy {
    pub fn pi_at(&self, k: usize, wealth: f64) -> DVector<f64> {
        &self.intercept[k] + &self.slope[k] * wealth
    }

    pub fn p_at(&self, k: usize, wealth: f64) -> f64 {
        self.p_gain[k] * wealth + self.p_shift[k]
    }
}

/// Deterministic expectation profiles of the adjoint products that appear in
/// first-order sensitivity formulas, at the left grid nodes:
/// psi_r = E[p̄(X̄ - π̄'1)], psi_mu = E[p̄ π̄], psi_sigma = E[π̄ q̄'].
#[derive(Clone, Debug)]
pub struct MVProfiles {
    pub psi_r: Vec<f64>,
    pub psi_mu: Vec<DVector<f64>>,
    pub psi_sigma: Vec<DMatrix<f64>>,
}

/// Solution bundle: optimal paths on the supplied ensemble, the multiplier
/// λ_E attached to the mean constraint, the optimal variance, the affine
/// policy, and the sensitivity profiles.
#[derive(Clone, Debug)]
pub struct MVSolution {
    /// wealth paths, (n_paths, K+1)
    pub x_bar: Array2<f64>,
    /// strategy paths, (n_paths, K, d)
    pub pi_bar: Array3<f64>,
    /// adjoint paths, (n_paths, K+1)
    pub p_bar: Array2<f64>,
    /// adjoint diffusion loadings, (n_paths, K, d)
    pub q_bar: Array3<f64>,
    pub lambda_e: f64,
    pub value: f64,
    pub policy: MVPolicy,
    pub profiles: MVProfiles,
}

impl MVSolution {
    /// p̄(0), the sensitivity of the optimal variance to the start wealth.
    pub fn p0(&self) -> f64 {
        self.p_bar[(0, 0)]
    }
}

/// Solves the dual problem on the zero-interest reduction. The inner
/// quadratic value is ½P(0)y₀² with P(t) = 2e^{S_t - S_T} (the reduced
/// Riccati flow integrates in closed form), the multiplier solves the affine
/// stationarity equation E[X̃_λ(T)] = Ã exactly from two evaluations, and the
/// optimal paths are simulated with the Euler rule on the ensemble.
pub fn solve_dual(spec: &MVSpec, grid: &TimeGrid, w: &BrownianEnsemble) -> Result<MVSolution> {
    spec.validate(grid)?;
    check_ensemble(spec, grid, w)?;
    let red = reduce(spec, grid)?;
    let steps = grid.steps();
    let dt = grid.dt();
    let s_total = red.s_cum[steps];
    let expm = (-s_total).exp();
    let core = dual_core(spec, &red, grid)?;
    let (lambda, y0, value) = (core.lambda, core.y0, core.value);
    let r_total = red.log_discount[steps];
    let lambda_e = core.lambda_e;

    // affine policy and adjoint maps; shift = Ã - λ/2 recovers Ỹ from X̃
    let shift = red.target - 0.5 * lambda;
    let mut slope_v = Vec::with_capacity(steps);
    let mut intercept_v = Vec::with_capacity(steps);
    let mut p_gain = Vec::with_capacity(steps + 1);
    let mut p_shift = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let p_tilde = 2.0 * (red.s_cum[k] - s_total).exp();
        let alpha = (2.0 * r_total - red.log_discount[k]).exp();
        let rho = (-red.log_discount[k]).exp();
        p_gain.push(alpha * p_tilde * rho);
        p_shift.push(-alpha * p_tilde * shift);
        if k < steps {
            slope_v.push(-&red.gain[k]);
            intercept_v.push(&red.gain[k] * (shift * red.log_discount[k].exp()));
        }
    }
    let policy = MVPolicy { slope: slope_v, intercept: intercept_v, p_gain, p_shift };

    // sensitivity profiles from the exact reduced moments E[Y] = y₀e^{-S_k},
    // E[Y²] = y₀²e^{-S_k}; the S_k factors cancel against P̃_k, leaving
    // node-independent prefactors.
    let c_sq = 2.0 * red.scale * expm * y0 * y0;
    let c_lin = 2.0 * red.scale * expm * y0;
    let mut psi_r = Vec::with_capacity(steps);
    let mut psi_mu = Vec::with_capacity(steps);
    let mut psi_sigma = Vec::with_capacity(steps);
    for k in 0..steps {
        let w_k: f64 = red.gain[k].iter().sum();
        psi_r.push(c_lin * spec.x + c_sq * w_k);
        psi_mu.push(&red.gain[k] * (-c_sq));
        psi_sigma.push(&red.gain[k] * red.vol_gain[k].transpose() * c_sq);
    }
    let profiles = MVProfiles { psi_r, psi_mu, psi_sigma };

    // Euler simulation of the reduced state Y on the ensemble, mapped back
    let n_paths = w.n_paths;
    let d = spec.d;
    let mut x_bar = Array2::zeros((n_paths, steps + 1));
    let mut pi_bar = Array3::zeros((n_paths, steps, d));
    let mut p_bar = Array2::zeros((n_paths, steps + 1));
    let mut q_bar = Array3::zeros((n_paths, steps, d));
    let grow: Vec<f64> = red.log_discount.iter().map(|r| r.exp()).collect();
    let ap: Vec<f64> = (0..=steps)
        .map(|k| (2.0 * r_total - red.log_discount[k]).exp() * 2.0 * (red.s_cum[k] - s_total).exp())
        .collect();
    for i in 0..n_paths {
        let mut y = y0;
        for k in 0..=steps {
            x_bar[(i, k)] = grow[k] * (y + shift);
            p_bar[(i, k)] = ap[k] * y;
            if k == steps {
                break;
            }
            let mut gdw = 0.0;
            for j in 0..d {
                let dwj = w.increments[(i, k, j)];
                pi_bar[(i, k, j)] = -grow[k] * red.gain[k][j] * y;
                q_bar[(i, k, j)] = -ap[k] * red.vol_gain[k][j] * y;
                gdw += red.vol_gain[k][j] * dwj;
            }
            y *= 1.0 - red.theta[k] * dt - gdw;
        }
    }
    Ok(MVSolution { x_bar, pi_bar, p_bar, q_bar, lambda_e, value, policy, profiles })
}

struct DualCore {
    lambda: f64,
    y0: f64,
    value: f64,
    lambda_e: f64,
}

// stationarity: h(λ) = E[Ỹ_λ(T)] - λ/2 with E[Ỹ_λ(T)] = (x - Ã + λ/2)e^{-S}
// via the exact mean recursion m_{k+1} = e^{-θ_k dt} m_k. h is affine in λ;
// two evaluations determine the root exactly.
fn dual_core(spec: &MVSpec, red: &Reduction, grid: &TimeGrid) -> Result<DualCore> {
    let steps = grid.steps();
    let dt = grid.dt();
    let s_total = red.s_cum[steps];
    let expm = (-s_total).exp();
    let mean_at = |lambda: f64| -> f64 {
        let mut m = spec.x - red.target + 0.5 * lambda;
        for k in 0..steps {
            m *= (-red.theta[k] * dt).exp();
        }
        m - 0.5 * lambda
    };
    let h0 = mean_at(0.0);
    let slope = mean_at(1.0) - h0;
    if slope.abs() < 1e-14 && h0.abs() > 1e-12 {
        return Err(Error::Degenerate(
            "no excess return anywhere: the mean constraint cannot be met".into(),
        ));
    }
    // when already feasible with zero investment, fall through with λ = 0
    let lambda = if slope.abs() < 1e-14 { 0.0 } else { -h0 / slope };
    let y0 = spec.x - red.target + 0.5 * lambda;
    let value = red.scale * (expm * y0 * y0 - 0.25 * lambda * lambda);
    let lambda_e = lambda * red.log_discount[steps].exp();
    Ok(DualCore { lambda, y0, value, lambda_e })
}

/// Scalar outputs of the dual solve that do not need a path ensemble: the
/// optimal value, the constraint multiplier, and the initial adjoint state.
/// This is the cheap evaluator behind finite-difference probes of the value.
#[derive(Debug, Clone, Copy)]
pub struct DualScalars {
    pub value: f64,
    pub lambda_e: f64,
    pub p0: f64,
}

pub fn dual_scalars(spec: &MVSpec, grid: &TimeGrid) -> Result<DualScalars> {
    spec.validate(grid)?;
    let red = reduce(spec, grid)?;
    let core = dual_core(spec, &red, grid)?;
    let expm = (-red.s_cum[grid.steps()]).exp();
    let p0 = 2.0 * red.scale * expm * core.y0;
    Ok(DualScalars { value: core.value, lambda_e: core.lambda_e, p0 })
}

fn check_ensemble(spec: &MVSpec, grid: &TimeGrid, w: &BrownianEnsemble) -> Result<()> {
    if w.dim != spec.d {
        return Err(Error::ShapeMismatch(format!(
            "ensemble carries {} noise components, the problem has {}",
            w.dim, spec.d
        )));
    }
    if w.grid.steps() != grid.steps() || (w.grid.horizon() - grid.horizon()).abs() > 1e-12 {
        return Err(Error::ShapeMismatch(
            "ensemble grid does not match the solver grid".into(),
        ));
    }
    Ok(())
}

/// Same dual problem solved without discounting the state: the wealth keeps
/// its r X drift and the generic Riccati solver handles it. Only the terminal
/// shift a = A - λ/2 is discounted (through the shifted state Z = X - a·β(t)
/// with β(t) = e^{-∫_t^T r}, which removes the constant from the terminal
/// cost without adding a drift offset). Numerically independent of
/// [`solve_dual`]: RK4 Riccati vs closed exponentials.
pub fn solve_dual_unreduced(
    spec: &MVSpec,
    grid: &TimeGrid,
    w: &BrownianEnsemble,
) -> Result<MVSolution> {
    spec.validate(grid)?;
    check_ensemble(spec, grid, w)?;
    let steps = grid.steps();
    let dt = grid.dt();
    let d = spec.d;
    let mut lq = LQSpec::zeroed(1, d, d);
    lq.A = lift_rate(&spec.r);
    lq.B = excess_row(&spec.mu, &spec.r, d);
    for j in 0..d {
        lq.D[j] = sigma_column_row(&spec.sigma, j);
    }
    lq.N = TimeFn::constant(DMatrix::zeros(d, d));
    lq.delta = 0.0;
    lq.M = DMatrix::from_element(1, 1, 2.0);

    // left-sum discount, as in the reduction
    let mut R = Vec::with_capacity(steps + 1);
    R.push(0.0);
    for k in 0..steps {
        R.push(R[k] + spec.r.eval(grid.t(k)) * dt);
    }
    let r_total = R[steps];
    let rho_t = (-r_total).exp();

    // P(0) from the generic backward integration; the stationarity equation
    // ½P(0)ρ_T Z₀(λ) = λ/2 with Z₀(λ) = x - ρ_T(A - λ/2) is affine in λ
    let ric = riccati_integrate(&lq, grid)?;
    let p0 = ric.P[0][(0, 0)];
    let denom = 1.0 - 0.5 * p0 * rho_t * rho_t;
    if denom.abs() < 1e-14 {
        return Err(Error::Degenerate(
            "no excess return anywhere: the mean constraint cannot be met".into(),
        ));
    }
    let lambda = p0 * rho_t * (spec.x - rho_t * spec.A) / denom;
    let a_shift = spec.A - 0.5 * lambda;
    let z0 = spec.x - rho_t * a_shift;
    lq.x0 = DVector::from_element(1, z0);
    let inner = solve_lq(&lq, grid, w)?;
    let value = 0.5 * p0 * z0 * z0 - 0.25 * lambda * lambda;

    // map Z back to X = Z + a·β(t_k), β = e^{R_k - R_T}
    let beta: Vec<f64> = R.iter().map(|rk| (rk - r_total).exp()).collect();
    let n_paths = w.n_paths;
    let mut x_bar = Array2::zeros((n_paths, steps + 1));
    let mut pi_bar = Array3::zeros((n_paths, steps, d));
    let mut p_bar = Array2::zeros((n_paths, steps + 1));
    let mut q_bar = Array3::zeros((n_paths, steps, d));
    for i in 0..n_paths {
        for k in 0..=steps {
            x_bar[(i, k)] = inner.x_bar[(i, k, 0)] + a_shift * beta[k];
            p_bar[(i, k)] = inner.p_bar[(i, k, 0)];
            if k < steps {
                for j in 0..d {
                    pi_bar[(i, k, j)] = inner.u_bar[(i, k, j)];
                    q_bar[(i, k, j)] = inner.q_bar[(i, k, 0, j)];
                }
            }
        }
    }

    // policy and adjoint maps: π = -G(X - aβ), p̄ = P(X - aβ)
    let mut slope_v = Vec::with_capacity(steps);
    let mut intercept_v = Vec::with_capacity(steps);
    let mut p_gain = Vec::with_capacity(steps + 1);
    let mut p_shift = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let p_k = ric.P[k][(0, 0)];
        p_gain.push(p_k);
        p_shift.push(-p_k * a_shift * beta[k]);
        if k < steps {
            let g = ric.gains[k].column(0).clone_owned();
            intercept_v.push(&g * (a_shift * beta[k]));
            slope_v.push(-g);
        }
    }
    let policy = MVPolicy { slope: slope_v, intercept: intercept_v, p_gain, p_shift };

    // profiles from the moment ODEs of the shifted state
    let mp = closed_loop_moments(&lq, grid, &ric)?;
    let mut psi_r = Vec::with_capacity(steps);
    let mut psi_mu = Vec::with_capacity(steps);
    let mut psi_sigma = Vec::with_capacity(steps);
    for k in 0..steps {
        let p_k = ric.P[k][(0, 0)];
        let g = ric.gains[k].column(0).clone_owned();
        let sigma_k = spec.sigma.eval(grid.t(k));
        let vg = sigma_k.transpose() * &g;
        let m_z = mp.mean[k][0];
        let s_z = mp.second[k][(0, 0)];
        let w_k: f64 = g.iter().sum();
        psi_r.push(p_k * ((1.0 + w_k) * s_z + a_shift * beta[k] * m_z));
        psi_mu.push(&g * (-p_k * s_z));
        psi_sigma.push(&g * vg.transpose() * (p_k * s_z));
    }
    let profiles = MVProfiles { psi_r, psi_mu, psi_sigma };
    Ok(MVSolution {
        x_bar,
        pi_bar,
        p_bar,
        q_bar,
        lambda_e: lambda,
        value,
        policy,
        profiles,
    })
}

fn lift_rate(r: &TimeFn<f64>) -> TimeFn<DMatrix<f64>> {
    match r.constant_value() {
        Some(&v) => TimeFn::constant(DMatrix::from_element(1, 1, v)),
        None => {
            let r = r.clone();
            TimeFn::of(move |t| DMatrix::from_element(1, 1, r.eval(t)))
        }
    }
}

fn row_matrix(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

fn excess_row(mu: &TimeFn<DVector<f64>>, r: &TimeFn<f64>, d: usize) -> TimeFn<DMatrix<f64>> {
    match (mu.constant_value(), r.constant_value()) {
        (Some(m), Some(&rv)) => TimeFn::constant(row_matrix(&(m - DVector::from_element(d, rv)))),
        _ => {
            let mu = mu.clone();
            let r = r.clone();
            TimeFn::of(move |t| {
                row_matrix(&(mu.eval(t) - DVector::from_element(d, r.eval(t))))
            })
        }
    }
}

fn sigma_column_row(sigma: &TimeFn<DMatrix<f64>>, j: usize) -> TimeFn<DMatrix<f64>> {
    match sigma.constant_value() {
        Some(s) => TimeFn::constant(row_matrix(&s.column(j).clone_owned())),
        None => {
            let sigma = sigma.clone();
            TimeFn::of(move |t| row_matrix(&sigma.eval(t).column(j).clone_owned()))
        }
    }
}

/// Closed-form reference for constant coefficients. With θ = μ''(σσ')⁻¹μ',
/// S = θT, discounted target Ã = e^{-rT}A and ỹ₀ = (x-Ã)e^S/(e^S-1):
///
///   λ_E = 2(x-Ã)/((e^S-1)e^{-rT}),   Var = e^{2rT}(x-Ã)²/(e^S-1),
///
/// and the paths are the exact strong solutions driven by the ensemble's
/// increments (geometric in the reduced variable), not an Euler scheme — an
/// independent oracle for the discretized solvers.
#[derive(Clone, Debug)]
pub struct MVClosedForm {
    pub lambda_e: f64,
    pub value: f64,
    /// S = ∫₀ᵀ θ dt
    pub s_total: f64,
    pub x_bar: Array2<f64>,
    pub pi_bar: Array3<f64>,
    pub p_bar: Array2<f64>,
    pub q_bar: Array3<f64>,
    pub profiles: MVProfiles,
}

pub fn solve_closed_form(
    spec: &MVSpec,
    grid: &TimeGrid,
    w: &BrownianEnsemble,
) -> Result<MVClosedForm> {
    spec.validate(grid)?;
    check_ensemble(spec, grid, w)?;
    if !(spec.r.is_constant() && spec.mu.is_constant() && spec.sigma.is_constant()) {
        return Err(Error::Unsupported(
            "closed form requires constant r, mu, sigma".into(),
        ));
    }
    let steps = grid.steps();
    let horizon = grid.horizon();
    let d = spec.d;
    let r = spec.r.eval(0.0);
    let mu = spec.mu.eval(0.0);
    let sigma = spec.sigma.eval(0.0);
    let mu_ex = &mu - DVector::from_element(d, r);
    let h = &sigma * sigma.transpose();
    let chol = Cholesky::new(h).ok_or_else(|| {
        Error::Ellipticity("σσ' is not positive definite".into())
    })?;
    let g = chol.solve(&mu_ex);
    let theta = mu_ex.dot(&g);
    let vol_gain = sigma.transpose() * &g;
    let s_total = theta * horizon;
    let denom = s_total.exp() - 1.0;
    let rho_t = (-r * horizon).exp();
    let target = rho_t * spec.A;
    if denom.abs() < 1e-14 && (spec.x - target).abs() > 1e-12 {
        return Err(Error::Degenerate(
            "no excess return anywhere: the mean constraint cannot be met".into(),
        ));
    }
    let lambda_tilde = if denom.abs() < 1e-14 { 0.0 } else { 2.0 * (spec.x - target) / denom };
    let lambda_e = lambda_tilde / rho_t;
    let value = if denom.abs() < 1e-14 {
        0.0
    } else {
        (spec.x - target).powi(2) / denom / (rho_t * rho_t)
    };
    let y0 = spec.x - target + 0.5 * lambda_tilde;
    let shift = target - 0.5 * lambda_tilde;
    let scale = 1.0 / (rho_t * rho_t);

    let n_paths = w.n_paths;
    let mut x_bar = Array2::zeros((n_paths, steps + 1));
    let mut pi_bar = Array3::zeros((n_paths, steps, d));
    let mut p_bar = Array2::zeros((n_paths, steps + 1));
    let mut q_bar = Array3::zeros((n_paths, steps, d));
    for i in 0..n_paths {
        // exact reduced solution Y(t) = y₀ exp(-(σ'G)'W(t) - (3/2)θt)
        let mut zw = 0.0;
        for k in 0..=steps {
            let t = grid.t(k);
            let y = y0 * (-zw - 1.5 * theta * t).exp();
            let grow = (r * t).exp();
            x_bar[(i, k)] = grow * (y + shift);
            // p̄ = α(t)P̃(t)Y with α = e^{r(2T-t)}... e^{2rT - rt}, P̃ = 2e^{θ(t-T)}
            let ap = (r * (2.0 * horizon - t)).exp() * 2.0 * (theta * (t - horizon)).exp();
            p_bar[(i, k)] = ap * y;
            if k == steps {
                break;
            }
            for j in 0..d {
                pi_bar[(i, k, j)] = -grow * g[j] * y;
                q_bar[(i, k, j)] = -ap * vol_gain[j] * y;
            }
            for j in 0..d {
                zw += vol_gain[j] * w.increments[(i, k, j)];
            }
        }
    }

    let c_sq = 2.0 * scale * (-s_total).exp() * y0 * y0;
    let c_lin = 2.0 * scale * (-s_total).exp() * y0;
    let w_sum: f64 = g.iter().sum();
    let psi_r = vec![c_lin * spec.x + c_sq * w_sum; steps];
    let psi_mu = vec![&g * (-c_sq); steps];
    let psi_sigma = vec![&g * vol_gain.transpose() * c_sq; steps];
    Ok(MVClosedForm {
        lambda_e,
        value,
        s_total,
        x_bar,
        pi_bar,
        p_bar,
        q_bar,
        profiles: MVProfiles { psi_r, psi_mu, psi_sigma },
    })
}

/// Monte-Carlo verification statistics for a solved policy, from `n_paths`
/// fresh paths (streamed; memory does not grow with `n_paths`).
#[derive(Clone, Debug)]
pub struct MVVerification {
    pub n_paths: usize,
    /// sample mean of X(T)
    pub mean_terminal: f64,
    /// |E[X(T)] - A|
    pub feasibility_gap: f64,
    pub feasibility_stderr: f64,
    /// sample variance of X(T)
    pub variance: f64,
    pub variance_stderr: f64,
    /// |sample variance - reported optimal value|
    pub value_residual: f64,
    /// sup over grid nodes of E‖μ'p̄ + σq̄‖ (optimality system residual)
    pub optimality_sup: f64,
    /// E[p̄(T) - p̄(0) + ∫ r p̄ dt] (martingale drift of the adjoint)
    pub martingale_drift: f64,
    pub martingale_stderr: f64,
}

/// Re-simulates the affine policy with fresh randomness and reports the
/// feasibility gap E[X(T)] - A, the variance against the reported value, the
/// pointwise optimality residual μ'p̄ + σq̄, and the martingale drift of p̄.
pub fn mc_verify(
    spec: &MVSpec,
    grid: &TimeGrid,
    sol: &MVSolution,
    n_paths: usize,
    seed: u64,
) -> Result<MVVerification> {
    spec.validate(grid)?;
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let steps = grid.steps();
    if sol.policy.slope.len() != steps || sol.policy.p_gain.len() != steps + 1 {
        return Err(Error::ShapeMismatch(
            "policy does not match the grid".into(),
        ));
    }
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let d = spec.d;
    let ones = DVector::from_element(d, 1.0);
    // left-node coefficient samples
    let mut r_s = Vec::with_capacity(steps);
    let mut mu_ex_s = Vec::with_capacity(steps);
    let mut sigma_s = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = grid.t(k);
        let r = spec.r.eval(t);
        r_s.push(r);
        mu_ex_s.push(spec.mu.eval(t) - &ones * r);
        sigma_s.push(spec.sigma.eval(t));
    }

    let mut sum_xt = 0.0;
    let mut sum_xt2 = 0.0;
    let mut sum_sq_dev = 0.0; // accumulates (X_T - A)²·(X_T - A)²  for stderr
    let mut sum_mart = 0.0;
    let mut sum_mart2 = 0.0;
    let mut opt_sum = vec![0.0; steps];
    let mut pi = DVector::zeros(d);
    let mut dw = DVector::zeros(d);
    for i in 0..n_paths {
        let mut rng = path_rng(seed, i);
        let mut x = spec.x;
        let p0 = sol.policy.p_at(0, x);
        let mut r_p_int = 0.0;
        for k in 0..steps {
            let p = sol.policy.p_at(k, x);
            r_p_int += r_s[k] * p * dt;
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                dw[j] = z * sqrt_dt;
            }
            pi.copy_from(&sol.policy.pi_at(k, x));
            // q̄_j = p_gain_k (σ'π)_j; optimality residual μ'p̄ + σ q̄
            let q = sigma_s[k].transpose() * &pi * sol.policy.p_gain[k];
            let res = &mu_ex_s[k] * p + &sigma_s[k] * &q;
            opt_sum[k] += res.norm();
            let drift = r_s[k] * x + pi.dot(&mu_ex_s[k]);
            let diffusion = (sigma_s[k].transpose() * &pi).dot(&dw);
            x += drift * dt + diffusion;
        }
        let p_terminal = sol.policy.p_at(steps, x);
        let mart = p_terminal - p0 + r_p_int;
        sum_mart += mart;
        sum_mart2 += mart * mart;
        sum_xt += x;
        sum_xt2 += (x - spec.A) * (x - spec.A);
        sum_sq_dev += (x - spec.A).powi(4);
    }
    let nf = n_paths as f64;
    let mean_terminal = sum_xt / nf;
    let msq = sum_xt2 / nf; // E[(X_T - A)²]
    let gap = mean_terminal - spec.A;
    let variance = msq - gap * gap;
    let var_of_sq = (sum_sq_dev / nf - msq * msq).max(0.0);
    let feas_stderr = ((msq - gap * gap).max(0.0) / nf).sqrt();
    let mart_mean = sum_mart / nf;
    let mart_var = (sum_mart2 / nf - mart_mean * mart_mean).max(0.0);
    Ok(MVVerification {
        n_paths,
        mean_terminal,
        feasibility_gap: gap.abs(),
        feasibility_stderr: feas_stderr,
        variance,
        variance_stderr: (var_of_sq / nf).sqrt(),
        value_residual: (variance - sol.value).abs(),
        optimality_sup: opt_sum
            .iter()
            .map(|s| s / nf)
            .fold(0.0, f64::max),
        martingale_drift: mart_mean,
        martingale_stderr: (mart_var / nf).sqrt(),
    })
}

#[cfg(test)]
pub(crate) use tests::one_asset;
