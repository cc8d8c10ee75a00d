//! First-order sensitivity of the optimal value with respect to problem data.
//!
//! The directional derivative along a perturbation of the dynamics
//! coefficients has an adjoint representation: with (x̄, ū) the optimal pair
//! and (p̄, q̄) the adjoint states,
//!
//! ```text
//! Dv = p̄(0)'Δx₀ + E ∫ p̄'(ΔA x̄ + ΔB ū + Δe) dt
//!               + E ∫ Σ_j q̄ʲ'(ΔCʲ x̄ + ΔDʲ ū + Δfʲ) dt
//! ```
//!
//! Because the optimal pair is an affine function of the state, every
//! integrand is a quadratic form in x̄ and the expectation reduces to the
//! closed-loop first and second moments — no paths are needed. [`dv_lq`]
//! evaluates the integral that way with Simpson quadrature on the solver
//! grid; [`dv_lq_mc`] evaluates the same integral as a Monte Carlo average
//! over a simulated ensemble and reports a standard error. [`dv_mv`] does the
//! analogous job for the mean-variance problem using the sensitivity
//! profiles attached to its solution.
//!
//! [`fd_check`] is the independent cross-check: a central finite-difference
//! quotient of the value along the same one-parameter family, with a
//! Richardson extrapolant to knock out the leading quadrature error.

#![allow(non_snake_case)]

use nalgebra::{DMatrix, DVector};

use crate::brownian::BrownianEnsemble;
use crate::grid::TimeGrid;
use crate::lq::{
    closed_loop_moments, coeffs_at, expectation_affine_product, feedback_at, feedback_mid,
    hermite_mid_mat, hermite_mid_vec, riccati_integrate, solve_lq, FeedbackAt, LQSpec,
};
use crate::mv::{dual_scalars, MVSolution, MVSpec};
use crate::timefn::TimeFn;
use crate::{Error, Result};

/// A direction in the data of the dynamics-coefficient problem. Every field
/// is an offset added to the corresponding coefficient; weights (Q, N, M)
/// stay fixed, since the adjoint representation covers the dynamics and the
/// initial state.
#[derive(Clone, Debug)]
pub struct LQPerturbation {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub dx0: DVector<f64>,
    pub dA: TimeFn<DMatrix<f64>>,
    pub dB: TimeFn<DMatrix<f64>>,
    pub dC: Vec<TimeFn<DMatrix<f64>>>,
    pub dD: Vec<TimeFn<DMatrix<f64>>>,
    pub de: TimeFn<DVector<f64>>,
    pub df: Vec<TimeFn<DVector<f64>>>,
}

impl LQPerturbation {
    pub fn zero(n: usize, m: usize, d: usize) -> Self {
        LQPerturbation {
            n,
            m,
            d,
            dx0: DVector::zeros(n),
            dA: TimeFn::constant(DMatrix::zeros(n, n)),
            dB: TimeFn::constant(DMatrix::zeros(n, m)),
            dC: vec![TimeFn::constant(DMatrix::zeros(n, n)); d],
            dD: vec![TimeFn::constant(DMatrix::zeros(n, m)); d],
            de: TimeFn::constant(DVector::zeros(n)),
            df: vec![TimeFn::constant(DVector::zeros(n)); d],
        }
    }

    /// The perturbed problem at parameter `eps` along this direction.
    pub fn apply(&self, spec: &LQSpec, eps: f64) -> LQSpec {
        let mut out = spec.clone();
        out.x0 = &spec.x0 + &self.dx0 * eps;
        out.A = TimeFn::affine(&spec.A, eps, &self.dA);
        out.B = TimeFn::affine(&spec.B, eps, &self.dB);
        out.e = TimeFn::affine(&spec.e, eps, &self.de);
        for j in 0..self.d.min(spec.d) {
            out.C[j] = TimeFn::affine(&spec.C[j], eps, &self.dC[j]);
            out.D[j] = TimeFn::affine(&spec.D[j], eps, &self.dD[j]);
            out.f[j] = TimeFn::affine(&spec.f[j], eps, &self.df[j]);
        }
        out
    }

    /// The linear combination a·p + b·q, for homogeneity/additivity checks.
    pub fn combine(a: f64, p: &Self, b: f64, q: &Self) -> Self {
        let zero = Self::zero(p.n, p.m, p.d);
        let mix_mat = |z: &TimeFn<DMatrix<f64>>, x: &TimeFn<DMatrix<f64>>, y: &TimeFn<DMatrix<f64>>| {
            TimeFn::affine(&TimeFn::affine(z, a, x), b, y)
        };
        let mix_vec = |z: &TimeFn<DVector<f64>>, x: &TimeFn<DVector<f64>>, y: &TimeFn<DVector<f64>>| {
            TimeFn::affine(&TimeFn::affine(z, a, x), b, y)
        };
        LQPerturbation {
            n: p.n,
            m: p.m,
            d: p.d,
            dx0: &p.dx0 * a + &q.dx0 * b,
            dA: mix_mat(&zero.dA, &p.dA, &q.dA),
            dB: mix_mat(&zero.dB, &p.dB, &q.dB),
            dC: (0..p.d).map(|j| mix_mat(&zero.dC[j], &p.dC[j], &q.dC[j])).collect(),
            dD: (0..p.d).map(|j| mix_mat(&zero.dD[j], &p.dD[j], &q.dD[j])).collect(),
            de: mix_vec(&zero.de, &p.de, &q.de),
            df: (0..p.d).map(|j| mix_vec(&zero.df[j], &p.df[j], &q.df[j])).collect(),
        }
    }

    fn check_shapes(&self, spec: &LQSpec) -> Result<()> {
        if self.n != spec.n || self.m != spec.m || self.d != spec.d {
            return Err(Error::ShapeMismatch(format!(
                "perturbation sized for (n={}, m={}, d={}), problem has (n={}, m={}, d={})",
                self.n, self.m, self.d, spec.n, spec.m, spec.d
            )));
        }
        if self.dx0.len() != spec.n {
            return Err(Error::ShapeMismatch("dx0 length != n".into()));
        }
        Ok(())
    }
}

/// A direction in the data of the mean-variance problem.
#[derive(Clone, Debug)]
pub struct MVPerturbation {
    pub d: usize,
    /// initial wealth offset
    pub dx: f64,
    /// target mean offset
    pub dA: f64,
    pub dr: TimeFn<f64>,
    pub dmu: TimeFn<DVector<f64>>,
    pub dsigma: TimeFn<DMatrix<f64>>,
}

impl MVPerturbation {
    pub fn zero(d: usize) -> Self {
        MVPerturbation {
            d,
            dx: 0.0,
            dA: 0.0,
            dr: TimeFn::constant(0.0),
            dmu: TimeFn::constant(DVector::zeros(d)),
            dsigma: TimeFn::constant(DMatrix::zeros(d, d)),
        }
    }

    pub fn apply(&self, spec: &MVSpec, eps: f64) -> MVSpec {
        let mut out = spec.clone();
        out.x = spec.x + eps * self.dx;
        out.A = spec.A + eps * self.dA;
        out.r = TimeFn::affine(&spec.r, eps, &self.dr);
        out.mu = TimeFn::affine(&spec.mu, eps, &self.dmu);
        out.sigma = TimeFn::affine(&spec.sigma, eps, &self.dsigma);
        out
    }

    pub fn combine(a: f64, p: &Self, b: f64, q: &Self) -> Self {
        let zero = Self::zero(p.d);
        MVPerturbation {
            d: p.d,
            dx: a * p.dx + b * q.dx,
            dA: a * p.dA + b * q.dA,
            dr: TimeFn::affine(&TimeFn::affine(&zero.dr, a, &p.dr), b, &q.dr),
            dmu: TimeFn::affine(&TimeFn::affine(&zero.dmu, a, &p.dmu), b, &q.dmu),
            dsigma: TimeFn::affine(&TimeFn::affine(&zero.dsigma, a, &p.dsigma), b, &q.dsigma),
        }
    }
}

/// A directional derivative split by data channel.
#[derive(Clone, Debug)]
pub struct Sensitivity {
    pub value: f64,
    /// per-channel contributions, summing to `value`
    pub breakdown: Vec<(String, f64)>,
}

/// A Monte Carlo estimate of a directional derivative.
#[derive(Clone, Debug)]
pub struct SensitivityStat {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

/// One-sided and extrapolated difference quotients of a scalar map.
#[derive(Clone, Copy, Debug)]
pub struct FdEstimate {
    /// central quotient at the requested step
    pub central: f64,
    /// (4·D(τ/2) − D(τ))/3, cancelling the τ² truncation term
    pub richardson: f64,
    pub step: f64,
}

/// Central finite-difference derivative of `f` at 0 with Richardson
/// extrapolation, from four evaluations at ±τ and ±τ/2.
pub fn fd_check(f: impl Fn(f64) -> Result<f64>, tau: f64) -> Result<FdEstimate> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument("fd step must be positive and finite".into()));
    }
    let coarse = (f(tau)? - f(-tau)?) / (2.0 * tau);
    let fine = (f(0.5 * tau)? - f(-0.5 * tau)?) / tau;
    let richardson = (4.0 * fine - coarse) / 3.0;
    if !coarse.is_finite() || !fine.is_finite() {
        return Err(Error::NonFinite("finite-difference quotient is not finite".into()));
    }
    Ok(FdEstimate { central: coarse, richardson, step: tau })
}

/// Forward quotient (f(τ) − f(0))/τ. Used where the map is even in the
/// parameter and the central quotient would vanish identically.
pub fn fd_forward(f: impl Fn(f64) -> Result<f64>, tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument("fd step must be positive and finite".into()));
    }
    let q = (f(tau)? - f(0.0)?) / tau;
    if !q.is_finite() {
        return Err(Error::NonFinite("finite-difference quotient is not finite".into()));
    }
    Ok(q)
}

/// The optimal value of the perturbed problem as a function of the ray
/// parameter, for feeding to [`fd_check`]. Each evaluation runs the backward
/// flow on the perturbed coefficients; no paths are involved.
pub fn lq_value_on_ray<'a>(
    spec: &'a LQSpec,
    grid: &'a TimeGrid,
    pert: &'a LQPerturbation,
) -> impl Fn(f64) -> Result<f64> + 'a {
    move |eps: f64| {
        let bumped = pert.apply(spec, eps);
        let ric = riccati_integrate(&bumped, grid)?;
        Ok(ric.value(&bumped.x0))
    }
}

/// Mean-variance analogue of [`lq_value_on_ray`], through the closed-form
/// dual scalars.
pub fn mv_value_on_ray<'a>(
    spec: &'a MVSpec,
    grid: &'a TimeGrid,
    pert: &'a MVPerturbation,
) -> impl Fn(f64) -> Result<f64> + 'a {
    move |eps: f64| Ok(dual_scalars(&pert.apply(spec, eps), grid)?.value)
}

// Channel contributions of the integrand at one time point, in the order
// dA, dB, de, dC, dD, df. With u = -(Gx + g) the control substitutes into
// affine functions of x, so each term is E[(R₁x + s₁)'(R₂x + s₂)] for the
// appropriate pair of affine maps:
//   drift terms:  R₁ = P, s₁ = φ (that is, p̄ = Px̄ + φ)
//   noise terms:  R₁ = P·C_clʲ, s₁ = P·f_clʲ (that is, q̄ʲ = P(C_clʲx̄ + f_clʲ))
fn channel_integrands(
    pert: &LQPerturbation,
    t: f64,
    P: &DMatrix<f64>,
    phi: &DVector<f64>,
    fb: &FeedbackAt,
    mean: &DVector<f64>,
    second: &DMatrix<f64>,
) -> [f64; 6] {
    let n = pert.n;
    let zero_mat = DMatrix::<f64>::zeros(n, n);
    let zero_vec = DVector::<f64>::zeros(n);
    let dA = pert.dA.eval(t);
    let dB = pert.dB.eval(t);
    let de = pert.de.eval(t);

    let a_term = expectation_affine_product(P, phi, &dA, &zero_vec, mean, second);
    let b_term = expectation_affine_product(
        P,
        phi,
        &(-(&dB) * &fb.gain),
        &(-(&dB) * &fb.offset),
        mean,
        second,
    );
    let e_term = expectation_affine_product(P, phi, &zero_mat, &de, mean, second);

    let mut c_term = 0.0;
    let mut d_term = 0.0;
    let mut f_term = 0.0;
    for j in 0..pert.d {
        let r1 = P * &fb.c_cl[j];
        let s1 = P * &fb.f_cl[j];
        let dC = pert.dC[j].eval(t);
        let dD = pert.dD[j].eval(t);
        let df = pert.df[j].eval(t);
        c_term += expectation_affine_product(&r1, &s1, &dC, &zero_vec, mean, second);
        d_term += expectation_affine_product(
            &r1,
            &s1,
            &(-(&dD) * &fb.gain),
            &(-(&dD) * &fb.offset),
            mean,
            second,
        );
        f_term += expectation_affine_product(&r1, &s1, &zero_mat, &df, mean, second);
    }
    [a_term, b_term, e_term, c_term, d_term, f_term]
}

/// Adjoint-state directional derivative of the optimal value, evaluated
/// deterministically. The backward flow supplies (P, φ) and the feedback,
/// the closed-loop moment system supplies E[x̄] and E[x̄x̄'], and each channel
/// integral is a Simpson sum with cubic-Hermite midpoint reconstruction —
/// the whole pipeline carries the O(dt⁴) accuracy of the underlying
/// integrators.
pub fn dv_lq(spec: &LQSpec, grid: &TimeGrid, pert: &LQPerturbation) -> Result<Sensitivity> {
    pert.check_shapes(spec)?;
    let ric = riccati_integrate(spec, grid)?;
    let mom = closed_loop_moments(spec, grid, &ric)?;
    let steps = grid.steps();
    let dt = grid.dt();

    // node feedbacks: the Riccati solution caches the left-node ones, the
    // terminal one is recomputed
    let mut fb_nodes = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = grid.t(k);
        fb_nodes.push(feedback_at(&coeffs_at(spec, t), &ric.P[k], &ric.phi[k], t)?);
    }

    let mut sums = [0.0; 6];
    for k in 0..steps {
        let t0 = grid.t(k);
        let t1 = grid.t(k + 1);
        let tm = t0 + 0.5 * dt;
        let left = channel_integrands(pert, t0, &ric.P[k], &ric.phi[k], &fb_nodes[k], &mom.mean[k], &mom.second[k]);
        let right = channel_integrands(
            pert,
            t1,
            &ric.P[k + 1],
            &ric.phi[k + 1],
            &fb_nodes[k + 1],
            &mom.mean[k + 1],
            &mom.second[k + 1],
        );
        let p_mid = hermite_mid_mat(&ric.P[k], &ric.P[k + 1], &ric.dP[k], &ric.dP[k + 1], dt);
        let phi_mid = hermite_mid_vec(&ric.phi[k], &ric.phi[k + 1], &ric.dphi[k], &ric.dphi[k + 1], dt);
        let m_mid = hermite_mid_vec(&mom.mean[k], &mom.mean[k + 1], &mom.d_mean[k], &mom.d_mean[k + 1], dt);
        let s_mid =
            hermite_mid_mat(&mom.second[k], &mom.second[k + 1], &mom.d_second[k], &mom.d_second[k + 1], dt);
        let fb_m = feedback_mid(spec, grid, &ric, k)?;
        let mid = channel_integrands(pert, tm, &p_mid, &phi_mid, &fb_m, &m_mid, &s_mid);
        for c in 0..6 {
            sums[c] += dt / 6.0 * (left[c] + 4.0 * mid[c] + right[c]);
        }
    }

    let head = ric.p0(&spec.x0).dot(&pert.dx0);
    let breakdown = vec![
        ("dx0".to_string(), head),
        ("dA".to_string(), sums[0]),
        ("dB".to_string(), sums[1]),
        ("de".to_string(), sums[2]),
        ("dC".to_string(), sums[3]),
        ("dD".to_string(), sums[4]),
        ("df".to_string(), sums[5]),
    ];
    let value = head + sums.iter().sum::<f64>();
    if !value.is_finite() {
        return Err(Error::NonFinite("directional derivative is not finite".into()));
    }
    Ok(Sensitivity { value, breakdown })
}

/// Same directional derivative, estimated as a Monte Carlo average of the
/// pathwise left-point quadrature over a simulated optimal ensemble. Agrees
/// with [`dv_lq`] up to O(dt) + O(n_paths^{-1/2}); its standard error is the
/// sampling noise only.
pub fn dv_lq_mc(
    spec: &LQSpec,
    grid: &TimeGrid,
    w: &BrownianEnsemble,
    pert: &LQPerturbation,
) -> Result<SensitivityStat> {
    pert.check_shapes(spec)?;
    let sol = solve_lq(spec, grid, w)?;
    let steps = grid.steps();
    let dt = grid.dt();
    let n = spec.n;
    let m = spec.m;
    let d = spec.d;
    let n_paths = w.n_paths;

    // left-node perturbation coefficients
    let dA: Vec<DMatrix<f64>> = pert.dA.sample(grid);
    let dB: Vec<DMatrix<f64>> = pert.dB.sample(grid);
    let de: Vec<DVector<f64>> = pert.de.sample(grid);
    let dC: Vec<Vec<DMatrix<f64>>> = pert.dC.iter().map(|c| c.sample(grid)).collect();
    let dD: Vec<Vec<DMatrix<f64>>> = pert.dD.iter().map(|c| c.sample(grid)).collect();
    let df: Vec<Vec<DVector<f64>>> = pert.df.iter().map(|c| c.sample(grid)).collect();

    let head = {
        let mut p0 = DVector::zeros(n);
        for r in 0..n {
            p0[r] = sol.p_bar[(0, 0, r)];
        }
        p0.dot(&pert.dx0)
    };

    let mut per_path = Vec::with_capacity(n_paths);
    let mut x_k = DVector::zeros(n);
    let mut u_k = DVector::zeros(m);
    let mut p_k = DVector::zeros(n);
    let mut q_kj = DVector::zeros(n);
    for i in 0..n_paths {
        let mut acc = 0.0;
        for k in 0..steps {
            for r in 0..n {
                x_k[r] = sol.x_bar[(i, k, r)];
                p_k[r] = sol.p_bar[(i, k, r)];
            }
            for r in 0..m {
                u_k[r] = sol.u_bar[(i, k, r)];
            }
            let mut drift = &dA[k] * &x_k + &dB[k] * &u_k + &de[k];
            let mut term = p_k.dot(&drift);
            for j in 0..d {
                for r in 0..n {
                    q_kj[r] = sol.q_bar[(i, k, r, j)];
                }
                drift = &dC[j][k] * &x_k + &dD[j][k] * &u_k + &df[j][k];
                term += q_kj.dot(&drift);
            }
            acc += term * dt;
        }
        per_path.push(head + acc);
    }
    let stat = crate::lq::mean_stderr(&per_path);
    if !stat.mean.is_finite() {
        return Err(Error::NonFinite("directional derivative is not finite".into()));
    }
    Ok(SensitivityStat { value: stat.mean, stderr: stat.stderr, n_paths })
}

/// Directional derivative for a controlled system written in the additive
/// form dx = (A x + B u + f) dt + Σ_j σ_j dW_j: the direction carries an
/// initial-state offset, a drift offset and one diffusion offset per noise
/// component. Delegates to [`dv_lq`] with the matching channel labels.
pub fn dv_additive(
    spec: &LQSpec,
    grid: &TimeGrid,
    dx0: &DVector<f64>,
    df: &TimeFn<DVector<f64>>,
    dsigma: &[TimeFn<DVector<f64>>],
) -> Result<Sensitivity> {
    if dsigma.len() != spec.d {
        return Err(Error::ShapeMismatch(format!(
            "{} diffusion offsets for {} noise components",
            dsigma.len(),
            spec.d
        )));
    }
    let mut pert = LQPerturbation::zero(spec.n, spec.m, spec.d);
    pert.dx0 = dx0.clone();
    pert.de = df.clone();
    pert.df = dsigma.to_vec();
    let full = dv_lq(spec, grid, &pert)?;
    let pick = |label: &str| {
        full.breakdown
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    };
    let breakdown = vec![
        ("dx0".to_string(), pick("dx0")),
        ("df".to_string(), pick("de")),
        ("dsigma".to_string(), pick("df")),
    ];
    Ok(Sensitivity { value: full.value, breakdown })
}

/// Directional derivative of the mean-variance value from the adjoint
/// representation: the initial adjoint state weights the wealth offset, the
/// constraint multiplier weights the target offset (with opposite sign), and
/// the coefficient channels integrate the sensitivity profiles attached to
/// the solution with left-point quadrature — the same rule the solver uses,
/// which makes the derivative exact for the discrete value.
pub fn dv_mv(
    sol: &MVSolution,
    grid: &TimeGrid,
    pert: &MVPerturbation,
) -> Result<Sensitivity> {
    let steps = grid.steps();
    let dt = grid.dt();
    let d = pert.d;
    if sol.profiles.psi_mu.len() != steps {
        return Err(Error::ShapeMismatch(
            "solution profiles do not match the grid".into(),
        ));
    }
    if !sol.profiles.psi_mu.is_empty() && sol.profiles.psi_mu[0].len() != d {
        return Err(Error::ShapeMismatch(format!(
            "perturbation sized for {} assets, solution has {}",
            d,
            sol.profiles.psi_mu[0].len()
        )));
    }
    let head_x = sol.p0() * pert.dx;
    let head_a = -sol.lambda_e * pert.dA;
    let mut term_r = 0.0;
    let mut term_mu = 0.0;
    let mut term_sigma = 0.0;
    for k in 0..steps {
        let t = grid.t(k);
        term_r += dt * sol.profiles.psi_r[k] * pert.dr.eval(t);
        term_mu += dt * pert.dmu.eval(t).dot(&sol.profiles.psi_mu[k]);
        let ds = pert.dsigma.eval(t);
        term_sigma += dt * ds.component_mul(&sol.profiles.psi_sigma[k]).sum();
    }
    let value = head_x + head_a + term_r + term_mu + term_sigma;
    if !value.is_finite() {
        return Err(Error::NonFinite("directional derivative is not finite".into()));
    }
    let breakdown = vec![
        ("dx".to_string(), head_x),
        ("dA".to_string(), head_a),
        ("dr".to_string(), term_r),
        ("dmu".to_string(), term_mu),
        ("dsigma".to_string(), term_sigma),
    ];
    Ok(Sensitivity { value, breakdown })
}

/// Monte Carlo counterpart of [`dv_mv`]: the coefficient channels are
/// evaluated pathwise from the simulated optimal quadruple,
///
/// ```text
/// Dv ≈ p̄(0)Δx − λ_E ΔA
///      + mean_i Σ_k dt [ p̄ᵢₖ(Δr_k(X̄ᵢₖ − 𝟙'π̄ᵢₖ) + Δμ_k'π̄ᵢₖ) + (Δσ_k'π̄ᵢₖ)'q̄ᵢₖ ]
/// ```
///
/// and the standard error covers the path average.
pub fn dv_mv_mc(
    sol: &MVSolution,
    grid: &TimeGrid,
    pert: &MVPerturbation,
) -> Result<SensitivityStat> {
    let steps = grid.steps();
    let dt = grid.dt();
    let d = pert.d;
    let n_paths = sol.x_bar.nrows();
    if sol.pi_bar.shape() != [n_paths, steps, d] {
        return Err(Error::ShapeMismatch(
            "perturbation/solution dimensions do not match".into(),
        ));
    }
    let head = sol.p0() * pert.dx - sol.lambda_e * pert.dA;
    let dr: Vec<f64> = pert.dr.sample(grid);
    let dmu: Vec<DVector<f64>> = pert.dmu.sample(grid);
    let dsigma: Vec<DMatrix<f64>> = pert.dsigma.sample(grid);
    let mut per_path = Vec::with_capacity(n_paths);
    let mut pi = DVector::zeros(d);
    let mut q = DVector::zeros(d);
    for i in 0..n_paths {
        let mut acc = 0.0;
        for k in 0..steps {
            for j in 0..d {
                pi[j] = sol.pi_bar[(i, k, j)];
                q[j] = sol.q_bar[(i, k, j)];
            }
            let p = sol.p_bar[(i, k)];
            let x = sol.x_bar[(i, k)];
            let bank = x - pi.sum();
            let drift = dr[k] * bank + dmu[k].dot(&pi);
            // Δ(π'σ) dW pairs with q̄: (Δσ'π)'q̄
            let vol = (dsigma[k].tr_mul(&pi)).dot(&q);
            acc += dt * (p * drift + vol);
        }
        per_path.push(head + acc);
    }
    let stat = crate::lq::mean_stderr(&per_path);
    if !stat.mean.is_finite() {
        return Err(Error::NonFinite("directional derivative is not finite".into()));
    }
    Ok(SensitivityStat { value: stat.mean, stderr: stat.stderr, n_paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::lq::scalar_benchmark;
    use crate::mv::{one_asset, solve_dual};
    use approx::assert_relative_eq;

    fn grid(steps: usize) -> TimeGrid {
        crate::grid::build_grid(1.0, steps).unwrap()
    }

    // dx = (x/(2-t)... ) no: the benchmark is A=0, B=1, Q=0, N=1, M=1 with
    // x̄(t) = x₀(2-t)/2, p̄ ≡ x₀/2. For a constant dA ≡ 1 the derivative is
    // ∫ p̄ x̄ dt = x₀²/4 · ∫(2-t) dt = 0.375 x₀², and for de ≡ 1 it is
    // ∫ p̄ dt = x₀/2.
    #[test]
    fn scalar_benchmark_channels_match_hand_values() {
        let spec = scalar_benchmark(1.0);
        let g = grid(400);
        let mut pert = LQPerturbation::zero(1, 1, 1);
        pert.dA = TimeFn::constant(DMatrix::from_element(1, 1, 1.0));
        pert.de = TimeFn::constant(DVector::from_element(1, 1.0));
        pert.dx0 = DVector::from_element(1, 1.0);
        let s = dv_lq(&spec, &g, &pert).unwrap();
        let by: std::collections::HashMap<_, _> = s.breakdown.iter().cloned().collect();
        assert_relative_eq!(by["dA"], 0.375, max_relative = 1e-9);
        assert_relative_eq!(by["de"], 0.5, max_relative = 1e-9);
        // p̄(0)'dx0 = x₀/2
        assert_relative_eq!(by["dx0"], 0.5, max_relative = 1e-12);
        assert_relative_eq!(s.value, by["dA"] + by["de"] + by["dx0"], epsilon = 1e-14);
    }

    fn noisy_instance() -> LQSpec {
        let mut spec = LQSpec::zeroed(2, 2, 2);
        spec.x0 = DVector::from_vec(vec![1.0, -0.5]);
        spec.A = TimeFn::of(|t: f64| DMatrix::from_row_slice(2, 2, &[0.2, -0.3 + 0.1 * t, 0.4, -0.1]));
        spec.B = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.1, 0.8]));
        spec.C[0] = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, 0.2]));
        spec.C[1] = TimeFn::of(|t: f64| DMatrix::from_row_slice(2, 2, &[0.0, 0.1 * (1.0 - t), 0.0, 0.15]));
        spec.D[0] = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.1]));
        spec.D[1] = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.0, 0.05, 0.1, 0.0]));
        spec.e = TimeFn::of(|t: f64| DVector::from_vec(vec![0.1, -0.2 * t]));
        spec.f[0] = TimeFn::constant(DVector::from_vec(vec![0.05, 0.1]));
        spec.f[1] = TimeFn::of(|t: f64| DVector::from_vec(vec![0.2 * t, 0.0]));
        spec.Q = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]));
        spec.N = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.5]));
        spec.M = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 2.0]);
        spec.delta = 0.4;
        spec
    }

    fn mixed_direction() -> LQPerturbation {
        let mut pert = LQPerturbation::zero(2, 2, 2);
        pert.dx0 = DVector::from_vec(vec![0.3, -0.7]);
        pert.dA = TimeFn::of(|t: f64| DMatrix::from_row_slice(2, 2, &[0.5, t, -0.2, 0.1]));
        pert.dB = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.4, -0.1]));
        pert.dC[0] = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.0, -0.1]));
        pert.dC[1] = TimeFn::of(|t: f64| DMatrix::from_row_slice(2, 2, &[0.0, 0.1 * t, 0.2, 0.0]));
        pert.dD[0] = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, 0.1]));
        pert.dD[1] = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.0, 0.2, -0.05, 0.0]));
        pert.de = TimeFn::of(|t: f64| DVector::from_vec(vec![-0.3, 0.2 + 0.1 * t]));
        pert.df[0] = TimeFn::constant(DVector::from_vec(vec![0.1, -0.2]));
        pert.df[1] = TimeFn::of(|t: f64| DVector::from_vec(vec![0.0, 0.3 * (1.0 - t)]));
        pert
    }

    #[test]
    fn mixed_direction_matches_value_differences() {
        let spec = noisy_instance();
        let g = grid(200);
        let pert = mixed_direction();
        let adj = dv_lq(&spec, &g, &pert).unwrap();
        let fd = fd_check(lq_value_on_ray(&spec, &g, &pert), 1e-2).unwrap();
        assert_relative_eq!(adj.value, fd.richardson, max_relative = 1e-8);
        // the plain central quotient is worse than the extrapolant
        assert!((adj.value - fd.central).abs() <= 1e-4 * adj.value.abs().max(1.0));
    }

    #[test]
    fn monte_carlo_quadrature_agrees_with_deterministic() {
        let spec = noisy_instance();
        let g = grid(250);
        let pert = mixed_direction();
        let adj = dv_lq(&spec, &g, &pert).unwrap();
        let w = sample_brownian(g, 4000, 2, 99).unwrap();
        let mc = dv_lq_mc(&spec, &g, &w, &pert).unwrap();
        let tol = 4.0 * mc.stderr + 20.0 * g.dt() * adj.value.abs().max(1.0);
        assert!(
            (mc.value - adj.value).abs() <= tol,
            "mc {} vs deterministic {} (stderr {}, tol {})",
            mc.value,
            adj.value,
            mc.stderr,
            tol
        );
        assert!(mc.stderr > 0.0);
    }

    #[test]
    fn derivative_is_linear_in_the_direction() {
        let spec = noisy_instance();
        let g = grid(60);
        let p1 = mixed_direction();
        let mut p2 = LQPerturbation::zero(2, 2, 2);
        p2.dx0 = DVector::from_vec(vec![-1.0, 0.4]);
        p2.dA = TimeFn::of(|t: f64| DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.3 * t, 0.2]));
        p2.df[0] = TimeFn::constant(DVector::from_vec(vec![0.3, 0.3]));
        let combo = LQPerturbation::combine(2.0, &p1, -0.5, &p2);
        let v1 = dv_lq(&spec, &g, &p1).unwrap().value;
        let v2 = dv_lq(&spec, &g, &p2).unwrap().value;
        let vc = dv_lq(&spec, &g, &combo).unwrap().value;
        assert_relative_eq!(vc, 2.0 * v1 - 0.5 * v2, epsilon = 1e-12 * vc.abs().max(1.0));
    }

    #[test]
    fn additive_diffusion_only_direction_has_zero_derivative() {
        // uncontrolled-noise problem with deterministic nominal dynamics:
        // q̄ ≡ 0, so a pure diffusion direction moves the value at second
        // order only and the first derivative vanishes identically
        let mut spec = LQSpec::zeroed(2, 1, 1);
        spec.x0 = DVector::from_vec(vec![1.0, 0.0]);
        spec.A = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.1]));
        spec.B = TimeFn::constant(DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        spec.Q = TimeFn::constant(DMatrix::identity(2, 2));
        spec.N = TimeFn::constant(DMatrix::identity(1, 1));
        spec.M = DMatrix::identity(2, 2);
        let g = grid(120);
        let dsig = vec![TimeFn::of(|t: f64| DVector::from_vec(vec![0.4, 0.3 * t]))];
        let s = dv_additive(&spec, &g, &DVector::zeros(2), &TimeFn::constant(DVector::zeros(2)), &dsig)
            .unwrap();
        assert!(s.value.abs() < 1e-14, "got {}", s.value);
        // ... while a drift offset does move it at first order
        let s2 = dv_additive(
            &spec,
            &g,
            &DVector::zeros(2),
            &TimeFn::constant(DVector::from_vec(vec![1.0, 0.0])),
            &dsig,
        )
        .unwrap();
        assert!(s2.value.abs() > 1e-3);
        assert_eq!(s2.breakdown.len(), 3);
        assert_eq!(s2.breakdown[1].0, "df");
    }

    #[test]
    fn portfolio_channels_match_difference_quotients_exactly() {
        let spec = one_asset(0.03);
        let g = grid(64);
        let w = sample_brownian(g, 32, 1, 7).unwrap();
        let sol = solve_dual(&spec, &g, &w).unwrap();
        let mut pert = MVPerturbation::zero(1);
        pert.dx = 0.7;
        pert.dA = -0.4;
        pert.dr = TimeFn::of(|t: f64| 0.5 + t);
        pert.dmu = TimeFn::of(|t: f64| DVector::from_element(1, 1.0 - 0.5 * t));
        pert.dsigma = TimeFn::constant(DMatrix::from_element(1, 1, 0.3));
        let adj = dv_mv(&sol, &g, &pert).unwrap();
        let fd = fd_check(mv_value_on_ray(&spec, &g, &pert), 1e-5).unwrap();
        // left-sum quadrature of the profiles is the exact derivative of the
        // discrete value, so only fd truncation separates the two
        assert_relative_eq!(adj.value, fd.richardson, max_relative = 1e-9);
    }

    #[test]
    fn portfolio_single_channel_derivatives() {
        let spec = one_asset(0.0);
        let g = grid(128);
        let w = sample_brownian(g, 16, 1, 3).unwrap();
        let sol = solve_dual(&spec, &g, &w).unwrap();
        // dx alone: derivative is p̄(0)
        let mut px = MVPerturbation::zero(1);
        px.dx = 1.0;
        let sx = dv_mv(&sol, &g, &px).unwrap();
        assert_relative_eq!(sx.value, sol.p0(), epsilon = 1e-12);
        let fd = fd_check(mv_value_on_ray(&spec, &g, &px), 1e-4).unwrap();
        assert_relative_eq!(sx.value, fd.richardson, max_relative = 1e-9);
        // dA alone: derivative is -λ_E
        let mut pa = MVPerturbation::zero(1);
        pa.dA = 1.0;
        let sa = dv_mv(&sol, &g, &pa).unwrap();
        assert_relative_eq!(sa.value, -sol.lambda_e, epsilon = 1e-12);
        let fd_a = fd_check(mv_value_on_ray(&spec, &g, &pa), 1e-4).unwrap();
        assert_relative_eq!(sa.value, fd_a.richardson, max_relative = 1e-9);
    }

    #[test]
    fn portfolio_monte_carlo_quadrature_matches_profiles() {
        let spec = one_asset(0.02);
        let g = grid(200);
        let w = sample_brownian(g, 5000, 1, 11).unwrap();
        let sol = solve_dual(&spec, &g, &w).unwrap();
        let mut pert = MVPerturbation::zero(1);
        pert.dr = TimeFn::constant(1.0);
        pert.dmu = TimeFn::constant(DVector::from_element(1, 0.5));
        pert.dsigma = TimeFn::constant(DMatrix::from_element(1, 1, -0.2));
        let det = dv_mv(&sol, &g, &pert).unwrap();
        let mc = dv_mv_mc(&sol, &g, &pert).unwrap();
        // the ensemble is Euler-simulated, so its moments sit O(dt) off the
        // exponential-exact ones behind the profiles
        let tol = 4.0 * mc.stderr + 20.0 * g.dt() * det.value.abs().max(1.0);
        assert!(
            (mc.value - det.value).abs() <= tol,
            "mc {} vs profiles {} (stderr {}, tol {})",
            mc.value,
            det.value,
            mc.stderr,
            tol
        );
        assert!(mc.stderr > 0.0);
    }

    #[test]
    fn richardson_recovers_cubic_derivative_exactly() {
        // f(ε) = (1+ε)³ has f'(0) = 3; the τ² error of the central quotient
        // is linear in τ², so the extrapolant is exact up to roundoff
        let f = |eps: f64| Ok((1.0 + eps).powi(3));
        let fd = fd_check(f, 0.1).unwrap();
        assert_relative_eq!(fd.richardson, 3.0, epsilon = 1e-12);
        assert!((fd.central - 3.0).abs() > 1e-3);
        assert_eq!(fd.step, 0.1);
        assert!(fd_check(f, 0.0).is_err());
        assert!(fd_check(f, f64::NAN).is_err());
    }

    #[test]
    fn forward_quotient_detects_even_maps()  {
        // g(ε) = v + cε²: central quotient is 0 identically, forward one is cτ
        let g = |eps: f64| Ok(2.0 + 5.0 * eps * eps);
        let c = fd_check(g, 0.3).unwrap();
        assert!(c.central.abs() < 1e-14 && c.richardson.abs() < 1e-14);
        let f1 = fd_forward(g, 0.2).unwrap();
        let f2 = fd_forward(g, 0.1).unwrap();
        assert_relative_eq!(f1, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f2, 0.5, epsilon = 1e-12);
    }
}
