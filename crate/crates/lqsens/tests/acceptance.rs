//! The acceptance gate: ten cross-validation criteria covering the value
//! solvers, the adjoint sensitivities, the duality identity, the independent
//! oracles, and the stochastic-calculus layer. Each criterion prints exactly
//! one PASS/FAIL line (written straight to stdout so the lines survive the
//! harness capture); the single test fails if any criterion does.

mod common;

use std::io::Write;
use std::time::Instant;

use lqsens::lq::{duality_residual_detail, fbsde_picard_oracle};
use lqsens::mv::{dual_scalars, mc_verify, solve_dual_unreduced};
use lqsens::sens::{
    dv_additive, dv_lq, dv_mv, fd_check, fd_forward, lq_value_on_ray, LQPerturbation,
    MVPerturbation,
};
use lqsens::{
    build_grid, ito_evaluate, riccati_integrate, sample_brownian, solve_dual, solve_lq, ItoTriple,
    LQSpec, MVSpec, TimeFn,
};
use nalgebra::{DMatrix, DVector};
use ndarray::arr1;

type Outcome = Result<String, String>;

fn canonical_portfolio() -> MVSpec {
    MVSpec {
        d: 1,
        x: 0.0,
        A: 1.0,
        r: TimeFn::constant(0.0),
        mu: TimeFn::constant(DVector::from_element(1, 0.1)),
        sigma: TimeFn::constant(DMatrix::from_element(1, 1, 0.2)),
        delta: 1e-8,
    }
}

/// 1. The canonical one-asset instance has the explicit minimal variance
///    (x - A)² / (e^{θT} - 1); the solver must reproduce it to 1e-10 relative.
fn portfolio_value_is_exact() -> Outcome {
    let spec = canonical_portfolio();
    let grid = build_grid(1.0, 1000).map_err(|e| e.to_string())?;
    let got = dual_scalars(&spec, &grid).map_err(|e| e.to_string())?.value;
    let theta = 0.1f64 * 0.1 / (0.2 * 0.2);
    let expected = (spec.x - spec.A).powi(2) / (theta.exp() - 1.0);
    let rel = (got - expected).abs() / expected.abs();
    if rel <= 1e-10 {
        Ok(format!("value {got:.12} vs explicit {expected:.12}, rel gap {rel:.2e}"))
    } else {
        Err(format!("value {got} vs explicit {expected}, rel gap {rel:.2e} > 1e-10"))
    }
}

/// 2. All four coefficient sensitivities of the canonical instance match their
///    explicit formulas (1e-8 relative) and central difference quotients of
///    the hand-written closed-form value at step 1e-4 (1e-5 relative).
fn portfolio_sensitivities_are_exact() -> Outcome {
    let spec = canonical_portfolio();
    let grid = build_grid(1.0, 1000).map_err(|e| e.to_string())?;
    let w = sample_brownian(grid, 128, 1, 2).map_err(|e| e.to_string())?;
    let sol = solve_dual(&spec, &grid, &w).map_err(|e| e.to_string())?;

    let (x, a, mu, sg, t) = (spec.x, spec.A, 0.1f64, 0.2f64, 1.0f64);
    // v(x, a, mu, sigma) = (x - a)² / (e^{mu²T/sigma²} - 1), the zero-rate value
    let closed = |x: f64, a: f64, mu: f64, sg: f64| {
        (x - a) * (x - a) / ((mu * mu * t / (sg * sg)).exp() - 1.0)
    };
    let es = (mu * mu * t / (sg * sg)).exp();
    let den = es - 1.0;
    let explicit = [
        2.0 * (x - a) / den,
        -2.0 * (x - a) / den,
        -(x - a) * (x - a) * es * 2.0 * mu * t / (sg * sg * den * den),
        (x - a) * (x - a) * es * 2.0 * mu * mu * t / (sg * sg * sg * den * den),
    ];

    let mut directions = Vec::new();
    for c in 0..4 {
        let mut p = MVPerturbation::zero(1);
        match c {
            0 => p.dx = 1.0,
            1 => p.dA = 1.0,
            2 => p.dmu = TimeFn::constant(DVector::from_element(1, 1.0)),
            _ => p.dsigma = TimeFn::constant(DMatrix::from_element(1, 1, 1.0)),
        }
        directions.push(p);
    }
    let tau = 1e-4;
    let central = [
        (closed(x + tau, a, mu, sg) - closed(x - tau, a, mu, sg)) / (2.0 * tau),
        (closed(x, a + tau, mu, sg) - closed(x, a - tau, mu, sg)) / (2.0 * tau),
        (closed(x, a, mu + tau, sg) - closed(x, a, mu - tau, sg)) / (2.0 * tau),
        (closed(x, a, mu, sg + tau) - closed(x, a, mu, sg - tau)) / (2.0 * tau),
    ];

    let labels = ["initial wealth", "target", "appreciation", "volatility"];
    let mut worst_explicit = 0.0f64;
    let mut worst_fd = 0.0f64;
    for c in 0..4 {
        let adj = dv_mv(&sol, &grid, &directions[c]).map_err(|e| e.to_string())?.value;
        let rel_explicit = (adj - explicit[c]).abs() / explicit[c].abs();
        let rel_fd = (adj - central[c]).abs() / central[c].abs();
        worst_explicit = worst_explicit.max(rel_explicit);
        worst_fd = worst_fd.max(rel_fd);
        if rel_explicit > 1e-8 {
            return Err(format!(
                "{}: adjoint {adj} vs explicit {} (rel {rel_explicit:.2e} > 1e-8)",
                labels[c], explicit[c]
            ));
        }
        if rel_fd > 1e-5 {
            return Err(format!(
                "{}: adjoint {adj} vs central quotient {} (rel {rel_fd:.2e} > 1e-5)",
                labels[c], central[c]
            ));
        }
    }
    Ok(format!(
        "4 channels; worst rel gap {worst_explicit:.2e} vs formulas, {worst_fd:.2e} vs quotients"
    ))
}

/// 3. Scalar regulator with unit control and terminal weights on [0, 1]:
///    P(0) = 1/2 and value = 1/4, both to 1e-8.
fn scalar_regulator_benchmark() -> Outcome {
    let mut spec = LQSpec::zeroed(1, 1, 1);
    spec.x0 = DVector::from_element(1, 1.0);
    spec.B = TimeFn::constant(DMatrix::from_element(1, 1, 1.0));
    spec.M = DMatrix::from_element(1, 1, 1.0);
    let grid = build_grid(1.0, 1000).map_err(|e| e.to_string())?;
    let ric = riccati_integrate(&spec, &grid).map_err(|e| e.to_string())?;
    let p0 = ric.P[0][(0, 0)];
    let value = ric.value(&spec.x0);
    let gap_p = (p0 - 0.5).abs();
    let gap_v = (value - 0.25).abs();
    if gap_p <= 1e-8 && gap_v <= 1e-8 {
        Ok(format!("P(0) off by {gap_p:.2e}, value off by {gap_v:.2e}"))
    } else {
        Err(format!("P(0) = {p0} (gap {gap_p:.2e}), value = {value} (gap {gap_v:.2e})"))
    }
}

fn single_channel(full: &LQPerturbation, channel: usize) -> LQPerturbation {
    let mut p = LQPerturbation::zero(full.n, full.m, full.d);
    match channel {
        0 => p.dx0 = full.dx0.clone(),
        1 => p.dA = full.dA.clone(),
        2 => p.dB = full.dB.clone(),
        3 => p.de = full.de.clone(),
        4 => p.dC = full.dC.clone(),
        5 => p.dD = full.dD.clone(),
        _ => p.df = full.df.clone(),
    }
    p
}

/// 4. On 20 random instances (state/control dim ≤ 3, noise dim ≤ 2) every
///    coefficient channel's adjoint derivative matches a Richardson difference
///    quotient of the re-solved value: gap ≤ 1e-6 absolute or 1e-5 relative.
fn randomized_adjoint_vs_quotients() -> Outcome {
    let grid = build_grid(1.0, 500).map_err(|e| e.to_string())?;
    let mut worst_abs = 0.0f64;
    let mut compared = 0;
    for seed in 201..=220 {
        let spec = common::random_lq(seed);
        let full = common::random_lq_direction(seed + 7000, &spec);
        let adjoint = dv_lq(&spec, &grid, &full).map_err(|e| e.to_string())?;
        for channel in 0..7 {
            let single = single_channel(&full, channel);
            let fd = fd_check(lq_value_on_ray(&spec, &grid, &single), 1e-2)
                .map_err(|e| e.to_string())?;
            let (label, adj) = &adjoint.breakdown[channel];
            let abs_gap = (adj - fd.richardson).abs();
            let rel_gap = abs_gap / adj.abs().max(1e-300);
            compared += 1;
            if abs_gap > 1e-6 && rel_gap > 1e-5 {
                return Err(format!(
                    "seed {seed}, channel {label}: adjoint {adj} vs quotient {} \
                     (abs {abs_gap:.2e}, rel {rel_gap:.2e})",
                    fd.richardson
                ));
            }
            worst_abs = worst_abs.max(abs_gap);
        }
    }
    Ok(format!("{compared} channel comparisons, worst abs gap {worst_abs:.2e}"))
}

/// 5. With no noise in the nominal dynamics the diffusion-only sensitivity is
///    exactly zero, and forward quotients along the diffusion ray decay like
///    the step (slope 1 on a log-log plot over 1e-2, 1e-3, 1e-4).
fn zero_noise_direction_is_flat() -> Outcome {
    let mut spec = LQSpec::zeroed(2, 1, 1);
    spec.x0 = DVector::from_vec(vec![1.0, -0.5]);
    spec.A = TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.1, 0.4, -0.3, 0.2]));
    spec.B = TimeFn::constant(DMatrix::from_row_slice(2, 1, &[1.0, 0.5]));
    spec.e = TimeFn::constant(DVector::from_vec(vec![0.2, 0.1]));
    spec.Q = TimeFn::constant(DMatrix::identity(2, 2) * 0.5);
    spec.M = DMatrix::identity(2, 2);
    let grid = build_grid(1.0, 400).map_err(|e| e.to_string())?;

    let direction = TimeFn::constant(DVector::from_vec(vec![0.7, -0.4]));
    let adj = dv_additive(&spec, &grid, &DVector::zeros(2), &TimeFn::constant(DVector::zeros(2)), &[direction.clone()])
        .map_err(|e| e.to_string())?;
    if adj.value != 0.0 {
        return Err(format!("diffusion-only sensitivity is {} instead of exactly 0", adj.value));
    }

    let mut pert = LQPerturbation::zero(2, 1, 1);
    pert.df[0] = direction;
    let value = lq_value_on_ray(&spec, &grid, &pert);
    let mut quotients = Vec::new();
    for tau in [1e-2, 1e-3, 1e-4] {
        quotients.push(fd_forward(&value, tau).map_err(|e| e.to_string())?);
    }
    let slope_a = (quotients[0] / quotients[1]).ln() / 10f64.ln();
    let slope_b = (quotients[1] / quotients[2]).ln() / 10f64.ln();
    for slope in [slope_a, slope_b] {
        if (slope - 1.0).abs() > 1e-3 {
            return Err(format!(
                "forward quotients {quotients:?} give log-log slope {slope}, expected 1"
            ));
        }
    }
    Ok(format!(
        "adjoint exactly 0; forward quotients decay with slopes {slope_a:.6} and {slope_b:.6}"
    ))
}

/// 6. The duality identity: the Monte-Carlo residual sits within 4 standard
///    errors of zero at 10⁴ paths and 10³ steps on 5 random instances, and
///    halving the step halves the residual up to the noise band.
fn duality_residual_scales() -> Outcome {
    let coarse = build_grid(1.0, 1000).map_err(|e| e.to_string())?;
    let fine = build_grid(1.0, 2000).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    for seed in 301..=305 {
        let spec = common::random_lq(seed);

        let wc = sample_brownian(coarse, 10_000, spec.d, seed).map_err(|e| e.to_string())?;
        let sol_c = solve_lq(&spec, &coarse, &wc).map_err(|e| e.to_string())?;
        let res_c = duality_residual_detail(&spec, &sol_c, &wc).map_err(|e| e.to_string())?;
        drop(sol_c);
        drop(wc);
        if res_c.mean.abs() > 4.0 * res_c.stderr {
            return Err(format!(
                "seed {seed}: residual {} +/- {} is not within 4 stderr of 0",
                res_c.mean, res_c.stderr
            ));
        }

        let wf = sample_brownian(fine, 10_000, spec.d, seed + 50).map_err(|e| e.to_string())?;
        let sol_f = solve_lq(&spec, &fine, &wf).map_err(|e| e.to_string())?;
        let res_f = duality_residual_detail(&spec, &sol_f, &wf).map_err(|e| e.to_string())?;
        let band = 0.5 * res_c.mean.abs() + 4.0 * (res_f.stderr + 0.5 * res_c.stderr);
        if res_f.mean.abs() > band {
            return Err(format!(
                "seed {seed}: halving the step left residual {} (coarse {}, band {band})",
                res_f.mean, res_c.mean
            ));
        }
        details.push(format!("{:+.1e}->{:+.1e}", res_c.mean, res_f.mean));
    }
    Ok(format!("5 instances within 4 stderr, halving: {}", details.join(", ")))
}

/// 7. An independently coded damped fixed-point iteration on the coupled
///    forward-backward system reproduces the feedback control in ensemble L²
///    on 10 random instances.
fn fixed_point_oracle_agrees() -> Outcome {
    let grid = build_grid(1.0, 500).map_err(|e| e.to_string())?;
    let tol = f64::max(1e-6, 10.0 * grid.dt());
    let mut worst = 0.0f64;
    for seed in 401..=410 {
        let spec = common::random_lq(seed);
        let w = sample_brownian(grid, 1000, spec.d, seed).map_err(|e| e.to_string())?;
        let sol = solve_lq(&spec, &grid, &w).map_err(|e| e.to_string())?;
        let pic = fbsde_picard_oracle(&spec, &grid, &w, 300, 1e-11).map_err(|e| e.to_string())?;
        let (n_paths, k, m) = sol.u_bar.dim();
        let mut acc = 0.0;
        for i in 0..n_paths {
            for step in 0..k {
                for c in 0..m {
                    let diff = sol.u_bar[(i, step, c)] - pic.solution.u_bar[(i, step, c)];
                    acc += diff * diff * grid.dt();
                }
            }
        }
        let dist = (acc / n_paths as f64).sqrt();
        if dist > tol {
            return Err(format!("seed {seed}: control distance {dist:.2e} > {tol:.2e}"));
        }
        worst = worst.max(dist);
    }
    Ok(format!("10 instances, worst control distance {worst:.2e} (tolerance {tol:.1e})"))
}

/// 8. The reported portfolio policy hits the terminal mean within 4 standard
///    errors at 10⁵ streamed paths; the target sensitivity equals minus the
///    stored multiplier exactly; the multiplier matches its explicit formula.
fn portfolio_constraint_and_multiplier() -> Outcome {
    let spec = MVSpec {
        d: 1,
        x: 1.0,
        A: 2.0,
        r: TimeFn::constant(0.03),
        mu: TimeFn::constant(DVector::from_element(1, 0.13)),
        sigma: TimeFn::constant(DMatrix::from_element(1, 1, 0.2)),
        delta: 1e-8,
    };
    let grid = build_grid(1.0, 1000).map_err(|e| e.to_string())?;
    let w = sample_brownian(grid, 128, 1, 8).map_err(|e| e.to_string())?;
    let sol = solve_dual(&spec, &grid, &w).map_err(|e| e.to_string())?;
    let ver = mc_verify(&spec, &grid, &sol, 100_000, 81).map_err(|e| e.to_string())?;
    if ver.feasibility_gap > 4.0 * ver.feasibility_stderr {
        return Err(format!(
            "E[X(T)] = {} vs target {} (gap {} > 4 x {})",
            ver.mean_terminal, spec.A, ver.feasibility_gap, ver.feasibility_stderr
        ));
    }

    let mut da = MVPerturbation::zero(1);
    da.dA = 1.0;
    let d_target = dv_mv(&sol, &grid, &da).map_err(|e| e.to_string())?.value;
    let id_gap = (d_target + sol.lambda_e).abs();
    if id_gap > 1e-12 * (1.0 + sol.lambda_e.abs()) {
        return Err(format!(
            "target sensitivity {d_target} vs -multiplier {} (gap {id_gap:.2e})",
            -sol.lambda_e
        ));
    }

    // explicit multiplier: λ = 2e^{rT}(x - Ae^{-rT})/(e^{θT} - 1)
    let theta = (0.13f64 - 0.03) * (0.13 - 0.03) / (0.2 * 0.2);
    let rho = (-0.03f64).exp();
    let lambda_exact = 2.0 * (spec.x - rho * spec.A) / (theta.exp() - 1.0) / rho;
    let rel = (sol.lambda_e - lambda_exact).abs() / lambda_exact.abs();
    if rel > 1e-6 {
        return Err(format!(
            "multiplier {} vs explicit {lambda_exact} (rel {rel:.2e} > 1e-6)",
            sol.lambda_e
        ));
    }
    Ok(format!(
        "terminal mean {:.4} (gap {:.1e} < 4 x {:.1e}); multiplier identity gap {id_gap:.1e}; \
         explicit multiplier rel gap {rel:.1e}",
        ver.mean_terminal, ver.feasibility_gap, ver.feasibility_stderr
    ))
}

/// 9. Discounting reduction: rebuilding the problem with the rate absorbed
///    into the coefficients reproduces the value exactly up to the discount
///    factor, and the structurally independent undiscounted solver agrees.
fn discounting_reduction_is_consistent() -> Outcome {
    let grid = build_grid(1.0, 256).map_err(|e| e.to_string())?;
    let steps = grid.steps();
    let dt = grid.dt();
    let rate = 0.05f64;
    let spec = MVSpec {
        d: 2,
        x: 0.8,
        A: 1.5,
        r: TimeFn::constant(rate),
        mu: TimeFn::of(|t: f64| DVector::from_vec(vec![0.11 + 0.02 * t.sin(), 0.14])),
        sigma: TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.22, 0.03, -0.02, 0.27])),
        delta: 1e-8,
    };

    // discounted coefficients on the left nodes: ρ_k = e^{-Σ_{j<k} r dt}
    let mut rho = Vec::with_capacity(steps);
    let mut acc = 0.0f64;
    for k in 0..steps {
        rho.push((-acc).exp());
        acc += spec.r.eval(grid.t(k)) * dt;
    }
    let rho_total = (-acc).exp();
    let ones = DVector::from_element(2, 1.0);
    let mu_tilde: Vec<DVector<f64>> = (0..steps)
        .map(|k| {
            let t = grid.t(k);
            (spec.mu.eval(t) - &ones * spec.r.eval(t)) * rho[k]
        })
        .collect();
    let sigma_tilde: Vec<DMatrix<f64>> = (0..steps)
        .map(|k| spec.sigma.eval(grid.t(k)) * rho[k])
        .collect();
    let reduced = MVSpec {
        d: 2,
        x: spec.x,
        A: rho_total * spec.A,
        r: TimeFn::constant(0.0),
        mu: TimeFn::piecewise(mu_tilde, grid.horizon()),
        sigma: TimeFn::piecewise(sigma_tilde, grid.horizon()),
        delta: 1e-10,
    };

    let v = dual_scalars(&spec, &grid).map_err(|e| e.to_string())?.value;
    let v_reduced = dual_scalars(&reduced, &grid).map_err(|e| e.to_string())?.value;
    let scale = (2.0 * acc).exp();
    let identity_gap = (v - scale * v_reduced).abs() / (1.0 + v.abs());
    if identity_gap > 1e-12 {
        return Err(format!(
            "value {v} vs discount-scaled reduced value {} (rel gap {identity_gap:.2e})",
            scale * v_reduced
        ));
    }

    // independent-route agreement on a constant-coefficient instance, where
    // the left-point time sums are exact and only the route structure differs
    let flat = MVSpec {
        d: 2,
        x: 0.8,
        A: 1.5,
        r: TimeFn::constant(rate),
        mu: TimeFn::constant(DVector::from_vec(vec![0.11, 0.14])),
        sigma: TimeFn::constant(DMatrix::from_row_slice(2, 2, &[0.22, 0.03, -0.02, 0.27])),
        delta: 1e-8,
    };
    let v_flat = dual_scalars(&flat, &grid).map_err(|e| e.to_string())?.value;
    let w = sample_brownian(grid, 64, 2, 9).map_err(|e| e.to_string())?;
    let unreduced = solve_dual_unreduced(&flat, &grid, &w).map_err(|e| e.to_string())?;
    let route_gap = (unreduced.value - v_flat).abs() / v_flat.abs();
    if route_gap > 1e-5 {
        return Err(format!(
            "undiscounted route value {} vs reduced route {v_flat} (rel {route_gap:.2e} > 1e-5)",
            unreduced.value
        ));
    }
    Ok(format!(
        "reduction identity rel gap {identity_gap:.1e}; independent route rel gap {route_gap:.1e}"
    ))
}

/// 10. Stochastic-calculus layer at scale (10⁴ paths, 10³ steps): the squared
///     stochastic integral matches its compensator in mean, the product rule
///     holds up to discretization plus noise, and the process inner product is
///     a symmetric bilinear form satisfying the Cauchy-Schwarz bound.
fn calculus_identities_at_scale() -> Outcome {
    let grid = build_grid(1.0, 1000).map_err(|e| e.to_string())?;
    let n_paths = 10_000;
    let w = sample_brownian(grid, n_paths, 2, 10).map_err(|e| e.to_string())?;
    let k = grid.steps();
    let dt = grid.dt();

    // adapted martingale: loading at step k is a function of the path so far
    let mut a = ItoTriple::constant(arr1(&[0.0]), n_paths, k, 2);
    for i in 0..n_paths {
        let mut cum = [0.0f64; 2];
        for step in 0..k {
            for j in 0..2 {
                a.diffusion[(i, step, 0, j)] = cum[j].cos() + 0.4 * (j as f64 + 1.0);
                cum[j] += w.increments[(i, step, j)];
            }
        }
    }
    let paths = ito_evaluate(&a, &w).map_err(|e| e.to_string())?;
    let samples: Vec<f64> = (0..n_paths)
        .map(|i| {
            let terminal = paths[(i, k, 0)];
            let mut mass = 0.0;
            for step in 0..k {
                for j in 0..2 {
                    let g = a.diffusion[(i, step, 0, j)];
                    mass += g * g * dt;
                }
            }
            terminal * terminal - mass
        })
        .collect();
    drop(paths);
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let stderr = (var / n).sqrt();
    if mean.abs() > 4.0 * stderr {
        return Err(format!("isometry residual {mean} exceeds 4 stderr {stderr}"));
    }

    let mut b = a.clone();
    b.x0 = arr1(&[0.5]);
    for i in 0..n_paths {
        for step in 0..k {
            b.drift[(i, step, 0)] = 0.6 * (3.0 * grid.t(step)).cos();
            for j in 0..2 {
                b.diffusion[(i, step, 0, j)] *= -0.5;
            }
        }
    }
    let ibp = lqsens::integration_by_parts_residual(&a, &b, &w).map_err(|e| e.to_string())?;
    // per-path residuals give the honest noise scale for the identity
    let pa = ito_evaluate(&a, &w).map_err(|e| e.to_string())?;
    let pb = ito_evaluate(&b, &w).map_err(|e| e.to_string())?;
    let head = a.x0[0] * b.x0[0];
    let per_path: Vec<f64> = (0..n_paths)
        .map(|i| {
            let mut integral = 0.0;
            for step in 0..k {
                integral += pa[(i, step, 0)] * b.drift[(i, step, 0)]
                    + pb[(i, step, 0)] * a.drift[(i, step, 0)];
                for j in 0..2 {
                    integral += a.diffusion[(i, step, 0, j)] * b.diffusion[(i, step, 0, j)];
                }
            }
            pa[(i, k, 0)] * pb[(i, k, 0)] - dt * integral - head
        })
        .collect();
    drop(pa);
    drop(pb);
    let ibp_mean = per_path.iter().sum::<f64>() / n;
    let ibp_var =
        per_path.iter().map(|x| (x - ibp_mean) * (x - ibp_mean)).sum::<f64>() / (n - 1.0);
    let ibp_stderr = (ibp_var / n).sqrt();
    if (ibp - ibp_mean).abs() > 1e-10 * (1.0 + ibp.abs()) {
        return Err(format!(
            "library residual {ibp} disagrees with its per-path recomputation {ibp_mean}"
        ));
    }
    let ibp_band = 4.0 * ibp_stderr + 20.0 * dt;
    if ibp.abs() > ibp_band {
        return Err(format!("product-rule residual {ibp} exceeds {ibp_band}"));
    }

    let ab = lqsens::inner_product_I(&a, &b, &w).map_err(|e| e.to_string())?;
    let ba = lqsens::inner_product_I(&b, &a, &w).map_err(|e| e.to_string())?;
    let aa = lqsens::inner_product_I(&a, &a, &w).map_err(|e| e.to_string())?;
    let bb = lqsens::inner_product_I(&b, &b, &w).map_err(|e| e.to_string())?;
    if (ab - ba).abs() > 1e-12 * (1.0 + ab.abs()) {
        return Err(format!("inner product asymmetric: {ab} vs {ba}"));
    }
    let mut combo = a.clone();
    combo.x0 = &a.x0 * 2.0 - &b.x0 * 3.0;
    combo.drift = &a.drift * 2.0 - &b.drift * 3.0;
    combo.diffusion = &a.diffusion * 2.0 - &b.diffusion * 3.0;
    let lhs = lqsens::inner_product_I(&combo, &b, &w).map_err(|e| e.to_string())?;
    let rhs = 2.0 * ab - 3.0 * bb;
    if (lhs - rhs).abs() > 1e-9 * (1.0 + rhs.abs()) {
        return Err(format!("inner product not bilinear: {lhs} vs {rhs}"));
    }
    if ab * ab > aa * bb * (1.0 + 1e-12) {
        return Err(format!("Cauchy-Schwarz violated: {ab}^2 vs {aa} x {bb}"));
    }
    Ok(format!(
        "isometry {mean:.1e} within 4 x {stderr:.1e}; product rule {ibp:.1e} within {ibp_band:.1e}; \
         inner-product algebra exact"
    ))
}

fn emit(line: &str) {
    // bypass the harness capture so the per-criterion lines always appear
    let mut out = std::io::stdout();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance_gate() {
    let criteria: Vec<(u32, &str, Option<f64>, fn() -> Outcome)> = vec![
        (1, "portfolio-value-closed-form", Some(1.0), portfolio_value_is_exact),
        (2, "portfolio-sensitivities", Some(5.0), portfolio_sensitivities_are_exact),
        (3, "scalar-regulator-benchmark", Some(1.0), scalar_regulator_benchmark),
        (4, "randomized-adjoint-vs-quotients", Some(60.0), randomized_adjoint_vs_quotients),
        (5, "zero-noise-flat-direction", None, zero_noise_direction_is_flat),
        (6, "duality-residual-scaling", None, duality_residual_scales),
        (7, "fixed-point-oracle", None, fixed_point_oracle_agrees),
        (8, "terminal-constraint-and-multiplier", None, portfolio_constraint_and_multiplier),
        (9, "discounting-reduction", None, discounting_reduction_is_consistent),
        (10, "calculus-identities-at-scale", Some(30.0), calculus_identities_at_scale),
    ];

    let mut failures = Vec::new();
    emit("");
    for (number, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let timely = budget.map_or(true, |b| secs <= b);
        match outcome {
            Ok(detail) if timely => {
                emit(&format!("criterion {number:02} {name}: PASS ({detail}; {secs:.2}s)"));
            }
            Ok(detail) => {
                let b = budget.unwrap();
                emit(&format!(
                    "criterion {number:02} {name}: FAIL (took {secs:.2}s, budget {b}s; {detail})"
                ));
                failures.push(format!("{number:02} {name}: over time budget"));
            }
            Err(reason) => {
                emit(&format!("criterion {number:02} {name}: FAIL ({reason}; {secs:.2}s)"));
                failures.push(format!("{number:02} {name}: {reason}"));
            }
        }
    }
    assert!(failures.is_empty(), "failed acceptance criteria:\n{}", failures.join("\n"));
}
