//! Closed-loop forward simulation, adjoint reconstruction, the Monte-Carlo
//! cost functional, and the value-duality residual.

use ndarray::{Array3, Array4};

use crate::brownian::BrownianEnsemble;
use crate::grid::TimeGrid;
use crate::{Error, Result};

use super::{coeffs_at, feedback_at, riccati_integrate, sample_coeffs, GridCoeffs, LQSpec};

/// Optimal trajectories on an ensemble. `value` is the Riccati value — exact
/// on the grid and free of Monte-Carlo noise; the sampled cost functional is
/// available separately through [`cost_functional`].
#[derive(Debug, Clone)]
pub struct LQSolution {
    /// state paths, (n_paths, K+1, n)
    pub x_bar: Array3<f64>,
    /// control paths, (n_paths, K, m)
    pub u_bar: Array3<f64>,
    /// adjoint paths p = Px + φ, (n_paths, K+1, n)
    pub p_bar: Array3<f64>,
    /// adjoint diffusion loadings q_j = P(C_j x + D_j u + f_j), (n_paths, K, n, d)
    pub q_bar: Array4<f64>,
    /// ½ x0'P(0)x0 + φ(0)'x0 + c(0)
    pub value: f64,
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy)]
pub struct ResidualStat {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

pub(crate) fn mean_stderr(per_path: &[f64]) -> ResidualStat {
    let n = per_path.len();
    let mean = per_path.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        per_path.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n as f64 - 1.0)
    } else {
        0.0
    };
    ResidualStat { mean, stderr: (var / n as f64).sqrt(), n_paths: n }
}

/// Simulates the optimal closed loop under the Riccati feedback with the
/// Euler rule on the ensemble, and reconstructs the adjoint pair pathwise.
pub fn solve_lq(spec: &LQSpec, grid: &TimeGrid, w: &BrownianEnsemble) -> Result<LQSolution> {
    if w.grid.steps() != grid.steps() || (w.grid.horizon() - grid.horizon()).abs() > 1e-12 {
        return Err(Error::ShapeMismatch(
            "ensemble grid does not match the solver grid".into(),
        ));
    }
    if w.dim != spec.d {
        return Err(Error::ShapeMismatch(format!(
            "ensemble carries {} noise components, the problem has {}",
            w.dim, spec.d
        )));
    }
    let ric = riccati_integrate(spec, grid)?;
    let K = grid.steps();
    let dt = grid.dt();
    let (n, m, d) = (spec.n, spec.m, spec.d);
    let n_paths = w.n_paths;

    // per-interval closed-loop data, flattened row-major for the path loop
    let mut a_cl = vec![0.0; K * n * n];
    let mut e_cl = vec![0.0; K * n];
    let mut c_cl = vec![0.0; K * d * n * n];
    let mut f_cl = vec![0.0; K * d * n];
    let mut gain = vec![0.0; K * m * n];
    let mut gofs = vec![0.0; K * m];
    for k in 0..K {
        let fb = feedback_at(
            &coeffs_at(spec, grid.t(k)),
            &ric.P[k],
            &ric.phi[k],
            grid.t(k),
        )?;
        for r in 0..n {
            for c in 0..n {
                a_cl[(k * n + r) * n + c] = fb.a_cl[(r, c)];
            }
            e_cl[k * n + r] = fb.e_cl[r];
        }
        for j in 0..d {
            for r in 0..n {
                for c in 0..n {
                    c_cl[((k * d + j) * n + r) * n + c] = fb.c_cl[j][(r, c)];
                }
                f_cl[(k * d + j) * n + r] = fb.f_cl[j][r];
            }
        }
        for r in 0..m {
            for c in 0..n {
                gain[(k * m + r) * n + c] = fb.gain[(r, c)];
            }
            gofs[k * m + r] = fb.offset[r];
        }
    }
    // P nodes flattened for the adjoint reconstruction
    let mut p_flat = vec![0.0; (K + 1) * n * n];
    for k in 0..=K {
        for r in 0..n {
            for c in 0..n {
                p_flat[(k * n + r) * n + c] = ric.P[k][(r, c)];
            }
        }
    }

    let mut x_bar = Array3::zeros((n_paths, K + 1, n));
    let mut u_bar = Array3::zeros((n_paths, K, m));
    let mut p_bar = Array3::zeros((n_paths, K + 1, n));
    let mut q_bar = Array4::zeros((n_paths, K, n, d));
    let mut x = vec![0.0; n];
    let mut x_next = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut diff = vec![0.0; n];
    for i in 0..n_paths {
        for c in 0..n {
            x[c] = spec.x0[c];
            x_bar[(i, 0, c)] = x[c];
        }
        for r in 0..n {
            let mut acc = ric.phi[0][r];
            for c in 0..n {
                acc += p_flat[r * n + c] * x[c];
            }
            p_bar[(i, 0, r)] = acc;
        }
        for k in 0..K {
            // u = -(G x + g)
            for r in 0..m {
                let mut acc = gofs[k * m + r];
                for c in 0..n {
                    acc += gain[(k * m + r) * n + c] * x[c];
                }
                u[r] = -acc;
                u_bar[(i, k, r)] = u[r];
            }
            // drift and per-component diffusion, then the Euler update
            for r in 0..n {
                let mut acc = e_cl[k * n + r];
                for c in 0..n {
                    acc += a_cl[(k * n + r) * n + c] * x[c];
                }
                x_next[r] = x[r] + dt * acc;
            }
            for j in 0..d {
                let dw = w.increments[(i, k, j)];
                for r in 0..n {
                    let mut load = f_cl[(k * d + j) * n + r];
                    for c in 0..n {
                        load += c_cl[((k * d + j) * n + r) * n + c] * x[c];
                    }
                    diff[r] = load;
                    x_next[r] += load * dw;
                }
                // q_j = P(t_k) (C_j x + D_j u + f_j); the closed-loop loading
                // equals that expression because u is the feedback itself
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += p_flat[(k * n + r) * n + c] * diff[c];
                    }
                    q_bar[(i, k, r, j)] = acc;
                }
            }
            for c in 0..n {
                x[c] = x_next[c];
                x_bar[(i, k + 1, c)] = x[c];
            }
            let kp = k + 1;
            for r in 0..n {
                let mut acc = ric.phi[kp][r];
                for c in 0..n {
                    acc += p_flat[(kp * n + r) * n + c] * x[c];
                }
                p_bar[(i, kp, r)] = acc;
            }
        }
    }
    Ok(LQSolution { x_bar, u_bar, p_bar, q_bar, value: ric.value(&spec.x0) })
}

/// Monte-Carlo estimate of the cost ½ E[∫ (x'Qx + u'Nu) dt + x(T)'Mx(T)]
/// evaluated on the solution's own paths.
pub fn cost_functional(spec: &LQSpec, sol: &LQSolution, grid: &TimeGrid) -> ResidualStat {
    let co = sample_coeffs(spec, grid);
    let per_path = per_path_cost(spec, sol, grid, &co);
    mean_stderr(&per_path)
}

pub(crate) fn per_path_cost(
    spec: &LQSpec,
    sol: &LQSolution,
    grid: &TimeGrid,
    co: &GridCoeffs,
) -> Vec<f64> {
    let (n_paths, ksteps, n) = sol.x_bar.dim();
    let ksteps = ksteps - 1;
    let m = spec.m;
    let dt = grid.dt();
    let mut out = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let mut acc = 0.0;
        for k in 0..ksteps {
            let mut xqx = 0.0;
            for r in 0..n {
                for c in 0..n {
                    xqx += sol.x_bar[(i, k, r)] * co.Q[k][(r, c)] * sol.x_bar[(i, k, c)];
                }
            }
            let mut unu = 0.0;
            for r in 0..m {
                for c in 0..m {
                    unu += sol.u_bar[(i, k, r)] * co.N[k][(r, c)] * sol.u_bar[(i, k, c)];
                }
            }
            acc += dt * (xqx + unu);
        }
        let mut terminal = 0.0;
        for r in 0..n {
            for c in 0..n {
                terminal += sol.x_bar[(i, ksteps, r)] * spec.M[(r, c)] * sol.x_bar[(i, ksteps, c)];
            }
        }
        out.push(0.5 * (acc + terminal));
    }
    out
}

/// Monte-Carlo residual of the duality identity
///
///   E[x(T)'Mx(T) + ∫ (x'Qx + u'Nu) dt] = p(0)'x0 + E∫ [p'e + Σ_j q_j'f_j] dt.
///
/// Note the left side is twice the cost functional (no ½ here). The residual
/// is O(dt) + O(n_paths^-1/2).
pub fn value_duality_residual(
    spec: &LQSpec,
    sol: &LQSolution,
    w: &BrownianEnsemble,
) -> Result<f64> {
    Ok(duality_residual_detail(spec, sol, w)?.mean)
}

/// Same residual with its Monte-Carlo standard error.
pub fn duality_residual_detail(
    spec: &LQSpec,
    sol: &LQSolution,
    w: &BrownianEnsemble,
) -> Result<ResidualStat> {
    let grid = &w.grid;
    if sol.x_bar.dim().0 != w.n_paths || sol.x_bar.dim().1 != grid.steps() + 1 {
        return Err(Error::ShapeMismatch(
            "solution paths do not match the ensemble".into(),
        ));
    }
    let co = sample_coeffs(spec, grid);
    let dt = grid.dt();
    let (n_paths, _, n) = sol.x_bar.dim();
    let d = spec.d;
    let cost2: Vec<f64> = per_path_cost(spec, sol, grid, &co);
    // p(0)'x0 is deterministic: same for every path
    let mut p0x0 = 0.0;
    for c in 0..n {
        p0x0 += sol.p_bar[(0, 0, c)] * spec.x0[c];
    }
    let mut per_path = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let mut src = 0.0;
        for k in 0..grid.steps() {
            for r in 0..n {
                src += sol.p_bar[(i, k, r)] * co.e[k][r];
                for j in 0..d {
                    src += sol.q_bar[(i, k, r, j)] * co.f[j][k][r];
                }
            }
        }
        per_path.push(2.0 * cost2[i] - p0x0 - dt * src);
    }
    Ok(mean_stderr(&per_path))
}
