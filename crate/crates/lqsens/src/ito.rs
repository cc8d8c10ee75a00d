//! Discrete Itô processes: a triple (x0, drift density, diffusion loading)
//! sampled per path and per step, evaluated with the left-point Euler rule.
//!
//! The inner product and the integration-by-parts residual below are the
//! workhorse identities for validating the solvers: both are Monte-Carlo
//! averages over an ensemble, with time integrals as left-point Riemann sums.

use ndarray::{Array1, Array3, Array4};

use crate::brownian::BrownianEnsemble;
use crate::{Error, Result};

/// A process x(t) = x0 + ∫ drift ds + ∫ diffusion dW, discretized on a grid.
///
/// Shapes: `x0` is n, `drift` is (n_paths, K, n), `diffusion` is
/// (n_paths, K, n, d). Construction rejects NaN/Inf entries outright.
#[derive(Debug, Clone)]
pub struct ItoTriple {
    pub x0: Array1<f64>,
    pub drift: Array3<f64>,
    pub diffusion: Array4<f64>,
}

impl ItoTriple {
    pub fn new(x0: Array1<f64>, drift: Array3<f64>, diffusion: Array4<f64>) -> Result<Self> {
        let n = x0.len();
        let (paths_a, k_a, n_a) = drift.dim();
        let (paths_b, k_b, n_b, _d) = diffusion.dim();
        if n_a != n || n_b != n {
            return Err(Error::ShapeMismatch(format!(
                "state dimension disagrees: x0 has {n}, drift has {n_a}, diffusion has {n_b}"
            )));
        }
        if paths_a != paths_b || k_a != k_b {
            return Err(Error::ShapeMismatch(format!(
                "drift is ({paths_a}, {k_a}, ..), diffusion is ({paths_b}, {k_b}, ..)"
            )));
        }
        for (name, finite) in [
            ("x0", x0.iter().all(|v| v.is_finite())),
            ("drift", drift.iter().all(|v| v.is_finite())),
            ("diffusion", diffusion.iter().all(|v| v.is_finite())),
        ] {
            if !finite {
                return Err(Error::NonFinite(format!("{name} contains NaN or Inf")));
            }
        }
        Ok(ItoTriple { x0, drift, diffusion })
    }

    /// Triple with identically zero drift and diffusion (a constant process).
    pub fn constant(x0: Array1<f64>, n_paths: usize, steps: usize, dim: usize) -> Self {
        let n = x0.len();
        ItoTriple {
            x0,
            drift: Array3::zeros((n_paths, steps, n)),
            diffusion: Array4::zeros((n_paths, steps, n, dim)),
        }
    }

    pub fn n_paths(&self) -> usize {
        self.drift.dim().0
    }

    pub fn steps(&self) -> usize {
        self.drift.dim().1
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion.dim().3
    }

    fn check_against(&self, w: &BrownianEnsemble) -> Result<()> {
        if self.n_paths() != w.n_paths || self.steps() != w.grid.steps() {
            return Err(Error::ShapeMismatch(format!(
                "triple is ({} paths, {} steps), ensemble is ({}, {})",
                self.n_paths(),
                self.steps(),
                w.n_paths,
                w.grid.steps()
            )));
        }
        if self.noise_dim() != w.dim {
            return Err(Error::ShapeMismatch(format!(
                "triple drives {} noise components, ensemble carries {}",
                self.noise_dim(),
                w.dim
            )));
        }
        Ok(())
    }
}

fn check_pair(a: &ItoTriple, b: &ItoTriple, w: &BrownianEnsemble) -> Result<()> {
    a.check_against(w)?;
    b.check_against(w)?;
    if a.state_dim() != b.state_dim() {
        return Err(Error::ShapeMismatch(format!(
            "state dimensions disagree: {} vs {}",
            a.state_dim(),
            b.state_dim()
        )));
    }
    Ok(())
}

/// Euler evaluation of the process on the ensemble:
/// x(t_{k+1}) = x(t_k) + drift(t_k) dt + diffusion(t_k) ΔW_k, x(t_0) = x0.
/// Returns paths of shape (n_paths, K+1, n).
pub fn ito_evaluate(triple: &ItoTriple, w: &BrownianEnsemble) -> Result<Array3<f64>> {
    triple.check_against(w)?;
    let n_paths = triple.n_paths();
    let k_steps = triple.steps();
    let n = triple.state_dim();
    let d = triple.noise_dim();
    let dt = w.grid.dt();
    let mut paths = Array3::zeros((n_paths, k_steps + 1, n));
    for i in 0..n_paths {
        for c in 0..n {
            paths[(i, 0, c)] = triple.x0[c];
        }
        for k in 0..k_steps {
            for c in 0..n {
                let mut next = paths[(i, k, c)] + dt * triple.drift[(i, k, c)];
                for j in 0..d {
                    next += triple.diffusion[(i, k, c, j)] * w.increments[(i, k, j)];
                }
                paths[(i, k + 1, c)] = next;
            }
        }
    }
    Ok(paths)
}

/// The process-space scalar product
/// ⟨a,b⟩ = x0·y0 + E∫ drift_a·drift_b dt + E∫ tr(diff_a' diff_b) dt,
/// with expectations as ensemble averages and integrals as left-point sums.
#[allow(non_snake_case)]
pub fn inner_product_I(a: &ItoTriple, b: &ItoTriple, w: &BrownianEnsemble) -> Result<f64> {
    check_pair(a, b, w)?;
    let dt = w.grid.dt();
    let head: f64 = a.x0.iter().zip(b.x0.iter()).map(|(x, y)| x * y).sum();
    let mut acc = 0.0;
    for i in 0..a.n_paths() {
        let mut per_path = 0.0;
        for k in 0..a.steps() {
            for c in 0..a.state_dim() {
                per_path += a.drift[(i, k, c)] * b.drift[(i, k, c)];
                for j in 0..a.noise_dim() {
                    per_path += a.diffusion[(i, k, c, j)] * b.diffusion[(i, k, c, j)];
                }
            }
        }
        acc += per_path;
    }
    Ok(head + dt * acc / a.n_paths() as f64)
}

/// Residual of the product-rule identity
/// E[x(T)·y(T)] = x0·y0 + E∫ (x·drift_b + y·drift_a + Σ_j diff_a^j · diff_b^j) dt
/// on the given ensemble. For exact processes the residual is O(dt) + O(n_paths^-1/2).
pub fn integration_by_parts_residual(
    a: &ItoTriple,
    b: &ItoTriple,
    w: &BrownianEnsemble,
) -> Result<f64> {
    check_pair(a, b, w)?;
    let xa = ito_evaluate(a, w)?;
    let xb = ito_evaluate(b, w)?;
    let dt = w.grid.dt();
    let n_paths = a.n_paths();
    let k_steps = a.steps();
    let n = a.state_dim();
    let d = a.noise_dim();
    let head: f64 = a.x0.iter().zip(b.x0.iter()).map(|(x, y)| x * y).sum();
    let mut acc = 0.0;
    for i in 0..n_paths {
        let mut terminal = 0.0;
        for c in 0..n {
            terminal += xa[(i, k_steps, c)] * xb[(i, k_steps, c)];
        }
        let mut integral = 0.0;
        for k in 0..k_steps {
            for c in 0..n {
                integral += xa[(i, k, c)] * b.drift[(i, k, c)]
                    + xb[(i, k, c)] * a.drift[(i, k, c)];
                for j in 0..d {
                    integral += a.diffusion[(i, k, c, j)] * b.diffusion[(i, k, c, j)];
                }
            }
        }
        acc += terminal - dt * integral;
    }
    Ok(acc / n_paths as f64 - head)
}
