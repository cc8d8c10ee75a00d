//! Reproducible Brownian increment ensembles.
//!
//! Increments are drawn from a counter-mode generator (ChaCha8) with one
//! stream per path, so entry (path, step, component) is a pure function of
//! (seed, path, step, component, dim): path `i` is identical no matter how
//! many paths are sampled alongside it, and no matter the execution order.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::TimeGrid;
use crate::{Error, Result};

/// `n_paths` independent d-dimensional Brownian motions on a grid, stored as
/// increments ΔW of shape (n_paths, steps, dim), each entry ~ Normal(0, dt).
#[derive(Debug, Clone)]
pub struct BrownianEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim: usize,
    pub increments: Array3<f64>,
    pub seed: u64,
}

/// Samples an ensemble deterministically from `seed`.
pub fn sample_brownian(
    grid: TimeGrid,
    n_paths: usize,
    dim: usize,
    seed: u64,
) -> Result<BrownianEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be >= 1".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be >= 1".into()));
    }
    let k = grid.steps();
    let sqrt_dt = grid.dt().sqrt();
    let mut increments = Array3::zeros((n_paths, k, dim));
    for i in 0..n_paths {
        let mut rng = path_rng(seed, i);
        for step in 0..k {
            for j in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                increments[(i, step, j)] = sqrt_dt * z;
            }
        }
    }
    Ok(BrownianEnsemble { grid, n_paths, dim, increments, seed })
}

/// The per-path generator: `seed` keys the cipher, the path index selects the
/// stream. Draws are made in (step, component) order.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

impl BrownianEnsemble {
    pub fn increment(&self, path: usize, step: usize, component: usize) -> f64 {
        self.increments[(path, step, component)]
    }

    /// W(T) for one path: the sum of its increments, per component.
    pub fn terminal(&self, path: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|j| (0..self.grid.steps()).map(|k| self.increments[(path, k, j)]).sum())
            .collect()
    }

    /// The same Brownian paths viewed on the grid with half the steps:
    /// adjacent increments are summed pairwise. This couples coarse and fine
    /// discretizations exactly, which is what step-halving studies need.
    pub fn coarsen(&self) -> Result<BrownianEnsemble> {
        let coarse = self.grid.coarsen()?;
        let kc = coarse.steps();
        let mut increments = Array3::zeros((self.n_paths, kc, self.dim));
        for i in 0..self.n_paths {
            for k in 0..kc {
                for j in 0..self.dim {
                    increments[(i, k, j)] = self.increments[(i, 2 * k, j)]
                        + self.increments[(i, 2 * k + 1, j)];
                }
            }
        }
        Ok(BrownianEnsemble {
            grid: coarse,
            n_paths: self.n_paths,
            dim: self.dim,
            increments,
            seed: self.seed,
        })
    }
}
