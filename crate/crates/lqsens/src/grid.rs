//! Uniform time grids on [0, T].

use crate::{Error, Result};

/// A uniform grid with `steps` intervals of width `dt` covering `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

/// Builds a uniform grid; `horizon` must be positive and `steps >= 1`.
pub fn build_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be a positive finite number, got {horizon}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    Ok(TimeGrid { horizon, steps, dt: horizon / steps as f64 })
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of intervals; the grid has `steps() + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node `t_k = k * dt`; `t(steps)` equals the horizon to machine precision.
    pub fn t(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        k as f64 * self.dt
    }

    /// All nodes t_0..t_K.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.t(k))
    }

    /// Grid with the same horizon and half as many intervals. Requires an even
    /// step count; used for step-halving studies.
    pub fn coarsen(&self) -> Result<TimeGrid> {
        if self.steps % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot halve a grid with an odd number of steps ({})",
                self.steps
            )));
        }
        build_grid(self.horizon, self.steps / 2)
    }
}
