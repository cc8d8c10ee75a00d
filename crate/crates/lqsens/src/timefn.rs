//! Deterministic time-dependent coefficients: constants, piecewise-constant
//! grid samples, or arbitrary closures, all evaluable at any t in [0, T].

use std::sync::Arc;

use crate::grid::TimeGrid;

/// A coefficient t ↦ value. `Piecewise` holds left-point samples on a uniform
/// grid and evaluates as a step function; `Map` wraps a closure.
#[derive(Clone)]
pub enum TimeFn<T> {
    Const(T),
    Piecewise { values: Arc<Vec<T>>, horizon: f64 },
    Map(Arc<dyn Fn(f64) -> T + Send + Sync>),
}

impl<T: Clone> TimeFn<T> {
    pub fn constant(value: T) -> Self {
        TimeFn::Const(value)
    }

    /// Step function taking `values[k]` on [k·T/len, (k+1)·T/len).
    pub fn piecewise(values: Vec<T>, horizon: f64) -> Self {
        assert!(!values.is_empty(), "piecewise coefficient needs at least one sample");
        assert!(horizon > 0.0);
        TimeFn::Piecewise { values: Arc::new(values), horizon }
    }

    pub fn of(f: impl Fn(f64) -> T + Send + Sync + 'static) -> Self {
        TimeFn::Map(Arc::new(f))
    }

    pub fn eval(&self, t: f64) -> T {
        match self {
            TimeFn::Const(v) => v.clone(),
            TimeFn::Piecewise { values, horizon } => {
                let len = values.len();
                let idx = ((t / horizon * len as f64).floor() as isize)
                    .clamp(0, len as isize - 1) as usize;
                values[idx].clone()
            }
            TimeFn::Map(f) => f(t),
        }
    }

    /// Left-point samples on the grid nodes t_0..t_{K-1}.
    pub fn sample(&self, grid: &TimeGrid) -> Vec<T> {
        (0..grid.steps()).map(|k| self.eval(grid.t(k))).collect()
    }

    /// True when the coefficient does not actually depend on t.
    pub fn is_constant(&self) -> bool {
        matches!(self, TimeFn::Const(_))
    }

    /// The value when the coefficient is constant, `None` otherwise.
    pub fn constant_value(&self) -> Option<&T> {
        match self {
            TimeFn::Const(v) => Some(v),
            _ => None,
        }
    }
}

impl<T> TimeFn<T>
where
    T: Clone + Send + Sync + 'static,
    T: std::ops::Add<T, Output = T>,
    T: std::ops::Mul<f64, Output = T>,
{
    /// The coefficient t ↦ base(t) + scale · bump(t), used to probe perturbed
    /// problems. Constant + constant stays constant so that downstream code
    /// can keep using exact constant-coefficient shortcuts.
    pub fn affine(base: &TimeFn<T>, scale: f64, bump: &TimeFn<T>) -> TimeFn<T> {
        match (base, bump) {
            (TimeFn::Const(a), TimeFn::Const(b)) => {
                TimeFn::Const(a.clone() + b.clone() * scale)
            }
            _ => {
                let base = base.clone();
                let bump = bump.clone();
                TimeFn::of(move |t| base.eval(t) + bump.eval(t) * scale)
            }
        }
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for TimeFn<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeFn::Const(v) => write!(f, "TimeFn::Const({v:?})"),
            TimeFn::Piecewise { values, horizon } => {
                write!(f, "TimeFn::Piecewise({} samples on [0, {horizon}])", values.len())
            }
            TimeFn::Map(_) => write!(f, "TimeFn::Map(..)"),
        }
    }
}
