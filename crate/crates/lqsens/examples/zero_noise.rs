//! With purely additive noise the value splits off the noise contribution,
//! and perturbing a diffusion offset around zero has derivative exactly zero:
//! the value depends on that offset quadratically. The adjoint formula sees
//! this structurally. Forward difference quotients only vanish at rate O(τ) —
//! the log-log slope against τ is 1.

use lqsens::{build_grid, dv_additive, fd_forward, LQPerturbation, LQSpec, TimeFn};
use lqsens::sens::lq_value_on_ray;
use nalgebra::{dmatrix, dvector, DVector};

fn main() {
    // deterministic two-state problem: C = D = f = 0, so the noise is gone
    let mut spec = LQSpec::zeroed(2, 1, 2);
    spec.x0 = dvector![1.0, 0.2];
    spec.A = TimeFn::constant(dmatrix![0.0, 1.0; -0.5, -0.1]);
    spec.B = TimeFn::constant(dmatrix![0.0; 1.0]);
    spec.e = TimeFn::constant(dvector![0.1, 0.0]);
    spec.Q = TimeFn::constant(dmatrix![1.0, 0.0; 0.0, 0.2]);
    spec.M = dmatrix![0.5, 0.0; 0.0, 0.5];
    let grid = build_grid(2.0, 400).unwrap();

    // direction: switch on an additive diffusion offset f₁ = (0.7, -0.4)
    let offset = dvector![0.7, -0.4];
    let dsigma = vec![
        TimeFn::constant(offset.clone()),
        TimeFn::constant(DVector::zeros(2)),
    ];
    let sens = dv_additive(
        &spec,
        &grid,
        &DVector::zeros(2),
        &TimeFn::constant(DVector::zeros(2)),
        &dsigma,
    )
    .unwrap();
    println!("adjoint derivative along the diffusion offset: {:?}", sens.value);
    for (label, v) in &sens.breakdown {
        println!("  {label:<7} {v:+.3e}");
    }

    // forward quotients decay linearly in the step: slope 1 on log-log axes
    let mut dir = LQPerturbation::zero(2, 1, 2);
    dir.df[0] = TimeFn::constant(offset);
    let value_on_ray = lq_value_on_ray(&spec, &grid, &dir);
    println!("\n  tau        (v(tau) - v(0))/tau");
    let mut quotients = Vec::new();
    for exp in [2, 3, 4] {
        let tau = 10f64.powi(-exp);
        let q = fd_forward(&value_on_ray, tau).unwrap();
        println!("  1e-{exp}      {q:+.6e}");
        quotients.push(q);
    }
    for pair in quotients.windows(2) {
        let slope = (pair[0] / pair[1]).ln() / 10f64.ln();
        println!("log-log slope {slope:.6}");
    }
}
