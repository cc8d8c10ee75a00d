//! First-order sensitivities of the minimal variance, one parameter at a
//! time, against the hand-differentiated closed form at r = 0:
//!
//!   v = (x-A)²/(e^S - 1),  S = (μ/σ)²T
//!   ∂v/∂x = 2(x-A)/(e^S-1) = -∂v/∂A
//!   ∂v/∂μ = -(x-A)² e^S 2μT / (σ²(e^S-1)²)
//!   ∂v/∂σ = +(x-A)² e^S 2μ²T / (σ³(e^S-1)²)

use lqsens::{build_grid, dv_mv, fd_check, sample_brownian, solve_dual, MVPerturbation, MVSpec, TimeFn};
use lqsens::sens::mv_value_on_ray;
use nalgebra::{dmatrix, dvector};

fn main() {
    let (x, a, mu, sg, horizon) = (0.0f64, 1.0, 0.1, 0.2, 1.0);
    let spec = MVSpec {
        d: 1,
        x,
        A: a,
        r: TimeFn::constant(0.0),
        mu: TimeFn::constant(dvector![mu]),
        sigma: TimeFn::constant(dmatrix![sg]),
        delta: 1e-6,
    };
    let grid = build_grid(horizon, 512).unwrap();
    let w = sample_brownian(grid, 256, 1, 3).unwrap();
    let sol = solve_dual(&spec, &grid, &w).unwrap();

    let s = (mu / sg).powi(2) * horizon;
    let es = s.exp();
    let em1 = es - 1.0;
    let exact = [
        ("dx", 2.0 * (x - a) / em1),
        ("dA", -2.0 * (x - a) / em1),
        ("dmu", -(x - a).powi(2) * es * 2.0 * mu * horizon / (sg * sg * em1 * em1)),
        ("dsigma", (x - a).powi(2) * es * 2.0 * mu * mu * horizon / (sg.powi(3) * em1 * em1)),
    ];

    println!("channel   adjoint            closed form        quotient           ");
    for (label, truth) in exact {
        let mut dir = MVPerturbation::zero(1);
        match label {
            "dx" => dir.dx = 1.0,
            "dA" => dir.dA = 1.0,
            "dmu" => dir.dmu = TimeFn::constant(dvector![1.0]),
            _ => dir.dsigma = TimeFn::constant(dmatrix![1.0]),
        }
        let sens = dv_mv(&sol, &grid, &dir).unwrap();
        let fd = fd_check(mv_value_on_ray(&spec, &grid, &dir), 1e-4).unwrap();
        println!(
            "{label:<8}  {:+.14}  {truth:+.14}  {:+.14}",
            sens.value, fd.central
        );
    }
}
