//! Scalar benchmark with a known solution: minimize
//! E[ ½∫ u² dt + ½ x(T)² ] for dx = u dt. The Riccati flow is
//! P(t) = 1/(1 + T - t), so P(0) = 0.5 and the value from x0 = 1 is 0.25.

use lqsens::{build_grid, riccati_integrate, sample_brownian, solve_lq, LQSpec, TimeFn};
use nalgebra::{dmatrix, dvector};

fn main() {
    let mut spec = LQSpec::zeroed(1, 1, 1);
    spec.x0 = dvector![1.0];
    spec.B = TimeFn::constant(dmatrix![1.0]);
    spec.M = dmatrix![1.0];

    let grid = build_grid(1.0, 1000).unwrap();
    let ric = riccati_integrate(&spec, &grid).unwrap();

    println!("t      P(t)      1/(1+T-t)");
    for k in (0..=grid.steps()).step_by(250) {
        let t = grid.t(k);
        println!("{t:.2}   {:.8}  {:.8}", ric.P[k][(0, 0)], 1.0 / (2.0 - t));
    }

    let value = ric.value(&spec.x0);
    println!("value from x0 = 1:  {value:.12}   (exact 0.25, gap {:.1e})", (value - 0.25).abs());

    // the closed loop drives the state along x(t) = (1+T-t)/(1+T) here
    let w = sample_brownian(grid, 1, 1, 0).unwrap();
    let sol = solve_lq(&spec, &grid, &w).unwrap();
    let mid = grid.steps() / 2;
    println!(
        "x(T/2) = {:.6}  (exact {:.6}),  u is constant: u(0) = {:.6}, u(T/2) = {:.6}",
        sol.x_bar[(0, mid, 0)],
        1.5 / 2.0,
        sol.u_bar[(0, 0, 0)],
        sol.u_bar[(0, mid, 0)],
    );
}
