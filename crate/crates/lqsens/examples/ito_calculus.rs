//! The stochastic-calculus identities used as oracles throughout the test
//! suite, evaluated at Monte-Carlo scale: the isometry for stochastic
//! integrals, the product rule, and the inner product ⟨a, b⟩ = E[a(T)'b(T)].

use lqsens::{
    build_grid, inner_product_I, integration_by_parts_residual, ito_evaluate, sample_brownian,
    ItoTriple,
};
use ndarray::{Array1, Array3, Array4};

fn main() {
    let grid = build_grid(1.0, 400).unwrap();
    let n_paths = 8000;
    let w = sample_brownian(grid, n_paths, 1, 7).unwrap();
    let k = grid.steps();
    let dt = grid.dt();

    // scalar process with an adapted loading g depending on the running path
    let mut drift = Array3::zeros((n_paths, k, 1));
    let mut diffusion = Array4::zeros((n_paths, k, 1, 1));
    for i in 0..n_paths {
        let mut cum = 0.0;
        for step in 0..k {
            let t = grid.t(step);
            drift[(i, step, 0)] = 0.3 * (2.0 * t).sin();
            diffusion[(i, step, 0, 0)] = (cum as f64).cos() + 0.5;
            cum += w.increment(i, step, 0);
        }
    }
    let a = ItoTriple::new(Array1::zeros(1), drift, diffusion).unwrap();
    let paths = ito_evaluate(&a, &w).unwrap();

    // isometry: E[(∫ g dW)²] = E[∫ g² dt] for the driftless part
    let driftless = ItoTriple::new(
        Array1::zeros(1),
        Array3::zeros((n_paths, k, 1)),
        a.diffusion.clone(),
    )
    .unwrap();
    let ip = ito_evaluate(&driftless, &w).unwrap();
    let lhs: f64 = (0..n_paths).map(|i| ip[(i, k, 0)].powi(2)).sum::<f64>() / n_paths as f64;
    let rhs: f64 = a
        .diffusion
        .iter()
        .map(|g| g * g * dt)
        .sum::<f64>()
        / n_paths as f64;
    println!("isometry:      E[I(g)^2] = {lhs:.6}   E[int g^2 dt] = {rhs:.6}   gap {:+.2e}", lhs - rhs);

    // product rule: E[a(T)b(T) - a(0)b(0) - ∫(a db + b da + da db)] ≈ 0
    let b_triple = {
        let mut drift = Array3::zeros((n_paths, k, 1));
        let mut diffusion = Array4::zeros((n_paths, k, 1, 1));
        for i in 0..n_paths {
            for step in 0..k {
                let t = grid.t(step);
                drift[(i, step, 0)] = -0.5 * t;
                diffusion[(i, step, 0, 0)] = 0.8;
            }
        }
        ItoTriple::new(Array1::from_elem(1, 0.7), drift, diffusion).unwrap()
    };
    let res = integration_by_parts_residual(&a, &b_triple, &w).unwrap();
    println!("product rule:  residual {res:+.2e}   (O(dt) bias + O(n^-1/2) noise)");

    // the inner product behind the duality and sensitivity checks
    let ab = inner_product_I(&a, &b_triple, &w).unwrap();
    let ba = inner_product_I(&b_triple, &a, &w).unwrap();
    println!("inner product: <a,b> = {ab:.6}   symmetric to {:.1e}", (ab - ba).abs());

    let last = paths[(0, k, 0)];
    println!("sample path 0 ends at {last:+.4}");
}
