//! Reproducible Brownian ensembles: same seed, same paths, bit for bit —
//! and path i does not change when more paths are sampled next to it.

use lqsens::{build_grid, sample_brownian};

fn main() {
    let grid = build_grid(1.0, 200).unwrap();
    let w = sample_brownian(grid, 5000, 2, 42).unwrap();

    println!("{} paths, {} steps, dim {}", w.n_paths, w.grid.steps(), w.dim);
    for i in 0..3 {
        let t = w.terminal(i);
        println!("  path {i}: W(T) = [{:+.6}, {:+.6}]", t[0], t[1]);
    }

    // sample moments of W(T); each component has law Normal(0, T)
    let n = w.n_paths as f64;
    for j in 0..w.dim {
        let terminals: Vec<f64> = (0..w.n_paths).map(|i| w.terminal(i)[j]).collect();
        let mean = terminals.iter().sum::<f64>() / n;
        let var = terminals.iter().map(|x| x * x).sum::<f64>() / n;
        println!("component {j}: mean {mean:+.4}  var {var:.4}  (expect 0, {})", grid.horizon());
    }

    let again = sample_brownian(grid, 5000, 2, 42).unwrap();
    println!("rerun identical: {}", again.increments == w.increments);

    // halving the grid resolution keeps the same underlying paths
    let coarse = w.coarsen().unwrap();
    let gap = (coarse.terminal(0)[0] - w.terminal(0)[0]).abs();
    println!("coarsened to {} steps, terminal preserved to {gap:.1e}", coarse.grid.steps());
}
