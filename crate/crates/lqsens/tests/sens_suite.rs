//! Sensitivities on randomized instances: the adjoint-based derivative against
//! difference quotients of the re-solved value, the Monte-Carlo form against
//! the deterministic one, and input validation.

mod common;

use lqsens::sens::{
    dv_lq, dv_lq_mc, dv_mv, fd_check, lq_value_on_ray, mv_value_on_ray, LQPerturbation,
    MVPerturbation,
};
use lqsens::{build_grid, sample_brownian, solve_dual, TimeFn};
use nalgebra::{DMatrix, DVector};

#[test]
fn adjoint_derivative_matches_difference_quotients_on_random_instances() {
    for seed in [101, 102, 103] {
        let spec = common::random_lq(seed);
        let pert = common::random_lq_direction(seed + 1000, &spec);
        let grid = build_grid(1.0, 250).unwrap();
        let adjoint = dv_lq(&spec, &grid, &pert).unwrap();
        let fd = fd_check(lq_value_on_ray(&spec, &grid, &pert), 1e-2).unwrap();
        let gap = (adjoint.value - fd.richardson).abs();
        let tol = f64::max(1e-7, 1e-6 * adjoint.value.abs());
        assert!(
            gap <= tol,
            "seed {seed}: adjoint {} vs fd {} (gap {gap})",
            adjoint.value,
            fd.richardson
        );
    }
}

#[test]
fn channel_breakdown_sums_to_the_total() {
    let spec = common::random_lq(111);
    let pert = common::random_lq_direction(112, &spec);
    let grid = build_grid(1.0, 150).unwrap();
    let s = dv_lq(&spec, &grid, &pert).unwrap();
    let total: f64 = s.breakdown.iter().map(|(_, v)| v).sum();
    assert!((total - s.value).abs() <= 1e-12 * (1.0 + s.value.abs()));
    let labels: Vec<&str> = s.breakdown.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["dx0", "dA", "dB", "de", "dC", "dD", "df"]);
}

#[test]
fn pathwise_quadrature_agrees_with_the_moment_form() {
    let spec = common::random_lq(121);
    let pert = common::random_lq_direction(122, &spec);
    let grid = build_grid(1.0, 200).unwrap();
    let det = dv_lq(&spec, &grid, &pert).unwrap();
    let w = sample_brownian(grid, 3000, spec.d, 121).unwrap();
    let mc = dv_lq_mc(&spec, &grid, &w, &pert).unwrap();
    let tol = 4.0 * mc.stderr + 25.0 * grid.dt() * (1.0 + det.value.abs());
    assert!(
        (mc.value - det.value).abs() <= tol,
        "mc {} +/- {} vs deterministic {}",
        mc.value,
        mc.stderr,
        det.value
    );
}

#[test]
fn portfolio_derivative_matches_difference_quotients_on_random_instances() {
    for seed in [131, 132] {
        let spec = common::random_mv(seed);
        let grid = build_grid(1.0, 200).unwrap();
        let w = sample_brownian(grid, 64, spec.d, seed).unwrap();
        let sol = solve_dual(&spec, &grid, &w).unwrap();

        let d = spec.d;
        let mut pert = MVPerturbation::zero(d);
        pert.dx = 0.7;
        pert.dA = -0.4;
        pert.dr = TimeFn::of(|t: f64| 0.3 + 0.2 * t);
        pert.dmu = TimeFn::of(move |t: f64| DVector::from_element(d, 0.5 * (1.0 + t)));
        pert.dsigma = TimeFn::constant(DMatrix::identity(d, d) * 0.2);

        let adjoint = dv_mv(&sol, &grid, &pert).unwrap();
        let fd = fd_check(mv_value_on_ray(&spec, &grid, &pert), 1e-5).unwrap();
        let gap = (adjoint.value - fd.richardson).abs();
        assert!(
            gap <= 1e-8 * (1.0 + adjoint.value.abs()),
            "seed {seed}: adjoint {} vs fd {} (gap {gap})",
            adjoint.value,
            fd.richardson
        );
    }
}

#[test]
fn zero_direction_has_zero_derivative() {
    let spec = common::random_lq(141);
    let grid = build_grid(1.0, 100).unwrap();
    let zero = LQPerturbation::zero(spec.n, spec.m, spec.d);
    let s = dv_lq(&spec, &grid, &zero).unwrap();
    assert_eq!(s.value, 0.0);

    let mv = common::random_mv(142);
    let w = sample_brownian(grid, 32, mv.d, 142).unwrap();
    let sol = solve_dual(&mv, &grid, &w).unwrap();
    let s2 = dv_mv(&sol, &grid, &MVPerturbation::zero(mv.d)).unwrap();
    assert_eq!(s2.value, 0.0);
}

#[test]
fn mismatched_direction_shapes_are_rejected() {
    let spec = common::random_lq(151);
    let grid = build_grid(1.0, 50).unwrap();
    let wrong = LQPerturbation::zero(spec.n + 1, spec.m, spec.d);
    assert!(dv_lq(&spec, &grid, &wrong).is_err());

    let mv = common::random_mv(152);
    let w = sample_brownian(grid, 16, mv.d, 152).unwrap();
    let sol = solve_dual(&mv, &grid, &w).unwrap();
    let wrong_mv = MVPerturbation::zero(mv.d + 1);
    assert!(dv_mv(&sol, &grid, &wrong_mv).is_err());
}
