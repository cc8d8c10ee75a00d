//! Shared fixtures for the integration suites: reproducible random problem
//! instances with smooth time-varying coefficients.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lqsens::sens::LQPerturbation;
use lqsens::{LQSpec, MVSpec, TimeFn};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// t ↦ base + amp·sin(freq·t + phase), entrywise smooth in t.
pub fn smooth_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> TimeFn<DMatrix<f64>> {
    let base = DMatrix::from_fn(rows, cols, |_, _| scale * unit(rng));
    let amp = DMatrix::from_fn(rows, cols, |_, _| 0.4 * scale * unit(rng));
    let freq = rng.random_range(0.5..3.0);
    let phase = rng.random_range(0.0..6.28);
    TimeFn::of(move |t| &base + &amp * (freq * t + phase).sin())
}

pub fn smooth_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> TimeFn<DVector<f64>> {
    let base = DVector::from_fn(dim, |_, _| scale * unit(rng));
    let amp = DVector::from_fn(dim, |_, _| 0.4 * scale * unit(rng));
    let freq = rng.random_range(0.5..3.0);
    let phase = rng.random_range(0.0..6.28);
    TimeFn::of(move |t| &base + &amp * (freq * t + phase).cos())
}

fn random_psd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(dim, dim, |_, _| scale * unit(rng));
    &l * l.transpose()
}

/// t ↦ G(t)'G(t) + floor·I with smooth G: symmetric, uniformly ⪰ floor·I.
fn smooth_gram(rng: &mut ChaCha8Rng, dim: usize, scale: f64, floor: f64) -> TimeFn<DMatrix<f64>> {
    let base = DMatrix::from_fn(dim, dim, |_, _| scale * unit(rng));
    let amp = DMatrix::from_fn(dim, dim, |_, _| 0.3 * scale * unit(rng));
    let freq = rng.random_range(0.5..3.0);
    TimeFn::of(move |t| {
        let g = &base + &amp * (freq * t).sin();
        g.transpose() * g + DMatrix::identity(dim, dim) * floor
    })
}

/// Random well-posed instance: n, m in 1..=3, d in 1..=2, all coefficient
/// channels active and time-varying, N uniformly positive definite.
pub fn random_lq(seed: u64) -> LQSpec {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=3);
    let d = rng.random_range(1..=2);

    let mut spec = LQSpec::zeroed(n, m, d);
    spec.x0 = DVector::from_fn(n, |_, _| unit(&mut rng));
    spec.A = smooth_matrix(&mut rng, n, n, 0.6);
    spec.B = smooth_matrix(&mut rng, n, m, 0.6);
    for j in 0..d {
        spec.C[j] = smooth_matrix(&mut rng, n, n, 0.3);
        spec.D[j] = smooth_matrix(&mut rng, n, m, 0.3);
        spec.f[j] = smooth_vector(&mut rng, n, 0.3);
    }
    spec.e = smooth_vector(&mut rng, n, 0.5);
    spec.Q = smooth_gram(&mut rng, n, 0.5, 0.0);
    let nu = rng.random_range(0.4..1.0);
    spec.N = smooth_gram(&mut rng, m, 0.4, nu);
    spec.M = random_psd(&mut rng, n, 0.6);
    spec.delta = 0.9 * nu;
    spec
}

/// Random perturbation direction touching every channel of `spec`.
pub fn random_lq_direction(seed: u64, spec: &LQSpec) -> LQPerturbation {
    let mut rng = rng(seed);
    let (n, m, d) = (spec.n, spec.m, spec.d);
    let mut pert = LQPerturbation::zero(n, m, d);
    pert.dx0 = DVector::from_fn(n, |_, _| unit(&mut rng));
    pert.dA = smooth_matrix(&mut rng, n, n, 0.5);
    pert.dB = smooth_matrix(&mut rng, n, m, 0.5);
    for j in 0..d {
        pert.dC[j] = smooth_matrix(&mut rng, n, n, 0.3);
        pert.dD[j] = smooth_matrix(&mut rng, n, m, 0.3);
        pert.df[j] = smooth_vector(&mut rng, n, 0.3);
    }
    pert.de = smooth_vector(&mut rng, n, 0.5);
    pert
}

/// Random mean-variance instance: d in 1..=2, smooth r, mu, sigma with
/// sigma·sigma' kept away from singularity by a diagonal floor.
pub fn random_mv(seed: u64) -> MVSpec {
    let mut rng = rng(seed);
    let d = rng.random_range(1..=2);
    let x = rng.random_range(0.2..1.5);
    let target = x * rng.random_range(1.2..2.0);

    let r0 = rng.random_range(0.0..0.05);
    let r1 = rng.random_range(0.0..0.03);
    let rf = rng.random_range(0.5..2.0);
    let r = TimeFn::of(move |t| r0 + r1 * (rf * t).sin());

    let mu_base = DVector::from_fn(d, |_, _| r0 + rng.random_range(0.05..0.15));
    let mu_amp = DVector::from_fn(d, |_, _| 0.02 * unit(&mut rng));
    let mf = rng.random_range(0.5..2.0);
    let mu = TimeFn::of(move |t| &mu_base + &mu_amp * (mf * t).cos());

    let s_base = DMatrix::from_fn(d, d, |i, j| {
        if i == j { rng.random_range(0.15..0.35) } else { 0.05 * unit(&mut rng) }
    });
    let s_amp = DMatrix::from_fn(d, d, |i, j| if i == j { 0.03 * unit(&mut rng) } else { 0.0 });
    let sf = rng.random_range(0.5..2.0);
    let sigma = TimeFn::of(move |t| &s_base + &s_amp * (sf * t).sin());

    MVSpec { d, x, A: target, r, mu, sigma, delta: 1e-4 }
}
