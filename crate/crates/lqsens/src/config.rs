//! JSON run configuration for the command-line tool.
//!
//! One document describes a whole run: the problem kind and its parameters,
//! the time grid, the simulation ensemble, optional perturbation blocks for
//! sensitivity studies, finite-difference options, and the output target.
//! Time-dependent coefficients are written either as a plain constant (a
//! number / vector / matrix) or as an array of per-step samples whose length
//! must be the number of grid steps (length 1 also counts as constant).
//!
//! Structural problems (unknown keys, wrong JSON types) surface as parse
//! errors; semantic problems (wrong lengths, missing blocks) carry the
//! offending field path.

#![allow(non_snake_case)]

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::grid::{build_grid, TimeGrid};
use crate::lq::LQSpec;
use crate::mv::MVSpec;
use crate::sens::{LQPerturbation, MVPerturbation};
use crate::timefn::TimeFn;
use crate::{Error, Result};

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Lq,
    Mv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_n_paths() -> usize {
    4096
}

fn default_seed() -> u64 {
    42
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { n_paths: default_n_paths(), seed: default_seed() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_richardson")]
    pub richardson: bool,
}

fn default_tau() -> f64 {
    1e-4
}

fn default_richardson() -> bool {
    true
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { tau: default_tau(), richardson: default_richardson() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { path: None, format: default_format() }
    }
}

/// A scalar coefficient: a constant or one sample per step.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarFn {
    Const(f64),
    Samples(Vec<f64>),
}

/// A vector coefficient: one vector, or one vector per step.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorFn {
    Const(Vec<f64>),
    Samples(Vec<Vec<f64>>),
}

/// A matrix coefficient (row-major nested arrays): one matrix, or one per step.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixFn {
    Const(Vec<Vec<f64>>),
    Samples(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LQConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub A: Option<MatrixFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub B: Option<MatrixFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub C: Option<Vec<MatrixFn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub D: Option<Vec<MatrixFn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<VectorFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<VectorFn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub Q: Option<MatrixFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub N: Option<MatrixFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub M: Option<Vec<Vec<f64>>>,
    /// lower bound claimed for the eigenvalues of N; the solve commands
    /// require it to be positive
    #[serde(default)]
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MVConfig {
    pub d: usize,
    pub x: f64,
    /// target mean terminal wealth
    #[serde(alias = "A")]
    pub target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<ScalarFn>,
    pub mu: VectorFn,
    pub sigma: MatrixFn,
    #[serde(default = "default_mv_delta")]
    pub delta: f64,
}

fn default_mv_delta() -> f64 {
    1e-8
}

/// One sensitivity direction. The channels are optional and problem-specific:
/// `dx0, dA, dB, dC, dD, de, df` belong to `lq` runs, `dx, dtarget, dr, dmu,
/// dsigma` to `mv` runs; omitted channels are zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dA: Option<MatrixFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dB: Option<MatrixFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dC: Option<Vec<MatrixFn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dD: Option<Vec<MatrixFn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub de: Option<VectorFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<Vec<VectorFn>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtarget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dr: Option<ScalarFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dmu: Option<VectorFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dsigma: Option<MatrixFn>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub grid: GridConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lq: Option<LQConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mv: Option<MVConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbations: Vec<PerturbationConfig>,
    #[serde(default)]
    pub fd: FdConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_str(text: &str, origin: &str) -> Result<RunConfig> {
        serde_json::from_str(text)
            .map_err(|e| config_err(origin, format!("invalid config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::from_str(&text, &path.display().to_string())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        if self.grid.steps == 0 {
            return Err(config_err("grid.steps", "must be at least 1"));
        }
        if !(self.grid.horizon > 0.0) || !self.grid.horizon.is_finite() {
            return Err(config_err("grid.horizon", "must be positive and finite"));
        }
        build_grid(self.grid.horizon, self.grid.steps)
    }

    /// The LQ problem described by the `lq` block (defaults fill omitted
    /// coefficients with zeros, N with the identity).
    pub fn lq_spec(&self, grid: &TimeGrid) -> Result<LQSpec> {
        let c = self
            .lq
            .as_ref()
            .ok_or_else(|| config_err("lq", "block required when problem = \"lq\""))?;
        if c.n == 0 || c.m == 0 || c.d == 0 {
            return Err(config_err("lq", "n, m, d must all be at least 1"));
        }
        let mut spec = LQSpec::zeroed(c.n, c.m, c.d);
        if c.x0.len() != c.n {
            return Err(config_err("lq.x0", format!("expected length {}, got {}", c.n, c.x0.len())));
        }
        spec.x0 = DVector::from_column_slice(&c.x0);
        if let Some(a) = &c.A {
            spec.A = matrix_fn(a, c.n, c.n, grid, "lq.A")?;
        }
        if let Some(b) = &c.B {
            spec.B = matrix_fn(b, c.n, c.m, grid, "lq.B")?;
        }
        if let Some(cs) = &c.C {
            spec.C = matrix_fn_list(cs, c.d, c.n, c.n, grid, "lq.C")?;
        }
        if let Some(ds) = &c.D {
            spec.D = matrix_fn_list(ds, c.d, c.n, c.m, grid, "lq.D")?;
        }
        if let Some(e) = &c.e {
            spec.e = vector_fn(e, c.n, grid, "lq.e")?;
        }
        if let Some(fs) = &c.f {
            spec.f = vector_fn_list(fs, c.d, c.n, grid, "lq.f")?;
        }
        if let Some(q) = &c.Q {
            spec.Q = matrix_fn(q, c.n, c.n, grid, "lq.Q")?;
        }
        if let Some(nw) = &c.N {
            spec.N = matrix_fn(nw, c.m, c.m, grid, "lq.N")?;
        }
        if let Some(m) = &c.M {
            spec.M = matrix(m, c.n, c.n, "lq.M")?;
        }
        spec.delta = c.delta;
        Ok(spec)
    }

    /// The mean-variance problem described by the `mv` block.
    pub fn mv_spec(&self, grid: &TimeGrid) -> Result<MVSpec> {
        let c = self
            .mv
            .as_ref()
            .ok_or_else(|| config_err("mv", "block required when problem = \"mv\""))?;
        if c.d == 0 {
            return Err(config_err("mv.d", "must be at least 1"));
        }
        let r = match &c.r {
            Some(r) => scalar_fn(r, grid, "mv.r")?,
            None => TimeFn::constant(0.0),
        };
        Ok(MVSpec {
            d: c.d,
            x: c.x,
            A: c.target,
            r,
            mu: vector_fn(&c.mu, c.d, grid, "mv.mu")?,
            sigma: matrix_fn(&c.sigma, c.d, c.d, grid, "mv.sigma")?,
            delta: c.delta,
        })
    }

    /// The i-th perturbation block as an LQ direction. Mean-variance channels
    /// present in the block are rejected with a pointer to the field.
    pub fn lq_perturbation(&self, i: usize, spec: &LQSpec, grid: &TimeGrid) -> Result<LQPerturbation> {
        let block = self
            .perturbations
            .get(i)
            .ok_or_else(|| config_err("perturbations", format!("no block at index {i}")))?;
        let at = |field: &str| format!("perturbations[{i}].{field}");
        for (set, field) in [
            (block.dx.is_some(), "dx"),
            (block.dtarget.is_some(), "dtarget"),
            (block.dr.is_some(), "dr"),
            (block.dmu.is_some(), "dmu"),
            (block.dsigma.is_some(), "dsigma"),
        ] {
            if set {
                return Err(config_err(at(field), "this channel applies to mv problems"));
            }
        }
        let mut pert = LQPerturbation::zero(spec.n, spec.m, spec.d);
        if let Some(v) = &block.dx0 {
            if v.len() != spec.n {
                return Err(config_err(at("dx0"), format!("expected length {}, got {}", spec.n, v.len())));
            }
            pert.dx0 = DVector::from_column_slice(v);
        }
        if let Some(a) = &block.dA {
            pert.dA = matrix_fn(a, spec.n, spec.n, grid, &at("dA"))?;
        }
        if let Some(b) = &block.dB {
            pert.dB = matrix_fn(b, spec.n, spec.m, grid, &at("dB"))?;
        }
        if let Some(cs) = &block.dC {
            pert.dC = matrix_fn_list(cs, spec.d, spec.n, spec.n, grid, &at("dC"))?;
        }
        if let Some(ds) = &block.dD {
            pert.dD = matrix_fn_list(ds, spec.d, spec.n, spec.m, grid, &at("dD"))?;
        }
        if let Some(e) = &block.de {
            pert.de = vector_fn(e, spec.n, grid, &at("de"))?;
        }
        if let Some(fs) = &block.df {
            pert.df = vector_fn_list(fs, spec.d, spec.n, grid, &at("df"))?;
        }
        Ok(pert)
    }

    /// The i-th perturbation block as a mean-variance direction.
    pub fn mv_perturbation(&self, i: usize, spec: &MVSpec, grid: &TimeGrid) -> Result<MVPerturbation> {
        let block = self
            .perturbations
            .get(i)
            .ok_or_else(|| config_err("perturbations", format!("no block at index {i}")))?;
        let at = |field: &str| format!("perturbations[{i}].{field}");
        for (set, field) in [
            (block.dx0.is_some(), "dx0"),
            (block.dA.is_some(), "dA"),
            (block.dB.is_some(), "dB"),
            (block.dC.is_some(), "dC"),
            (block.dD.is_some(), "dD"),
            (block.de.is_some(), "de"),
            (block.df.is_some(), "df"),
        ] {
            if set {
                return Err(config_err(at(field), "this channel applies to lq problems"));
            }
        }
        let mut pert = MVPerturbation::zero(spec.d);
        if let Some(v) = block.dx {
            pert.dx = v;
        }
        if let Some(v) = block.dtarget {
            pert.dA = v;
        }
        if let Some(r) = &block.dr {
            pert.dr = scalar_fn(r, grid, &at("dr"))?;
        }
        if let Some(m) = &block.dmu {
            pert.dmu = vector_fn(m, spec.d, grid, &at("dmu"))?;
        }
        if let Some(s) = &block.dsigma {
            pert.dsigma = matrix_fn(s, spec.d, spec.d, grid, &at("dsigma"))?;
        }
        Ok(pert)
    }
}

fn matrix(rows: &[Vec<f64>], nr: usize, nc: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(config_err(
            path,
            format!(
                "expected a {nr}x{nc} matrix, got {} rows of lengths {:?}",
                rows.len(),
                rows.iter().map(|r| r.len()).collect::<Vec<_>>()
            ),
        ));
    }
    let mut out = DMatrix::zeros(nr, nc);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

fn vector(v: &[f64], len: usize, path: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(config_err(path, format!("expected length {len}, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn check_sample_count(count: usize, grid: &TimeGrid, path: &str) -> Result<()> {
    if count == grid.steps() || count == 1 {
        Ok(())
    } else {
        Err(config_err(
            path,
            format!("sampled coefficient needs {} entries (one per step) or 1, got {count}", grid.steps()),
        ))
    }
}

pub(crate) fn scalar_fn(f: &ScalarFn, grid: &TimeGrid, path: &str) -> Result<TimeFn<f64>> {
    match f {
        ScalarFn::Const(v) => Ok(TimeFn::constant(*v)),
        ScalarFn::Samples(vs) => {
            check_sample_count(vs.len(), grid, path)?;
            if vs.len() == 1 {
                Ok(TimeFn::constant(vs[0]))
            } else {
                Ok(TimeFn::piecewise(vs.clone(), grid.horizon()))
            }
        }
    }
}

pub(crate) fn vector_fn(f: &VectorFn, len: usize, grid: &TimeGrid, path: &str) -> Result<TimeFn<DVector<f64>>> {
    match f {
        VectorFn::Const(v) => Ok(TimeFn::constant(vector(v, len, path)?)),
        VectorFn::Samples(vs) => {
            check_sample_count(vs.len(), grid, path)?;
            let values = vs
                .iter()
                .enumerate()
                .map(|(k, v)| vector(v, len, &format!("{path}[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            if values.len() == 1 {
                Ok(TimeFn::constant(values.into_iter().next().unwrap()))
            } else {
                Ok(TimeFn::piecewise(values, grid.horizon()))
            }
        }
    }
}

pub(crate) fn matrix_fn(
    f: &MatrixFn,
    nr: usize,
    nc: usize,
    grid: &TimeGrid,
    path: &str,
) -> Result<TimeFn<DMatrix<f64>>> {
    match f {
        MatrixFn::Const(rows) => Ok(TimeFn::constant(matrix(rows, nr, nc, path)?)),
        MatrixFn::Samples(samples) => {
            check_sample_count(samples.len(), grid, path)?;
            let values = samples
                .iter()
                .enumerate()
                .map(|(k, rows)| matrix(rows, nr, nc, &format!("{path}[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            if values.len() == 1 {
                Ok(TimeFn::constant(values.into_iter().next().unwrap()))
            } else {
                Ok(TimeFn::piecewise(values, grid.horizon()))
            }
        }
    }
}

fn matrix_fn_list(
    fs: &[MatrixFn],
    d: usize,
    nr: usize,
    nc: usize,
    grid: &TimeGrid,
    path: &str,
) -> Result<Vec<TimeFn<DMatrix<f64>>>> {
    if fs.len() != d {
        return Err(config_err(path, format!("expected {d} entries (one per noise component), got {}", fs.len())));
    }
    fs.iter()
        .enumerate()
        .map(|(j, f)| matrix_fn(f, nr, nc, grid, &format!("{path}[{j}]")))
        .collect()
}

fn vector_fn_list(
    fs: &[VectorFn],
    d: usize,
    len: usize,
    grid: &TimeGrid,
    path: &str,
) -> Result<Vec<TimeFn<DVector<f64>>>> {
    if fs.len() != d {
        return Err(config_err(path, format!("expected {d} entries (one per noise component), got {}", fs.len())));
    }
    fs.iter()
        .enumerate()
        .map(|(j, f)| vector_fn(f, len, grid, &format!("{path}[{j}]")))
        .collect()
}
