//! Experiment orchestration: configuration, pipelines, exponent fits and report files.

use crate::barrier::{self, BarrierError};
use crate::energy::{EnergyError, WeightTable, Window};
use crate::geometry::{self, LevelMode, SetMask};
use crate::lattice::{Direction, Field, LatticeError, StripDomain};
use crate::minimize::{self, Constraints, SolveError, SolveOptions, SolveResult};
use crate::model::{self, KernelFamily, KernelSpec, ModelError, PotentialFamily, PotentialSpec};
use crate::perimeter::{self, PerimeterError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_family")]
    pub family: KernelFamily,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "one")]
    pub tau: f64,
    /// Defaults to `tau`.
    #[serde(default)]
    pub xi: Option<f64>,
}

fn default_family() -> KernelFamily {
    KernelFamily::Standard
}
fn default_dim() -> usize {
    2
}
fn default_s() -> f64 {
    0.3
}
fn one() -> f64 {
    1.0
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { family: default_family(), dim: 2, s: default_s(), tau: 1.0, xi: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    #[serde(default = "quartic")]
    pub family: PotentialFamily,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub q_modulation: bool,
}

fn quartic() -> PotentialFamily {
    PotentialFamily::Quartic
}
fn default_kappa() -> f64 {
    0.2
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig { family: PotentialFamily::Quartic, kappa: 0.2, q_modulation: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_direction")]
    pub direction: Vec<i64>,
    #[serde(rename = "M", default = "default_m")]
    pub m: f64,
    #[serde(default = "default_cells")]
    pub cells_per_tau: usize,
    #[serde(default = "default_buffer")]
    pub buffer: f64,
    /// Explicit cell size; overrides `cells_per_tau` when set.
    #[serde(default)]
    pub h: Option<f64>,
    /// Defaults to `max(4h, 2τ)`.
    #[serde(rename = "R_cut", default)]
    pub r_cut: Option<f64>,
}

fn default_direction() -> Vec<i64> {
    vec![0, 1]
}
fn default_m() -> f64 {
    10.0
}
fn default_cells() -> usize {
    4
}
fn default_buffer() -> f64 {
    2.0
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { direction: default_direction(), m: default_m(), cells_per_tau: 4, buffer: 2.0, h: None, r_cut: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_window")]
    pub stall_window: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Level of the density sets `{u > θ₀}`, `{u < -θ₀}`.
    #[serde(default = "default_theta0")]
    pub theta0: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn default_iters() -> usize {
    20_000
}
fn default_rel_tol() -> f64 {
    1e-10
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_window() -> usize {
    50
}
fn default_theta() -> f64 {
    0.9
}
fn default_theta0() -> f64 {
    0.5
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: default_iters(),
            rel_tol: default_rel_tol(),
            grad_tol: default_grad_tol(),
            stall_window: default_window(),
            theta: default_theta(),
            theta0: default_theta0(),
            epsilon: None,
        }
    }
}

/// Pass/fail thresholds of the randomized and measured checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub class_a_rel: f64,
    pub density_c: f64,
    pub direction_spread: f64,
    pub exponent: f64,
    pub log_ratio: f64,
    pub lkw_allowance: f64,
    pub trend_slack: f64,
    pub identity_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            class_a_rel: 1e-8,
            density_c: 0.02,
            direction_spread: 0.20,
            exponent: 0.15,
            log_ratio: 3.0,
            lkw_allowance: 1.05,
            trend_slack: 0.10,
            identity_rel: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub class_a_trials: usize,
    pub ball_radius: [f64; 2],
    pub flip_trials: usize,
    pub flip_radius: [f64; 2],
    pub random_masks: usize,
    pub validate_samples: usize,
    pub birkhoff_levels: Vec<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            class_a_trials: 50,
            ball_radius: [0.5, 2.0],
            flip_trials: 100,
            flip_radius: [0.5, 2.0],
            random_masks: 10,
            validate_samples: 500,
            birkhoff_levels: vec![-0.9, -0.5, 0.0, 0.5, 0.9],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub radii: Vec<f64>,
    pub directions: Vec<Vec<i64>>,
    pub tau_list: Vec<f64>,
    pub eps_list: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    /// Outer radius; twice the admissible threshold when absent.
    #[serde(rename = "R")]
    pub big_r: Option<f64>,
    pub delta: f64,
    pub samples: usize,
    pub slide: bool,
    pub rescale_check: bool,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig { big_r: None, delta: 0.1, samples: 200, slide: true, rescale_check: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub barrier: BarrierConfig,
    #[serde(default)]
    pub seed: u64,
    /// Experiment to run when the command line does not name one.
    #[serde(default)]
    pub experiment: Option<String>,
    /// Output directory when `--out` is absent.
    #[serde(default)]
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            kernel: KernelConfig::default(),
            potential: PotentialConfig::default(),
            geometry: GeometryConfig::default(),
            solver: SolverConfig::default(),
            tolerances: Tolerances::default(),
            checks: CheckConfig::default(),
            sweep: SweepConfig::default(),
            barrier: BarrierConfig::default(),
            seed: 0,
            experiment: None,
            out: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Configuration or hypothesis rejection (exit code 2).
    #[error("rejected [{tag}]: {msg}")]
    Rejected { tag: String, msg: String },
    /// Anything that went wrong while running (exit code 1).
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Rejected { .. } => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

fn reject(tag: &str, msg: impl Into<String>) -> RunError {
    RunError::Rejected { tag: tag.into(), msg: msg.into() }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for RunError {
            fn from(e: $t) -> Self {
                RunError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(EnergyError, SolveError, PerimeterError, geometry::GeometryError, std::io::Error, serde_json::Error);

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        reject("model", e.to_string())
    }
}

impl From<LatticeError> for RunError {
    fn from(e: LatticeError) -> Self {
        reject("geometry", e.to_string())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| reject("config", e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(reject("config", format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version)));
        }
        Ok(cfg)
    }

    pub fn kernel_spec(&self, tau: f64) -> Result<KernelSpec, RunError> {
        let k = &self.kernel;
        let mut spec = match k.family {
            KernelFamily::Standard => KernelSpec::standard(k.dim, k.s, tau)?,
            KernelFamily::Modulated => KernelSpec::modulated(k.dim, k.s, tau)?,
        };
        if let Some(xi) = k.xi {
            spec.xi = xi;
            spec.check()?;
        }
        Ok(spec)
    }

    pub fn potential_spec(&self, tau: f64) -> Result<PotentialSpec, RunError> {
        let p = &self.potential;
        Ok(PotentialSpec::new(p.family, p.kappa, tau, p.q_modulation)?)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iters: self.solver.max_iters,
            rel_tol: self.solver.rel_tol,
            stall_window: self.solver.stall_window,
            grad_tol: self.solver.grad_tol,
            epsilon: self.solver.epsilon,
        }
    }
}

/// Fitted power law `value ≈ constant · R^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub exponent: f64,
    pub constant: f64,
    /// Largest relative deviation of the data from the fit.
    pub residual: f64,
}

/// Ordinary least squares in log-log coordinates.
pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<Fit, RunError> {
    if pairs.len() < 2 {
        return Err(reject("config", "an exponent fit needs at least two points"));
    }
    if pairs.iter().any(|&(r, v)| !(r > 0.0 && v > 0.0) || !r.is_finite() || !v.is_finite()) {
        return Err(reject("config", "exponent fits need positive finite data"));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(reject("config", "exponent fits need at least two distinct radii"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let constant = (my - exponent * mx).exp();
    let residual = pairs.iter().map(|&(r, v)| (constant * r.powf(exponent) / v - 1.0).abs()).fold(0.0, f64::max);
    Ok(Fit { exponent, constant, residual })
}

/// Report plus the files that go next to it.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub report: Value,
    pub files: Vec<(String, String)>,
    pub pass: bool,
}

impl Bundle {
    pub fn write(&self, out: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&self.report)? + "\n")?;
        for (name, body) in &self.files {
            std::fs::write(out.join(name), body)?;
        }
        Ok(())
    }
}

/// Everything a single strip solve needs.
pub struct Setup {
    pub kernel: KernelSpec,
    pub potential: PotentialSpec,
    pub domain: StripDomain,
    pub weights: WeightTable,
    pub constraints: Constraints,
}

pub fn setup(cfg: &ExperimentConfig, tau: f64, direction: &[i64]) -> Result<Setup, RunError> {
    let kernel = cfg.kernel_spec(tau)?;
    let potential = cfg.potential_spec(tau)?;
    if direction.len() != kernel.dim {
        return Err(reject("geometry", format!("direction {direction:?} does not match n = {}", kernel.dim)));
    }
    let dir = Direction::new(direction.to_vec(), tau)?;
    let g = &cfg.geometry;
    let domain = match g.h {
        Some(h) => StripDomain::build(tau, dir, g.m * tau, h, g.buffer * tau)?,
        None => StripDomain::aligned(tau, dir, g.m * tau, g.cells_per_tau, g.buffer * tau)?,
    };
    let r_cut = g.r_cut.unwrap_or((4.0 * domain.h).max(2.0 * tau));
    let weights = WeightTable::build(&kernel, &domain, r_cut).map_err(|e| reject("geometry", e.to_string()))?;
    let constraints = Constraints::new(cfg.solver.theta).map_err(|e| reject("theta", e.to_string()))?;
    Ok(Setup { kernel, potential, domain, weights, constraints })
}

fn check_hypotheses(cfg: &ExperimentConfig, setup: &Setup) -> Result<model::ValidationReport, RunError> {
    let rep = model::validate_hypotheses(&setup.kernel, &setup.potential, cfg.checks.validate_samples, cfg.seed)?;
    if let Some(tag) = &rep.rejection {
        return Err(reject(tag, format!("hypothesis {tag} fails for this configuration")));
    }
    Ok(rep)
}

/// Cell center with the smallest `|u|` (first in storage order on ties).
pub fn interface_center(field: &Field) -> Vec<f64> {
    let mut best = 0;
    for (i, v) in field.values.iter().enumerate() {
        if v.abs() < field.values[best].abs() {
            best = i;
        }
    }
    field.domain.center(best)
}

fn label(direction: &[i64], tau: f64) -> String {
    let d: Vec<String> = direction.iter().map(|v| v.to_string()).collect();
    format!("p{}_tau{}", d.join("_"), tau)
}

/// Planelike solve and its diagnostics for one `(τ, ω)`.
pub fn planelike_case(cfg: &ExperimentConfig, tau: f64, direction: &[i64]) -> Result<(Value, SolveResult, Setup, bool), RunError> {
    let st = setup(cfg, tau, direction)?;
    if (st.kernel.xi - tau).abs() > 1e-12 * tau {
        return Err(reject("xi=tau", format!("planelike construction needs xi = tau, got xi = {}", st.kernel.xi)));
    }
    check_hypotheses(cfg, &st)?;
    let res = minimize::minimize_strip(&st.weights, &st.potential, &st.constraints, &cfg.solve_options(), None)?;
    let theta = cfg.solver.theta;
    let birk = minimize::check_birkhoff(&res.field, &cfg.checks.birkhoff_levels);
    let upper = minimize::upper_distance(&res.field, theta);
    let r = cfg.checks.ball_radius;
    let class_a = minimize::check_class_a(&st.weights, &st.potential, &res.field, cfg.checks.class_a_trials, (r[0] * tau, r[1] * tau), cfg.seed, cfg.solver.epsilon)?;
    let class_a_pass = class_a.max_improvement <= cfg.tolerances.class_a_rel * res.f_value.abs();
    let width = geometry::interface_width(&res.field, theta);
    let band = geometry::band_extent(&res.field, theta);
    let inside = band.map_or(true, |(lo, hi)| lo >= 0.0 && hi <= st.domain.m);
    let pass = res.converged && birk.pass && upper >= tau && class_a_pass && inside;
    let report = json!({
        "direction": direction,
        "tau": tau,
        "M": st.domain.m,
        "h": st.domain.h,
        "cells": st.domain.n_cells(),
        "R_cut": st.weights.r_cut,
        "solve": &res,
        "birkhoff": birk,
        "upper_distance": { "value": upper, "required": tau, "pass": upper >= tau },
        "class_a": { "seed": class_a.seed, "max_improvement": class_a.max_improvement, "tolerance": cfg.tolerances.class_a_rel * res.f_value.abs(), "pass": class_a_pass, "trials": class_a.trials.len() },
        "interface_width": width,
        "M0_emp": width / tau,
        "band": band.map(|(a, b)| vec![a, b]),
        "tauPLcond": { "tag": "tauPLcond", "inside": inside },
        "pass": pass,
    });
    Ok((report, res, st, pass))
}

pub fn run_planelike(cfg: &ExperimentConfig) -> Result<Bundle, RunError> {
    let tau = cfg.kernel.tau;
    let directions = if cfg.sweep.directions.is_empty() { vec![cfg.geometry.direction.clone()] } else { cfg.sweep.directions.clone() };
    let taus = if cfg.sweep.tau_list.is_empty() { vec![tau] } else { cfg.sweep.tau_list.clone() };
    let mut cases = Vec::new();
    let mut files = Vec::new();
    let mut pass = true;
    let mut m0 = Vec::new();
    for d in &directions {
        for &t in &taus {
            let (rep, res, _, ok) = planelike_case(cfg, t, d)?;
            let tag = label(d, t);
            files.push((format!("field_{tag}.csv"), res.field.to_csv()));
            files.push((format!("trace_{tag}.csv"), res.trace_csv()));
            m0.push(rep["M0_emp"].as_f64().unwrap_or(f64::NAN));
            pass &= ok;
            cases.push(rep);
        }
    }
    let spread = spread(&m0);
    let spread_pass = m0.len() < 2 || spread <= cfg.tolerances.direction_spread;
    pass &= spread_pass;
    let report = json!({
        "experiment": "planelike",
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "cases": cases,
        "M0_spread": { "value": spread, "tolerance": cfg.tolerances.direction_spread, "pass": spread_pass },
        "pass": pass,
    });
    Ok(Bundle { report, files, pass })
}

/// Half the relative range `(max - min) / mean / 2`.
pub fn spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    0.5 * (hi - lo) / mean
}

fn profile_min(rows: &[geometry::ProfileRow]) -> Option<f64> {
    rows.iter().filter_map(|r| r.value).reduce(f64::min)
}

pub fn run_scaling(cfg: &ExperimentConfig) -> Result<Bundle, RunError> {
    let radii = &cfg.sweep.radii;
    if radii.len() < 4 {
        return Err(reject("config", "the radius sweep needs at least four radii"));
    }
    let tau = cfg.kernel.tau;
    let (plane, res, st, _) = planelike_case(cfg, tau, &cfg.geometry.direction)?;
    let field = &res.field;
    let center = interface_center(field);
    let n = st.domain.dim as f64;
    let s = st.kernel.s;
    let mut rows = Vec::new();
    let mut csv = String::from("R,E,E_over_scale\n");
    for &r in radii {
        let rep = st.weights.total_energy(&st.potential, field, &Window::Ball { center: center.clone(), radius: r }, cfg.solver.epsilon)
            .map_err(|e| reject("config", format!("radius {r}: {e}")))?;
        let scale = r.powf(n - 1.0) * model::psi_s(s, r)?;
        csv.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", r, rep.total, rep.total / scale));
        rows.push((r, rep.total, rep.total / scale));
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let fit = fit_exponent(&pairs)?;
    let (target, verdict) = if (s - 0.5).abs() < 1e-12 {
        let ratios: Vec<f64> = rows.iter().map(|r| r.1 / (r.0.powf(n - 1.0) * r.0.ln())).collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        (n - 1.0, json!({ "log_ratio_min": lo, "log_ratio_max": hi, "pass": lo > 0.0 && hi / lo <= cfg.tolerances.log_ratio }))
    } else {
        let target = if s < 0.5 { n - 2.0 * s } else { n - 1.0 };
        (target, json!({ "pass": (fit.exponent - target).abs() <= cfg.tolerances.exponent }))
    };
    let theta0 = cfg.solver.theta0;
    let plus = geometry::density_profile(&geometry::level_mask(field, theta0, LevelMode::Above), &center, radii);
    let minus = geometry::density_profile(&geometry::level_mask(field, -theta0, LevelMode::Below), &center, radii);
    let band = geometry::interface_profile(field, cfg.solver.theta, &center, radii);
    let c = cfg.tolerances.density_c;
    let dens_pass = profile_min(&plus).map_or(false, |v| v >= c) && profile_min(&minus).map_or(false, |v| v >= c);
    let c_int = profile_min(&band);
    let pass = verdict["pass"].as_bool().unwrap_or(false) && dens_pass && c_int.map_or(false, |v| v > 0.0);
    let scale_lo = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let scale_hi = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let report = json!({
        "experiment": "scaling",
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "center": center,
        "planelike": plane,
        "fit": fit,
        "target_exponent": target,
        "two_sided": { "tag": "enestbelow", "lower": scale_lo, "upper": scale_hi },
        "scaling_verdict": verdict,
        "density": { "tag": "densest1", "min_plus": profile_min(&plus), "min_minus": profile_min(&minus), "c": c, "pass": dens_pass },
        "interface": { "tag": "intdens", "min": c_int, "max": band.iter().filter_map(|r| r.value).reduce(f64::max) },
        "pass": pass,
    });
    let files = vec![
        ("scaling.csv".into(), csv),
        ("density_plus.csv".into(), geometry::profile_csv(&plus)),
        ("density_minus.csv".into(), geometry::profile_csv(&minus)),
        ("interface.csv".into(), geometry::profile_csv(&band)),
        ("field_scaling.csv".into(), field.to_csv()),
    ];
    Ok(Bundle { report, files, pass })
}

fn barrier_error(e: BarrierError) -> RunError {
    match e {
        BarrierError::Threshold { .. } => reject("R>=C(delta)", e.to_string()),
        BarrierError::Precondition(m) => reject("barrier", m),
        BarrierError::Energy(e) => RunError::Runtime(e.to_string()),
    }
}

pub fn run_barrier(cfg: &ExperimentConfig) -> Result<Bundle, RunError> {
    let tau = cfg.kernel.tau;
    let kernel = cfg.kernel_spec(tau)?;
    if kernel.family != KernelFamily::Standard {
        return Err(reject("standard kernel", "barrier verification runs on the standard kernel"));
    }
    let delta = cfg.barrier.delta;
    let c3 = barrier::measure_c3(&kernel, delta);
    let big_r = match cfg.barrier.big_r {
        Some(r) => r,
        None => match barrier::build_barrier_with(&kernel, 0.0, delta, Some(c3)) {
            Err(BarrierError::Threshold { required, .. }) => 2.0 * required,
            Err(e) => return Err(barrier_error(e)),
            Ok(_) => unreachable!("R = 0 is always below the threshold"),
        },
    };
    let b = barrier::build_barrier_with(&kernel, big_r, delta, Some(c3)).map_err(barrier_error)?;
    let ver = barrier::verify_barrier(&b, cfg.barrier.samples);
    let mut pass = ver.lkw_pass && ver.bounds_pass && ver.monotone;
    let rescale = if cfg.barrier.rescale_check {
        let b2 = barrier::build_barrier_with(&kernel, 2.0 * big_r, delta, Some(c3)).map_err(barrier_error)?;
        let v2 = barrier::verify_barrier(&b2, cfg.barrier.samples);
        pass &= v2.lkw_pass;
        Some(json!({ "R": 2.0 * big_r, "worst_LKw_ratio": v2.worst_lkw_ratio, "pass": v2.lkw_pass }))
    } else {
        None
    };
    let slide = if cfg.barrier.slide {
        let (_, res, st, _) = planelike_case(cfg, tau, &cfg.geometry.direction)?;
        let d = &st.domain;
        let center = interface_center(&res.field);
        let (_, yc) = d.to_frame(&center);
        let room = (yc + d.buffer).min(d.m + d.buffer - yc) - d.h;
        let radius = big_r.min(room);
        let rep = barrier::barrier_slide_test(&st.weights, &st.potential, &st.constraints, &res.field, &b, &center, Some(radius)).map_err(barrier_error)?;
        pass &= rep.pass && res.converged;
        Some(json!({ "report": rep, "converged": res.converged, "rescaled": radius < big_r }))
    } else {
        None
    };
    let report = json!({
        "experiment": "barrier",
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "barrier": b,
        "verification": {
            "tag": "LKwbar",
            "worst_LKw_ratio": ver.worst_lkw_ratio,
            "worst_lower_C": ver.worst_lower_c,
            "worst_upper_C": ver.worst_upper_c,
            "samples": ver.samples,
            "C": ver.c,
            "monotone": ver.monotone,
            "outside_value": ver.outside_value,
            "lkw_pass": ver.lkw_pass,
            "bounds_pass": ver.bounds_pass,
        },
        "rescale": rescale,
        "slide": slide,
        "pass": pass,
    });
    let mut samples = String::from("radius,w,LKw,ratio\n");
    for r in &ver.rows {
        samples.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", r.radius, r.w, r.lkw, r.ratio));
    }
    let files = vec![("barrier_profile.csv".into(), b.profile_csv(1000)), ("barrier_samples.csv".into(), samples)];
    Ok(Bundle { report, files, pass })
}

fn require_small_s(cfg: &ExperimentConfig) -> Result<(), RunError> {
    if cfg.kernel.s >= 0.5 {
        return Err(reject("s<1/2", format!("the perimeter limit needs s < 1/2, got s = {}", cfg.kernel.s)));
    }
    Ok(())
}

pub fn run_gamma(cfg: &ExperimentConfig) -> Result<Bundle, RunError> {
    require_small_s(cfg)?;
    let tau = cfg.kernel.tau;
    let eps: Vec<f64> = if cfg.sweep.eps_list.is_empty() { vec![tau, 0.5 * tau, 0.25 * tau, 0.125 * tau] } else { cfg.sweep.eps_list.clone() };
    if eps.iter().any(|&e| !(e > 0.0 && e <= tau)) {
        return Err(reject("eps in (0,tau]", "every epsilon must lie in (0, tau]"));
    }
    let st = setup(cfg, tau, &cfg.geometry.direction)?;
    check_hypotheses(cfg, &st)?;
    let records = perimeter::gamma_sweep(&st.weights, &st.potential, &st.constraints, &eps, &cfg.solve_options())?;
    let slack = cfg.tolerances.trend_slack;
    let mut recovery = Vec::new();
    for r in &records {
        let mask = geometry::level_mask(&r.field, 0.0, LevelMode::Above);
        let chi = mask.indicator_field()?;
        let e_chi = st.weights.total_energy(&st.potential, &chi, &Window::Strip, Some(r.eps))?.total;
        let rel = (e_chi - r.g_threshold).abs() / r.g_threshold.abs().max(f64::MIN_POSITIVE);
        recovery.push(json!({ "eps": r.eps, "E_eps_indicator": e_chi, "G": r.g_threshold, "rel": rel }));
    }
    let recovery_pass = recovery.iter().all(|v| v["rel"].as_f64().unwrap_or(1.0) <= cfg.tolerances.identity_rel);
    let gaps: Vec<f64> = records.iter().map(|r| (r.e_eps - r.g_threshold).abs()).collect();
    let gap_pass = gaps.windows(2).all(|w| w[1] <= (1.0 + slack) * w[0]);
    let sym_pass = records.windows(2).all(|w| w[1].sym_diff <= w[0].sym_diff + 1e-12);
    let radii: Vec<f64> = if cfg.sweep.radii.is_empty() { (1..=4).map(|k| k as f64 * tau).collect() } else { cfg.sweep.radii.clone() };
    let (mask, limit) = perimeter::minimal_surface_extract(&records, &radii, cfg.tolerances.density_c)?;
    let fr = cfg.checks.flip_radius;
    let flips = perimeter::surface_local_min_check(&st.weights, &mask, cfg.checks.flip_trials, (fr[0] * tau, fr[1] * tau), cfg.seed)?;
    let converged = records.iter().all(|r| r.converged);
    let pass = converged && recovery_pass && gap_pass && sym_pass && limit.pass && flips.pass;
    let mut files = vec![("gamma.csv".to_string(), perimeter::gamma_csv(&records)), ("mask_limit.csv".to_string(), mask.to_csv())];
    for (k, r) in records.iter().enumerate() {
        files.push((format!("field_eps{k}.csv"), r.field.to_csv()));
    }
    let report = json!({
        "experiment": "gamma",
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "records": records,
        "recovery_identity": { "rows": recovery, "pass": recovery_pass },
        "gap_trend": { "gaps": gaps, "slack": slack, "pass": gap_pass },
        "sym_diff_trend": { "pass": sym_pass },
        "limit": { "tag": "PerK-inclusion", "report": limit },
        "flips": flips,
        "pass": pass,
    });
    Ok(Bundle { report, files, pass })
}

/// Bernoulli(1/2) mask with the far-field convention of indicator fields.
pub fn random_mask(domain: &StripDomain, rng: &mut ChaCha8Rng) -> SetMask {
    let bits: Vec<bool> = (0..domain.n_cells()).map(|_| rng.gen_bool(0.5)).collect();
    SetMask { domain: domain.clone(), inside: bits, far_plus: true, far_minus: false }
}

pub fn run_perimeter(cfg: &ExperimentConfig) -> Result<Bundle, RunError> {
    require_small_s(cfg)?;
    let tau = cfg.kernel.tau;
    let (plane, res, st, _) = planelike_case(cfg, tau, &cfg.geometry.direction)?;
    let mask = geometry::level_mask(&res.field, 0.0, LevelMode::Above);
    let strip = perimeter::per_k(&st.weights, &mask, &Window::Strip)?;
    let center = interface_center(&res.field);
    let ball = perimeter::per_k(&st.weights, &mask, &Window::Ball { center: center.clone(), radius: tau })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    for _ in 0..cfg.checks.random_masks {
        let m = random_mask(&st.domain, &mut rng);
        let r = perimeter::per_k(&st.weights, &m, &Window::Strip)?;
        worst = worst.max((r.per_k - r.quarter_kinetic).abs() / r.per_k.abs().max(f64::MIN_POSITIVE));
    }
    let ident = |r: &perimeter::PerimeterResult| (r.per_k - r.quarter_kinetic).abs() / r.per_k.abs().max(f64::MIN_POSITIVE);
    let pass = worst <= cfg.tolerances.identity_rel && ident(&strip) <= cfg.tolerances.identity_rel && ident(&ball) <= cfg.tolerances.identity_rel;
    let report = json!({
        "experiment": "perimeter",
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "planelike": plane,
        "strip": strip,
        "ball": ball,
        "random_masks": { "count": cfg.checks.random_masks, "worst_identity_rel": worst },
        "pass": pass,
    });
    Ok(Bundle { report, files: vec![("mask_threshold.csv".into(), mask.to_csv())], pass })
}

pub fn run_validate(cfg: &ExperimentConfig) -> Result<Bundle, RunError> {
    let tau = cfg.kernel.tau;
    let kernel = cfg.kernel_spec(tau)?;
    let potential = cfg.potential_spec(tau)?;
    let rep = model::validate_hypotheses(&kernel, &potential, cfg.checks.validate_samples, cfg.seed)?;
    let report = json!({
        "experiment": "validate",
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "validation": rep,
        "pass": rep.rejection.is_none(),
    });
    if let Some(tag) = &rep.rejection {
        return Err(reject(tag, format!("hypothesis {tag} fails")));
    }
    Ok(Bundle { report, files: Vec::new(), pass: true })
}

pub fn run(experiment: &str, cfg: &ExperimentConfig) -> Result<Bundle, RunError> {
    match experiment {
        "planelike" => run_planelike(cfg),
        "scaling" => run_scaling(cfg),
        "barrier" => run_barrier(cfg),
        "gamma" => run_gamma(cfg),
        "perimeter" => run_perimeter(cfg),
        "validate" => run_validate(cfg),
        other => Err(reject("config", format!("unknown experiment {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let f = fit_exponent(&[(1.0, 1.0), (2.0, 2.0), (4.0, 4.0)]).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-12 && (f.constant - 1.0).abs() < 1e-12 && f.residual < 1e-12);
        let f = fit_exponent(&[(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)]).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [2.0, 3.0, 5.0, 8.0f64].iter().map(|&r| (r, r.powf(1.5))).collect();
        assert!((fit_exponent(&pts).unwrap().exponent - 1.5).abs() < 1e-12);
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, f64::NAN), (3.0, 3.0)]).is_err());
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 1, "extra": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 2}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 1, "kernel": {"s": 0.3, "nu": 1}}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"schema_version": 1, "geometry": {"M": 4}}"#).unwrap();
        assert_eq!(cfg.geometry.m, 4.0);
    }

    #[test]
    fn xi_mismatch_is_named() {
        let mut cfg = ExperimentConfig::default();
        cfg.kernel.xi = Some(2.0);
        match run_planelike(&cfg) {
            Err(RunError::Rejected { tag, .. }) => assert_eq!(tag, "xi=tau"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_needs_small_s() {
        let mut cfg = ExperimentConfig::default();
        cfg.kernel.s = 0.6;
        let err = run_gamma(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("s<1/2"));
    }
}
