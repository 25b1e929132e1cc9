//! Radial barrier `w` with `|L_K w| ≤ δ(1+w)`, `w = 1` outside `B_R`, and its checks.
//!
//! The profile is built in the unit-cutoff variable `t ∈ [0, r]`:
//! `ℓ(t) = (r-t)^{-2s}`, `h` the normalized tangent-line remainder of `ℓ` on `[r/2, r-1)`,
//! `g = ηh + 1 - η` with a smooth cutoff `η` falling on `[r-7/4, r-5/4]`, `v(x) = g(|x|)`,
//! and finally `w(x) = (2-β) v(rx/R) + β - 1` with `β = 32 r^{-2s}`.

use crate::energy::{EnergyError, WeightTable, Window};
use crate::geometry;
use crate::lattice::{Field, Site};
use crate::minimize::{project, Constraints};
use crate::model::{DoubleWell, KernelFamily, KernelSpec};
use crate::quad;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::OnceLock;

#[derive(Debug, thiserror::Error)]
pub enum BarrierError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("R = {given} is below the admissible threshold: need R >= C(delta) = {required}")]
    Threshold { required: f64, given: f64 },
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Bound on `|g'|` and `|g''|` relative to `min{(r-t)^{-2s-k}, 1}`.
pub const C1: f64 = 600.0;

/// Relative tolerance of each adaptive ray panel.
const RAY_TOL: f64 = 1e-6;

/// Unit-cutoff profile `g` for a given `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub r: f64,
    pub s: f64,
    pub gamma_r: f64,
}

/// Exponential-ratio step on `[0, 1]` with a gentle rate; returns `(S₀, S₀')`.
fn base_step(z: f64) -> (f64, f64) {
    const C: f64 = 0.6;
    if z <= 0.0 {
        return (0.0, 0.0);
    }
    if z >= 1.0 {
        return (1.0, 0.0);
    }
    let y = 1.0 - z;
    let a = (-C / z).exp();
    let b = (-C / y).exp();
    let d = a + b;
    (a / d, (C * a * b / (z * z) + C * a * b / (y * y)) / (d * d))
}

const STEP_NODES: usize = 512;

/// `∫₀ᶻ S₀` from a table of node values plus a short Gauss panel.
fn step_integral(z: f64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let dz = 1.0 / STEP_NODES as f64;
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for k in 0..STEP_NODES {
            acc += quad::gauss(20, k as f64 * dz, (k + 1) as f64 * dz, |t| base_step(t).0);
            out.push(acc);
        }
        out
    });
    let k = ((z * STEP_NODES as f64) as usize).min(STEP_NODES - 1);
    let z0 = k as f64 / STEP_NODES as f64;
    table[k] + quad::gauss(8, z0, z, |t| base_step(t).0)
}

/// `(S, S', S'')` of the C^∞ step `S(x) = 2∫₀ˣ b` with the plateau bump
/// `b(x) = S₀(2 min{x, 1-x})` (unit mass over `[0, 1]`, `S' ≤ 2`, `|S''| ≤ 4 max S₀'`).
fn smooth_step(x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let left = |x: f64| {
        let z = 2.0 * x;
        let (b0, b1) = base_step(z);
        (step_integral(z), 2.0 * b0, 4.0 * b1)
    };
    if x <= 0.5 {
        left(x)
    } else {
        let (v, d1, d2) = left(1.0 - x);
        (1.0 - v, d1, -d2)
    }
}

impl Profile {
    pub fn new(r: f64, s: f64) -> Self {
        let mut p = Profile { r, s, gamma_r: 1.0 };
        let denom = p.ell(r - 1.0) - p.ell(0.5 * r) - p.ell_d(0.5 * r) * (0.5 * r - 1.0);
        p.gamma_r = 1.0 / denom;
        p
    }

    pub fn ell(&self, t: f64) -> f64 {
        (self.r - t).powf(-2.0 * self.s)
    }

    fn ell_d(&self, t: f64) -> f64 {
        2.0 * self.s * (self.r - t).powf(-2.0 * self.s - 1.0)
    }

    fn ell_dd(&self, t: f64) -> f64 {
        2.0 * self.s * (2.0 * self.s + 1.0) * (self.r - t).powf(-2.0 * self.s - 2.0)
    }

    /// `(h, h', h'')`.
    pub fn h(&self, t: f64) -> (f64, f64, f64) {
        let half = 0.5 * self.r;
        if t < half {
            (0.0, 0.0, 0.0)
        } else if t < self.r - 1.0 {
            let g = self.gamma_r;
            (
                g * (self.ell(t) - self.ell(half) - self.ell_d(half) * (t - half)),
                g * (self.ell_d(t) - self.ell_d(half)),
                g * self.ell_dd(t),
            )
        } else {
            (1.0, 0.0, 0.0)
        }
    }

    /// `(η, η', η'')`: 1 on `[0, r-7/4]`, 0 from `r-5/4` on.
    pub fn eta(&self, t: f64) -> (f64, f64, f64) {
        let (st, s1, s2) = smooth_step(2.0 * (t - (self.r - 1.75)));
        (1.0 - st, -2.0 * s1, -4.0 * s2)
    }

    /// `(g, g', g'')`.
    pub fn g(&self, t: f64) -> (f64, f64, f64) {
        if t >= self.r - 1.25 {
            return (1.0, 0.0, 0.0);
        }
        let (h0, h1, h2) = self.h(t);
        let (e0, e1, e2) = self.eta(t);
        (e0 * h0 + 1.0 - e0, e1 * (h0 - 1.0) + e0 * h1, e2 * (h0 - 1.0) + 2.0 * e1 * h1 + e0 * h2)
    }

    pub fn knots(&self) -> [f64; 3] {
        [0.5 * self.r, self.r - 1.75, self.r - 1.25]
    }
}

/// `L_K P(|·|)` at distance `t` from the origin for the kernel `|x-y|^{-n-2s}`, by pairing
/// `±z` and integrating the second difference radially (PV core below `core` by its
/// quadratic model, analytic tail beyond the outer radius where `P ≡ 1`).
pub fn radial_lk(p: &(dyn Fn(f64) -> f64 + Sync), knots: &[f64], outer: f64, t: f64, dim: usize, s: f64, core: f64) -> f64 {
    let p0 = p(t);
    let along = |ux: f64, uy: f64, rho: f64| -> f64 {
        let a = (t + rho * ux).hypot(rho * uy);
        let b = (t - rho * ux).hypot(rho * uy);
        2.0 * p0 - p(a) - p(b)
    };
    let ray = |ux: f64, uy: f64| -> f64 {
        let rho_max = t + outer;
        let mut cuts = vec![core, rho_max];
        // closest approach to the origin, where grazing rays kink
        let close = (t * ux).abs();
        if close > core && close < rho_max {
            cuts.push(close);
        }
        for &k in knots.iter().chain(std::iter::once(&outer)) {
            // |x ± ρe| = k with x = (t, 0)
            let a = t * ux;
            let disc = a * a - t * t + k * k;
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            for rho in [-a + sq, -a - sq, a + sq, a - sq] {
                if rho > core && rho < rho_max {
                    cuts.push(rho);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * rho_max);
        let mut f = |rho: f64| along(ux, uy, rho) * rho.powf(-1.0 - 2.0 * s);
        let mut acc = 0.0;
        for w in cuts.windows(2) {
            if w[1] - w[0] <= 0.0 {
                continue;
            }
            let lo = w[0];
            let mut hi = w[1];
            // geometric panels keep the relative resolution near small radii
            let panel = |a: f64, b: f64, f: &mut dyn FnMut(f64) -> f64| {
                let mass = quad::gauss(20, a, b, |x| f(x).abs());
                let mut g = f;
                quad::adaptive(&mut g, a, b, RAY_TOL * mass + 1e-300, 10)
            };
            while hi > 4.0 * lo.max(core) && hi - lo > 1.0 {
                let mid = 0.25 * hi;
                acc += panel(mid.max(lo), hi, &mut f);
                hi = mid.max(lo);
            }
            acc += panel(lo, hi, &mut f);
        }
        let d2c = along(ux, uy, core);
        acc + d2c * core.powf(-2.0 * s) / (2.0 - 2.0 * s) + (2.0 * p0 - 2.0) * rho_max.powf(-2.0 * s) / (2.0 * s)
    };
    match dim {
        1 => ray(1.0, 0.0),
        _ => {
            // I(φ) = I(π-φ), so twice the quarter turn
            let mut f = |phi: f64| {
                let (sn, cs) = phi.sin_cos();
                ray(cs, sn)
            };
            let panels = 32;
            let step = std::f64::consts::FRAC_PI_2 / panels as f64;
            let mut acc = 0.0;
            for k in 0..panels {
                acc += quad::gauss(8, k as f64 * step, (k + 1) as f64 * step, &mut f);
            }
            2.0 * acc
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierFn {
    pub dim: usize,
    pub s: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub delta: f64,
    pub r1: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub r: f64,
    pub gamma_r: f64,
    pub beta: f64,
    pub c3: f64,
    pub nu_bar: f64,
    pub c4: f64,
    pub c5: f64,
    /// Assembled constant `C`.
    #[serde(rename = "C")]
    pub c: f64,
    /// Kernel multiplier in the quadrature (`Λ` for the envelope check of modulated kernels).
    pub envelope: f64,
    pub envelope_only: bool,
    profile: Profile,
}

fn c3_samples(r: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..24).map(|k| r * (k as f64 + 0.5) / 24.0).collect();
    t.extend((1..=40).map(|k| {
        let q = k as f64 / 40.0;
        r - 1.25 - (0.5 * r - 1.25) * q * q
    }));
    t.extend([r - 1.75, r - 1.5, r - 1.3, r - 1.0, r - 0.5]);
    t
}

/// `max |L v| / (v + 16 r^{-2s})` over samples in `B_r` for the unit-cutoff profile at `r`.
pub fn measure_lkv_ratio(dim: usize, s: f64, r: f64) -> f64 {
    let prof = Profile::new(r, s);
    let p = move |t: f64| prof.g(t).0;
    let knots = prof.knots();
    let floor = 16.0 * r.powf(-2.0 * s);
    c3_samples(r)
        .par_iter()
        .map(|&t| {
            let l = radial_lk(&p, &knots[..2], knots[2], t, dim, s, 1.0 / 64.0);
            l.abs() / (p(t) + floor)
        })
        .reduce(|| 0.0, f64::max)
}

/// Measured `(c4, c5)`: extremes of `(1+w(x)) (R+1-|x|)^{2s}` over `B_R`, with 5% margin.
fn measure_c4_c5(prof: &Profile, big_r: f64, s: f64) -> (f64, f64) {
    let beta = 32.0 * prof.r.powf(-2.0 * s);
    let n = 10_000;
    let mut hi = 0.0f64;
    let mut lo = f64::INFINITY;
    for k in 0..n {
        let q = (k as f64 + 0.5) / n as f64;
        for x in [big_r * q, big_r * (1.0 - q * q)] {
            let w = (2.0 - beta) * prof.g(prof.r * x / big_r).0 + beta - 1.0;
            let val = (1.0 + w) * (big_r + 1.0 - x).powf(2.0 * s);
            hi = hi.max(val);
            lo = lo.min(val);
        }
    }
    (1.05 * hi, lo / 1.05)
}

fn assemble(r0: f64, r1: f64, s: f64, c4: f64, c5: f64) -> f64 {
    // the last-but-two term makes `w ≥ -1 + C^{-1}R^{-2s}` hold with β = 32 r^{-2s}
    [r0, (r1 / r0).powf(2.0 * s) / 32.0, (r0 / r1).powf(2.0 * s) / 32.0, c4, 1.0 / c5, 1.0]
        .into_iter()
        .fold(0.0, f64::max)
}

/// Measured `c₃` (1.2 safety factor, clamped to `≥ δ`) used by the construction.
pub fn measure_c3(kernel: &KernelSpec, delta: f64) -> f64 {
    let r1 = 2f64.powf(3.0 / kernel.s);
    let env = if kernel.family == KernelFamily::Modulated { kernel.big_lambda } else { kernel.lambda.max(kernel.big_lambda) };
    let raw = [r1, 2.0 * r1, 4.0 * r1]
        .into_iter()
        .map(|r| measure_lkv_ratio(kernel.dim, kernel.s, r))
        .fold(0.0, f64::max);
    (1.2 * env * raw).max(delta)
}

/// Builds the barrier for `(R, δ)`; `c3` may be supplied to skip its measurement.
pub fn build_barrier_with(kernel: &KernelSpec, big_r: f64, delta: f64, c3: Option<f64>) -> Result<BarrierFn, BarrierError> {
    if kernel.dim > 2 || kernel.dim == 0 {
        return Err(BarrierError::Precondition("barriers are built for n in {1, 2}".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(BarrierError::Precondition("delta must be positive".into()));
    }
    let s = kernel.s;
    let nu_bar = if s < 0.5 {
        1.0 - 2.0 * s
    } else {
        kernel.regularity.map(|r| r.nu).ok_or_else(|| BarrierError::Precondition("s >= 1/2 needs the regularity exponent nu".into()))?
    };
    let r1 = 2f64.powf(3.0 / s);
    let c3 = c3.unwrap_or_else(|| measure_c3(kernel, delta)).max(delta);
    let r0 = (c3 / delta).powf(1.0 / (1.0 - nu_bar)) * r1;
    if !r0.is_finite() {
        return Err(BarrierError::Threshold { required: f64::INFINITY, given: big_r });
    }
    let at = |big: f64| {
        let prof = Profile::new(r1 * big / r0, s);
        let (c4, c5) = measure_c4_c5(&prof, big, s);
        (prof, c4, c5, assemble(r0, r1, s, c4, c5))
    };
    let (_, _, _, threshold) = at(r0);
    if !(big_r >= threshold) {
        return Err(BarrierError::Threshold { required: threshold, given: big_r });
    }
    let (profile, c4, c5, c) = at(big_r);
    let envelope = if kernel.family == KernelFamily::Modulated { kernel.big_lambda } else { 1.0 };
    Ok(BarrierFn {
        dim: kernel.dim,
        s,
        big_r,
        delta,
        r1,
        r0,
        r: profile.r,
        gamma_r: profile.gamma_r,
        beta: 32.0 * profile.r.powf(-2.0 * s),
        c3,
        nu_bar,
        c4,
        c5,
        c,
        envelope,
        envelope_only: kernel.family == KernelFamily::Modulated,
        profile,
    })
}

pub fn build_barrier(kernel: &KernelSpec, big_r: f64, delta: f64) -> Result<BarrierFn, BarrierError> {
    build_barrier_with(kernel, big_r, delta, None)
}

impl BarrierFn {
    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// `w` as a function of `|x|`.
    pub fn radial(&self, rho: f64) -> f64 {
        if rho >= self.big_r {
            return 1.0;
        }
        (2.0 - self.beta) * self.profile.g(self.profile.r * rho / self.big_r).0 + self.beta - 1.0
    }

    /// `d w / d|x|`.
    pub fn radial_derivative(&self, rho: f64) -> f64 {
        if rho >= self.big_r {
            return 0.0;
        }
        let k = self.profile.r / self.big_r;
        (2.0 - self.beta) * k * self.profile.g(k * rho).1
    }

    pub fn w(&self, x: &[f64]) -> f64 {
        self.radial(x.iter().map(|a| a * a).sum::<f64>().sqrt())
    }

    pub fn grad_w(&self, x: &[f64]) -> Vec<f64> {
        let rho = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if rho == 0.0 {
            return vec![0.0; x.len()];
        }
        let d = self.radial_derivative(rho);
        x.iter().map(|a| d * a / rho).collect()
    }

    fn scale(&self) -> f64 {
        self.big_r / self.profile.r
    }

    /// `L_K w` at distance `rho` from the center.
    pub fn lk(&self, rho: f64) -> f64 {
        // w = (2-β) v(x/k) + β - 1, so L w(ρ) = (2-β) k^{-2s} L v(ρ/k)
        let k = self.scale();
        let prof = self.profile;
        let v = move |t: f64| prof.g(t).0;
        let knots = prof.knots();
        let lv = radial_lk(&v, &knots[..2], knots[2], rho / k, self.dim, self.s, 1.0 / 64.0);
        self.envelope * (2.0 - self.beta) * k.powf(-2.0 * self.s) * lv
    }

    pub fn profile_csv(&self, samples: usize) -> String {
        let mut out = String::from("radius,w,grad_w\n");
        for k in 0..=samples {
            let rho = 1.25 * self.big_r * k as f64 / samples as f64;
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", rho, self.radial(rho), self.radial_derivative(rho));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierSample {
    pub radius: f64,
    pub w: f64,
    #[serde(rename = "LKw")]
    pub lkw: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierReport {
    #[serde(rename = "worst_LKw_ratio")]
    pub worst_lkw_ratio: f64,
    /// Smallest `C` for which the lower bound holds at every sample.
    #[serde(rename = "worst_lower_C")]
    pub worst_lower_c: f64,
    #[serde(rename = "worst_upper_C")]
    pub worst_upper_c: f64,
    pub samples: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub monotone: bool,
    pub min_w: f64,
    /// `L_K w` at `|x| = 2R`, where `w` is locally constant.
    pub outside_value: f64,
    pub lkw_pass: bool,
    pub bounds_pass: bool,
    pub tag: String,
    pub pass: bool,
    pub rows: Vec<BarrierSample>,
}

/// Checks `|L_K w| ≤ 1.05 δ(1+w)` and the two-sided bound on `1+w` at `samples` radii in `B_R`.
pub fn verify_barrier(barrier: &BarrierFn, samples: usize) -> BarrierReport {
    let big_r = barrier.big_r;
    let radii: Vec<f64> = (0..samples)
        .map(|k| {
            let q = (k as f64 + 0.5) / samples as f64;
            if k % 2 == 0 { big_r * (1.0 - q * q) } else { big_r * q }
        })
        .collect();
    let rows: Vec<BarrierSample> = radii
        .par_iter()
        .map(|&rho| {
            let w = barrier.radial(rho);
            let lkw = barrier.lk(rho);
            BarrierSample { radius: rho, w, lkw, ratio: lkw.abs() / (barrier.delta * (1.0 + w)) }
        })
        .collect();
    let worst_lkw_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let s2 = 2.0 * barrier.s;
    let mut worst_lower_c = 0.0f64;
    let mut worst_upper_c = 0.0f64;
    for r in &rows {
        let v = (1.0 + r.w) * (big_r + 1.0 - r.radius).powf(s2);
        worst_lower_c = worst_lower_c.max(1.0 / v);
        worst_upper_c = worst_upper_c.max(v);
    }
    let grid: Vec<f64> = (0..=1000).map(|k| barrier.radial(1.1 * big_r * k as f64 / 1000.0)).collect();
    let monotone = grid.windows(2).all(|w| w[1] >= w[0]);
    let min_w = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_ok = min_w >= -1.0 + big_r.powf(-s2) / barrier.c;
    let lkw_pass = worst_lkw_ratio <= 1.05;
    let bounds_pass = worst_lower_c <= barrier.c && worst_upper_c <= barrier.c && min_ok;
    BarrierReport {
        worst_lkw_ratio,
        worst_lower_c,
        worst_upper_c,
        samples,
        c: barrier.c,
        monotone,
        min_w,
        outside_value: barrier.lk(2.0 * big_r),
        lkw_pass,
        bounds_pass,
        tag: "LKwbar".into(),
        pass: lkw_pass && bounds_pass && monotone,
        rows,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideReport {
    pub center: Vec<f64>,
    /// Radius of the placement ball.
    pub radius: f64,
    pub e_u: f64,
    pub e_v: f64,
    /// `F(v) - F(u)` per period.
    pub defect: f64,
    /// `E(v; B_R) - E(u; B_R)` when the ball holds at most one image of each cell.
    pub ball_defect: Option<f64>,
    pub cells_changed: usize,
    pub pass: bool,
}

/// Comparison with `v = min(u, w(· - center))`, projected back onto the constraints.
/// With `radius` set, the profile is placed at that radius instead of `R`
/// (`w(R x / radius)`, still 1 outside the placement ball).
pub fn barrier_slide_test<W: DoubleWell + ?Sized>(
    weights: &WeightTable,
    potential: &W,
    constraints: &Constraints,
    field: &Field,
    barrier: &BarrierFn,
    center: &[f64],
    radius: Option<f64>,
) -> Result<SlideReport, BarrierError> {
    let radius = radius.unwrap_or(barrier.big_r);
    if !(radius > 0.0) {
        return Err(BarrierError::Precondition("placement radius must be positive".into()));
    }
    let stretch = barrier.big_r / radius;
    let d = &weights.domain;
    if field.domain != *d {
        return Err(BarrierError::Precondition("field lives on a different domain".into()));
    }
    if barrier.dim != d.dim || center.len() != d.dim {
        return Err(BarrierError::Precondition("barrier dimension does not match the domain".into()));
    }
    let (_, yc) = d.to_frame(center);
    if yc - radius < -d.buffer || yc + radius > d.m + d.buffer {
        return Err(BarrierError::Precondition(format!("the ball of radius {radius} around the center leaves the simulated rows")));
    }
    let mut vals = field.values.clone();
    for (row, col) in geometry::ball_cells(d, center, radius) {
        if let Site::Cell(i) = d.ext_site(row, col) {
            let x = d.ext_center(row, col);
            let rel: Vec<f64> = x.iter().zip(center).map(|(a, b)| stretch * (a - b)).collect();
            vals[i] = vals[i].min(barrier.w(&rel));
        }
    }
    let v = project(constraints, &Field { domain: d.clone(), values: vals });
    let changed = v.values.iter().zip(&field.values).filter(|(a, b)| a != b).count();
    let e_u = weights.total_energy(potential, field, &Window::Strip, None)?.total;
    let e_v = weights.total_energy(potential, &v, &Window::Strip, None)?.total;
    let period = d.nt as f64 * d.h;
    let single_image = d.dim == 1 || period > 2.0 * radius + 2.0 * d.h;
    let ball_defect = if single_image {
        let win = Window::Ball { center: center.to_vec(), radius };
        match (weights.total_energy(potential, &v, &win, None), weights.total_energy(potential, field, &win, None)) {
            (Ok(a), Ok(b)) => Some(a.total - b.total),
            _ => None,
        }
    } else {
        None
    };
    let defect = e_v - e_u;
    Ok(SlideReport {
        center: center.to_vec(),
        radius,
        e_u,
        e_v,
        defect,
        ball_defect,
        cells_changed: changed,
        pass: defect >= -1e-8 * e_u.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_constants_and_knots() {
        for s in [0.25, 0.5, 0.75] {
            let r1 = 2f64.powf(3.0 / s);
            for r in [r1, 3.0 * r1] {
                let p = Profile::new(r, s);
                assert!(p.gamma_r > 1.0 && p.gamma_r <= 2.0, "gamma_r = {}", p.gamma_r);
                for k in [0.5 * r, r - 1.75, r - 1.25, r - 1.0] {
                    let (a, b) = (p.g(k - 1e-10), p.g(k + 1e-10));
                    assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-8, "knot {k}: {a:?} {b:?}");
                }
                for j in 0..1000 {
                    let t = r * j as f64 / 1000.0;
                    let (_, g1, g2) = p.g(t);
                    let m1 = (r - t).powf(-2.0 * s - 1.0).min(1.0);
                    let m2 = (r - t).powf(-2.0 * s - 2.0).min(1.0);
                    assert!(g1.abs() <= C1 * m1 && g2.abs() <= C1 * m2);
                    let (e, e1, e2) = p.eta(t);
                    assert!((0.0..=1.0).contains(&e) && (-4.0..=0.0).contains(&e1) && e2.abs() <= 32.0);
                }
            }
        }
    }

    #[test]
    fn cutoff_derivative_bounds_on_a_fine_grid() {
        let p = Profile::new(64.0, 0.75);
        let mut worst: (f64, f64) = (0.0, 0.0);
        for j in 0..=20_000 {
            let t = 62.25 + 0.5 * j as f64 / 20_000.0;
            let (_, e1, e2) = p.eta(t);
            worst = (worst.0.max(-e1), worst.1.max(e2.abs()));
        }
        assert!(worst.0 <= 4.0 + 1e-12 && worst.1 <= 32.0, "{worst:?}");
    }

    #[test]
    fn pv_quadrature_matches_a_closed_form() {
        // ∫ (u(x)-u(y)) |x-y|^{-1-2s} dy for u = (1-x²)_+^s equals Γ(1+s)² ... / C_{1,s}; constant on (-1, 1)
        use statrs::function::gamma::gamma;
        let s: f64 = 0.3;
        let norm = 2f64.powf(2.0 * s) * s * gamma(0.5 + s) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s));
        let expect = 2f64.powf(2.0 * s) * gamma(1.0 + s) * gamma(0.5 + s) / gamma(0.5) / norm;
        let u = |t: f64| -> f64 { 1.0 - (1.0 - t * t).max(0.0).powf(s) };
        for t in [0.0, 0.4, 0.8] {
            // u here is 1 - profile so that it equals 1 beyond radius 1
            let l = -radial_lk(&u, &[], 1.0, t, 1, s, 1e-4);
            assert!((l / expect - 1.0).abs() < 2e-3, "t={t}: {l} vs {expect}");
        }
    }

    #[test]
    fn evaluation_identities() {
        let k = KernelSpec::standard(1, 0.75, 1.0).unwrap();
        let b = build_barrier_with(&k, 200.0, 0.5, Some(0.5)).unwrap();
        assert_eq!(b.w(&[200.0]), 1.0);
        assert_eq!(b.w(&[-350.0]), 1.0);
        assert!((b.w(&[0.0]) - (b.beta - 1.0)).abs() < 1e-15);
        assert!((b.beta - 32.0 * b.r.powf(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn small_radius_is_rejected() {
        let k = KernelSpec::standard(2, 0.25, 1.0).unwrap();
        match build_barrier_with(&k, 50.0, 1e-6, Some(1.0)) {
            Err(BarrierError::Threshold { required, .. }) => assert!(required > 50.0),
            other => panic!("{other:?}"),
        }
    }
}
