//! Interaction kernels, double-well potentials and the scaling function `Ψ_s`.
//!
//! Everything here is a pure function of an immutable spec. Hypothesis checks are
//! sample based so user kernels and potentials plugged in through the [`Kernel`] and
//! [`DoubleWell`] traits go through the same validator as the built-in families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("kernel evaluated at coincident points")]
    Singular,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Regularity constants of the odd part of the kernel, required when `s >= 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub nu: f64,
    pub gamma_reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Standard,
    Modulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub s: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub xi: f64,
    pub regularity: Option<Regularity>,
    pub tau: f64,
    pub family: KernelFamily,
}

/// Anything that can act as an interaction kernel with a `|x-y|^{-n-2s}` envelope.
pub trait Kernel: Sync {
    fn dim(&self) -> usize;
    fn order(&self) -> f64;
    /// Declared `(lambda, Lambda, xi, tau)`.
    fn bounds(&self) -> (f64, f64, f64, f64);
    fn regularity(&self) -> Option<Regularity>;
    /// Kernel value; callers guarantee `x != y`.
    fn value(&self, x: &[f64], y: &[f64]) -> f64;
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

impl KernelSpec {
    pub fn standard(dim: usize, s: f64, tau: f64) -> Result<Self, ModelError> {
        let regularity = (s >= 0.5).then_some(Regularity { nu: 0.5, gamma_reg: 1.0 });
        let spec = KernelSpec {
            dim,
            s,
            lambda: 1.0,
            big_lambda: 1.0,
            xi: tau,
            regularity,
            tau,
            family: KernelFamily::Standard,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn modulated(dim: usize, s: f64, tau: f64) -> Result<Self, ModelError> {
        let regularity = (s >= 0.5).then(|| {
            let nu = 0.5;
            Regularity { nu, gamma_reg: modulated_gamma_reg(s, nu, tau) }
        });
        let spec = KernelSpec {
            dim,
            s,
            lambda: 0.5,
            big_lambda: 1.5,
            xi: tau,
            regularity,
            tau,
            family: KernelFamily::Modulated,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Parameter ranges, independent of any sampling.
    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParameter(m.to_string()));
        if !(1..=3).contains(&self.dim) {
            return bad("dim must be 1, 2 or 3");
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return bad("s must lie in (0,1)");
        }
        if !(self.lambda > 0.0 && self.lambda <= self.big_lambda) {
            return bad("need 0 < lambda <= Lambda");
        }
        if !(self.xi > 0.0) {
            return bad("xi must be positive");
        }
        if !(self.tau >= 1.0) {
            return bad("tau must be >= 1");
        }
        if self.s >= 0.5 {
            match self.regularity {
                Some(r) if r.nu > 0.0 && r.nu < 1.0 && r.gamma_reg > 0.0 => {}
                _ => return bad("s >= 1/2 needs nu in (0,1) and gamma_reg > 0"),
            }
        }
        Ok(())
    }

    /// `cos(2 pi x_1 / tau)`, the periodic profile entering the modulated amplitude.
    pub fn profile(&self, x: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Standard => 0.0,
            KernelFamily::Modulated => (2.0 * PI * x[0] / self.tau).cos(),
        }
    }

    pub fn amplitude(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Standard => 1.0,
            KernelFamily::Modulated => 1.0 + 0.25 * (self.profile(x) + self.profile(y)),
        }
    }

    /// Exponent `n + 2s` of the envelope.
    pub fn exponent(&self) -> f64 {
        self.dim as f64 + 2.0 * self.s
    }
}

/// Regularity constant covering the odd part `-(1/2) sin(2 pi x1/tau) sin(2 pi w1/tau) |w|^{-n-2s}`.
fn modulated_gamma_reg(s: f64, nu: f64, tau: f64) -> f64 {
    let knee = tau / (2.0 * PI);
    let peak = 0.5 * knee.powf(1.0 - 2.0 * s - nu);
    (2.0 * peak).max(1.0)
}

impl Kernel for KernelSpec {
    fn dim(&self) -> usize {
        self.dim
    }
    fn order(&self) -> f64 {
        self.s
    }
    fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.lambda, self.big_lambda, self.xi, self.tau)
    }
    fn regularity(&self) -> Option<Regularity> {
        self.regularity
    }
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.amplitude(x, y) * dist(x, y).powf(-self.exponent())
    }
}

pub fn eval_kernel<K: Kernel + ?Sized>(k: &K, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
    if x.len() != k.dim() || y.len() != k.dim() {
        return Err(ModelError::Domain("point dimension mismatch".into()));
    }
    if dist(x, y) == 0.0 {
        return Err(ModelError::Singular);
    }
    Ok(k.value(x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PotentialFamily {
    Quartic,
    PowerD { d: f64 },
    Cosine,
    CosineSq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub kappa: f64,
    pub tau: f64,
    pub q_modulation: bool,
}

/// A double-well potential `W(x, r)` with wells at `r = ±1`.
pub trait DoubleWell: Sync {
    fn dim_hint(&self) -> usize {
        2
    }
    fn period(&self) -> f64;
    fn kappa(&self) -> f64;
    fn value(&self, x: &[f64], r: f64) -> f64;
    fn derivative(&self, x: &[f64], r: f64) -> f64;
    /// Bound on `|W_rr|` over `[-1,1]`, if finite.
    fn curvature_bound(&self) -> Option<f64>;
}

impl PotentialSpec {
    pub fn new(family: PotentialFamily, kappa: f64, tau: f64, q_modulation: bool) -> Result<Self, ModelError> {
        let spec = PotentialSpec { family, kappa, tau, q_modulation };
        spec.check()?;
        Ok(spec)
    }

    pub fn quartic(tau: f64) -> Self {
        PotentialSpec { family: PotentialFamily::Quartic, kappa: 0.2, tau, q_modulation: false }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(ModelError::InvalidParameter("kappa must lie in (0,1)".into()));
        }
        if !(self.tau >= 1.0) {
            return Err(ModelError::InvalidParameter("tau must be >= 1".into()));
        }
        if let PotentialFamily::PowerD { d } = self.family {
            if !(d > 1.0 && d < 2.0) {
                return Err(ModelError::InvalidParameter("power_d needs d in (1,2)".into()));
            }
        }
        Ok(())
    }

    /// Modulation `Q(x)`, in `[1,2]` when enabled.
    pub fn q(&self, x: &[f64]) -> f64 {
        if !self.q_modulation {
            return 1.0;
        }
        let w = 2.0 * PI / self.tau;
        let c2 = if x.len() > 1 { (w * x[1]).cos() } else { 1.0 };
        (3.0 + (w * x[0]).cos() * c2) / 2.0
    }

    /// The unmodulated profile and its derivative.
    fn base(&self, r: f64) -> (f64, f64) {
        match self.family {
            PotentialFamily::Quartic => {
                let a = 1.0 - r * r;
                (a * a, -4.0 * r * a)
            }
            PotentialFamily::PowerD { d } => {
                let a = 1.0 - r * r;
                let m = a.abs();
                let dv = if m == 0.0 { 0.0 } else { d * m.powf(d - 1.0) * a.signum() * (-2.0 * r) };
                (m.powf(d), dv)
            }
            PotentialFamily::Cosine => (1.0 + (PI * r).cos(), -PI * (PI * r).sin()),
            // written through cos(pi r) so that the wells are exact zeros
            PotentialFamily::CosineSq => (0.5 * (1.0 + (PI * r).cos()), -0.5 * PI * (PI * r).sin()),
        }
    }

    /// Whether `r` lies in the physical range; values outside are evaluated but flagged.
    pub fn in_range(r: f64) -> bool {
        (-1.0..=1.0).contains(&r)
    }
}

impl DoubleWell for PotentialSpec {
    fn period(&self) -> f64 {
        self.tau
    }
    fn kappa(&self) -> f64 {
        self.kappa
    }
    fn value(&self, x: &[f64], r: f64) -> f64 {
        self.q(x) * self.base(r).0
    }
    fn derivative(&self, x: &[f64], r: f64) -> f64 {
        self.q(x) * self.base(r).1
    }
    fn curvature_bound(&self) -> Option<f64> {
        let qmax = if self.q_modulation { 2.0 } else { 1.0 };
        match self.family {
            PotentialFamily::Quartic => Some(8.0 * qmax),
            PotentialFamily::PowerD { .. } => None,
            PotentialFamily::Cosine => Some(PI * PI * qmax),
            PotentialFamily::CosineSq => Some(0.5 * PI * PI * qmax),
        }
    }
}

pub fn eval_potential<W: DoubleWell + ?Sized>(w: &W, x: &[f64], r: f64) -> f64 {
    w.value(x, r)
}

pub fn eval_potential_derivative<W: DoubleWell + ?Sized>(w: &W, x: &[f64], r: f64) -> f64 {
    w.derivative(x, r)
}

/// Lower bound for `inf { W(x,r) : x, |r| <= theta }`.
///
/// The built-in profiles decrease in `|r|` on `[0,1]` and `min Q = 1`, so the bound is the
/// exact infimum `W_0(theta)`.
pub fn gamma_of(spec: &PotentialSpec, theta: f64) -> Result<f64, ModelError> {
    if !(0.0..1.0).contains(&theta) {
        return Err(ModelError::Domain(format!("theta = {theta} outside [0,1)")));
    }
    Ok(spec.base(theta).0)
}

/// Grid infimum over one period cell and `|r| <= theta`, times the safety factor 0.99.
/// Used for potentials supplied through the trait.
pub fn gamma_grid<W: DoubleWell + ?Sized>(w: &W, dim: usize, theta: f64, grid: usize) -> Result<f64, ModelError> {
    if !(0.0..1.0).contains(&theta) {
        return Err(ModelError::Domain(format!("theta = {theta} outside [0,1)")));
    }
    let tau = w.period();
    let g = grid.max(2);
    let mut inf = f64::INFINITY;
    let npts = g.pow(dim as u32);
    let mut x = vec![0.0; dim];
    for idx in 0..npts {
        let mut k = idx;
        for xc in x.iter_mut() {
            *xc = tau * (k % g) as f64 / g as f64;
            k /= g;
        }
        for j in 0..=g {
            let r = theta * j as f64 / g as f64;
            inf = inf.min(w.value(&x, r)).min(w.value(&x, -r));
        }
    }
    Ok(0.99 * inf)
}

/// `Ψ_s(t)`: `t^{1-2s}` for `s < 1/2`, `log t` at `s = 1/2`, `1` above.
pub fn psi_s(s: f64, t: f64) -> Result<f64, ModelError> {
    if !(t > 1.0) {
        return Err(ModelError::Domain(format!("psi_s needs t > 1, got {t}")));
    }
    Ok(if s < 0.5 {
        t.powf(1.0 - 2.0 * s)
    } else if s == 0.5 {
        t.ln()
    } else {
        1.0
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub worst_value: f64,
    pub worst_sample: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
    pub planelike_ready: bool,
    /// Tag of the first failed requirement, e.g. `"xi=tau"`.
    pub rejection: Option<String>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    sample: String,
    tol: f64,
}

impl Tracker {
    fn new(name: &'static str, tol: f64) -> Self {
        Tracker { name, worst: 0.0, sample: String::new(), tol }
    }
    /// Records a violation amount (positive means violated).
    fn record(&mut self, excess: f64, what: impl FnOnce() -> String) {
        if excess > self.worst || (excess.is_nan() && !self.worst.is_nan()) {
            self.worst = excess;
            self.sample = what();
        }
    }
    fn finish(self) -> HypothesisCheck {
        HypothesisCheck {
            name: self.name.to_string(),
            passed: self.worst <= self.tol,
            worst_value: self.worst,
            worst_sample: self.sample,
        }
    }
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, span: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-span..span)).collect()
}

/// Sample-based check of the kernel and potential hypotheses.
pub fn validate_hypotheses<K, W>(kernel: &K, potential: &W, samples: usize, seed: u64) -> Result<ValidationReport, ModelError>
where
    K: Kernel + ?Sized,
    W: DoubleWell + ?Sized,
{
    if samples == 0 {
        return Err(ModelError::Domain("samples must be >= 1".into()));
    }
    let n = kernel.dim();
    let s = kernel.order();
    let p = n as f64 + 2.0 * s;
    let (lambda, big_lambda, xi, tau) = kernel.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 4.0 * tau;

    let mut k1 = Tracker::new("K1", 0.0);
    let mut k2 = Tracker::new("K2", 1e-12);
    let mut k3 = Tracker::new("K3", 1e-12);
    let mut k4 = Tracker::new("K4", 4.0 * f64::EPSILON);
    for _ in 0..samples {
        let x = random_point(&mut rng, n, span);
        let radius = xi * rng.gen_range(0.01..1.0f64);
        let mut dir = random_point(&mut rng, n, 1.0);
        let norm = dist(&dir, &vec![0.0; n]).max(1e-12);
        dir.iter_mut().for_each(|c| *c *= radius / norm);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
        let kxy = kernel.value(&x, &y);
        let kyx = kernel.value(&y, &x);
        k1.record((kxy - kyx).abs(), || format!("x={x:?} y={y:?}"));

        let scaled = kxy * dist(&x, &y).powf(p);
        k2.record((lambda - scaled).max(scaled - big_lambda) / big_lambda, || {
            format!("x={x:?} y={y:?} K|x-y|^(n+2s)={scaled}")
        });

        if let Some(reg) = kernel.regularity() {
            let w = random_point(&mut rng, n, 2.0 * tau);
            let wn = dist(&w, &vec![0.0; n]);
            if wn > 1e-9 {
                let xp: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a + b).collect();
                let xm: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a - b).collect();
                let odd = (kernel.value(&x, &xp) - kernel.value(&x, &xm)).abs();
                let bound = reg.gamma_reg * wn.powf(-(n as f64) - 1.0 + reg.nu);
                k3.record((odd - bound) / bound, || format!("x={x:?} w={w:?}"));
            }
        }

        for axis in 0..n {
            let shift = if rng.gen_bool(0.5) { tau } else { -tau };
            let mut xs = x.clone();
            let mut ys = y.clone();
            xs[axis] += shift;
            ys[axis] += shift;
            let shifted = kernel.value(&xs, &ys);
            let rel = (shifted - kxy).abs() / kxy.abs().max(f64::MIN_POSITIVE);
            // rounding of the shifted coordinates is amplified by |x|/|x-y|
            let scale = xs.iter().chain(&ys).chain(&x).fold(0.0f64, |m, v| m.max(v.abs()));
            let cond = 1.0 + (p + 2.0 * PI) * scale / dist(&x, &y);
            k4.record(rel / cond, || format!("x={x:?} y={y:?} axis={axis}"));
        }
    }

    let wtau = potential.period();
    let kappa = potential.kappa();
    let mut w1 = Tracker::new("W1", 1e-14);
    let mut w2 = Tracker::new("W2", 0.0);
    let mut w3 = Tracker::new("W3", 0.0);
    let mut w4 = Tracker::new("W4", 1e-12);
    let mut w5 = Tracker::new("W5", 1e-12);
    let gamma_cache: Vec<(f64, f64)> = (0..10)
        .map(|i| {
            let th = 0.095 * i as f64;
            (th, gamma_grid(potential, n.min(2), th, 16).unwrap_or(0.0))
        })
        .collect();
    for _ in 0..samples {
        let x = random_point(&mut rng, n, 4.0 * wtau);
        for r in [-1.0, 1.0] {
            let v = potential.value(&x, r);
            w1.record(v.abs(), || format!("x={x:?} r={r}"));
        }
        let r: f64 = rng.gen_range(-1.0..=1.0);
        for &(th, g) in &gamma_cache {
            if r.abs() <= th {
                let v = potential.value(&x, r);
                w2.record(if g > 0.0 { g - v } else { 1.0 }, || format!("x={x:?} r={r} theta={th}"));
            }
        }
        let v = potential.value(&x, r);
        let dv = potential.derivative(&x, r);
        w3.record(v.max(dv.abs()) - 1.0 / kappa, || format!("x={x:?} r={r}"));

        // detachment from the wells
        let a: f64 = rng.gen_range(0.0..kappa);
        let b: f64 = rng.gen_range(0.0..kappa);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (r0, t0) = (-1.0 + lo, -1.0 + hi);
        let lhs = potential.value(&x, t0);
        let rhs = potential.value(&x, r0) + kappa * (1.0 + r0) * (t0 - r0) + kappa * (t0 - r0).powi(2);
        w4.record(rhs - lhs, || format!("x={x:?} lower well r={r0} t={t0}"));
        let (r1, t1) = (1.0 - hi, 1.0 - lo);
        let lhs = potential.value(&x, r1);
        let rhs = potential.value(&x, t1) + kappa * (1.0 - t1) * (t1 - r1) + kappa * (t1 - r1).powi(2);
        w4.record(rhs - lhs, || format!("x={x:?} upper well r={r1} t={t1}"));
        let rr = if rng.gen_bool(0.5) { 1.0 - a } else { -1.0 + a };
        let excess = potential.value(&x, rr) - (1.0 - rr.abs()) / kappa;
        w4.record(excess, || format!("x={x:?} r={rr} linear bound"));

        for axis in 0..n {
            let mut xs = x.clone();
            xs[axis] += wtau;
            let rel = (potential.value(&xs, r) - v).abs() / v.abs().max(1e-300);
            w5.record(if v == 0.0 { potential.value(&xs, r).abs() } else { rel }, || format!("x={x:?} r={r} axis={axis}"));
        }
    }

    let mut checks = vec![k1.finish(), k2.finish()];
    if s >= 0.5 {
        checks.push(k3.finish());
    }
    checks.push(k4.finish());
    checks.extend([w1.finish(), w2.finish(), w3.finish(), w4.finish(), w5.finish()]);

    let rejection = if let Some(c) = checks.iter().find(|c| !c.passed) {
        Some(c.name.clone())
    } else if (xi - tau).abs() > 1e-12 * tau {
        Some("xi=tau".to_string())
    } else if tau < 1.0 {
        Some("tau>=1".to_string())
    } else if (wtau - tau).abs() > 1e-12 * tau {
        Some("tau mismatch".to_string())
    } else {
        None
    };
    Ok(ValidationReport { planelike_ready: rejection.is_none(), checks, rejection })
}
