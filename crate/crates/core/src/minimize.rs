//! Constrained strip minimization and class-A diagnostics.

use crate::energy::{EnergyError, WeightTable};
use crate::lattice::{Field, StripDomain};
use crate::model::DoubleWell;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Obstacles of the admissible class: `u ≥ θ` below the strip, `u ≤ -θ` above it,
/// `|u| ≤ 1` everywhere. A cell belongs to a region when its center does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub theta: f64,
}

impl Constraints {
    pub fn new(theta: f64) -> Result<Self, SolveError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(SolveError::Precondition(format!("theta = {theta} must lie in (0,1)")));
        }
        Ok(Constraints { theta })
    }

    /// Per-cell bounds `(lo, hi)`.
    pub fn bounds(&self, domain: &StripDomain) -> (Vec<f64>, Vec<f64>) {
        let n = domain.n_cells();
        let mut lo = vec![-1.0; n];
        let mut hi = vec![1.0; n];
        for i in 0..n {
            let y = domain.row_y(domain.row_col(i).0 as i64);
            if y < 0.0 {
                lo[i] = self.theta;
            } else if y > domain.m {
                hi[i] = -self.theta;
            }
        }
        (lo, hi)
    }
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints { theta: 0.9 }
    }
}

pub fn project(constraints: &Constraints, field: &Field) -> Field {
    let (lo, hi) = constraints.bounds(&field.domain);
    let values = field.values.iter().enumerate().map(|(i, &v)| v.clamp(lo[i], hi[i])).collect();
    Field { domain: field.domain.clone(), values }
}

/// Pointwise-smallest admissible field: `θ` below the strip, `-1` elsewhere.
pub fn minimal_seed(domain: &StripDomain, constraints: &Constraints) -> Field {
    let (lo, _) = constraints.bounds(domain);
    Field { domain: domain.clone(), values: lo }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop when `F` drops by less than `rel_tol·|F|` over `stall_window` iterations.
    pub rel_tol: f64,
    pub stall_window: usize,
    /// Stop when `|u - P(u - ∇F)|₂` falls below this.
    pub grad_tol: f64,
    pub epsilon: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iters: 20_000, rel_tol: 1e-10, stall_window: 50, grad_tol: 1e-8, epsilon: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub birkhoff_pass: Option<bool>,
    pub upper_distance: Option<f64>,
    pub perturbation_margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub field: Field,
    #[serde(rename = "F_value")]
    pub f_value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,F,grad_norm,step\n");
        for r in &self.trace {
            s.push_str(&format!("{},{:.16e},{:.16e},{:.16e}\n", r.iter, r.f, r.grad_norm, r.step));
        }
        s
    }
}

pub(crate) struct SpgOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn two_loop(g: &[f64], mem: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, gamma: f64) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Monotone projected descent on a box. The direction is a limited-memory quasi-Newton step
/// on the variables not held by an active bound, falling back to the spectral projected
/// gradient step; every trial point is projected and accepted by Armijo backtracking.
/// `fg` returns the value and writes the gradient.
pub(crate) fn spg<F>(mut x: Vec<f64>, lo: &[f64], hi: &[f64], lip: f64, mut fg: F, opts: &SolveOptions) -> SpgOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MEMORY: usize = 12;
    let n = x.len();
    clamp_into(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut alpha = 1.0 / lip;
    let (amin, amax) = (1e-4 / lip, 1e4 / lip);
    let mut mem: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut gamma = 1.0 / lip;
    let mut trial = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut history = vec![f];
    let pg_norm = |x: &[f64], g: &[f64]| -> f64 {
        x.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (&xi, &gi))| ((xi - gi).clamp(lo[i], hi[i]) - xi).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut gnorm = pg_norm(&x, &g);
    let mut trace = vec![TraceRow { iter: 0, f, grad_norm: gnorm, step: 0.0 }];
    let mut iterations = 0;
    let mut converged = gnorm < opts.grad_tol;
    while !converged && iterations < opts.max_iters {
        let held = |i: usize, g: &[f64], x: &[f64]| (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
        let mut accepted = None;
        for attempt in 0..2 {
            let quasi = attempt == 0 && !mem.is_empty();
            let dir: Vec<f64> = if quasi {
                let masked: Vec<f64> = (0..n).map(|i| if held(i, &g, &x) { 0.0 } else { g[i] }).collect();
                let mut d = two_loop(&masked, &mem, gamma);
                for (i, di) in d.iter_mut().enumerate() {
                    *di = if held(i, &g, &x) { 0.0 } else { -*di };
                }
                d
            } else if attempt == 0 {
                continue;
            } else {
                g.iter().map(|gi| -alpha * gi).collect()
            };
            let mut lambda = 1.0;
            loop {
                for i in 0..n {
                    trial[i] = (x[i] + lambda * dir[i]).clamp(lo[i], hi[i]);
                }
                let gd: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
                if !(gd < 0.0) {
                    break;
                }
                let ft = fg(&trial, &mut gt);
                if ft <= f + 1e-4 * gd {
                    accepted = Some((ft, lambda));
                    break;
                }
                lambda *= 0.5;
                if lambda < 1e-10 {
                    break;
                }
            }
            if accepted.is_some() {
                break;
            }
            mem.clear();
        }
        let Some((ft, lambda)) = accepted else {
            // no representable descent left
            converged = gnorm < opts.grad_tol.max(1e-6);
            break;
        };
        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let (ss, sy, yy) = (dot(&s, &s), dot(&s, &y), dot(&y, &y));
        if sy > 1e-12 * (ss * yy).sqrt() {
            alpha = (ss / sy).clamp(amin, amax);
            gamma = sy / yy;
            if mem.len() == MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        } else {
            alpha = amax;
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        iterations += 1;
        gnorm = pg_norm(&x, &g);
        history.push(f);
        trace.push(TraceRow { iter: iterations, f, grad_norm: gnorm, step: lambda });
        if gnorm < opts.grad_tol {
            converged = true;
        } else if history.len() > opts.stall_window {
            let old = history[history.len() - 1 - opts.stall_window];
            if old - f <= opts.rel_tol * f.abs() {
                converged = true;
            }
        }
    }
    SpgOutcome { x, f, iterations, grad_norm: gnorm, converged, trace }
}

/// Gershgorin bound on the Hessian of the per-period functional.
pub fn lipschitz_estimate<W: DoubleWell + ?Sized>(weights: &WeightTable, potential: &W, pot_scale: f64) -> f64 {
    let smax = weights.weight_sums().into_iter().fold(0.0f64, f64::max);
    let curv = potential.curvature_bound().unwrap_or(20.0);
    4.0 * smax + curv * weights.domain.cell_volume() * pot_scale
}

/// Minimizes the per-period functional over the admissible class, starting from `seed`
/// (the minimal seed when `None`).
pub fn minimize_strip<W: DoubleWell + ?Sized>(
    weights: &WeightTable,
    potential: &W,
    constraints: &Constraints,
    options: &SolveOptions,
    seed: Option<&Field>,
) -> Result<SolveResult, SolveError> {
    let d = &weights.domain;
    if d.m < d.tau * (1.0 - 1e-12) {
        return Err(SolveError::Precondition(format!("M = {} is below tau = {}", d.m, d.tau)));
    }
    if (weights.kernel.xi - weights.kernel.tau).abs() > 1e-12 * weights.kernel.tau {
        return Err(SolveError::Precondition("xi=tau".into()));
    }
    let pot_scale = match options.epsilon {
        None => 1.0,
        Some(e) if e > 0.0 => e.powf(-2.0 * weights.kernel.s),
        Some(e) => return Err(SolveError::Precondition(format!("epsilon = {e} must be positive"))),
    };
    let start = match seed {
        Some(f) if f.domain == *d => f.values.clone(),
        Some(_) => return Err(SolveError::Precondition("seed lives on a different domain".into())),
        None => minimal_seed(d, constraints).values,
    };
    let (lo, hi) = constraints.bounds(d);
    let lip = lipschitz_estimate(weights, potential, pot_scale);
    let out = spg(start, &lo, &hi, lip, |u, g| weights.value_and_gradient(potential, u, pot_scale, g), options);
    Ok(SolveResult {
        field: Field { domain: d.clone(), values: out.x },
        f_value: out.f,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        converged: out.converged,
        diagnostics: Diagnostics::default(),
        trace: out.trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub eta: f64,
    pub shift: Vec<i64>,
    pub violating_cells: usize,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffReport {
    pub checks: Vec<LevelCheck>,
    pub worst_measure: f64,
    pub pass: bool,
}

/// Lattice shifts used by the Birkhoff check: the coordinate vectors, their negatives and
/// the tangential generator.
pub fn birkhoff_shifts(domain: &StripDomain) -> Vec<Vec<i64>> {
    if domain.dim == 1 {
        return vec![vec![1], vec![-1]];
    }
    let mut out = vec![vec![1, 0], vec![-1, 0], vec![0, 1], vec![0, -1]];
    if let Some(z) = domain.direction.generator() {
        out.push(z.to_vec());
    }
    out
}

/// `{±u > η} + τk ⊆ {±u > η}` for every shift with `±ω·k ≤ 0`.
pub fn check_birkhoff(field: &Field, levels: &[f64]) -> BirkhoffReport {
    let d = &field.domain;
    let vol = d.cell_volume();
    let mut checks = Vec::new();
    for k in birkhoff_shifts(d) {
        let dotk: i64 = d.direction.p.iter().zip(&k).map(|(a, b)| a * b).sum();
        let shifted = field.birkhoff_shift(&k);
        for &eta in levels {
            let mut bad = 0;
            for (us, u) in shifted.values.iter().zip(&field.values) {
                if dotk <= 0 && *us > eta && !(*u > eta) {
                    bad += 1;
                } else if dotk >= 0 && -*us > eta && !(-*u > eta) {
                    bad += 1;
                }
            }
            checks.push(LevelCheck { eta, shift: k.clone(), violating_cells: bad, measure: bad as f64 * vol });
        }
    }
    let worst_measure = checks.iter().map(|c| c.measure).fold(0.0, f64::max);
    let pass = checks.iter().all(|c| c.violating_cells == 0);
    BirkhoffReport { checks, worst_measure, pass }
}

/// Distance in the normal direction from `{u > -θ}` to the upper constraint `y = M`.
pub fn upper_distance(field: &Field, theta: f64) -> f64 {
    let d = &field.domain;
    let top = (0..d.n_cells())
        .filter(|&i| field.values[i] > -theta)
        .map(|i| d.row_y(d.row_col(i).0 as i64) + 0.5 * d.h)
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        d.m + d.buffer
    } else {
        d.m - top
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallTrial {
    pub center: Vec<f64>,
    pub radius: f64,
    pub cells: usize,
    pub improvement: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAReport {
    pub seed: u64,
    pub trials: Vec<BallTrial>,
    pub max_improvement: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Best energy decrease obtainable by changing the field on the extended cells `cells` only
/// (box `|u| ≤ 1`, everything else frozen, no obstacle).
pub fn local_improvement<W: DoubleWell + ?Sized>(
    weights: &WeightTable,
    potential: &W,
    field: &Field,
    cells: &[(i64, i64)],
    pot_scale: f64,
) -> f64 {
    let m = cells.len();
    if m == 0 {
        return 0.0;
    }
    let d = &weights.domain;
    let vol = d.cell_volume() * pot_scale;
    let sums: Vec<_> = cells.iter().map(|&(r, c)| weights.cell_sums(field, r, c)).collect();
    let u0: Vec<f64> = cells.iter().map(|&(r, c)| field.ext_value(r, c)).collect();
    let xs: Vec<Vec<f64>> = cells.iter().map(|&(r, c)| d.ext_center(r, c)).collect();
    let w0: Vec<f64> = (0..m).map(|a| potential.value(&xs[a], u0[a])).collect();
    let mut pair = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            if a != b {
                pair[a * m + b] = weights.pair_weight(cells[a], cells[b]);
            }
        }
    }
    let lo: Vec<f64> = u0.iter().map(|u| -1.0 - u).collect();
    let hi: Vec<f64> = u0.iter().map(|u| 1.0 - u).collect();
    let smax = sums.iter().map(|s| s.weight).fold(0.0, f64::max);
    let lip = 4.0 * smax + potential.curvature_bound().unwrap_or(20.0) * vol;
    let delta_e = |dl: &[f64], g: &mut [f64]| -> f64 {
        let mut e = 0.0;
        for a in 0..m {
            let mut coupling = 0.0;
            for b in 0..m {
                coupling += pair[a * m + b] * dl[b];
            }
            let u = u0[a] + dl[a];
            e += 2.0 * dl[a] * sums[a].first + dl[a] * dl[a] * sums[a].weight - dl[a] * coupling
                + (potential.value(&xs[a], u) - w0[a]) * vol;
            g[a] = 2.0 * sums[a].first + 2.0 * dl[a] * sums[a].weight - 2.0 * coupling
                + potential.derivative(&xs[a], u) * vol;
        }
        e
    };
    let opts = SolveOptions { max_iters: 5000, rel_tol: 1e-14, stall_window: 50, grad_tol: 1e-13, epsilon: None };
    let out = spg(vec![0.0; m], &lo, &hi, lip, delta_e, &opts);
    (-out.f).max(0.0)
}

/// Random frozen-boundary ball re-solves.
pub fn check_class_a<W: DoubleWell + ?Sized>(
    weights: &WeightTable,
    potential: &W,
    field: &Field,
    trials: usize,
    radius_range: (f64, f64),
    seed: u64,
    epsilon: Option<f64>,
) -> Result<ClassAReport, SolveError> {
    let d = &weights.domain;
    let pot_scale = epsilon.map_or(1.0, |e| e.powf(-2.0 * weights.kernel.s));
    let f_ref = weights.value(potential, &field.values, pot_scale).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = if d.dim == 2 { d.nt as f64 * d.h } else { 0.0 };
    let (ylo, yhi) = (-d.buffer, d.m + d.buffer);
    let mut out = Vec::new();
    for _ in 0..trials {
        let r = rng.gen_range(radius_range.0..=radius_range.1);
        let t = if d.dim == 2 { rng.gen_range(0.0..period) } else { 0.0 };
        if yhi - ylo <= 2.0 * r {
            out.push(BallTrial { center: d.to_world(t, 0.5 * (ylo + yhi)), radius: r, cells: 0, improvement: 0.0, note: Some("ball does not fit in the simulated region".into()) });
            continue;
        }
        let y = rng.gen_range(ylo + r..yhi - r);
        let center = d.to_world(t, y);
        let cells = weights.window_cells(&crate::energy::Window::Ball { center: center.clone(), radius: r })?;
        let cells: Vec<_> = cells.into_iter().filter(|&(row, _)| row >= 0 && row < d.ny as i64).collect();
        let improvement = local_improvement(weights, potential, field, &cells, pot_scale);
        out.push(BallTrial { center, radius: r, cells: cells.len(), improvement, note: None });
    }
    let tolerance = 1e-8 * f_ref;
    let max_improvement = out.iter().map(|t| t.improvement).fold(0.0, f64::max);
    Ok(ClassAReport { seed, trials: out, max_improvement, tolerance, pass: max_improvement <= tolerance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub m: Vec<usize>,
    /// L¹ distance per fundamental period between the tiled original and the new solution.
    pub gap_per_period: f64,
    pub converged: bool,
}

/// Re-solves on the strip with `m` tangential periods and compares with the tiled solution.
pub fn doubling_check<W: DoubleWell + ?Sized>(
    weights: &WeightTable,
    potential: &W,
    constraints: &Constraints,
    options: &SolveOptions,
    solution: &Field,
    m: &[usize],
) -> Result<DoublingReport, SolveError> {
    if m.iter().any(|&k| k == 0) {
        return Err(SolveError::Precondition("tiling factors must be at least 1".into()));
    }
    let factor: usize = m.iter().product();
    let big = weights.domain.tiled(factor).map_err(EnergyError::from)?;
    let table = if factor == 1 { weights.clone() } else { WeightTable::build(&weights.kernel, &big, weights.r_cut)? };
    let res = minimize_strip(&table, potential, constraints, options, None)?;
    let d = &weights.domain;
    let mut gap = 0.0;
    for (j, v) in res.field.values.iter().enumerate() {
        let (r, c) = big.row_col(j);
        let orig = solution.values[d.index(r, c % d.nt)];
        gap += (v - orig).abs();
    }
    gap *= d.cell_volume() / factor as f64;
    Ok(DoublingReport { m: m.to_vec(), gap_per_period: gap, converged: res.converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Direction;

    fn dom() -> StripDomain {
        StripDomain::aligned(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 2.0, 4, 1.0).unwrap()
    }

    #[test]
    fn projection_examples() {
        let d = dom();
        let c = Constraints::default();
        let p = project(&c, &Field::constant(&d, 0.0));
        for (i, v) in p.values.iter().enumerate() {
            let y = d.row_y(d.row_col(i).0 as i64);
            let want = if y < 0.0 { 0.9 } else if y > d.m { -0.9 } else { 0.0 };
            assert_eq!(*v, want);
        }
        assert_eq!(project(&c, &p), p);
        let seed = minimal_seed(&d, &c);
        assert_eq!(project(&c, &Field::constant(&d, -1.0)), seed);
        assert_eq!(project(&c, &seed), seed);
    }

    #[test]
    fn upper_distance_examples() {
        let d = dom();
        let f = Field::from_frame_fn(&d, |_, y| if y < d.m - 2.0 * d.h { 1.0 } else { -1.0 });
        assert!(upper_distance(&f, 0.9) >= 2.0 * d.h - 1e-12);
        let g = Field::from_frame_fn(&d, |_, y| if y < d.m { -0.89 } else { -1.0 });
        assert!(upper_distance(&g, 0.9).abs() < 1e-12);
    }

    #[test]
    fn birkhoff_on_monotone_and_bumped_profiles() {
        let d = StripDomain::aligned(1.0, Direction::new(vec![1, 1], 1.0).unwrap(), 3.0, 4, 1.0).unwrap();
        let f = Field::from_frame_fn(&d, |_, y| -(2.0 * (y - 1.5)).tanh());
        assert!(check_birkhoff(&f, &[-0.9, -0.5, 0.0, 0.5, 0.9]).pass);
        let mut g = f.clone();
        let i = d.index(d.ny * 3 / 4, 1);
        g.values[i] = 0.95;
        let rep = check_birkhoff(&g, &[0.5]);
        assert!(!rep.pass && rep.worst_measure > 0.0);
    }
}
