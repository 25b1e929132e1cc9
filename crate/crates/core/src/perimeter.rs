//! K-perimeter of discrete sets, the ε-sweep towards the sharp-interface limit and
//! flip stability of the limit set.

use crate::energy::{EnergyError, WeightTable, Window};
use crate::geometry::{self, GeometryError, LevelMode, SetMask};
use crate::lattice::Field;
use crate::minimize::{minimize_strip, Constraints, SolveError, SolveOptions};
use crate::model::DoubleWell;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum PerimeterError {
    #[error("unsupported regime: {0}")]
    Regime(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerimeterResult {
    pub per_k: f64,
    /// `L(E∩Ω, Ω∖E)`, `L(E∩Ω, ℝⁿ∖(E∪Ω))`, `L(E∖Ω, Ω∖E)`.
    pub parts: [f64; 3],
    pub window: Window,
    pub tail_estimate: f64,
    /// A quarter of the kinetic energy of `χ_E - χ_{ℝⁿ∖E}` over the same window.
    pub quarter_kinetic: f64,
}

fn check_regime(weights: &WeightTable) -> Result<(), PerimeterError> {
    if weights.kernel.s >= 0.5 {
        return Err(PerimeterError::Regime(format!("s<1/2 required, got s = {}", weights.kernel.s)));
    }
    Ok(())
}

/// Per-cell sums of physical weights towards `E` and towards its complement over every
/// partner of a simulated cell (periodic images and far field included, own images excluded).
fn phase_sums(weights: &WeightTable, mask: &SetMask) -> Vec<(f64, f64)> {
    let d = &weights.domain;
    let nt = d.nt as i64;
    let ny = d.ny as i64;
    (0..d.n_cells())
        .into_par_iter()
        .map(|i| {
            let (r, c) = d.row_col(i);
            let (r, c) = (r as i64, c as i64);
            let fa = weights.prof_at(r, c);
            let mut to_in = 0.0;
            let mut to_out = 0.0;
            for rb in 0..ny {
                for cb in 0..nt {
                    let j = (rb * nt + cb) as usize;
                    if j == i {
                        continue;
                    }
                    let w = weights.agg_at(rb - r, cb - c) * (1.0 + 0.25 * (fa + weights.prof_at(rb, cb)));
                    if mask.inside[j] {
                        to_in += w;
                    } else {
                        to_out += w;
                    }
                }
            }
            let (pp, pm) = weights.far_weights(i);
            let (mut tin, mut tout) = (weights.scale * to_in, weights.scale * to_out);
            if mask.far_plus {
                tin += pp;
            } else {
                tout += pp;
            }
            if mask.far_minus {
                tin += pm;
            } else {
                tout += pm;
            }
            (tin, tout)
        })
        .collect()
}

/// `Per_K(E; Ω)` by its three pair classes, cross-checked against the kinetic energy of the
/// indicator. On the strip window the functional is taken per period.
pub fn per_k(weights: &WeightTable, mask: &SetMask, window: &Window) -> Result<PerimeterResult, PerimeterError> {
    check_regime(weights)?;
    if mask.domain != weights.domain {
        return Err(PerimeterError::Geometry(GeometryError::DomainMismatch));
    }
    let chi = mask.indicator_field()?;
    let d = &weights.domain;
    let (parts, tail) = match window {
        Window::Strip => {
            let mut p1 = 0.0;
            let mut p2 = 0.0;
            let mut p3 = 0.0;
            let nt = d.nt as i64;
            for i in 0..d.n_cells() {
                if !mask.inside[i] {
                    continue;
                }
                let (r, c) = d.row_col(i);
                let fa = weights.prof_at(r as i64, c as i64);
                for (j, &inside) in mask.inside.iter().enumerate() {
                    if inside {
                        continue;
                    }
                    let (rb, cb) = d.row_col(j);
                    let amp = 1.0 + 0.25 * (fa + weights.prof_at(rb as i64, cb as i64));
                    p1 += weights.agg_at(rb as i64 - r as i64, (cb as i64 - c as i64).rem_euclid(nt)) * amp;
                }
            }
            p1 *= weights.scale;
            for i in 0..d.n_cells() {
                let (pp, pm) = weights.far_weights(i);
                if mask.inside[i] {
                    p2 += if mask.far_minus { 0.0 } else { pm } + if mask.far_plus { 0.0 } else { pp };
                } else {
                    p3 += if mask.far_plus { pp } else { 0.0 } + if mask.far_minus { pm } else { 0.0 };
                }
            }
            let tail: f64 = (0..d.n_cells())
                .map(|i| {
                    let (tp, tm) = weights.tail_weights(i);
                    if mask.inside[i] { tm } else { tp }
                })
                .sum();
            ([p1, p2, p3], tail)
        }
        _ => {
            let cells = weights.window_cells(window)?;
            let inside: Vec<bool> = cells.iter().map(|&(r, c)| mask.ext_inside(r, c)).collect();
            let mut p1 = 0.0;
            for (a, &ia) in inside.iter().enumerate() {
                if !ia {
                    continue;
                }
                for (b, &ib) in inside.iter().enumerate() {
                    if !ib {
                        p1 += weights.pair_weight(cells[a], cells[b]);
                    }
                }
            }
            let mut opp_in = 0.0;
            let mut opp_out = 0.0;
            let mut tail = 0.0;
            for (a, &(r, c)) in cells.iter().enumerate() {
                let s = weights.cell_sums(&chi, r, c);
                if inside[a] {
                    opp_in += 0.25 * s.second;
                } else {
                    opp_out += 0.25 * s.second;
                }
                tail += 0.25 * s.tail;
            }
            ([p1, (opp_in - p1).max(0.0), (opp_out - p1).max(0.0)], tail)
        }
    };
    let potential_free = crate::model::PotentialSpec::quartic(d.tau);
    let rep = weights.total_energy(&potential_free, &chi, window, None)?;
    Ok(PerimeterResult {
        per_k: parts.iter().sum(),
        parts,
        window: window.clone(),
        tail_estimate: tail,
        quarter_kinetic: 0.25 * (rep.kinetic_in + rep.kinetic_cross),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaRecord {
    pub eps: f64,
    #[serde(rename = "E_eps")]
    pub e_eps: f64,
    #[serde(rename = "G_threshold")]
    pub g_threshold: f64,
    pub sym_diff: f64,
    pub converged: bool,
    #[serde(skip)]
    pub field: Field,
}

pub fn gamma_csv(records: &[GammaRecord]) -> String {
    let mut s = String::from("eps,E_eps,G_threshold,sym_diff,converged\n");
    for r in records {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e},{}", r.eps, r.e_eps, r.g_threshold, r.sym_diff, r.converged);
    }
    s
}

/// Minimizes `E_ε` for each `ε` (potential scaled by `ε^{-2s}`, same weights) and compares
/// with `G` of the zero-threshold set. Symmetric differences refer to the last record.
pub fn gamma_sweep<W: DoubleWell + ?Sized>(
    weights: &WeightTable,
    potential: &W,
    constraints: &Constraints,
    eps_list: &[f64],
    options: &SolveOptions,
) -> Result<Vec<GammaRecord>, PerimeterError> {
    check_regime(weights)?;
    let tau = weights.kernel.tau;
    if eps_list.is_empty() || eps_list.iter().any(|&e| !(e > 0.0 && e <= tau)) {
        return Err(PerimeterError::Precondition("epsilon values must lie in (0, tau]".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(PerimeterError::Precondition("epsilon list must be decreasing".into()));
    }
    let mut records = Vec::new();
    let mut seed: Option<Field> = None;
    for &eps in eps_list {
        let opts = SolveOptions { epsilon: Some(eps), ..options.clone() };
        let res = minimize_strip(weights, potential, constraints, &opts, seed.as_ref())?;
        let rep = weights.total_energy(potential, &res.field, &Window::Strip, Some(eps))?;
        let mask = threshold(&res.field);
        let per = per_k(weights, &mask, &Window::Strip)?;
        records.push(GammaRecord { eps, e_eps: rep.total, g_threshold: 4.0 * per.per_k, sym_diff: 0.0, converged: res.converged, field: res.field.clone() });
        seed = Some(res.field);
    }
    let last = threshold(&records.last().expect("non-empty").field);
    for r in records.iter_mut() {
        r.sym_diff = geometry::symmetric_difference_measure(&threshold(&r.field), &last)?;
    }
    Ok(records)
}

fn threshold(field: &Field) -> SetMask {
    geometry::level_mask(field, 0.0, LevelMode::Above)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub lower_inclusion: bool,
    pub upper_inclusion: bool,
    pub violating_cells: Vec<usize>,
    pub density_min_inside: f64,
    pub density_min_outside: f64,
    pub density_pass: bool,
    pub periodic: bool,
    /// Largest symmetric difference between the level −1/2, 0, 1/2 sets, in cell layers.
    pub level_spread_layers: f64,
    pub pass: bool,
}

/// Limit-set surrogate from the finest record: half-space inclusions
/// `{y < 0} ⊂ E ⊂ {y ≤ M}`, densities at a boundary cell, periodicity.
pub fn minimal_surface_extract(records: &[GammaRecord], radii: &[f64], c_density: f64) -> Result<(SetMask, LimitReport), PerimeterError> {
    if records.iter().filter(|r| r.converged).count() < 3 {
        return Err(PerimeterError::Precondition("at least three converged records are needed".into()));
    }
    let field = &records.last().expect("non-empty").field;
    let d = &field.domain;
    let mask = threshold(field);
    let mut violating = Vec::new();
    let mut lower = true;
    let mut upper = true;
    for i in 0..d.n_cells() {
        let y = d.row_y(d.row_col(i).0 as i64);
        if y < 0.0 && !mask.inside[i] {
            lower = false;
            violating.push(i);
        }
        if y > d.m && mask.inside[i] {
            upper = false;
            violating.push(i);
        }
    }
    // boundary cell nearest to the middle of the strip column 0
    let mid = 0.5 * d.m;
    let x0 = (0..d.n_cells())
        .filter(|&i| {
            let (r, c) = d.row_col(i);
            mask.inside[i] && geometry::is_boundary_cell(&mask, r as i64, c as i64)
        })
        .min_by(|&a, &b| {
            let ya = (d.row_y(d.row_col(a).0 as i64) - mid).abs();
            let yb = (d.row_y(d.row_col(b).0 as i64) - mid).abs();
            ya.total_cmp(&yb)
        })
        .map(|i| d.center(i));
    let (dmin_in, dmin_out) = match &x0 {
        Some(x0) => {
            let a = geometry::density_profile(&mask, x0, radii);
            let b = geometry::density_profile(&mask.complement(), x0, radii);
            let m = |rows: &[geometry::ProfileRow]| rows.iter().filter_map(|r| r.value).fold(f64::INFINITY, f64::min);
            (m(&a), m(&b))
        }
        None => (0.0, 0.0),
    };
    let density_pass = dmin_in.is_finite() && dmin_in >= c_density && dmin_out >= c_density;
    let periodic = (0..d.ny as i64).all(|r| (0..d.nt as i64).all(|c| mask.ext_inside(r, c) == mask.ext_inside(r, c + d.nt as i64)));
    let layer = d.nt as f64 * d.cell_volume();
    let lv = |eta| geometry::level_mask(field, eta, LevelMode::Above);
    let (lm, l0, lp) = (lv(-0.5), lv(0.0), lv(0.5));
    let spread = [
        geometry::symmetric_difference_measure(&lm, &l0)?,
        geometry::symmetric_difference_measure(&l0, &lp)?,
        geometry::symmetric_difference_measure(&lm, &lp)?,
    ]
    .into_iter()
    .fold(0.0, f64::max)
        / layer;
    let pass = lower && upper && density_pass && periodic;
    Ok((
        mask,
        LimitReport {
            lower_inclusion: lower,
            upper_inclusion: upper,
            violating_cells: violating,
            density_min_inside: dmin_in,
            density_min_outside: dmin_out,
            density_pass,
            periodic,
            level_spread_layers: spread,
            pass,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub seed: u64,
    pub trials: usize,
    pub flips_tested: usize,
    /// Largest decrease of `Per_K` found, relative to `Per_K`.
    pub best_relative_improvement: f64,
    pub pass: bool,
}

/// Single-cell and connected two-cell flips inside random balls (per-period perimeter).
pub fn surface_local_min_check(
    weights: &WeightTable,
    mask: &SetMask,
    trials: usize,
    radius_range: (f64, f64),
    seed: u64,
) -> Result<FlipReport, PerimeterError> {
    check_regime(weights)?;
    let d = &weights.domain;
    let base = per_k(weights, mask, &Window::Strip)?.per_k;
    let sums = phase_sums(weights, mask);
    // change of Per_K when cell i alone switches side
    let single: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(i, &(tin, tout))| if mask.inside[i] { tin - tout } else { tout - tin })
        .collect();
    let nt = d.nt as i64;
    let pair_w = |a: usize, b: usize| {
        let (ra, ca) = d.row_col(a);
        let (rb, cb) = d.row_col(b);
        let amp = 1.0 + 0.25 * (weights.prof_at(ra as i64, ca as i64) + weights.prof_at(rb as i64, cb as i64));
        weights.scale * weights.agg_at(rb as i64 - ra as i64, (cb as i64 - ca as i64).rem_euclid(nt)) * amp
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = d.nt as f64 * d.h;
    let mut best = 0.0f64;
    let mut tested = 0;
    for _ in 0..trials {
        let r = rng.gen_range(radius_range.0..=radius_range.1);
        let t = if d.dim == 2 { rng.gen_range(0.0..period) } else { 0.0 };
        let y = rng.gen_range(-d.buffer..d.m + d.buffer);
        let center = d.to_world(t, y);
        let mut ids: Vec<usize> = geometry::ball_cells(d, &center, r)
            .into_iter()
            .filter_map(|(row, col)| match d.ext_site(row, col) {
                crate::lattice::Site::Cell(i) => Some(i),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        for &a in &ids {
            tested += 1;
            best = best.min(single[a]);
            let (ra, ca) = d.row_col(a);
            let mut nb = vec![(ra as i64 + 1, ca as i64)];
            if d.dim == 2 {
                nb.push((ra as i64, ca as i64 + 1));
            }
            for (rb, cb) in nb {
                if rb >= d.ny as i64 {
                    continue;
                }
                let b = d.index(rb as usize, cb.rem_euclid(nt) as usize);
                if b == a || ids.binary_search(&b).is_err() {
                    continue;
                }
                let same = mask.inside[a] == mask.inside[b];
                let w = pair_w(a, b);
                let delta = single[a] + single[b] + if same { -2.0 * w } else { 2.0 * w };
                tested += 1;
                best = best.min(delta);
            }
        }
    }
    let rel = if base > 0.0 { (-best).max(0.0) / base } else { (-best).max(0.0) };
    Ok(FlipReport { seed, trials, flips_tested: tested, best_relative_improvement: rel, pass: rel <= 1e-10 })
}
