//! Discrete energies on periodic strips.
//!
//! A [`WeightTable`] holds the pair weights `w_ab ≈ ∫_{C_a}∫_{C_b} K` of the extended grid in
//! three layers:
//!
//! * a per-image stencil for center distances up to `R_cut`;
//! * `agg[d][c]`, the sum over *all* periodic images of a fundamental cell at row distance
//!   `d` and column offset `c` (explicit up to a large reach, Euler-Maclaurin beyond);
//! * row tails `Σ_{d ≥ D}` over whole rows, used for the constant far field beyond the band
//!   of `ceil(R_cut/h)` virtual rows on each side of the simulated rows.
//!
//! The modulated kernel reuses the homogeneous weights times `1 + (f̄_a + f̄_b)/4`, where `f̄`
//! is the exact cell average of `cos(2π x₁/τ)`.

pub mod pairs;

use crate::lattice::{Field, LatticeError, Site, StripDomain};
use crate::model::{DoubleWell, KernelFamily, KernelSpec};
use crate::quad;
use pairs::PairIntegrals;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error)]
pub enum EnergyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kinetic_in: f64,
    pub kinetic_cross: f64,
    pub potential: f64,
    pub total: f64,
    pub epsilon: Option<f64>,
    #[serde(rename = "R_cut")]
    pub r_cut: f64,
    pub h: f64,
    pub tail_estimate: f64,
}

/// Region over which an energy is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// One fundamental period of the strip: the functional `F`.
    Strip,
    /// Cells whose centers lie in the open ball (world coordinates).
    Ball { center: Vec<f64>, radius: f64 },
    /// Cells whose centers lie in `[t0,t1) x [y0,y1)` (frame coordinates).
    Box { t: [f64; 2], y: [f64; 2] },
}

/// Sums over all partners `b ≠ a` of one extended cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellSums {
    /// `Σ w_ab`
    pub weight: f64,
    /// `Σ w_ab (u_a - u_b)`
    pub first: f64,
    /// `Σ w_ab (u_a - u_b)^2`
    pub second: f64,
    /// Part of `second` carried by the row tails beyond the band.
    pub tail: f64,
}

#[derive(Debug, Clone)]
pub struct WeightTable {
    pub kernel: KernelSpec,
    pub domain: StripDomain,
    pub r_cut: f64,
    pub pairs: PairIntegrals,
    /// `h^{n-2s}`: unit-cell integrals times this are physical weights.
    pub scale: f64,
    /// Virtual rows kept explicitly on each side.
    pub band: i64,
    /// Largest tabulated row distance.
    pub dmax: i64,
    agg: Vec<f64>,
    stencil: Vec<(i64, i64, f64)>,
    rem: Vec<f64>,
    row_tail: Vec<f64>,
    prof: Vec<f64>,
    phi_plus: Vec<f64>,
    phi_minus: Vec<f64>,
    tail_plus: Vec<f64>,
    tail_minus: Vec<f64>,
    centers: Vec<Vec<f64>>,
}

fn gamma_fn(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// Mean of `cos(2π x₁/τ)` over the cell centered at `x` with frame axes `tan`, `nor`.
fn cell_profile(tau: f64, center_x1: f64, tan1: f64, nor1: f64, h: f64, dim: usize) -> f64 {
    let k = 2.0 * PI / tau;
    let sinc = |z: f64| if z.abs() < 1e-12 { 1.0 } else { z.sin() / z };
    let tan_part = if dim == 2 { sinc(0.5 * k * tan1 * h) } else { 1.0 };
    (k * center_x1).cos() * tan_part * sinc(0.5 * k * nor1 * h)
}

impl WeightTable {
    pub fn build(kernel: &KernelSpec, domain: &StripDomain, r_cut: f64) -> Result<Self, EnergyError> {
        let h = domain.h;
        if !(r_cut >= 4.0 * h * (1.0 - 1e-12)) {
            return Err(EnergyError::Config(format!("R_cut = {r_cut} must be at least 4h = {}", 4.0 * h)));
        }
        if kernel.dim != domain.dim {
            return Err(EnergyError::Config("kernel and domain dimensions differ".into()));
        }
        let dim = domain.dim;
        let s = kernel.s;
        let pairs = PairIntegrals::new(dim, s);
        let p = pairs.p;
        let scale = h.powf(dim as f64 - 2.0 * s);
        let nt = domain.nt as i64;
        let ny = domain.ny as i64;
        let band = (r_cut / h - 1e-9).ceil() as i64;
        let dmax = ny - 1 + 2 * band;

        // aggregated image sums
        let reach = 256 + 4 * dmax + 64 * nt;
        let mut agg = vec![0.0; ((dmax + 1) * nt) as usize];
        agg.par_chunks_mut(nt as usize).enumerate().for_each(|(d, row)| {
            let d = d as i64;
            for (dc, slot) in row.iter_mut().enumerate() {
                let dc = dc as i64;
                if dim == 1 {
                    *slot = if d == 0 { 0.0 } else { pairs.value(d, 0) };
                    continue;
                }
                let mut acc = 0.0;
                let m_lo = (-reach - dc).div_euclid(nt) + 1;
                let m_hi = (reach - dc).div_euclid(nt);
                for m in m_lo..=m_hi {
                    let dt = dc + m * nt;
                    if dt == 0 && d == 0 {
                        continue;
                    }
                    acc += pairs.value(dt, d);
                }
                let right0 = dc + (m_hi + 1) * nt;
                let left0 = -(dc + (m_lo - 1) * nt);
                acc += em_line_tail(&pairs, right0 as f64, nt as f64, d as f64);
                acc += em_line_tail(&pairs, left0 as f64, nt as f64, d as f64);
                *slot = acc;
            }
        });

        // per-image stencil within R_cut and its complement in the aggregate
        let rc = r_cut / h;
        let treach = if dim == 2 { band } else { 0 };
        let mut stencil = Vec::new();
        let mut rem = agg.clone();
        for dr in -band..=band {
            for dc in -treach..=treach {
                if (dr == 0 && dc == 0) || ((dr * dr + dc * dc) as f64) > rc * rc * (1.0 + 1e-12) {
                    continue;
                }
                let w = pairs.value(dc, dr);
                stencil.push((dc, dr, w));
                if dr >= 0 {
                    rem[(dr * nt + dc.rem_euclid(nt)) as usize] -= w;
                }
            }
        }

        // whole-row sums and their suffix sums
        let row_sum = |d: i64| -> f64 { agg[(d * nt) as usize..((d + 1) * nt) as usize].iter().sum() };
        let mut row_tail = vec![0.0; (dmax + 2) as usize];
        row_tail[(dmax + 1) as usize] = em_row_tail(dim, p, (dmax + 1) as f64);
        for d in (1..=dmax).rev() {
            row_tail[d as usize] = row_sum(d) + row_tail[(d + 1) as usize];
        }

        // cell-averaged profiles on simulated and band rows
        let modulated = kernel.family == KernelFamily::Modulated;
        let rows_ext = ny + 2 * band;
        let (tan1, nor1) = {
            let e = domain.to_world(1.0, 0.0);
            let n = domain.to_world(0.0, 1.0);
            (if dim == 2 { e[0] } else { 0.0 }, n[0])
        };
        let mut prof = vec![0.0; (rows_ext * nt) as usize];
        if modulated {
            for r in 0..rows_ext {
                for c in 0..nt {
                    let x = domain.ext_center(r - band, c);
                    prof[(r * nt + c) as usize] = cell_profile(kernel.tau, x[0], tan1, nor1, h, dim);
                }
            }
        }

        let centers = (0..domain.n_cells()).map(|i| domain.center(i)).collect();
        let mut table = WeightTable {
            kernel: kernel.clone(),
            domain: domain.clone(),
            r_cut,
            pairs,
            scale,
            band,
            dmax,
            agg,
            stencil,
            rem,
            row_tail,
            prof,
            phi_plus: Vec::new(),
            phi_minus: Vec::new(),
            tail_plus: Vec::new(),
            tail_minus: Vec::new(),
            centers,
        };
        table.assemble_far_field();
        Ok(table)
    }

    fn assemble_far_field(&mut self) {
        let nt = self.domain.nt as i64;
        let ny = self.domain.ny as i64;
        let band = self.band;
        let cells: Vec<(f64, f64, f64, f64)> = (0..self.domain.n_cells())
            .into_par_iter()
            .map(|i| {
                let (r, c) = self.domain.row_col(i);
                let (r, c) = (r as i64, c as i64);
                let fa = self.prof_at(r, c);
                let mut plus = 0.0;
                for rp in -band..0 {
                    for cp in 0..nt {
                        plus += self.agg_at(r - rp, cp - c) * self.amp(fa, self.prof_at(rp, cp));
                    }
                }
                let mut minus = 0.0;
                for rp in ny..ny + band {
                    for cp in 0..nt {
                        minus += self.agg_at(rp - r, cp - c) * self.amp(fa, self.prof_at(rp, cp));
                    }
                }
                let tp = self.amp(fa, 0.0) * self.row_tail[(r + band + 1) as usize];
                let tm = self.amp(fa, 0.0) * self.row_tail[(ny + band - r) as usize];
                (self.scale * (plus + tp), self.scale * (minus + tm), self.scale * tp, self.scale * tm)
            })
            .collect();
        self.phi_plus = cells.iter().map(|c| c.0).collect();
        self.phi_minus = cells.iter().map(|c| c.1).collect();
        self.tail_plus = cells.iter().map(|c| c.2).collect();
        self.tail_minus = cells.iter().map(|c| c.3).collect();
    }

    #[inline]
    fn amp(&self, fa: f64, fb: f64) -> f64 {
        1.0 + 0.25 * (fa + fb)
    }

    /// Cell-averaged modulation profile of an extended cell inside the band.
    #[inline]
    pub fn prof_at(&self, row: i64, col: i64) -> f64 {
        let nt = self.domain.nt as i64;
        self.prof[((row + self.band) * nt + col.rem_euclid(nt)) as usize]
    }

    /// Aggregated unit weight for row distance `dr` and column offset `dc`.
    #[inline]
    pub fn agg_at(&self, dr: i64, dc: i64) -> f64 {
        let nt = self.domain.nt as i64;
        self.agg[(dr.abs() * nt + dc.rem_euclid(nt)) as usize]
    }

    /// Physical weight between two extended cells (a single image pair).
    pub fn pair_weight(&self, a: (i64, i64), b: (i64, i64)) -> f64 {
        let base = self.pairs.value(b.1 - a.1, b.0 - a.0);
        self.scale * base * self.amp(self.prof_ext(a.0, a.1), self.prof_ext(b.0, b.1))
    }

    /// Profile of any extended cell, computed directly outside the band.
    pub fn prof_ext(&self, row: i64, col: i64) -> f64 {
        if self.kernel.family == KernelFamily::Standard {
            return 0.0;
        }
        if row >= -self.band && row < self.domain.ny as i64 + self.band {
            return self.prof_at(row, col);
        }
        let d = &self.domain;
        let x = d.ext_center(row, col);
        let e = d.to_world(1.0, 0.0);
        let n = d.to_world(0.0, 1.0);
        cell_profile(self.kernel.tau, x[0], if d.dim == 2 { e[0] } else { 0.0 }, n[0], d.h, d.dim)
    }

    /// Regularized self weight `∫∫_{C×C} K |x-y|^2 / h^2` (multiplies zero in every energy).
    pub fn self_weight(&self) -> f64 {
        self.scale * self.pairs.value(0, 0)
    }

    /// Per-image neighbors of cell `i` within `R_cut`: (site, world displacement, weight).
    pub fn images(&self, i: usize) -> Vec<(Site, Vec<f64>, f64)> {
        let (r, c) = self.domain.row_col(i);
        let (r, c) = (r as i64, c as i64);
        let fa = self.prof_at(r, c);
        self.stencil
            .iter()
            .map(|&(dc, dr, w)| {
                let site = self.domain.ext_site(r + dr, c + dc);
                let fb = self.prof_at(r + dr, c + dc);
                (site, self.domain.offset_world(dc, dr), self.scale * w * self.amp(fa, fb))
            })
            .collect()
    }

    /// Far-field weights of cell `i` beyond the explicit band: `(T₊, T₋)`.
    pub fn tail_weights(&self, i: usize) -> (f64, f64) {
        (self.tail_plus[i], self.tail_minus[i])
    }

    /// Total weights of cell `i` towards each far-field half-space.
    pub fn far_weights(&self, i: usize) -> (f64, f64) {
        (self.phi_plus[i], self.phi_minus[i])
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i]
    }

    fn check_field(&self, field: &Field) -> Result<(), EnergyError> {
        if field.domain != self.domain {
            return Err(EnergyError::Domain("field lives on a different domain".into()));
        }
        Ok(())
    }

    /// Per-period kinetic parts and gradient: `(in, cross, tail)`.
    ///
    /// `in = ½ Σ_{i,j} (u_i-u_j)² G_ij`, `cross = Σ_i (u_i-1)² Φ₊ + (u_i+1)² Φ₋`;
    /// the gradient (when requested) is `2Σ_j (u_i-u_j) G_ij + 2(u_i-1)Φ₊ + 2(u_i+1)Φ₋`.
    pub fn strip_kinetic(&self, u: &[f64], grad: Option<&mut [f64]>) -> (f64, f64, f64) {
        let nt = self.domain.nt;
        let ny = self.domain.ny;
        let modulated = self.kernel.family == KernelFamily::Modulated;
        let per_cell: Vec<(f64, f64, f64, f64)> = (0..u.len())
            .into_par_iter()
            .map(|i| {
                let (ri, ci) = (i / nt, i % nt);
                let ui = u[i];
                let fi = if modulated { self.prof_at(ri as i64, ci as i64) } else { 0.0 };
                let mut g = 0.0;
                let mut e = 0.0;
                for rj in 0..ny {
                    let d = ri.abs_diff(rj);
                    let base = &self.agg[d * nt..(d + 1) * nt];
                    let urow = &u[rj * nt..(rj + 1) * nt];
                    for (cj, &uj) in urow.iter().enumerate() {
                        let dc = if cj >= ci { cj - ci } else { cj + nt - ci };
                        let mut w = base[dc];
                        if modulated {
                            w *= self.amp(fi, self.prof_at(rj as i64, cj as i64));
                        }
                        let diff = ui - uj;
                        g += w * diff;
                        e += w * diff * diff;
                    }
                }
                let g = 2.0 * self.scale * g;
                let e = 0.5 * self.scale * e;
                let (pp, pm) = (self.phi_plus[i], self.phi_minus[i]);
                let cross = (ui - 1.0).powi(2) * pp + (ui + 1.0).powi(2) * pm;
                let tail = (ui - 1.0).powi(2) * self.tail_plus[i] + (ui + 1.0).powi(2) * self.tail_minus[i];
                let gc = 2.0 * (ui - 1.0) * pp + 2.0 * (ui + 1.0) * pm;
                (e, cross, tail, g + gc)
            })
            .collect();
        if let Some(grad) = grad {
            for (g, c) in grad.iter_mut().zip(&per_cell) {
                *g = c.3;
            }
        }
        let mut acc = (0.0, 0.0, 0.0);
        for c in &per_cell {
            acc.0 += c.0;
            acc.1 += c.1;
            acc.2 += c.2;
        }
        acc
    }

    /// Sum over every partner `b ≠ a` of an extended cell `a = (row, col)` inside the band.
    pub fn cell_sums(&self, field: &Field, row: i64, col: i64) -> CellSums {
        let nt = self.domain.nt as i64;
        let ny = self.domain.ny as i64;
        let band = self.band;
        let ua = field.ext_value(row, col);
        let fa = self.prof_at(row, col);
        let mut out = CellSums::default();
        for rp in -band..ny + band {
            let d = (rp - row).abs();
            for cp in 0..nt {
                let w = self.agg[(d * nt + (cp - col).rem_euclid(nt)) as usize] * self.amp(fa, self.prof_at(rp, cp));
                let diff = ua - field.ext_value(rp, cp);
                out.weight += w;
                out.first += w * diff;
                out.second += w * diff * diff;
            }
        }
        let amp0 = self.amp(fa, 0.0);
        let tp = amp0 * self.row_tail[(row + band + 1) as usize];
        let tm = amp0 * self.row_tail[(ny + band - row) as usize];
        out.weight += tp + tm;
        out.first += tp * (ua - 1.0) + tm * (ua + 1.0);
        let tail = tp * (ua - 1.0).powi(2) + tm * (ua + 1.0).powi(2);
        out.second += tail;
        out.tail = tail;
        out.weight *= self.scale;
        out.first *= self.scale;
        out.second *= self.scale;
        out.tail *= self.scale;
        out
    }

    /// Extended cells of a window; every cell must lie within the explicit band.
    pub fn window_cells(&self, window: &Window) -> Result<Vec<(i64, i64)>, EnergyError> {
        let d = &self.domain;
        let lo = -self.band;
        let hi = d.ny as i64 + self.band;
        let mut cells = Vec::new();
        match window {
            Window::Strip => {
                for i in 0..d.n_cells() {
                    let (r, c) = d.row_col(i);
                    cells.push((r as i64, c as i64));
                }
                return Ok(cells);
            }
            Window::Ball { center, radius } => {
                if center.len() != d.dim {
                    return Err(EnergyError::Domain("ball center dimension mismatch".into()));
                }
                let (t0, y0) = d.to_frame(center);
                let r0 = ((y0 - radius + d.buffer) / d.h).floor() as i64 - 1;
                let r1 = ((y0 + radius + d.buffer) / d.h).ceil() as i64 + 1;
                let (c0, c1) = if d.dim == 2 {
                    (((t0 - radius) / d.h).floor() as i64 - 1, ((t0 + radius) / d.h).ceil() as i64 + 1)
                } else {
                    (0, 0)
                };
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let dt = d.col_t(c) - t0;
                        let dy = d.row_y(r) - y0;
                        let dt = if d.dim == 2 { dt } else { 0.0 };
                        if dt * dt + dy * dy < radius * radius {
                            cells.push((r, c));
                        }
                    }
                }
            }
            Window::Box { t, y } => {
                let r0 = ((y[0] + d.buffer) / d.h - 0.5).ceil() as i64;
                let r1 = ((y[1] + d.buffer) / d.h - 0.5).ceil() as i64;
                let (c0, c1) = if d.dim == 2 {
                    ((t[0] / d.h - 0.5).ceil() as i64, (t[1] / d.h - 0.5).ceil() as i64)
                } else {
                    (0, 1)
                };
                for r in r0..r1 {
                    for c in c0..c1 {
                        cells.push((r, c));
                    }
                }
            }
        }
        if let Some(&(r, _)) = cells.iter().find(|&&(r, _)| r < lo || r >= hi) {
            return Err(EnergyError::Domain(format!(
                "window reaches row {r}, outside the explicit rows [{lo}, {hi})"
            )));
        }
        Ok(cells)
    }

    /// Dense table of single-image unit weights for offsets inside a bounding box.
    fn offset_table(&self, cells: &[(i64, i64)]) -> OffsetTable {
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for &(r, c) in cells {
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        }
        let dr = (rmax - rmin).max(0);
        let dc = (cmax - cmin).max(0);
        let mut vals = vec![0.0; ((dr + 1) * (dc + 1)) as usize];
        for a in 0..=dr {
            for b in 0..=dc {
                vals[(a * (dc + 1) + b) as usize] = self.pairs.value(b, a);
            }
        }
        OffsetTable { vals, width: dc + 1 }
    }

    /// Energy of a field over a window.
    pub fn total_energy<W: DoubleWell + ?Sized>(
        &self,
        potential: &W,
        field: &Field,
        window: &Window,
        epsilon: Option<f64>,
    ) -> Result<EnergyReport, EnergyError> {
        self.check_field(field)?;
        let pot_scale = self.potential_scale(epsilon)?;
        let vol = self.domain.cell_volume();
        if let Window::Strip = window {
            let (kin, cross, tail) = self.strip_kinetic(&field.values, None);
            let pot: f64 = field
                .values
                .iter()
                .enumerate()
                .map(|(i, &u)| potential.value(&self.centers[i], u))
                .sum::<f64>()
                * vol
                * pot_scale;
            return Ok(self.report(kin, cross, pot, tail, epsilon));
        }
        let cells = self.window_cells(window)?;
        let (kin, cross, tail) = self.window_kinetic(field, &cells);
        let pot: f64 = cells
            .iter()
            .map(|&(r, c)| match self.domain.ext_site(r, c) {
                Site::Cell(_) => potential.value(&self.domain.ext_center(r, c), field.ext_value(r, c)),
                _ => 0.0,
            })
            .sum::<f64>()
            * vol
            * pot_scale;
        Ok(self.report(kin, cross, pot, tail, epsilon))
    }

    /// `(K(u;Ω,Ω), 2K(u;Ω,ℝⁿ∖Ω), tail part)` for an explicit list of window cells.
    pub fn window_kinetic(&self, field: &Field, cells: &[(i64, i64)]) -> (f64, f64, f64) {
        let table = self.offset_table(cells);
        let modulated = self.kernel.family == KernelFamily::Modulated;
        let vals: Vec<f64> = cells.iter().map(|&(r, c)| field.ext_value(r, c)).collect();
        let profs: Vec<f64> = cells.iter().map(|&(r, c)| if modulated { self.prof_at(r, c) } else { 0.0 }).collect();
        let per: Vec<(f64, f64, f64)> = (0..cells.len())
            .into_par_iter()
            .map(|a| {
                let (ra, ca) = cells[a];
                let mut inner = 0.0;
                for b in 0..cells.len() {
                    if a == b {
                        continue;
                    }
                    let (rb, cb) = cells[b];
                    let mut w = table.get((rb - ra).abs(), (cb - ca).abs());
                    if modulated {
                        w *= self.amp(profs[a], profs[b]);
                    }
                    let diff = vals[a] - vals[b];
                    inner += w * diff * diff;
                }
                let sums = self.cell_sums(field, ra, ca);
                (0.5 * self.scale * inner, sums.second, sums.tail)
            })
            .collect();
        let kin_in: f64 = per.iter().map(|p| p.0).sum();
        let total: f64 = per.iter().map(|p| p.1).sum();
        let tail: f64 = per.iter().map(|p| p.2).sum();
        (kin_in, (total - 2.0 * kin_in).max(0.0), tail)
    }

    fn potential_scale(&self, epsilon: Option<f64>) -> Result<f64, EnergyError> {
        match epsilon {
            None => Ok(1.0),
            Some(e) if e > 0.0 => Ok(e.powf(-2.0 * self.kernel.s)),
            Some(e) => Err(EnergyError::Config(format!("epsilon = {e} must be positive"))),
        }
    }

    fn report(&self, kin: f64, cross: f64, pot: f64, tail: f64, epsilon: Option<f64>) -> EnergyReport {
        EnergyReport {
            kinetic_in: kin,
            kinetic_cross: cross,
            potential: pot,
            total: kin + cross + pot,
            epsilon,
            r_cut: self.r_cut,
            h: self.domain.h,
            tail_estimate: tail,
        }
    }

    /// Gradient of the per-period functional (with `ε^{-2s}` on the potential when given).
    pub fn energy_gradient<W: DoubleWell + ?Sized>(
        &self,
        potential: &W,
        field: &Field,
        epsilon: Option<f64>,
    ) -> Result<Vec<f64>, EnergyError> {
        self.check_field(field)?;
        let mut g = vec![0.0; field.values.len()];
        self.strip_kinetic(&field.values, Some(&mut g));
        let ps = self.potential_scale(epsilon)? * self.domain.cell_volume();
        for (i, gi) in g.iter_mut().enumerate() {
            *gi += ps * potential.derivative(&self.centers[i], field.values[i]);
        }
        Ok(g)
    }

    /// Per-period energy and gradient on raw values (solver fast path).
    pub fn value_and_gradient<W: DoubleWell + ?Sized>(&self, potential: &W, u: &[f64], pot_scale: f64, grad: &mut [f64]) -> f64 {
        let (kin, cross, _) = self.strip_kinetic(u, Some(grad));
        let vol = self.domain.cell_volume() * pot_scale;
        let mut pot = 0.0;
        for (i, gi) in grad.iter_mut().enumerate() {
            pot += potential.value(&self.centers[i], u[i]);
            *gi += vol * potential.derivative(&self.centers[i], u[i]);
        }
        kin + cross + pot * vol
    }

    pub fn value<W: DoubleWell + ?Sized>(&self, potential: &W, u: &[f64], pot_scale: f64) -> f64 {
        let (kin, cross, _) = self.strip_kinetic(u, None);
        let vol = self.domain.cell_volume() * pot_scale;
        let pot: f64 = u.iter().enumerate().map(|(i, &v)| potential.value(&self.centers[i], v)).sum();
        kin + cross + pot * vol
    }

    /// Discrete `L_K u(x_i) = Σ_b (u_i - u_b) w_ib / hⁿ`.
    pub fn apply_lk(&self, field: &Field, i: usize) -> f64 {
        let (r, c) = self.domain.row_col(i);
        self.cell_sums(field, r as i64, c as i64).first / self.domain.cell_volume()
    }

    /// Sum of all weights of each simulated cell (diagonal of the kinetic Hessian / 2).
    pub fn weight_sums(&self) -> Vec<f64> {
        let probe = Field::constant(&self.domain, 0.0);
        (0..self.domain.n_cells())
            .into_par_iter()
            .map(|i| {
                let (r, c) = self.domain.row_col(i);
                self.cell_sums(&probe, r as i64, c as i64).weight
            })
            .collect()
    }

    /// Per-period functional summed image by image: stencil pairs inside `R_cut`, then the
    /// aggregated remainder and far-field remainder. Mirrors [`Self::strip_kinetic`] through a
    /// different summation path.
    pub fn strip_kinetic_by_images(&self, field: &Field) -> f64 {
        let d = &self.domain;
        let nt = d.nt as i64;
        let ny = d.ny as i64;
        let modulated = self.kernel.family == KernelFamily::Modulated;
        let mut total = 0.0;
        for i in 0..d.n_cells() {
            let (r, c) = d.row_col(i);
            let (r, c) = (r as i64, c as i64);
            let ui = field.values[i];
            let fi = self.prof_at(r, c);
            let mut far_plus_stencil = 0.0;
            let mut far_minus_stencil = 0.0;
            let mut acc = 0.0;
            for &(dc, dr, w) in &self.stencil {
                let (rb, cb) = (r + dr, c + dc);
                let w = w * if modulated { self.amp(fi, self.prof_at(rb, cb)) } else { 1.0 };
                match d.ext_site(rb, cb) {
                    Site::Cell(j) => acc += 0.5 * w * (ui - field.values[j]).powi(2),
                    Site::Plus => far_plus_stencil += w,
                    Site::Minus => far_minus_stencil += w,
                }
            }
            for rj in 0..ny {
                let drow = (rj - r).abs();
                for cj in 0..nt {
                    let mut w = self.rem[(drow * nt + (cj - c).rem_euclid(nt)) as usize];
                    if modulated {
                        w *= self.amp(fi, self.prof_at(rj, cj));
                    }
                    acc += 0.5 * w * (ui - field.values[(rj * nt + cj) as usize]).powi(2);
                }
            }
            let plus = far_plus_stencil + (self.phi_plus[i] / self.scale - far_plus_stencil);
            let minus = far_minus_stencil + (self.phi_minus[i] / self.scale - far_minus_stencil);
            acc += (ui - 1.0).powi(2) * plus + (ui + 1.0).powi(2) * minus;
            total += self.scale * acc;
        }
        total
    }
}

struct OffsetTable {
    vals: Vec<f64>,
    width: i64,
}

impl OffsetTable {
    #[inline]
    fn get(&self, dr: i64, dc: i64) -> f64 {
        self.vals[(dr * self.width + dc) as usize]
    }
}

/// `Σ_{k≥0} F(x0 + k·step)` for the asymptotic pair integral `F(x) = I(x, d)`,
/// by Euler-Maclaurin with the integral done after the substitution `x = x0 v^{-1/(p-1)}`.
fn em_line_tail(pairs: &PairIntegrals, x0: f64, step: f64, d: f64) -> f64 {
    let p = pairs.p;
    let f = |x: f64| pairs.asymptotic(x, d);
    let alpha = 1.0 / (p - 1.0);
    let integral = quad::gauss(32, 0.0, 1.0, |v| {
        if v <= 0.0 {
            return 0.0;
        }
        let x = x0 * v.powf(-alpha);
        // x^{-p} dx = x0^{1-p} alpha dv
        f(x) * x.powf(p) * x0.powf(1.0 - p) * alpha
    });
    let dx = 1e-3 * x0;
    let fp = (f(x0 + dx) - f(x0 - dx)) / (2.0 * dx);
    integral / step + 0.5 * f(x0) - step * fp / 12.0
}

/// `Σ_{d ≥ D}` of the asymptotic whole-row sum.
fn em_row_tail(dim: usize, p: f64, d0: f64) -> f64 {
    // row sum ≈ a d^{-e} + b d^{-e-2}
    let (a, e, b) = if dim == 1 {
        (1.0, p, p * (p + 1.0) / 12.0)
    } else {
        let sp = PI.sqrt();
        let a1 = sp * gamma_fn(0.5 * (p - 1.0)) / gamma_fn(0.5 * p);
        let a2 = p * p / 12.0 * sp * gamma_fn(0.5 * (p + 1.0)) / gamma_fn(0.5 * p + 1.0);
        (a1, p - 1.0, a2)
    };
    let term = |c: f64, e: f64| {
        let integral = c * d0.powf(1.0 - e) / (e - 1.0);
        let f = c * d0.powf(-e);
        let f1 = -c * e * d0.powf(-e - 1.0);
        let f3 = -c * e * (e + 1.0) * (e + 2.0) * d0.powf(-e - 3.0);
        integral + 0.5 * f - f1 / 12.0 + f3 / 720.0
    };
    term(a, e) + term(b, e + 2.0)
}

/// `x ↦ u(x/ε)` on the domain scaled by `ε`: same cell values, `h' = εh`, `M' = εM`, `τ' = ετ`.
pub fn rescale_field(field: &Field, epsilon: f64) -> Result<Field, EnergyError> {
    let d = &field.domain;
    if !(epsilon > 0.0 && epsilon <= d.tau) {
        return Err(EnergyError::Config(format!("epsilon = {epsilon} must lie in (0, tau]")));
    }
    let dir = crate::lattice::Direction::new(d.direction.p.clone(), epsilon * d.tau)?;
    let nd = StripDomain::build(epsilon * d.tau, dir, epsilon * d.m, epsilon * d.h, epsilon * d.buffer)?;
    Ok(Field::new(nd, field.values.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Direction;
    use crate::model::PotentialSpec;

    fn setup(s: f64, p: Vec<i64>) -> (WeightTable, PotentialSpec) {
        let dom = StripDomain::aligned(1.0, Direction::new(p, 1.0).unwrap(), 2.0, 4, 1.0).unwrap();
        let k = KernelSpec::standard(2, s, 1.0).unwrap();
        (WeightTable::build(&k, &dom, 2.0).unwrap(), PotentialSpec::quartic(1.0))
    }

    #[test]
    fn constant_field_only_pays_the_opposite_far_field() {
        let (w, pot) = setup(0.3, vec![0, 1]);
        let u = Field::constant(&w.domain, 1.0);
        let rep = w.total_energy(&pot, &u, &Window::Strip, None).unwrap();
        assert_eq!(rep.kinetic_in, 0.0);
        assert_eq!(rep.potential, 0.0);
        let expected = 4.0 * w.phi_minus.iter().sum::<f64>();
        assert!((rep.kinetic_cross - expected).abs() < 1e-12 * expected);
        let g = w.energy_gradient(&pot, &u, None).unwrap();
        for (gi, pm) in g.iter().zip(&w.phi_minus) {
            assert!((gi - 4.0 * pm).abs() < 1e-12 * pm);
        }
    }

    #[test]
    fn rejects_small_cutoff() {
        let dom = StripDomain::aligned(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 2.0, 4, 1.0).unwrap();
        let k = KernelSpec::standard(2, 0.3, 1.0).unwrap();
        assert!(matches!(WeightTable::build(&k, &dom, 0.5), Err(EnergyError::Config(_))));
    }

    #[test]
    fn strip_paths_agree() {
        for s in [0.25, 0.75] {
            let (w, _) = setup(s, vec![1, 1]);
            let u = Field::from_frame_fn(&w.domain, |t, y| (-(2.0 * (y - 1.0) + 0.3 * (6.0 * t).sin())).tanh());
            let (a, b, _) = w.strip_kinetic(&u.values, None);
            let c = w.strip_kinetic_by_images(&u);
            assert!(((a + b) - c).abs() <= 1e-10 * c, "s={s}: {} vs {c}", a + b);
        }
    }

    #[test]
    fn rescale_identity_and_scaling() {
        let (w, _) = setup(0.3, vec![0, 1]);
        let u = Field::from_frame_fn(&w.domain, |_, y| -(y - 1.0).tanh());
        let same = rescale_field(&u, 1.0).unwrap();
        assert_eq!(same.values, u.values);
        let half = rescale_field(&u, 0.5).unwrap();
        assert_eq!(half.domain.h, 0.5 * u.domain.h);
        assert!(rescale_field(&u, 2.0).is_err());
    }
}
