//! Level sets, densities, interface measures, clean balls and grid boundary counting.

use crate::lattice::{Field, Site, StripDomain};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("domain mismatch")]
    DomainMismatch,
    #[error("precondition failed: {0}")]
    Precondition(String),
}

/// A set given by one flag per fundamental cell plus one flag per far-field half-space.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMask {
    pub domain: StripDomain,
    pub inside: Vec<bool>,
    pub far_plus: bool,
    pub far_minus: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    Above,
    Below,
    /// `{|u| < θ}`
    Band(f64),
}

impl SetMask {
    pub fn from_fn(domain: &StripDomain, far_plus: bool, far_minus: bool, f: impl Fn(usize) -> bool) -> Self {
        SetMask { domain: domain.clone(), inside: (0..domain.n_cells()).map(f).collect(), far_plus, far_minus }
    }

    pub fn complement(&self) -> Self {
        SetMask {
            domain: self.domain.clone(),
            inside: self.inside.iter().map(|b| !b).collect(),
            far_plus: !self.far_plus,
            far_minus: !self.far_minus,
        }
    }

    /// Measure of the part inside the fundamental domain.
    pub fn measure(&self) -> f64 {
        self.inside.iter().filter(|&&b| b).count() as f64 * self.domain.cell_volume()
    }

    pub fn ext_inside(&self, row: i64, col: i64) -> bool {
        match self.domain.ext_site(row, col) {
            Site::Cell(i) => self.inside[i],
            Site::Plus => self.far_plus,
            Site::Minus => self.far_minus,
        }
    }

    /// `χ_E - χ_{ℝⁿ∖E}` as a field (the far field must match the ±1 convention).
    pub fn indicator_field(&self) -> Result<Field, GeometryError> {
        if !self.far_plus || self.far_minus {
            return Err(GeometryError::Precondition("indicator fields need E to contain the + far field only".into()));
        }
        Ok(Field {
            domain: self.domain.clone(),
            values: self.inside.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(if self.domain.dim == 2 { "x1,x2,inside\n" } else { "x1,inside\n" });
        for (i, b) in self.inside.iter().enumerate() {
            for c in self.domain.center(i) {
                let _ = write!(s, "{c:.16e},");
            }
            let _ = writeln!(s, "{}", u8::from(*b));
        }
        s
    }
}

fn classify(mode: LevelMode, eta: f64, v: f64) -> bool {
    match mode {
        LevelMode::Above => v > eta,
        LevelMode::Below => v < eta,
        LevelMode::Band(theta) => v.abs() < theta,
    }
}

pub fn level_mask(field: &Field, eta: f64, mode: LevelMode) -> SetMask {
    SetMask {
        domain: field.domain.clone(),
        inside: field.values.iter().map(|&v| classify(mode, eta, v)).collect(),
        far_plus: classify(mode, eta, 1.0),
        far_minus: classify(mode, eta, -1.0),
    }
}

/// Extended cells whose centers lie in the open ball `B_R(x0)` (any row).
pub fn ball_cells(domain: &StripDomain, center: &[f64], radius: f64) -> Vec<(i64, i64)> {
    let (t0, y0) = domain.to_frame(center);
    let h = domain.h;
    let r0 = ((y0 - radius + domain.buffer) / h).floor() as i64 - 1;
    let r1 = ((y0 + radius + domain.buffer) / h).ceil() as i64 + 1;
    let (c0, c1) = if domain.dim == 2 {
        (((t0 - radius) / h).floor() as i64 - 1, ((t0 + radius) / h).ceil() as i64 + 1)
    } else {
        (0, 0)
    };
    let mut out = Vec::new();
    for r in r0..=r1 {
        let dy = domain.row_y(r) - y0;
        for c in c0..=c1 {
            let dt = if domain.dim == 2 { domain.col_t(c) - t0 } else { 0.0 };
            if dt * dt + dy * dy < radius * radius {
                out.push((r, c));
            }
        }
    }
    out
}

/// Whether the ball stays within the simulated rows `[-B, M+B]`.
pub fn ball_in_region(domain: &StripDomain, center: &[f64], radius: f64) -> bool {
    let (_, y) = domain.to_frame(center);
    y - radius >= -domain.buffer - 1e-12 && y + radius <= domain.m + domain.buffer + 1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    #[serde(rename = "R")]
    pub r: f64,
    pub value: Option<f64>,
    pub tag: String,
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut s = String::from("R,value,tag\n");
    for row in rows {
        let v = row.value.map_or("nan".to_string(), |v| format!("{v:.16e}"));
        let _ = writeln!(s, "{:.16e},{v},{}", row.r, row.tag);
    }
    s
}

fn range_tag(domain: &StripDomain, base: &str, r: f64) -> String {
    if r > domain.tau / 3.0 {
        format!("{base};outside:R<=xi/3")
    } else {
        base.to_string()
    }
}

/// `(R, |E ∩ B_R| / Rⁿ)` for each radius.
pub fn density_profile(mask: &SetMask, center: &[f64], radii: &[f64]) -> Vec<ProfileRow> {
    let d = &mask.domain;
    let vol = d.cell_volume();
    radii
        .iter()
        .map(|&r| {
            if !ball_in_region(d, center, r) {
                return ProfileRow { r, value: None, tag: "skipped:ball exits region".into() };
            }
            let count = ball_cells(d, center, r).into_iter().filter(|&(row, col)| mask.ext_inside(row, col)).count();
            ProfileRow { r, value: Some(count as f64 * vol / r.powi(d.dim as i32)), tag: range_tag(d, "densest1", r) }
        })
        .collect()
}

/// `(R, |{|u| < θ} ∩ B_R| / R^{n-1})` for each radius.
pub fn interface_profile(field: &Field, theta: f64, center: &[f64], radii: &[f64]) -> Vec<ProfileRow> {
    let d = &field.domain;
    let mask = level_mask(field, 0.0, LevelMode::Band(theta));
    radii
        .iter()
        .map(|&r| {
            if !ball_in_region(d, center, r) {
                return ProfileRow { r, value: None, tag: "skipped:ball exits region".into() };
            }
            let count = ball_cells(d, center, r).into_iter().filter(|&(row, col)| mask.ext_inside(row, col)).count();
            let value = count as f64 * d.cell_volume() / r.powi(d.dim as i32 - 1);
            ProfileRow { r, value: Some(value), tag: range_tag(d, "intdens", r) }
        })
        .collect()
}

/// An axis-aligned cube in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub corner: Vec<f64>,
    pub side: f64,
}

fn subcube_index(cube: &Cube, k: usize, x: &[f64]) -> Option<Vec<usize>> {
    let w = cube.side / k as f64;
    let mut idx = Vec::with_capacity(x.len());
    for (xi, ci) in x.iter().zip(&cube.corner) {
        let q = (xi - ci) / w;
        if q < 0.0 || q >= k as f64 {
            return None;
        }
        idx.push(q.floor() as usize);
    }
    Some(idx)
}

/// Fundamental-domain extended cells with centers in the cube, with their subcube index.
fn cube_cells(mask: &SetMask, cube: &Cube, k: usize) -> Vec<((i64, i64), usize)> {
    let d = &mask.domain;
    let n = d.dim;
    let diag = cube.side * (n as f64).sqrt();
    let mid: Vec<f64> = cube.corner.iter().map(|c| c + 0.5 * cube.side).collect();
    let mut out = Vec::new();
    for (r, c) in ball_cells(d, &mid, 0.5 * diag + d.h) {
        let x = d.ext_center(r, c);
        if let Some(idx) = subcube_index(cube, k, &x) {
            let flat = idx.iter().fold(0, |acc, &v| acc * k + v);
            out.push(((r, c), flat));
        }
    }
    out
}

fn check_resolution(mask: &SetMask, cube: &Cube, k: usize) -> Result<(), GeometryError> {
    if k == 0 || cube.side / (k as f64) < mask.domain.h * (1.0 - 1e-12) {
        return Err(GeometryError::Precondition(format!(
            "subcube side {} is below the cell size {}",
            cube.side / k.max(1) as f64,
            mask.domain.h
        )));
    }
    if cube.corner.len() != mask.domain.dim {
        return Err(GeometryError::Precondition("cube dimension mismatch".into()));
    }
    Ok(())
}

fn mixed_subcubes(mask: &SetMask, cube: &Cube, k: usize) -> Vec<bool> {
    let n = mask.domain.dim;
    let total = k.pow(n as u32);
    let mut has_in = vec![false; total];
    let mut has_out = vec![false; total];
    for ((r, c), s) in cube_cells(mask, cube, k) {
        if mask.ext_inside(r, c) {
            has_in[s] = true;
        } else {
            has_out[s] = true;
        }
    }
    has_in.iter().zip(&has_out).map(|(a, b)| *a && *b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCount {
    pub k: usize,
    pub count: usize,
    pub normalized: f64,
    pub pass: bool,
}

/// Subcubes (of the `kⁿ` partition) containing cells of both phases.
pub fn grid_boundary_count(mask: &SetMask, cube: &Cube, k: usize, c_star: f64) -> Result<BoundaryCount, GeometryError> {
    check_resolution(mask, cube, k)?;
    let count = mixed_subcubes(mask, cube, k).into_iter().filter(|&m| m).count();
    let normalized = count as f64 / (k as f64).powi(mask.domain.dim as i32 - 1);
    Ok(BoundaryCount { k, count, normalized, pass: normalized >= c_star })
}

/// Discrete boundary: cells with an axis neighbor in the other phase.
pub fn is_boundary_cell(mask: &SetMask, row: i64, col: i64) -> bool {
    let here = mask.ext_inside(row, col);
    let mut nbrs = vec![(row - 1, col), (row + 1, col)];
    if mask.domain.dim == 2 {
        nbrs.push((row, col - 1));
        nbrs.push((row, col + 1));
    }
    nbrs.into_iter().any(|(r, c)| mask.ext_inside(r, c) != here)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeFamily {
    pub side: f64,
    pub centers: Vec<Vec<f64>>,
    pub mixed: usize,
}

/// Disjoint side-`r/k` cubes centered at discrete boundary points: one per mixed subcube,
/// thinned to the most populated residue class modulo 3 in each axis.
pub fn boundary_cube_family(mask: &SetMask, cube: &Cube, k: usize) -> Result<CubeFamily, GeometryError> {
    check_resolution(mask, cube, k)?;
    let n = mask.domain.dim;
    let d = &mask.domain;
    let mixed = mixed_subcubes(mask, cube, k);
    let mut chosen: Vec<Option<Vec<f64>>> = vec![None; mixed.len()];
    for ((r, c), s) in cube_cells(mask, cube, k) {
        if mixed[s] && chosen[s].is_none() && is_boundary_cell(mask, r, c) {
            chosen[s] = Some(d.ext_center(r, c));
        }
    }
    let unflat = |mut f: usize| {
        let mut idx = vec![0; n];
        for a in (0..n).rev() {
            idx[a] = f % k;
            f /= k;
        }
        idx
    };
    let classes = 3usize.pow(n as u32);
    let mut buckets: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes];
    for (s, c) in chosen.into_iter().enumerate() {
        if let Some(center) = c {
            let cls = unflat(s).iter().fold(0, |acc, v| acc * 3 + v % 3);
            buckets[cls].push(center);
        }
    }
    let best = buckets.into_iter().max_by_key(|b| b.len()).unwrap_or_default();
    Ok(CubeFamily { side: cube.side / k as f64, centers: best, mixed: mixed.iter().filter(|&&m| m).count() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanBalls {
    pub r1: f64,
    pub z1: Vec<f64>,
    pub r2: f64,
    pub z2: Vec<f64>,
}

fn largest_ball(d: &StripDomain, cells: &[(i64, i64)], phase: &[bool], center: &[f64], radius: f64) -> (f64, Vec<f64>) {
    let (t0, y0) = d.to_frame(center);
    let pos: Vec<(f64, f64)> = cells.iter().map(|&(r, c)| (d.col_t(c), d.row_y(r))).collect();
    let index: std::collections::HashMap<(i64, i64), usize> = cells.iter().enumerate().map(|(k, &rc)| (rc, k)).collect();
    let mut nbrs = vec![(1i64, 0i64), (-1, 0)];
    if d.dim == 2 {
        nbrs.push((0, 1));
        nbrs.push((0, -1));
    }
    // only non-phase cells with a phase neighbor can be nearest
    let blockers: Vec<(f64, f64)> = (0..cells.len())
        .filter(|&k| !phase[k])
        .filter(|&k| {
            let (r, c) = cells[k];
            nbrs.iter().any(|(dr, dc)| index.get(&(r + dr, c + dc)).is_some_and(|&j| phase[j]))
        })
        .map(|k| pos[k])
        .collect();
    let mut best = (0.0, center.to_vec());
    for k in 0..cells.len() {
        if !phase[k] {
            continue;
        }
        let (t, y) = pos[k];
        let mut r = radius - ((t - t0).powi(2) + (y - y0).powi(2)).sqrt();
        for &(bt, by) in &blockers {
            let dist = ((bt - t).powi(2) + (by - y).powi(2)).sqrt();
            if dist < r {
                r = dist;
            }
        }
        if r > best.0 {
            best = (r, d.to_world(t, y));
        }
    }
    best
}

/// Largest balls centered at cell centers and inside `{u > θ} ∩ B_R` and `{u < -θ} ∩ B_R`.
pub fn clean_ball_search(field: &Field, theta: f64, center: &[f64], radius: f64) -> Result<CleanBalls, GeometryError> {
    let d = &field.domain;
    if !ball_in_region(d, center, radius) {
        return Err(GeometryError::Precondition("ball exits the simulated region".into()));
    }
    let cells = ball_cells(d, center, radius);
    let vals: Vec<f64> = cells.iter().map(|&(r, c)| field.ext_value(r, c)).collect();
    let up: Vec<bool> = vals.iter().map(|&v| v > theta).collect();
    let down: Vec<bool> = vals.iter().map(|&v| v < -theta).collect();
    let (r1, z1) = largest_ball(d, &cells, &up, center, radius);
    let (r2, z2) = largest_ball(d, &cells, &down, center, radius);
    Ok(CleanBalls { r1, z1, r2, z2 })
}

/// Normal extent of `{|u| < θ}`, counting whole cells; 0 for an empty band.
pub fn interface_width(field: &Field, theta: f64) -> f64 {
    let d = &field.domain;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, v) in field.values.iter().enumerate() {
        if v.abs() < theta {
            let y = d.row_y(d.row_col(i).0 as i64);
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if lo > hi {
        0.0
    } else {
        hi - lo + d.h
    }
}

/// Normal range `[lo, hi]` (cell faces) of the band `{|u| < θ}`.
pub fn band_extent(field: &Field, theta: f64) -> Option<(f64, f64)> {
    let d = &field.domain;
    let ys = field.values.iter().enumerate().filter(|(_, v)| v.abs() < theta).map(|(i, _)| d.row_y(d.row_col(i).0 as i64));
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    (lo <= hi).then(|| (lo - 0.5 * d.h, hi + 0.5 * d.h))
}

pub fn symmetric_difference_measure(a: &SetMask, b: &SetMask) -> Result<f64, GeometryError> {
    if a.domain != b.domain {
        return Err(GeometryError::DomainMismatch);
    }
    let n = a.inside.iter().zip(&b.inside).filter(|(x, y)| x != y).count();
    Ok(n as f64 * a.domain.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Direction;

    fn dom(h_per_tau: usize) -> StripDomain {
        StripDomain::aligned(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 4.0, h_per_tau, 2.0).unwrap()
    }

    #[test]
    fn level_masks() {
        let d = dom(8);
        let one = Field::constant(&d, 1.0);
        let full = level_mask(&one, 0.0, LevelMode::Above);
        assert!(full.inside.iter().all(|&b| b));
        let step = Field::from_frame_fn(&d, |_, y| if y < 2.0 { 1.0 } else { -1.0 });
        let half = level_mask(&step, 0.0, LevelMode::Above);
        assert!((half.measure() - 0.5 * (d.m + 2.0 * d.buffer)).abs() <= d.h);
        assert_eq!(level_mask(&step, 0.0, LevelMode::Band(0.9)).measure(), 0.0);
        assert!(interface_width(&step, 0.9) <= d.h);
        let zero = Field::constant(&d, 0.0);
        assert!((interface_width(&zero, 0.9) - (d.m + 2.0 * d.buffer)).abs() < 1e-12);
    }

    #[test]
    fn mask_algebra() {
        let d = dom(8);
        let f = Field::from_frame_fn(&d, |t, y| (3.0 * t).sin() - y + 2.0);
        let a = level_mask(&f, 0.0, LevelMode::Above);
        let total = d.n_cells() as f64 * d.cell_volume();
        assert_eq!(a.measure() + a.complement().measure(), total);
        assert_eq!(symmetric_difference_measure(&a, &a).unwrap(), 0.0);
        assert_eq!(symmetric_difference_measure(&a, &a.complement()).unwrap(), total);
    }

    #[test]
    fn half_plane_boundary_count() {
        let d = StripDomain::aligned(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 2.0, 16, 0.0).unwrap();
        let h = d.h;
        let mask = SetMask::from_fn(&d, true, false, |i| d.center(i)[1] <= 0.5 + h / 2.0);
        let cube = Cube { corner: vec![0.0, 0.0], side: 1.0 };
        let bc = grid_boundary_count(&mask, &cube, 4, 1.0).unwrap();
        assert_eq!(bc.count, 4);
        let fam = boundary_cube_family(&mask, &cube, 8).unwrap();
        assert!(fam.centers.len() >= 1);
        assert!(grid_boundary_count(&mask, &cube, 32, 1.0).is_err());
    }

    #[test]
    fn clean_balls_of_a_half_space() {
        let d = dom(16);
        let f = Field::from_frame_fn(&d, |_, y| if y < 2.0 { 1.0 } else { -1.0 });
        let cb = clean_ball_search(&f, 0.5, &[0.5, 2.0], 1.0).unwrap();
        assert!((cb.r1 - 0.5).abs() <= d.h && (cb.r2 - 0.5).abs() <= d.h, "{cb:?}");
        let one = Field::constant(&d, 1.0);
        assert_eq!(clean_ball_search(&one, 0.5, &[0.5, 2.0], 1.0).unwrap().r2, 0.0);
    }
}
