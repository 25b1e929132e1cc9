//! Discrete periodic strips.
//!
//! Cells live in a frame rotated so that the last axis is `ω/|ω|`: a cell is addressed by a
//! row (normal coordinate) and a column (tangential coordinate, periodic with the orthogonal
//! generator `z = τ(-p₂, p₁)`). Rows below 0 and at or above `ny` are the constant far field.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LatticeError {
    #[error("geometry error: {msg}")]
    Geometry { msg: String, suggested_h: Option<f64> },
    #[error("invalid direction: {0}")]
    InvalidDirection(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("field length {got} does not match {expected} cells")]
    Length { got: usize, expected: usize },
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub p: Vec<i64>,
    pub tau: f64,
}

impl Direction {
    pub fn new(p: Vec<i64>, tau: f64) -> Result<Self, LatticeError> {
        if p.is_empty() || p.len() > 2 {
            return Err(LatticeError::Unsupported("directions are supported for n = 1, 2".into()));
        }
        if p.iter().all(|&c| c == 0) {
            return Err(LatticeError::InvalidDirection("zero direction".into()));
        }
        let g = p.iter().fold(0, |acc, &c| gcd(acc, c));
        if g != 1 {
            return Err(LatticeError::InvalidDirection(format!("gcd of {p:?} is {g}, expected 1")));
        }
        if !(tau > 0.0) {
            return Err(LatticeError::InvalidDirection("tau must be positive".into()));
        }
        Ok(Direction { p, tau })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn p_norm(&self) -> f64 {
        self.p.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }

    /// `ω = τ p`.
    pub fn omega(&self) -> Vec<f64> {
        self.p.iter().map(|&c| self.tau * c as f64).collect()
    }

    pub fn unit(&self) -> Vec<f64> {
        let n = self.p_norm();
        self.p.iter().map(|&c| c as f64 / n).collect()
    }

    /// Integer coordinates of the orthogonal generator `z / τ` (n = 2 only).
    pub fn generator(&self) -> Option<[i64; 2]> {
        (self.dim() == 2).then(|| [-self.p[1], self.p[0]])
    }

    /// Length `|z| = τ|p|` of one tangential period (n = 2), zero for n = 1.
    pub fn period_length(&self) -> f64 {
        if self.dim() == 2 {
            self.tau * self.p_norm()
        } else {
            0.0
        }
    }

    /// Normal displacement `ω·k/|ω|` produced by the lattice shift `τk`.
    pub fn normal_shift(&self, k: &[i64]) -> f64 {
        let dot: i64 = self.p.iter().zip(k).map(|(a, b)| a * b).sum();
        self.tau * dot as f64 / self.p_norm()
    }
}

/// Where a point of space lands: a fundamental cell or one of the far-field half-spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    Cell(usize),
    /// `u ≡ +1`, below the lower buffer.
    Plus,
    /// `u ≡ -1`, above the upper buffer.
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripDomain {
    pub dim: usize,
    pub tau: f64,
    pub direction: Direction,
    /// Strip height, measured along the unit normal.
    pub m: f64,
    pub h: f64,
    pub buffer: f64,
    /// Columns per tangential period (1 when n = 1).
    pub nt: usize,
    /// Rows covering `[-B, M+B]`.
    pub ny: usize,
    tangent: [f64; 2],
    normal: [f64; 2],
}

fn ratio_to_int(a: f64, b: f64) -> Option<usize> {
    let q = a / b;
    let r = q.round();
    ((q - r).abs() <= 1e-9 * q.max(1.0) && r >= 1.0).then_some(r as usize)
}

impl StripDomain {
    pub fn build(tau: f64, direction: Direction, m: f64, h: f64, buffer: f64) -> Result<Self, LatticeError> {
        let geo = |msg: String, suggested_h: Option<f64>| Err(LatticeError::Geometry { msg, suggested_h });
        if !(m > 0.0) || !(h > 0.0) || !(buffer >= 0.0) {
            return geo("need M > 0, h > 0, B >= 0".into(), None);
        }
        if (direction.tau - tau).abs() > 1e-12 * tau {
            return Err(LatticeError::InvalidDirection("direction tau differs from domain tau".into()));
        }
        let dim = direction.dim();
        let nt = if dim == 2 {
            let len = direction.period_length();
            match ratio_to_int(len, h) {
                Some(c) => c,
                None => {
                    let c = (len / h).round().max(1.0);
                    return geo(format!("h = {h} does not divide the period length {len}"), Some(len / c));
                }
            }
        } else {
            1
        };
        let ny = match ratio_to_int(m + 2.0 * buffer, h) {
            Some(r) => r,
            None => {
                let total = m + 2.0 * buffer;
                let c = (total / h).round().max(1.0);
                return geo(format!("h = {h} does not divide M + 2B = {total}"), Some(total / c));
            }
        };
        let (tangent, normal) = if dim == 2 {
            let u = direction.unit();
            ([-u[1], u[0]], [u[0], u[1]])
        } else {
            ([0.0, 0.0], [direction.p[0].signum() as f64, 0.0])
        };
        Ok(StripDomain { dim, tau, direction, m, h, buffer, nt, ny, tangent, normal })
    }

    /// Builds a domain whose cell size makes every lattice shift grid-exact:
    /// `h = τ / (|p| · cells_per_tau)`, with `M` and `B` rounded up to multiples of `h`.
    pub fn aligned(tau: f64, direction: Direction, m: f64, cells_per_tau: usize, buffer: f64) -> Result<Self, LatticeError> {
        let h = tau / (direction.p_norm() * cells_per_tau.max(1) as f64);
        let snap = |v: f64| ((v / h) - 1e-9).ceil().max(0.0) * h;
        Self::build(tau, direction, snap(m).max(h), h, snap(buffer))
    }

    /// The same strip with `m` tangential periods per fundamental domain (the relation `∼_m`).
    pub fn tiled(&self, m: usize) -> Result<Self, LatticeError> {
        if m == 0 {
            return Err(LatticeError::Unsupported("tiling factor must be at least 1".into()));
        }
        if self.dim == 1 && m != 1 {
            return Err(LatticeError::Unsupported("n = 1 strips have no tangential period".into()));
        }
        let mut d = self.clone();
        d.nt *= m;
        Ok(d)
    }

    pub fn n_cells(&self) -> usize {
        self.nt * self.ny
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nt + col
    }

    pub fn row_col(&self, i: usize) -> (usize, usize) {
        (i / self.nt, i % self.nt)
    }

    /// Normal coordinate of the center of a (possibly virtual) row.
    pub fn row_y(&self, row: i64) -> f64 {
        -self.buffer + (row as f64 + 0.5) * self.h
    }

    pub fn col_t(&self, col: i64) -> f64 {
        (col as f64 + 0.5) * self.h
    }

    /// Frame coordinates `(t, y)` of a point.
    pub fn to_frame(&self, x: &[f64]) -> (f64, f64) {
        if self.dim == 1 {
            (0.0, self.normal[0] * x[0])
        } else {
            (
                self.tangent[0] * x[0] + self.tangent[1] * x[1],
                self.normal[0] * x[0] + self.normal[1] * x[1],
            )
        }
    }

    pub fn to_world(&self, t: f64, y: f64) -> Vec<f64> {
        if self.dim == 1 {
            vec![self.normal[0] * y]
        } else {
            vec![
                t * self.tangent[0] + y * self.normal[0],
                t * self.tangent[1] + y * self.normal[1],
            ]
        }
    }

    /// World coordinates of the center of an extended-grid cell.
    pub fn ext_center(&self, row: i64, col: i64) -> Vec<f64> {
        self.to_world(self.col_t(col), self.row_y(row))
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        let (r, c) = self.row_col(i);
        self.ext_center(r as i64, c as i64)
    }

    /// World displacement of a frame offset in cells.
    pub fn offset_world(&self, dcol: i64, drow: i64) -> Vec<f64> {
        self.to_world(dcol as f64 * self.h, drow as f64 * self.h)
    }

    /// Site occupied by an extended-grid cell.
    pub fn ext_site(&self, row: i64, col: i64) -> Site {
        if row < 0 {
            Site::Plus
        } else if row >= self.ny as i64 {
            Site::Minus
        } else {
            Site::Cell(self.index(row as usize, col.rem_euclid(self.nt as i64) as usize))
        }
    }

    /// Extended-grid cell containing a frame point.
    pub fn ext_cell_of(&self, t: f64, y: f64) -> (i64, i64) {
        let row = ((y + self.buffer) / self.h).floor() as i64;
        let col = if self.dim == 2 { (t / self.h).floor() as i64 } else { 0 };
        (row, col)
    }

    pub fn canonical_rep(&self, x: &[f64]) -> Site {
        let (t, y) = self.to_frame(x);
        if y < -self.buffer {
            return Site::Plus;
        }
        if y > self.m + self.buffer {
            return Site::Minus;
        }
        let (row, col) = self.ext_cell_of(t, y);
        self.ext_site(row.min(self.ny as i64 - 1), col)
    }

    /// `x ~ y`: `x - y = τk` with `k` integer and `ω·k = 0`.
    pub fn equivalent(&self, x: &[f64], y: &[f64]) -> bool {
        let mut k = Vec::with_capacity(self.dim);
        for (a, b) in x.iter().zip(y) {
            let q = (a - b) / self.tau;
            if (q - q.round()).abs() > 1e-9 {
                return false;
            }
            k.push(q.round() as i64);
        }
        self.direction.p.iter().zip(&k).map(|(a, b)| a * b).sum::<i64>() == 0
    }

    /// Cell offset `(drow, dcol)` realizing the shift by `τk`, when it is grid-exact.
    pub fn lattice_offset(&self, k: &[i64]) -> Option<(i64, i64)> {
        let kw: Vec<f64> = k.iter().map(|&c| self.tau * c as f64).collect();
        let (t, y) = self.to_frame(&kw);
        let (dr, dc) = (y / self.h, t / self.h);
        let ok = (dr - dr.round()).abs() < 1e-9 && (dc - dc.round()).abs() < 1e-9;
        ok.then(|| (dr.round() as i64, dc.round() as i64))
    }

    /// Images of fundamental cells and far-field patches whose centers lie within `r_cut`
    /// of the center of cell `i`, with exact world displacements.
    pub fn image_enumeration(&self, i: usize, r_cut: f64) -> Vec<(Site, Vec<f64>)> {
        let (r, c) = self.row_col(i);
        let reach = (r_cut / self.h).floor() as i64;
        let treach = if self.dim == 2 { reach } else { 0 };
        let mut out = Vec::new();
        for dr in -reach..=reach {
            for dc in -treach..=treach {
                let d2 = ((dr * dr + dc * dc) as f64) * self.h * self.h;
                if d2 <= r_cut * r_cut {
                    let site = self.ext_site(r as i64 + dr, c as i64 + dc);
                    out.push((site, self.offset_world(dc, dr)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub domain: StripDomain,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(domain: StripDomain, values: Vec<f64>) -> Result<Self, LatticeError> {
        if values.len() != domain.n_cells() {
            return Err(LatticeError::Length { got: values.len(), expected: domain.n_cells() });
        }
        Ok(Field { domain, values })
    }

    pub fn constant(domain: &StripDomain, v: f64) -> Self {
        Field { values: vec![v; domain.n_cells()], domain: domain.clone() }
    }

    /// Samples a function of the frame coordinates `(t, y)` at cell centers.
    pub fn from_frame_fn(domain: &StripDomain, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..domain.n_cells())
            .map(|i| {
                let (r, c) = domain.row_col(i);
                f(domain.col_t(c as i64), domain.row_y(r as i64))
            })
            .collect();
        Field { domain: domain.clone(), values }
    }

    pub fn site_value(&self, site: Site) -> f64 {
        match site {
            Site::Cell(i) => self.values[i],
            Site::Plus => 1.0,
            Site::Minus => -1.0,
        }
    }

    pub fn ext_value(&self, row: i64, col: i64) -> f64 {
        self.site_value(self.domain.ext_site(row, col))
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.site_value(self.domain.canonical_rep(x))
    }

    /// `x ↦ u(x - τk)` on the fundamental domain; exact when the shift is grid-aligned.
    pub fn birkhoff_shift(&self, k: &[i64]) -> Field {
        let d = &self.domain;
        let values = match d.lattice_offset(k) {
            Some((dr, dc)) => (0..d.n_cells())
                .map(|i| {
                    let (r, c) = d.row_col(i);
                    self.ext_value(r as i64 - dr, c as i64 - dc)
                })
                .collect(),
            None => {
                let kw: Vec<f64> = k.iter().map(|&c| d.tau * c as f64).collect();
                (0..d.n_cells())
                    .map(|i| {
                        let x = d.center(i);
                        let src: Vec<f64> = x.iter().zip(&kw).map(|(a, b)| a - b).collect();
                        self.value_at(&src)
                    })
                    .collect()
            }
        };
        Field { domain: d.clone(), values }
    }

    /// CSV dump with world coordinates of cell centers.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(if self.domain.dim == 2 { "x1,x2,u\n" } else { "x1,u\n" });
        for (i, v) in self.values.iter().enumerate() {
            for c in self.domain.center(i) {
                let _ = write!(s, "{c:.16e},");
            }
            let _ = writeln!(s, "{v:.16e}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(p: Vec<i64>) -> StripDomain {
        StripDomain::aligned(1.0, Direction::new(p, 1.0).unwrap(), 4.0, 4, 2.0).unwrap()
    }

    #[test]
    fn cell_count_axis_direction() {
        let d = StripDomain::build(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 4.0, 0.25, 2.0).unwrap();
        assert_eq!((d.nt, d.ny, d.n_cells()), (4, 32, 128));
    }

    #[test]
    fn diagonal_period_and_bad_h() {
        let d = dom(vec![1, 1]);
        assert!((d.direction.period_length() - 2f64.sqrt()).abs() < 1e-15);
        assert!((d.nt as f64 * d.h - 2f64.sqrt()).abs() < 1e-12);
        let e = StripDomain::build(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 4.0, 0.3, 2.0).unwrap_err();
        match e {
            LatticeError::Geometry { suggested_h, .. } => assert!(suggested_h.is_some()),
            other => panic!("{other:?}"),
        }
        assert!(Direction::new(vec![2, 4], 1.0).is_err());
    }

    #[test]
    fn canonical_rep_examples() {
        let d = dom(vec![1, 2]);
        let x = [0.37, -0.21];
        let z = d.direction.generator().unwrap();
        let xz = [x[0] + z[0] as f64, x[1] + z[1] as f64];
        assert_eq!(d.canonical_rep(&x), d.canonical_rep(&xz));
        let far = d.to_world(0.3, d.m + d.buffer + 1.0);
        assert_eq!(d.canonical_rep(&far), Site::Minus);
        let shifted = [x[0] + 1.0, x[1]];
        assert_ne!(d.canonical_rep(&x), d.canonical_rep(&shifted));
    }

    #[test]
    fn equivalence_examples() {
        let d = StripDomain::aligned(1.0, Direction::new(vec![1, 0], 1.0).unwrap(), 4.0, 4, 2.0).unwrap();
        let x = [0.3, 0.4];
        assert!(d.equivalent(&x, &x));
        assert!(d.equivalent(&x, &[0.3, 1.4]));
        assert!(!d.equivalent(&x, &[1.3, 0.4]));
    }

    #[test]
    fn birkhoff_shift_examples() {
        let d = dom(vec![1, 1]);
        let u = Field::from_frame_fn(&d, |_, y| (-(y - 1.0)).tanh());
        assert_eq!(u.birkhoff_shift(&[0, 0]), u);
        let z = d.direction.generator().unwrap();
        let back = u.birkhoff_shift(&z);
        for (a, b) in back.values.iter().zip(&u.values) {
            assert!((a - b).abs() < 1e-14);
        }
        // u decreases along ω, so x ↦ u(x - τk) with ω·k > 0 dominates u
        let down = u.birkhoff_shift(&[1, 0]);
        assert!(down.values.iter().zip(&u.values).all(|(a, b)| a >= b));
        let up = u.birkhoff_shift(&[-1, 0]);
        assert!(up.values.iter().zip(&u.values).all(|(a, b)| a <= b));
    }

    #[test]
    fn images_match_brute_force() {
        let d = dom(vec![0, 1]);
        let i = d.index(5, 1);
        let small = d.image_enumeration(i, 0.5 * d.h);
        assert_eq!(small.len(), 1);
        let one = d.image_enumeration(i, 1.01 * d.h);
        assert_eq!(one.len(), 5);
        let n2 = d.image_enumeration(i, 2.0).len() as f64;
        let n4 = d.image_enumeration(i, 4.0).len() as f64;
        assert!((n4 / n2 - 4.0).abs() < 1.0);
        for (_, disp) in d.image_enumeration(i, 1.3) {
            let r = disp.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r <= 1.3 + d.h * 2f64.sqrt());
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let d = dom(vec![0, 1]);
        let csv = Field::constant(&d, 0.5).to_csv();
        assert!(csv.starts_with("x1,x2,u\n"));
        assert_eq!(csv.lines().count(), d.n_cells() + 1);
    }
}
