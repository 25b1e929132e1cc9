//! Cell-pair integrals of the homogeneous kernel on unit cells.
//!
//! For unit cubes `C_0` and `C_o = C_0 + o`,
//! `∫_{C_0}∫_{C_o} |x-y|^{-p} dx dy = ∫_{[-1,1]^n} g(t) |o+t|^{-p} dt` with the tent
//! `g(t) = Π (1-|t_k|)`. The tent is polynomial on each orthant, and for `|o|_∞ ≤ 1` the
//! singular point `t = -o` is an orthant corner, where the radial integral is done in closed
//! form. The self pair always diverges and face-adjacent pairs diverge for `s ≥ 1/2`; those
//! use the second-moment weight `∫∫ K |x-y|^2 / h^2`.

use crate::quad;

/// Offsets with `|o|_∞` up to this bound use the full quadrature; beyond it the
/// moment expansion is accurate to `O(|o|^{-6})` relative.
pub const EXACT_REACH: i64 = 24;

#[derive(Debug, Clone)]
pub struct PairIntegrals {
    pub dim: usize,
    pub s: f64,
    /// `n + 2s`.
    pub p: f64,
    table: Vec<f64>,
}

/// True when the pair weight uses the second-moment convention.
pub fn is_regularized(dim: usize, s: f64, a: i64, b: i64) -> bool {
    let (a, b) = canon(a, b);
    let face = match dim {
        1 => a == 1,
        _ => a == 1 && b == 0,
    };
    (a == 0 && b == 0) || (face && s >= 0.5)
}

fn canon(a: i64, b: i64) -> (i64, i64) {
    let (a, b) = (a.abs(), b.abs());
    if a >= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn tri(a: i64) -> usize {
    (a * (a + 1) / 2) as usize
}

impl PairIntegrals {
    pub fn new(dim: usize, s: f64) -> Self {
        let p = dim as f64 + 2.0 * s;
        let mut table = Vec::new();
        if dim == 1 {
            for a in 0..=EXACT_REACH {
                table.push(exact_1d(s, a));
            }
        } else {
            for a in 0..=EXACT_REACH {
                for b in 0..=a {
                    table.push(exact_2d(s, a, b));
                }
            }
        }
        PairIntegrals { dim, s, p, table }
    }

    /// Unit-cell pair integral for the cell offset `(a, b)`; when n = 1 the offset is
    /// whichever of the two is nonzero.
    pub fn value(&self, a: i64, b: i64) -> f64 {
        if self.dim == 1 {
            let a = a.abs().max(b.abs());
            return if a <= EXACT_REACH { self.table[a as usize] } else { self.asymptotic(a as f64, 0.0) };
        }
        let (a, b) = canon(a, b);
        if a <= EXACT_REACH {
            self.table[tri(a) + b as usize]
        } else {
            self.asymptotic(a as f64, b as f64)
        }
    }

    /// Moment expansion of the tent average of `|o+t|^{-p}` through fourth order
    /// (per-coordinate moments `E t² = 1/6`, `E t⁴ = 1/15`, `E t₁²t₂² = 1/36`).
    pub fn asymptotic(&self, a: f64, b: f64) -> f64 {
        let z = a * a + b * b;
        let p = self.p;
        let n = self.dim as f64;
        let second = p * (p + 2.0 - n) / (12.0 * z);
        let fourth = if self.dim == 1 {
            p * (p + 1.0) * (p + 2.0) * (p + 3.0) / (360.0 * z * z)
        } else {
            // f = F(z): ∂₁²∂₂² f = 4F'' + 8zF''' + 16a²b²F'''', here divided by F
            let h = 0.5 * p;
            let f2 = h * (h + 1.0) / (z * z);
            let f3 = -h * (h + 1.0) * (h + 2.0) / (z * z * z);
            let f4 = h * (h + 1.0) * (h + 2.0) * (h + 3.0) / (z * z * z * z);
            let mixed = 4.0 * f2 + 8.0 * z * f3 + 16.0 * a * a * b * b * f4;
            p * p * (p + 2.0) * (p + 2.0) / (360.0 * z * z) + mixed / 720.0
        };
        z.powf(-0.5 * p) * (1.0 + second + fourth)
    }
}

/// `∫ (1-|t|) |a+t|^q dt` over `[-1,1]`.
fn exact_1d(s: f64, a: i64) -> f64 {
    let p = 1.0 + 2.0 * s;
    let q = if is_regularized(1, s, a, 0) { 2.0 - p } else { -p };
    let af = a as f64;
    match a {
        // ∫_{-1}^{1} (1-|t|)|t|^q = 2 (1/(q+1) - 1/(q+2))
        0 => 2.0 * (1.0 / (q + 1.0) - 1.0 / (q + 2.0)),
        // left half has the singular point at t = -1 where the tent is (1+t)
        1 => {
            let left = 1.0 / (q + 2.0);
            let right = quad::gauss(24, 0.0, 1.0, |t| (1.0 - t) * (af + t).powf(q));
            left + right
        }
        _ => {
            quad::gauss(24, -1.0, 0.0, |t| (1.0 + t) * (af + t).powf(q))
                + quad::gauss(24, 0.0, 1.0, |t| (1.0 - t) * (af + t).powf(q))
        }
    }
}

fn exact_2d(s: f64, a: i64, b: i64) -> f64 {
    let p = 2.0 + 2.0 * s;
    let q = if is_regularized(2, s, a, b) { 2.0 - p } else { -p };
    let o = [a as f64, b as f64];
    let mut total = 0.0;
    for s1 in [-1.0f64, 1.0] {
        for s2 in [-1.0f64, 1.0] {
            // orthant t1 ∈ s1·[0,1], t2 ∈ s2·[0,1]; the singular point -o is a corner iff it lies inside
            let inside = |oc: f64, sg: f64| oc == 0.0 || (oc == 1.0 && sg < 0.0);
            if inside(o[0], s1) && inside(o[1], s2) {
                total += corner_orthant(q, [-o[0], -o[1]], [s1, s2]);
            } else {
                let lo1 = if s1 < 0.0 { -1.0 } else { 0.0 };
                let lo2 = if s2 < 0.0 { -1.0 } else { 0.0 };
                let gap = |oc: f64, lo: f64| (oc + lo).max(-(oc + lo + 1.0)).max(0.0);
                let far = gap(o[0], lo1).hypot(gap(o[1], lo2));
                let m = if far < 1.5 {
                    24
                } else if far < 4.0 {
                    14
                } else if far < 10.0 {
                    8
                } else {
                    6
                };
                total += quad::gauss(m, lo1, lo1 + 1.0, |t1| {
                    quad::gauss(m, lo2, lo2 + 1.0, |t2| {
                        let r2 = (o[0] + t1).powi(2) + (o[1] + t2).powi(2);
                        (1.0 - t1.abs()) * (1.0 - t2.abs()) * r2.powf(0.5 * q)
                    })
                });
            }
        }
    }
    total
}

/// Orthant whose corner is the singular point `c`; radial integral in closed form.
fn corner_orthant(q: f64, c: [f64; 2], signs: [f64; 2]) -> f64 {
    // local coordinates t_k = c_k + e_k α_k with α ∈ [0,1]^2 pointing into the orthant
    let mut coef = [[0.0; 2]; 2];
    for k in 0..2 {
        let e = if c[k] == 0.0 { signs[k] } else { -c[k] };
        // 1 - |t_k| = 1 - signs_k (c_k + e α) on this orthant
        coef[k] = [1.0 - signs[k] * c[k], -signs[k] * e];
    }
    let [c1, d1] = coef[0];
    let [c2, d2] = coef[1];
    let radial = |phi: f64| {
        let (sn, cs) = phi.sin_cos();
        let rmax = 1.0 / cs.max(sn);
        let terms = [c1 * c2, c1 * d2 * sn + d1 * c2 * cs, d1 * d2 * cs * sn];
        let mut acc = 0.0;
        for (k, a) in terms.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            let e = q + 2.0 + k as f64;
            assert!(e > 0.0, "divergent corner term");
            acc += a * rmax.powf(e) / e;
        }
        acc
    };
    let quarter = std::f64::consts::FRAC_PI_4;
    quad::gauss(32, 0.0, quarter, radial) + quad::gauss(32, quarter, 2.0 * quarter, radial)
}
