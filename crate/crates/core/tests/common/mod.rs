#![allow(dead_code)]

use planelike::energy::WeightTable;
use planelike::lattice::{Direction, StripDomain};
use planelike::model::{KernelSpec, PotentialSpec};
use statrs::function::gamma::gamma;

const XK: [f64; 8] = [
    0.991455371120813, 0.949107912342759, 0.864864423359769, 0.741531185599394,
    0.586087235467691, 0.405845151377397, 0.207784955007898, 0.0,
];
const WK: [f64; 8] = [
    0.022935322010529, 0.063092092629979, 0.104790010322250, 0.140653259715525,
    0.169004726639267, 0.190350578064785, 0.204432940075298, 0.209482141084728,
];
const WG: [f64; 4] = [0.129484966168870, 0.279705391489277, 0.381830050505119, 0.417959183673469];

/// Gauss-Kronrod 7/15 pair on [a, b]: (kronrod, |kronrod - gauss|).
fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let d = hw * XK[j];
        let s = f(c - d) + f(c + d);
        k += WK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * hw, ((k - g) * hw).abs())
}

/// Recursive adaptive Gauss-Kronrod with an absolute tolerance.
pub fn adapt(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, e) = gk15(f, a, b);
    if e <= tol.max(1e-14 * v.abs()) || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive integral over [a, b] split at the interior points `cuts`, to relative accuracy
/// `rel` of each piece.
pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, cuts: &[f64], rel: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(cuts.iter().copied().filter(|&c| c > a && c < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2)
        .map(|w| {
            let rough = gk15(f, w[0], w[1]).0.abs();
            adapt(f, w[0], w[1], rel * rough + 1e-300, 30)
        })
        .sum()
}

/// Brute-force `∫_{C_a} ∫_{C_b} |x - y|^{-p} (|x - y|² / h²)^{reg}` for axis-aligned cells of side
/// `h` whose centers differ by `d`, via the exact change to the difference variable
/// `z = y - x` with tent weight `Π (h - |z_k - d_k|)`.
pub fn pair_oracle(d: &[f64], h: f64, dim: usize, s: f64, regularized: bool) -> f64 {
    let p = dim as f64 + 2.0 * s;
    let m = if regularized { 2.0 } else { 0.0 };
    let tol = 1e-9;
    let kern = move |r2: f64| r2.powf(0.5 * (m - p)) / if regularized { h * h } else { 1.0 };
    match dim {
        1 => {
            let mut f = |z: f64| (h - (z - d[0]).abs()).max(0.0) * kern(z * z);
            integrate(&mut f, d[0] - h, d[0] + h, &[0.0, d[0]], tol)
        }
        _ => {
            let mut outer = |z1: f64| {
                let w1 = (h - (z1 - d[0]).abs()).max(0.0);
                if w1 == 0.0 {
                    return 0.0;
                }
                let mut inner = |z2: f64| (h - (z2 - d[1]).abs()).max(0.0) * kern(z1 * z1 + z2 * z2);
                w1 * integrate(&mut inner, d[1] - h, d[1] + h, &[0.0, d[1]], tol)
            };
            integrate(&mut outer, d[0] - h, d[0] + h, &[0.0, d[0]], tol)
        }
    }
}

/// `∫_{ℝⁿ} (1 - cos z₁) |z|^{-n-2s} dz`.
pub fn cos_symbol(dim: usize, s: f64) -> f64 {
    let line = 2.0 * gamma(1.0 - 2.0 * s) * (std::f64::consts::PI * s).cos() / (2.0 * s);
    line * transverse(dim, s)
}

/// `∫_{ℝ^{n-1}} (1 + |w|²)^{-(n+2s)/2} dw`.
pub fn transverse(dim: usize, s: f64) -> f64 {
    if dim == 1 {
        1.0
    } else {
        std::f64::consts::PI.sqrt() * gamma(0.5 + s) / gamma(1.0 + s)
    }
}

pub fn strip(dim: usize, s: f64, tau: f64, p: Vec<i64>, m: f64, cells: usize, buffer: f64) -> WeightTable {
    let k = KernelSpec::standard(dim, s, tau).unwrap();
    let dom = StripDomain::aligned(tau, Direction::new(p, tau).unwrap(), m, cells, buffer).unwrap();
    let r_cut = (4.0 * dom.h).max(2.0 * tau);
    WeightTable::build(&k, &dom, r_cut).unwrap()
}

pub fn quartic(tau: f64) -> PotentialSpec {
    PotentialSpec::quartic(tau)
}
