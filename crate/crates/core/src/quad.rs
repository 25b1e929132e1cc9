//! Quadrature helpers: cached Gauss-Legendre rules and adaptive bisection.

use gauss_quad::GaussLegendre;
use std::sync::OnceLock;

const MAX_DEG: usize = 96;

static RULES: [OnceLock<Vec<(f64, f64)>>; MAX_DEG + 1] = [const { OnceLock::new() }; MAX_DEG + 1];

/// Nodes and weights on `[-1, 1]`.
pub fn rule(deg: usize) -> &'static [(f64, f64)] {
    let deg = deg.clamp(2, MAX_DEG);
    RULES[deg].get_or_init(|| {
        GaussLegendre::new(deg)
            .expect("degree >= 2")
            .as_node_weight_pairs()
            .to_vec()
    })
}

pub fn gauss<F: FnMut(f64) -> f64>(deg: usize, a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule(deg).iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Adaptive bisection driven by the gap between a 10- and a 20-point rule.
pub fn adaptive<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, abs_tol: f64, depth: u32) -> f64 {
    let coarse = gauss(10, a, b, &mut *f);
    let fine = gauss(20, a, b, &mut *f);
    if depth == 0 || (fine - coarse).abs() <= abs_tol {
        return fine;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * abs_tol, depth - 1) + adaptive(f, m, b, 0.5 * abs_tol, depth - 1)
}

/// Integral of `f` over `[a, b]` with a geometric grading towards `a`,
/// suited to integrands with an integrable endpoint singularity at `a`.
pub fn graded<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, levels: u32, deg: usize) -> f64 {
    let mut total = 0.0;
    let mut hi = b;
    for _ in 0..levels {
        let lo = a + 0.5 * (hi - a);
        total += gauss(deg, lo, hi, &mut *f);
        hi = lo;
    }
    total + gauss(deg, a, hi, &mut *f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        let v = gauss(4, 0.0, 2.0, |x| x.powi(7));
        assert!((v - 32.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let mut f = |x: f64| (x - 0.3).abs();
        let v = adaptive(&mut f, 0.0, 1.0, 1e-12, 30);
        assert!((v - (0.045 + 0.245)).abs() < 1e-10);
    }

    #[test]
    fn graded_handles_endpoint_singularity() {
        let mut f = |x: f64| x.powf(-0.5);
        let v = graded(&mut f, 0.0, 1.0, 60, 12);
        assert!((v - 2.0).abs() < 1e-6);
    }
}
