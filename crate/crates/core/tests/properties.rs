mod common;

use common::strip;
use planelike::barrier::Profile;
use planelike::cli::fit_exponent;
use planelike::energy::Window;
use planelike::geometry::{self, LevelMode, SetMask};
use planelike::lattice::{Direction, Field, StripDomain};
use planelike::minimize::{minimize_strip, Constraints, SolveOptions};
use planelike::model::{self, DoubleWell, Kernel, KernelSpec, PotentialFamily, PotentialSpec};
use planelike::perimeter::per_k;
use proptest::prelude::*;

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, dim)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn kernels_are_symmetric_and_periodic(x in point(2), y in point(2), k in prop::collection::vec(-3i64..=3, 2), s in 0.1..0.9f64) {
        for kernel in [KernelSpec::standard(2, s, 1.0).unwrap(), KernelSpec::modulated(2, s, 1.0).unwrap()] {
            prop_assert_eq!(kernel.value(&x, &y), kernel.value(&y, &x));
            let xs: Vec<f64> = x.iter().zip(&k).map(|(a, b)| a + *b as f64).collect();
            let ys: Vec<f64> = y.iter().zip(&k).map(|(a, b)| a + *b as f64).collect();
            let (a, b) = (kernel.value(&x, &y), kernel.value(&xs, &ys));
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs() * 8.0, "{} {}", a, b);
        }
    }

    #[test]
    fn modulated_kernel_stays_in_its_bounds(x in point(2), dir in 0.0..6.3f64, r in 0.01..0.99f64, s in 0.1..0.9f64) {
        let kernel = KernelSpec::modulated(2, s, 1.0).unwrap();
        let y = vec![x[0] + r * dir.cos(), x[1] + r * dir.sin()];
        let scaled = kernel.value(&x, &y) * r.powf(2.0 + 2.0 * s);
        prop_assert!(scaled >= kernel.lambda * (1.0 - 1e-12) && scaled <= kernel.big_lambda * (1.0 + 1e-12));
    }

    #[test]
    fn potential_derivative_matches_differences(x in point(2), r in -0.99..0.99f64, q in any::<bool>()) {
        for family in [PotentialFamily::Quartic, PotentialFamily::Cosine, PotentialFamily::CosineSq, PotentialFamily::PowerD { d: 1.5 }] {
            let w = PotentialSpec::new(family, 0.2, 1.0, q).unwrap();
            let step = 1e-5;
            let fd = (w.value(&x, r + step) - w.value(&x, r - step)) / (2.0 * step);
            let an = w.derivative(&x, r);
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{:?}: {} vs {}", family, fd, an);
        }
    }

    #[test]
    fn gamma_of_does_not_increase(a in 0.0..0.999f64, b in 0.0..0.999f64) {
        let w = PotentialSpec::quartic(1.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(model::gamma_of(&w, hi).unwrap() <= model::gamma_of(&w, lo).unwrap());
    }

    #[test]
    fn fits_recover_power_laws(e in -2.0..3.0f64, c in 0.1..10.0f64, r0 in 0.5..4.0f64) {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| {
            let r = r0 * 1.7f64.powi(k);
            (r, c * r.powf(e))
        }).collect();
        let f = fit_exponent(&pts).unwrap();
        prop_assert!((f.exponent - e).abs() < 1e-10);
        prop_assert!((f.constant / c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn barrier_profile_is_monotone(s in 0.2..0.9f64, lr in 4.0..9.0f64) {
        let p = Profile::new(2f64.powf(lr), s);
        let r = p.r;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let g = p.g(r * k as f64 / 1000.0).0;
            prop_assert!(g >= prev - 1e-15);
            prev = g;
        }
    }
}

fn tilted() -> StripDomain {
    StripDomain::aligned(1.0, Direction::new(vec![1, 2], 1.0).unwrap(), 3.0, 4, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn tangential_shifts_keep_the_canonical_cell(x in point(2), m in -4i64..=4) {
        let d = tilted();
        let g = d.direction.generator().unwrap();
        let y = vec![x[0] + (m * g[0]) as f64, x[1] + (m * g[1]) as f64];
        prop_assert!(d.equivalent(&x, &y));
        prop_assert_eq!(d.canonical_rep(&x), d.canonical_rep(&y));
    }

    #[test]
    fn birkhoff_shift_round_trips(seed in any::<u64>()) {
        let d = StripDomain::aligned(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 4.0, 4, 2.0).unwrap();
        let vals: Vec<f64> = (0..d.n_cells()).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 500.0 - 1.0).collect();
        let u = Field::new(d.clone(), vals).unwrap();
        let back = u.birkhoff_shift(&[0, 1]).birkhoff_shift(&[0, -1]);
        // rows that stayed inside the simulated strip both ways
        let skip = (1.0 / d.h).round() as usize;
        for i in 0..d.n_cells() {
            let (r, _) = d.row_col(i);
            if r >= skip && r + skip < d.ny {
                prop_assert_eq!(back.values[i], u.values[i]);
            }
        }
    }

    #[test]
    fn mask_and_complement_fill_the_domain(bits in prop::collection::vec(any::<bool>(), 64)) {
        let d = StripDomain::aligned(1.0, Direction::new(vec![0, 1], 1.0).unwrap(), 2.0, 4, 1.0).unwrap();
        let m = SetMask::from_fn(&d, true, false, |i| bits[i % bits.len()]);
        let total = d.n_cells() as f64 * d.cell_volume();
        prop_assert_eq!(m.measure() + m.complement().measure(), total);
    }
}

#[test]
fn image_lists_are_symmetric() {
    let d = tilted();
    let r_cut = 1.5;
    for i in (0..d.n_cells()).step_by(7) {
        for (site, disp) in d.image_enumeration(i, r_cut) {
            if let planelike::lattice::Site::Cell(j) = site {
                let back = d.image_enumeration(j, r_cut);
                let found = back.iter().any(|(s, e)| *s == planelike::lattice::Site::Cell(i) && e.iter().zip(&disp).all(|(a, b)| (a + b).abs() < 1e-9));
                assert!(found, "{i} -> {j} has no reverse image");
            }
        }
    }
}

#[test]
fn perimeter_grows_with_the_window() {
    let w = strip(2, 0.25, 1.0, vec![0, 1], 4.0, 4, 2.0);
    let d = &w.domain;
    let u = Field::from_frame_fn(d, |t, y| if y + 0.3 * (6.28 * t).sin() < 2.0 { 1.0 } else { -1.0 });
    let mask = geometry::level_mask(&u, 0.0, LevelMode::Above);
    let center = vec![0.4, 2.0];
    let mut prev = 0.0;
    for r in [0.5, 1.0, 1.5, 2.0] {
        let v = per_k(&w, &mask, &Window::Ball { center: center.clone(), radius: r }).unwrap().per_k;
        assert!(v >= prev, "radius {r}: {v} < {prev}");
        prev = v;
    }
}

#[test]
fn descent_trace_never_increases() {
    let w = strip(2, 0.5, 1.0, vec![1, 1], 6.0, 4, 2.0);
    let pot = PotentialSpec::quartic(1.0);
    let c = Constraints::new(0.9).unwrap();
    let res = minimize_strip(&w, &pot, &c, &SolveOptions::default(), None).unwrap();
    for pair in res.trace.windows(2) {
        assert!(pair[1].f <= pair[0].f * (1.0 + 1e-14), "{} -> {}", pair[0].f, pair[1].f);
    }
    let (lo, hi) = c.bounds(&w.domain);
    for (i, v) in res.field.values.iter().enumerate() {
        assert!(*v >= lo[i] && *v <= hi[i]);
    }
}
