use planelike::barrier::{barrier_slide_test, build_barrier, BarrierFn};
use planelike::energy::WeightTable;
use planelike::lattice::{Direction, Field, StripDomain};
use planelike::minimize::{minimize_strip, project, Constraints, SolveOptions};
use planelike::model::{KernelSpec, PotentialSpec};

fn setup() -> (WeightTable, PotentialSpec, Constraints, BarrierFn) {
    let k = KernelSpec::standard(1, 0.75, 1.0).unwrap();
    let d = StripDomain::aligned(1.0, Direction::new(vec![1], 1.0).unwrap(), 40.0, 4, 4.0).unwrap();
    let w = WeightTable::build(&k, &d, 2.0).unwrap();
    let b = build_barrier(&k, 80.0, 30.0).unwrap();
    (w, PotentialSpec::quartic(1.0), Constraints::new(0.9).unwrap(), b)
}

#[test]
fn barrier_above_the_field_changes_nothing() {
    let (w, pot, c, b) = setup();
    let u = project(&c, &Field::constant(&w.domain, -1.0));
    let rep = barrier_slide_test(&w, &pot, &c, &u, &b, &[30.0], Some(8.0)).unwrap();
    assert_eq!(rep.cells_changed, 0);
    assert_eq!(rep.defect, 0.0);
    assert!(rep.pass);
}

#[test]
fn minimizer_survives_the_slide() {
    let (w, pot, c, b) = setup();
    let res = minimize_strip(&w, &pot, &c, &SolveOptions::default(), None).unwrap();
    assert!(res.converged);
    let rep = barrier_slide_test(&w, &pot, &c, &res.field, &b, &[20.0], Some(20.0)).unwrap();
    assert!(rep.cells_changed > 0);
    assert!(rep.pass, "defect {}", rep.defect);
}

#[test]
fn raised_bump_is_detected() {
    let (w, pot, c, b) = setup();
    let res = minimize_strip(&w, &pot, &c, &SolveOptions::default(), None).unwrap();
    let d = &w.domain;
    let bumped: Vec<f64> = (0..d.n_cells())
        .map(|i| {
            let y = d.center(i)[0];
            if (y - 30.0).abs() < 2.0 { 0.9 } else { res.field.values[i] }
        })
        .collect();
    let u = Field::new(d.clone(), bumped).unwrap();
    let rep = barrier_slide_test(&w, &pot, &c, &u, &b, &[30.0], Some(6.0)).unwrap();
    assert!(rep.defect < 0.0 && !rep.pass, "defect {}", rep.defect);
}
