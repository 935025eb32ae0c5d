use stablenorm::cell_solver::{solve_cell, CellSolution, SolverParams};
use stablenorm::grid::{Grid, TorusGrid, VectorField};
use stablenorm::metric::{MediumSpec, PeriodicMetric};
use stablenorm::planelike::*;

fn solve(spec: MediumSpec, n: usize, p: [f64; 2]) -> (PeriodicMetric, CellSolution) {
    let m = PeriodicMetric::new(&spec, 2).unwrap();
    let g = TorusGrid::new(2, n).unwrap();
    let params = SolverParams::default().with_tol_gap(1e-4).with_max_iters(100_000);
    let sol = solve_cell(&m, &g, &p, &params).unwrap();
    assert!(sol.certified, "{p:?} did not certify");
    (m, sol)
}

fn laminate() -> MediumSpec {
    MediumSpec::laminate(1, 1.0, 2.0, 0.5)
}

#[test]
fn laminate_interface_stays_in_the_cheap_layer() {
    let (_, sol) = solve(laminate(), 32, [0.0, 1.0]);
    let e = extract_planelike(&sol, 0.0, 4).unwrap();
    let h = e.h();
    assert!(e.slab_width() <= 0.25 + 2.0 * h, "{}", e.slab_width());
    for k in e.boundary_cells() {
        let y = e.center(k)[1];
        let frac = y - y.floor();
        assert!(frac < 0.5 + h, "boundary cell at y = {y}");
    }
    let slab = slab_report(&sol, 0.0, 4).unwrap();
    assert!(slab.finite && slab.stable);
}

#[test]
fn birkhoff_holds_for_every_solve() {
    for spec in [laminate(), MediumSpec::smooth_trig(1.5, 0.5)] {
        for p in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]] {
            let (_, sol) = solve(spec.clone(), 16, p);
            for s in [-0.4, 0.0, 0.3] {
                let e = extract_planelike(&sol, s, 8).unwrap();
                let r = check_birkhoff(&e, 3).unwrap();
                assert!(r.pass, "{p:?} s={s}");
                assert_eq!(r.checks.len(), 48);
                let slab = slab_report(&sol, s, 4).unwrap();
                assert!(slab.finite && slab.stable, "{p:?}: {slab:?}");
            }
        }
    }
}

#[test]
fn gap_fraction_separates_kink_from_foliation() {
    let (_, e2) = solve(laminate(), 32, [0.0, 1.0]);
    let lam = lamination_coverage(&e2, default_eta(&e2.p)).unwrap();
    assert!((lam.gap_fraction - 0.5).abs() < 0.1, "{}", lam.gap_fraction);
    assert_eq!(lam.components.len(), 1);
    assert!((lam.gap_fraction + lam.coverage_fraction - 1.0).abs() < 1e-15);
    let (_, e1) = solve(laminate(), 32, [1.0, 0.0]);
    let lam = lamination_coverage(&e1, default_eta(&e1.p)).unwrap();
    assert_eq!(lam.gap_fraction, 0.0);
}

#[test]
fn solver_calibration_residual_is_bounded_by_the_gap() {
    for (spec, p) in [
        (laminate(), [0.0, 1.0]),
        (laminate(), [1.0, 1.0]),
        (MediumSpec::smooth_trig(1.5, 0.5), [2.0, 1.0]),
    ] {
        let (m, sol) = solve(spec, 16, p);
        let r = check_calibration(&m, &sol, default_eta(&sol.p)).unwrap();
        assert!(
            r.relative_residual <= 5.0 * r.certified_relative_gap,
            "{p:?}: {} vs {}",
            r.relative_residual,
            r.certified_relative_gap
        );
    }
}

#[test]
fn explicit_laminate_calibration_is_exact_in_the_cheap_layer() {
    let (m, sol) = solve(laminate(), 32, [0.0, 1.0]);
    let g = sol.grid;
    let cells = g.cells();
    let mut values = vec![0.0; 2 * cells];
    values[cells..].iter_mut().for_each(|z| *z = 1.0);
    let z = VectorField::from_values(Grid::Torus(g), values).unwrap();
    let r = calibration_residual(&m, &sol, &z, default_eta(&sol.p)).unwrap();
    let mut x = [0.0; 2];
    let mut cheap = 0;
    for c in &r.cells {
        g.center(c.cell, &mut x);
        if x[1] < 0.5 {
            cheap += 1;
            assert!(c.residual <= 1e-10, "cell {}: {}", c.cell, c.residual);
        }
    }
    assert_eq!(cheap, cells / 2);
}

#[test]
fn independent_homogeneous_solves_are_ordered() {
    let (_, a) = solve(MediumSpec::homogeneous(), 16, [1.0, 1.0]);
    let params = SolverParams::default().with_tol_gap(1e-2);
    let m = PeriodicMetric::new(&MediumSpec::homogeneous(), 2).unwrap();
    let b = solve_cell(&m, &TorusGrid::new(2, 16).unwrap(), &[1.0, 1.0], &params).unwrap();
    let ea = extract_planelike(&a, 0.0, 4).unwrap();
    let eb = extract_planelike(&b, 0.0, 4).unwrap();
    let o = check_ordering(&ea, &eb).unwrap();
    assert!(o.nested_up_to(ea.boundary_cells().len()), "{o:?}");
}
