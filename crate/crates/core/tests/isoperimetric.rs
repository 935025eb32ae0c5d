use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stablenorm::grid::{BitMask, BoxGrid, Grid, ScalarField};
use stablenorm::isoperimetric::*;
use stablenorm::metric::{MediumSpec, PeriodicMetric};
use stablenorm::stable_norm::wulff_from_fn;

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn metric(spec: MediumSpec) -> PeriodicMetric {
    PeriodicMetric::new(&spec, 2).unwrap()
}

fn mask_from(grid: BoxGrid, cells: Vec<bool>) -> BitMask {
    BitMask {
        grid: Grid::Box(grid),
        cells,
    }
}

fn random_mask(grid: BoxGrid, rng: &mut ChaCha8Rng, p: f64) -> BitMask {
    mask_from(grid, (0..grid.cells()).map(|_| rng.gen_bool(p)).collect())
}

/// Forward differences on the lattice `[-1, n)²` with zero outside the box,
/// written out cell by cell.
fn stencil_energy(m: &PeriodicMetric, grid: &BoxGrid, mask: &BitMask) -> f64 {
    let n = grid.n() as isize;
    let h = grid.h();
    let chi = |a: isize, b: isize| {
        if (0..n).contains(&a) && (0..n).contains(&b) && mask.cells[(b * n + a) as usize] {
            1.0
        } else {
            0.0
        }
    };
    let mut total = 0.0;
    for j in -1..n {
        for i in -1..n {
            let c = chi(i, j);
            let d = [(chi(i + 1, j) - c) / h, (chi(i, j + 1) - c) / h];
            let x = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
            total += h * h * m.eval(&x, &d);
        }
    }
    total
}

/// Minimum over all `k`-cell masks, by plain recursion.
fn exhaustive(m: &PeriodicMetric, grid: &BoxGrid, k: usize, bulk: Option<&ScalarField>) -> f64 {
    fn rec(
        m: &PeriodicMetric,
        grid: &BoxGrid,
        bulk: Option<&ScalarField>,
        cells: &mut Vec<bool>,
        left: usize,
        best: &mut f64,
    ) {
        let i = cells.len();
        if i == grid.cells() {
            if left == 0 {
                let e = set_energy(m, grid, &mask_from(*grid, cells.clone()), bulk).unwrap();
                *best = best.min(e);
            }
            return;
        }
        if grid.cells() - i < left {
            return;
        }
        if left > 0 {
            cells.push(true);
            rec(m, grid, bulk, cells, left - 1, best);
            cells.pop();
        }
        cells.push(false);
        rec(m, grid, bulk, cells, left, best);
        cells.pop();
    }
    let mut best = f64::INFINITY;
    rec(m, grid, bulk, &mut Vec::new(), k, &mut best);
    best
}

#[test]
fn mask_energy_matches_a_hand_written_stencil() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for spec in [
        MediumSpec::homogeneous(),
        MediumSpec::laminate(1, 1.0, 2.0, 0.5),
        MediumSpec::smooth_trig(1.5, 0.5),
    ] {
        let m = metric(spec);
        for n in [3, 6, 11] {
            let grid = BoxGrid::with_side(n, 1.3).unwrap();
            for _ in 0..10 {
                let mask = random_mask(grid, &mut rng, 0.4);
                let got = set_energy(&m, &grid, &mask, None).unwrap();
                let want = stencil_energy(&m, &grid, &mask);
                assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
            }
        }
    }
}

#[test]
fn stencil_values_of_simple_sets() {
    let m = metric(MediumSpec::homogeneous());
    let n = 8;
    let h = 1.0 / 8.0;
    let grid = BoxGrid::new(n, h).unwrap();
    let empty = BitMask::empty(grid);
    assert_eq!(set_energy(&m, &grid, &empty, None).unwrap(), 0.0);

    let mut single = BitMask::empty(grid);
    single.cells[3 * n + 4] = true;
    let e = set_energy(&m, &grid, &single, None).unwrap();
    assert!((e - (2.0 + SQRT2) * h).abs() < 1e-14, "{e}");

    let full = mask_from(grid, vec![true; n * n]);
    let e = set_energy(&m, &grid, &full, None).unwrap();
    let want = h * (4.0 * n as f64 - 2.0 + SQRT2);
    assert!((e - want).abs() < 1e-13, "{e} vs {want}");
}

#[test]
fn brute_force_agrees_with_plain_recursion() {
    let m = metric(MediumSpec::laminate(0, 1.0, 2.0, 0.5));
    let grid = BoxGrid::with_side(4, 1.0).unwrap();
    let h2 = grid.h() * grid.h();
    for k in [1, 4, 7] {
        let (mask, e) = brute_force_iso(&m, &grid, k as f64 * h2, None).unwrap();
        assert_eq!(mask.count(), k);
        assert!((set_energy(&m, &grid, &mask, None).unwrap() - e).abs() < 1e-12);
        let want = exhaustive(&m, &grid, k, None);
        assert!((e - want).abs() < 1e-12, "k={k}: {e} vs {want}");
    }
}

#[test]
fn solver_matches_brute_force_on_random_small_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs = [
        MediumSpec::homogeneous(),
        MediumSpec::laminate(1, 1.0, 3.0, 0.5),
        MediumSpec::smooth_trig(1.5, 0.6),
    ];
    for trial in 0..8 {
        let m = metric(specs[trial % specs.len()].clone());
        let n = 4 + trial % 2;
        let side = rng.gen_range(0.8..2.0);
        let grid = BoxGrid::with_side(n, side).unwrap();
        let k = rng.gen_range(2..n * n - 2);
        let v = k as f64 * grid.h() * grid.h();
        let mut params = IsoParams::constrained(n, side, v);
        params.seed = trial as u64;
        let r = solve_iso(&m, &params, None).unwrap();
        let (_, best) = brute_force_iso(&m, &grid, v, None).unwrap();
        assert_eq!(r.mask().count(), k);
        assert!(r.certified, "trial {trial}");
        assert!((r.energy - best).abs() <= 1e-9, "trial {trial}: {} vs {best}", r.energy);
        assert!(r.relaxed_energy <= r.energy + 1e-9);
    }
}

#[test]
fn full_volume_returns_the_full_box() {
    let m = metric(MediumSpec::homogeneous());
    let grid = BoxGrid::with_side(6, 1.5).unwrap();
    let r = solve_iso(&m, &IsoParams::constrained(6, 1.5, 1.5 * 1.5), None).unwrap();
    assert!(r.mask().cells.iter().all(|c| *c));
    let full = mask_from(grid, vec![true; 36]);
    assert!((r.energy - set_energy(&m, &grid, &full, None).unwrap()).abs() < 1e-12);
}

#[test]
fn penalized_solver_matches_brute_force() {
    let m = metric(MediumSpec::laminate(1, 1.0, 2.0, 0.5));
    let grid = BoxGrid::with_side(4, 1.0).unwrap();
    for (v, mu) in [(0.25, 40.0), (0.4, 10.0), (0.6, 3.0)] {
        let r = solve_penalized(&m, &IsoParams::penalized(4, 1.0, v, mu), None).unwrap();
        let (mask, best) = brute_force_penalized(&m, &grid, v, mu, None).unwrap();
        let got = r.energy + mu * (r.volume - v).abs();
        let want = set_energy(&m, &grid, &mask, None).unwrap() + mu * (mask.volume() - v).abs();
        assert!((want - best).abs() < 1e-12);
        assert!((got - best).abs() < 1e-9, "v={v} mu={mu}: {got} vs {best}");
    }
}

#[test]
fn small_penalty_prefers_the_empty_set() {
    let m = metric(MediumSpec::homogeneous());
    let r = solve_penalized(&m, &IsoParams::penalized(8, 2.0, 0.5, 0.01), None).unwrap();
    assert_eq!(r.mask().count(), 0);
    assert_eq!(r.energy, 0.0);
}

#[test]
fn bulk_term_shifts_energy_by_at_most_its_sup_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = metric(MediumSpec::smooth_trig(1.5, 0.5));
    let grid = BoxGrid::with_side(5, 1.0).unwrap();
    let g = recentred_bulk(grid, (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let sup = g.values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let empty = BitMask::empty(grid);
    assert_eq!(set_energy(&m, &grid, &empty, Some(&g)).unwrap(), 0.0);
    for _ in 0..20 {
        let mask = random_mask(grid, &mut rng, 0.5);
        let with = set_energy(&m, &grid, &mask, Some(&g)).unwrap();
        let without = set_energy(&m, &grid, &mask, None).unwrap();
        assert!((with - without).abs() <= sup * mask.volume() + 1e-12);
    }
    let v = 9.0 * grid.h() * grid.h();
    let (_, plain) = brute_force_iso(&m, &grid, v, None).unwrap();
    let (_, tilted) = brute_force_iso(&m, &grid, v, Some(&g)).unwrap();
    assert!((plain - tilted).abs() <= sup * v + 1e-12);
    let mut params = IsoParams::constrained(5, 1.0, v);
    params.bulk = Some(BulkSpec {
        amplitude: 1.0,
        values: Some(g.values.clone()),
        file: None,
    });
    let r = solve_iso(&m, &params, Some(&g)).unwrap();
    assert!((r.energy - tilted).abs() < 1e-9, "{} vs {tilted}", r.energy);
}

#[test]
fn translated_wulff_raster_has_no_shape_error() {
    let disc = wulff_from_fn(512, |q| q[0].hypot(q[1])).unwrap();
    let n = 64;
    let grid = BoxGrid::with_side(n, 4.0).unwrap();
    let area = std::f64::consts::PI * 0.64;
    let r = (area / std::f64::consts::PI).sqrt();
    let c = [1.7, 2.3];
    let cells = (0..grid.cells())
        .map(|i| {
            let x = grid.center(i);
            (x[0] - c[0]).hypot(x[1] - c[1]) <= r
        })
        .collect();
    let mask = mask_from(grid, cells);
    let sm = shape_metrics(&mask, &disc, area).unwrap();
    assert!(sm.symmetric_difference < 0.02, "{}", sm.symmetric_difference);
    assert!(sm.hausdorff < 1.5 * grid.h(), "{}", sm.hausdorff);
    let wc = [sm.centroid_shift[0], sm.centroid_shift[1]];
    assert!((wc[0] - c[0]).abs() < grid.h() && (wc[1] - c[1]).abs() < grid.h(), "{wc:?}");
}

#[test]
fn band_refinement_recovers_the_euclidean_disc() {
    let m = metric(MediumSpec::homogeneous());
    let v = std::f64::consts::PI * 0.64;
    let mut params = IsoParams::constrained(64, 4.0, v);
    params.band = Some(Band::default());
    let r = solve_iso(&m, &params, None).unwrap();
    let disc = wulff_from_fn(1024, |q| q[0].hypot(q[1])).unwrap();
    let sm = shape_metrics(r.mask(), &disc, v).unwrap();
    assert!(r.certified);
    assert_eq!(r.components, 1);
    assert!(!r.diameter.unwrap().touches_wall);
    assert!(sm.symmetric_difference <= 0.05, "{}", sm.symmetric_difference);
    assert!(r.relaxed_energy <= r.energy);
}

#[test]
fn penalty_threshold_reaches_the_target_volume() {
    let m = metric(MediumSpec::homogeneous());
    let params = IsoParams::constrained(16, 2.0, 0.5);
    let t = penalty_threshold(&m, &params, None, 8).unwrap().expect("threshold");
    let h2 = (2.0f64 / 16.0).powi(2);
    assert!((t.result.volume - 0.5).abs() <= h2 * t.result.boundary_cells as f64);
    assert_eq!(t.trail.last().unwrap().0, t.mu);
    assert!((t.trail[0].0 - 1.0 / m.c0()).abs() < 1e-15);
    for w in t.trail.windows(2) {
        assert_eq!(w[1].0, 2.0 * w[0].0);
    }
    let constrained = solve_iso(&m, &params, None).unwrap();
    let doubled = solve_iso(&m, &IsoParams::penalized(16, 2.0, 0.5, 2.0 * t.mu), None).unwrap();
    assert_eq!(doubled.volume, constrained.volume);
    assert!((doubled.energy - constrained.energy).abs() < 1e-9);
}

#[test]
fn repeated_solves_are_identical() {
    let m = metric(MediumSpec::laminate(1, 1.0, 2.0, 0.5));
    let mut params = IsoParams::constrained(24, 2.0, 0.6);
    params.band = Some(Band::default());
    let a = solve_iso(&m, &params, None).unwrap();
    let b = solve_iso(&m, &params, None).unwrap();
    assert_eq!(a.mask().cells, b.mask().cells);
    assert_eq!(a.energy.to_bits(), b.energy.to_bits());
    assert_eq!(a.density().values, b.density().values);
}
