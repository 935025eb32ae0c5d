//! Acceptance suite: one PASS/FAIL line per criterion, printed to stderr
//! without capture, then a single assertion over all of them. Criteria run
//! one after another so the wall-clock limits are measured without
//! contention.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stablenorm::cell_solver::{solve_cell, CellSolution, SolverParams};
use stablenorm::grid::{divergence, gradient, BoxGrid, Grid, ScalarField, TorusGrid, VectorField};
use stablenorm::isoperimetric::*;
use stablenorm::metric::{MediumSpec, PeriodicMetric};
use stablenorm::planelike::*;
use stablenorm::stable_norm::*;

type Outcome = (bool, String);

fn metric(spec: &MediumSpec) -> PeriodicMetric {
    PeriodicMetric::new(spec, 2).unwrap()
}

fn laminate() -> MediumSpec {
    MediumSpec::laminate(1, 1.0, 2.0, 0.5)
}

fn trig() -> MediumSpec {
    MediumSpec::smooth_trig(1.5, 0.5)
}

fn solve(spec: &MediumSpec, n: usize, p: [f64; 2], params: &SolverParams) -> CellSolution {
    solve_cell(&metric(spec), &TorusGrid::new(2, n).unwrap(), &p, params).unwrap()
}

fn c1_homogeneous_sanity() -> Outcome {
    let t = Instant::now();
    let m = metric(&MediumSpec::homogeneous());
    let fan = sample_fan(
        &m,
        &TorusGrid::new(2, 64).unwrap(),
        &equiangular_directions(16),
        &SolverParams::default(),
    )
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let err = fan.entries.iter().map(|e| (e.phi - 1.0).abs()).fold(0.0, f64::max);
    let gap = fan.entries.iter().map(|e| e.gap / e.phi).fold(f64::MIN, f64::max);
    (
        err <= 0.02 && gap <= 1e-3 && fan.all_certified() && secs <= 120.0,
        format!("max |φ-1| {err:.2e}, max gap/φ {gap:.2e}, {secs:.1}s"),
    )
}

fn c2_laminate_oracle() -> Outcome {
    let m = metric(&laminate());
    let (profile, axis) = Profile::from_metric(&m).unwrap();
    let params = SolverParams::default().with_max_iters(150_000);
    let fan = sample_fan(&m, &TorusGrid::new(2, 128).unwrap(), &equiangular_directions(16), &params).unwrap();
    let at = |angle: f64| {
        fan.entries
            .iter()
            .find(|e| (e.angle - angle).abs() < 1e-12)
            .unwrap()
            .phi
    };
    let (e1, e2) = (at(0.0), at(std::f64::consts::FRAC_PI_2));
    let rel = fan
        .entries
        .iter()
        .map(|e| {
            let exact = laminate_oracle_for(&profile, axis, &e.p).unwrap().phi;
            (e.phi - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    (
        (e1 - 1.5).abs() <= 0.015 && (e2 - 1.0).abs() <= 0.01 && rel <= 0.02 && fan.all_certified(),
        format!("φ(e1) {e1:.5}, φ(e2) {e2:.5}, max relative error {rel:.2e}"),
    )
}

struct Facets {
    laminate_e2: FacetReport,
    laminate_e1: FacetReport,
}

fn c3_facets() -> (Outcome, Facets) {
    let g = TorusGrid::new(2, 32).unwrap();
    let params = SolverParams::default().with_tol_gap(1e-5).with_max_iters(200_000);
    let opts = FacetOptions {
        q_max: 1.0,
        ..FacetOptions::default()
    };
    let lam = metric(&laminate());
    let e2 = facet_probe(&lam, &g, &[0, 1], &params, &opts).unwrap();
    let e1 = facet_probe(&lam, &g, &[1, 0], &params, &opts).unwrap();
    let hom = metric(&MediumSpec::homogeneous());
    let homs: Vec<FacetReport> = [[1, 0], [0, 1], [1, 1]]
        .iter()
        .map(|p| facet_probe(&hom, &g, p, &params, &opts).unwrap())
        .collect();
    let sqrt3 = 3f64.sqrt();
    let o2 = e2.probes[0].opening;
    let o1 = e1.probes[0].opening;
    let oh = homs
        .iter()
        .flat_map(|r| r.probes.iter().map(|p| p.opening.abs()))
        .fold(0.0, f64::max);
    let pass = (o2 - sqrt3).abs() <= 0.1 * sqrt3
        && o1.abs() <= 0.02
        && oh <= 0.02
        && e2.probes[0].verdict == Verdict::Kink
        && e1.probes[0].verdict == Verdict::Smooth
        && homs.iter().all(|r| r.probes.iter().all(|p| p.verdict == Verdict::Smooth))
        && e1.certified
        && e2.certified;
    let line = format!(
        "laminate e2 {o2:.4} ({:?}), e1 {o1:.2e} ({:?}), homogeneous max {oh:.2e}",
        e2.probes[0].verdict, e1.probes[0].verdict
    );
    (
        (pass, line),
        Facets {
            laminate_e2: e2,
            laminate_e1: e1,
        },
    )
}

fn c4_strict_convexity() -> Outcome {
    let g = TorusGrid::new(2, 32).unwrap();
    let params = SolverParams::default().with_tol_gap(1e-4).with_max_iters(100_000);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, spec) in [("laminate", laminate()), ("smooth-trig", trig())] {
        let m = metric(&spec);
        let mut pairs = sample_pairs(20, MIN_PAIR_ANGLE_DEG, 7);
        pairs.extend(equiangular_directions(4).into_iter().map(|d| (d.clone(), d)));
        let r = strict_convexity_scan(&m, &g, None, &pairs, &params).unwrap();
        let (skew, parallel) = r.pairs.split_at(20);
        let skew_ok = skew.iter().all(|p| p.angle_deg >= 10.0 && p.slack > 3.0 * p.tolerance);
        let par_ok = parallel.iter().all(|p| p.slack.abs() <= 2.0 * p.tolerance);
        let ratio = skew
            .iter()
            .map(|p| p.slack / (3.0 * p.tolerance))
            .fold(f64::INFINITY, f64::min);
        pass &= skew_ok && par_ok && r.certified;
        parts.push(format!("{name}: min slack/(3 tol) {ratio:.1}, parallel ok {par_ok}"));
    }
    (pass, parts.join("; "))
}

struct PlaneSolves {
    laminate: Vec<CellSolution>,
    trig: Vec<CellSolution>,
}

const DIRECTIONS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]];

fn plane_solves() -> PlaneSolves {
    let params = SolverParams::default().with_tol_gap(1e-4).with_max_iters(100_000);
    PlaneSolves {
        laminate: DIRECTIONS.iter().map(|p| solve(&laminate(), 32, *p, &params)).collect(),
        trig: DIRECTIONS.iter().map(|p| solve(&trig(), 32, *p, &params)).collect(),
    }
}

fn c5_planelike(s: &PlaneSolves) -> Outcome {
    let mut pass = true;
    let mut checks = 0;
    let mut worst_m: f64 = 0.0;
    for sol in s.laminate.iter().chain(&s.trig) {
        pass &= sol.certified;
        for offset in [-0.4, 0.0, 0.3] {
            let slab = slab_report(sol, offset, 4).unwrap();
            let e = extract_planelike(sol, offset, 4).unwrap();
            let b = check_birkhoff(&e, 3).unwrap();
            pass &= slab.finite && slab.stable && b.pass;
            checks += b.checks.len();
            worst_m = worst_m.max(slab.m_obs);
        }
    }
    (pass, format!("{checks} Birkhoff containments, max M_obs {worst_m:.3}"))
}

fn c6_calibration(s: &PlaneSolves) -> Outcome {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for (spec, sols) in [(laminate(), &s.laminate), (trig(), &s.trig)] {
        let m = metric(&spec);
        for sol in sols.iter() {
            let r = check_calibration(&m, sol, default_eta(&sol.p)).unwrap();
            pass &= r.relative_residual <= 5.0 * r.certified_relative_gap;
            if r.certified_relative_gap > 0.0 {
                worst = worst.max(r.relative_residual / r.certified_relative_gap);
            }
        }
    }
    let m = metric(&laminate());
    let sol = &s.laminate[1];
    let cells = sol.grid.cells();
    let mut values = vec![0.0; 2 * cells];
    values[cells..].iter_mut().for_each(|z| *z = 1.0);
    let z = VectorField::from_values(Grid::Torus(sol.grid), values).unwrap();
    let r = calibration_residual(&m, sol, &z, default_eta(&sol.p)).unwrap();
    let mut x = [0.0; 2];
    let mut cheap: f64 = 0.0;
    for c in &r.cells {
        sol.grid.center(c.cell, &mut x);
        if x[1] < 0.5 {
            cheap = cheap.max(c.residual);
        }
    }
    pass &= cheap <= 1e-10;
    (
        pass,
        format!("max residual/gap {worst:.2} (bound 5), explicit calibration in cheap layer {cheap:.1e}"),
    )
}

fn c7_gap_kink(s: &PlaneSolves, f: &Facets) -> Outcome {
    let g2 = lamination_coverage(&s.laminate[1], default_eta(&[0.0, 1.0])).unwrap().gap_fraction;
    let g1 = lamination_coverage(&s.laminate[0], default_eta(&[1.0, 0.0])).unwrap().gap_fraction;
    let kink2 = f.laminate_e2.probes[0].verdict == Verdict::Kink;
    let kink1 = f.laminate_e1.probes[0].verdict == Verdict::Kink;
    (
        g2 > 0.05 && g1 < 0.05 && kink2 == (g2 > 0.05) && kink1 == (g1 > 0.05),
        format!("gap fraction e2 {g2:.3}, e1 {g1:.3}; kink at e2 {kink2}, at e1 {kink1}"),
    )
}

fn c8_iso_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let specs = [
        MediumSpec::homogeneous(),
        laminate(),
        trig(),
        MediumSpec::checkerboard(1.5, 0.5, 0.1),
        MediumSpec::laminate(0, 1.0, 3.0, 0.3),
    ];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..10 {
        let spec = &specs[i % specs.len()];
        let m = metric(spec);
        let n = if i % 2 == 0 { 4 } else { 5 };
        let side = rng.gen_range(0.8..2.5);
        let grid = BoxGrid::with_side(n, side).unwrap();
        let k = rng.gen_range(1..n * n);
        let v = k as f64 * grid.h() * grid.h();
        let r = solve_iso(&m, &IsoParams::constrained(n, side, v), None).unwrap();
        let (_, best) = brute_force_iso(&m, &grid, v, None).unwrap();
        worst = worst.max((r.energy - best).abs());
        count += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    (
        worst <= 1e-9 && secs <= 300.0,
        format!("{count} instances, max |E - E_brute| {worst:.1e}, {secs:.1}s"),
    )
}

fn c9_disc() -> Outcome {
    let m = metric(&MediumSpec::homogeneous());
    let v = std::f64::consts::PI * 0.64;
    let params = IsoParams {
        band: Some(Band::default()),
        ..IsoParams::constrained(128, 4.0, v)
    };
    let r = solve_iso(&m, &params, None).unwrap();
    let disc = wulff_from_fn(1024, |q| q[0].hypot(q[1])).unwrap();
    let sm = shape_metrics(r.mask(), &disc, v).unwrap();
    (
        sm.symmetric_difference <= 0.05,
        format!(
            "symmetric difference {:.4}, Hausdorff {:.4}, certified {}",
            sm.symmetric_difference, sm.hausdorff, r.certified
        ),
    )
}

fn c10_penalty() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, spec) in [("homogeneous", MediumSpec::homogeneous()), ("laminate", laminate()), ("smooth-trig", trig())] {
        let m = metric(&spec);
        let params = IsoParams::constrained(32, 2.0, 0.5);
        let constrained = solve_iso(&m, &params, None).unwrap();
        let th = penalty_threshold(&m, &params, None, 12).unwrap().expect("threshold within 12 doublings");
        let pen = solve_iso(&m, &IsoParams::penalized(32, 2.0, 0.5, 2.0 * th.mu), None).unwrap();
        let tol = 2.0 * params.solver.tol_gap * constrained.relaxed_energy.max(pen.relaxed_energy);
        let h2 = (2.0f64 / 32.0).powi(2);
        let de = (pen.energy - constrained.energy).abs();
        let dv = (pen.volume - constrained.volume).abs();
        pass &= de <= tol && dv <= h2 * constrained.boundary_cells as f64;
        parts.push(format!("{name} μ*={} |ΔE| {de:.1e} |Δv| {dv:.1e}", th.mu));
    }
    (pass, parts.join("; "))
}

fn c11_rescale() -> Outcome {
    let t = Instant::now();
    let m = metric(&laminate());
    let (profile, axis) = Profile::from_metric(&m).unwrap();
    let w = wulff_from_fn(256, |p| laminate_oracle_for(&profile, axis, p).unwrap().phi).unwrap();
    let scale = 1.0 / w.diameter();
    let v = w.area * scale * scale;
    let side = wulff_box_side(&w, v);
    let base = IsoParams {
        solver: iso_solver_defaults().with_tol_gap(1e-3).with_max_iters(200_000),
        band: Some(Band::default()),
        ..IsoParams::constrained(192, side, v)
    };
    let entries = rescale_experiment(&m, &base, &[0.25, 0.125, 0.0625], &w).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let diffs: Vec<String> = entries
        .iter()
        .map(|e| format!("{:.4}", e.metrics.symmetric_difference))
        .collect();
    let last = entries.last().unwrap().metrics.symmetric_difference;
    (
        nonincreasing_within(&entries, 0.2) && last <= 0.10 && secs <= 900.0,
        format!("symmetric differences [{}], {secs:.0}s", diffs.join(", ")),
    )
}

fn c12_infrastructure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut adj: f64 = 0.0;
    let grids: [Grid; 4] = [
        TorusGrid::new(2, 16).unwrap().into(),
        TorusGrid::new(3, 6).unwrap().into(),
        BoxGrid::new(9, 0.2).unwrap().into(),
        BoxGrid::new(16, 0.05).unwrap().into(),
    ];
    for g in grids {
        for _ in 0..5 {
            let v = ScalarField::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let z = VectorField::from_values(g, (0..g.dim() * g.vector_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let (dv, dz) = (gradient(&v), divergence(&z));
            let defect = (dv.dot(&z) + v.dot(&dz)).abs() / (dv.norm() * z.norm() + v.norm() * dz.norm());
            adj = adj.max(defect);
        }
    }

    let tol = 1e-4;
    let params = SolverParams::default().with_tol_gap(tol).with_max_iters(100_000);
    let mut homog: f64 = 0.0;
    let mut homog_ok = true;
    for spec in [laminate(), trig()] {
        for p in [[1.0, 0.5], [0.3, 1.0]] {
            let base = solve(&spec, 16, p, &params).primal;
            for lambda in [2.0, 3.0] {
                let scaled = solve(&spec, 16, [lambda * p[0], lambda * p[1]], &params).primal;
                let rel = (scaled - lambda * base).abs() / (lambda * base);
                homog = homog.max(rel);
                homog_ok &= rel <= 2.0 * tol;
            }
        }
    }

    let m = metric(&trig());
    let g = TorusGrid::new(2, 16).unwrap();
    let fan_csv = || {
        sample_fan(&m, &g, &equiangular_directions(16), &SolverParams::default())
            .unwrap()
            .to_csv()
    };
    let iso_csv = || {
        let mut params = IsoParams::constrained(24, 2.0, 0.6);
        params.band = Some(Band::default());
        let r = solve_iso(&m, &params, None).unwrap();
        let mut buf = Vec::new();
        r.density().write_csv(&mut buf).unwrap();
        r.mask().write_index_csv(&mut buf).unwrap();
        buf
    };
    let same = fan_csv() == fan_csv() && iso_csv() == iso_csv();
    (
        adj <= 1e-12 && homog_ok && same,
        format!("adjointness {adj:.1e}, homogeneity {homog:.1e} (bound {:.0e}), identical CSV {same}", 2.0 * tol),
    )
}

fn report(lines: &mut Vec<(usize, bool)>, k: usize, name: &str, (pass, detail): Outcome) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {k:>2} {} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    lines.push((k, pass));
}

#[test]
fn acceptance_criteria() {
    let mut lines = Vec::new();
    report(&mut lines, 1, "homogeneous sanity", c1_homogeneous_sanity());
    report(&mut lines, 2, "laminate oracle match", c2_laminate_oracle());
    let (outcome, facets) = c3_facets();
    report(&mut lines, 3, "facet dichotomy", outcome);
    report(&mut lines, 4, "strict convexity", c4_strict_convexity());
    let solves = plane_solves();
    report(&mut lines, 5, "plane-like and Birkhoff", c5_planelike(&solves));
    report(&mut lines, 6, "calibration residual", c6_calibration(&solves));
    report(&mut lines, 7, "gap and kink consistency", c7_gap_kink(&solves, &facets));
    report(&mut lines, 8, "isoperimetric oracle", c8_iso_oracle());
    report(&mut lines, 9, "Euclidean isoperimetric shape", c9_disc());
    report(&mut lines, 10, "penalized and constrained agreement", c10_penalty());
    report(&mut lines, 11, "Wulff convergence", c11_rescale());
    report(&mut lines, 12, "infrastructure invariants", c12_infrastructure());
    let failed: Vec<usize> = lines.iter().filter(|(_, p)| !p).map(|(k, _)| *k).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
