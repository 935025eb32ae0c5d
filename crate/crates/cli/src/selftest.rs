//! Smoke test: the closed-form examples plus small oracle validations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stablenorm::cell_solver::{solve_cell, SolverParams};
use stablenorm::grid::{divergence, gradient, BitMask, BoxGrid, Grid, ScalarField, TorusGrid, VectorField};
use stablenorm::isoperimetric::{brute_force_iso, set_energy, solve_iso, IsoParams};
use stablenorm::metric::{MediumSpec, PeriodicMetric};
use stablenorm::planelike::{check_birkhoff, extract_planelike};
use stablenorm::stable_norm::{equiangular_directions, sample_fan, wulff_from_fn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Perturbs one divergence entry before the adjointness check.
    Adjointness,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type Outcome = anyhow::Result<(bool, String)>;

pub fn run(fault: Option<Fault>) -> Vec<Check> {
    let checks: Vec<(&'static str, Box<dyn Fn() -> Outcome>)> = vec![
        ("metric closed forms", Box::new(metric_values)),
        ("gradient/divergence adjointness", Box::new(move || adjointness(fault))),
        ("homogeneous phi(e1) = 1", Box::new(homogeneous_phi)),
        ("laminate axis values", Box::new(laminate_axes)),
        ("homogeneity of phi", Box::new(homogeneity)),
        ("Euclidean convexity slack", Box::new(euclidean_slack)),
        ("homogeneous fan of 16", Box::new(homogeneous_fan)),
        ("disc Wulff area", Box::new(disc_area)),
        ("single-cell stencil energy", Box::new(single_cell)),
        ("isoperimetric brute force", Box::new(iso_oracle)),
        ("laminate Birkhoff property", Box::new(birkhoff)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e:#}")));
            Check { name, pass, detail }
        })
        .collect()
}

fn metric(spec: MediumSpec) -> anyhow::Result<PeriodicMetric> {
    Ok(PeriodicMetric::new(&spec, 2)?)
}

fn laminate() -> MediumSpec {
    MediumSpec::laminate(1, 1.0, 2.0, 0.5)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn metric_values() -> Outcome {
    let h = metric(MediumSpec::homogeneous())?;
    let l = metric(laminate())?;
    let f1 = h.eval(&[0.3, 0.7], &[3.0, 4.0]);
    let f2 = l.eval(&[0.25, 0.75], &[0.0, 1.0]);
    let polar = l.polar_eval(&[0.25, 0.25], &[3.0, 4.0]);
    let grad = h.grad_p(&[0.1, 0.2], &[3.0, 4.0])?;
    let proj = l.project_dual(&[0.25, 0.25], &[3.0, 4.0]);
    let pass = (f1 - 5.0).abs() < 1e-14
        && (f2 - 2.0).abs() < 1e-14
        && (polar - 5.0).abs() < 1e-14
        && close(&grad, &[0.6, 0.8], 1e-14)
        && close(&proj, &[0.6, 0.8], 1e-14);
    Ok((pass, format!("F={f1} F={f2} F°={polar} ∇F={grad:?} proj={proj:?}")))
}

fn adjointness(fault: Option<Fault>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grids: [Grid; 3] = [
        TorusGrid::new(2, 8)?.into(),
        TorusGrid::new(3, 4)?.into(),
        BoxGrid::new(7, 0.3)?.into(),
    ];
    let mut worst: f64 = 0.0;
    for g in grids {
        let v = ScalarField::from_values(g, (0..g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let z = VectorField::from_values(
            g,
            (0..g.dim() * g.vector_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let dv = gradient(&v);
        let mut dz = divergence(&z);
        if fault == Some(Fault::Adjointness) {
            dz.values[0] += 1e-3;
        }
        let lhs = dv.dot(&z);
        let rhs = -v.dot(&dz);
        let scale = dv.norm() * z.norm() + v.norm() * dz.norm();
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok((worst <= 1e-12, format!("relative defect {worst:.2e}")))
}

fn phi(spec: MediumSpec, n: usize, p: &[f64], tol: f64) -> anyhow::Result<(f64, bool)> {
    let m = metric(spec)?;
    let params = SolverParams::default().with_tol_gap(tol).with_max_iters(100_000);
    let s = solve_cell(&m, &TorusGrid::new(2, n)?, p, &params)?;
    Ok((s.primal, s.certified))
}

fn homogeneous_phi() -> Outcome {
    let (v, c) = phi(MediumSpec::homogeneous(), 16, &[1.0, 0.0], 1e-3)?;
    Ok((c && (v - 1.0).abs() <= 0.02, format!("phi={v:.6} certified={c}")))
}

fn laminate_axes() -> Outcome {
    let (v1, c1) = phi(laminate(), 32, &[1.0, 0.0], 1e-4)?;
    let (v2, c2) = phi(laminate(), 32, &[0.0, 1.0], 1e-4)?;
    let pass = c1 && c2 && (v1 - 1.5).abs() <= 0.015 && (v2 - 1.0).abs() <= 0.01;
    Ok((pass, format!("phi(e1)={v1:.6} (1.5) phi(e2)={v2:.6} (1.0)")))
}

fn homogeneity() -> Outcome {
    let tol = 1e-4;
    let (a, c1) = phi(laminate(), 16, &[1.0, 1.0], tol)?;
    let (b, c2) = phi(laminate(), 16, &[2.0, 2.0], tol)?;
    let pass = c1 && c2 && (b - 2.0 * a).abs() <= 2.0 * tol * b;
    Ok((pass, format!("phi(2p)={b:.8} 2phi(p)={:.8}", 2.0 * a)))
}

fn euclidean_slack() -> Outcome {
    let (a, c1) = phi(MediumSpec::homogeneous(), 16, &[1.0, 0.0], 1e-4)?;
    let (b, c2) = phi(MediumSpec::homogeneous(), 16, &[0.0, 1.0], 1e-4)?;
    let (s, c3) = phi(MediumSpec::homogeneous(), 16, &[1.0, 1.0], 1e-4)?;
    let slack = a + b - s;
    let want = 2.0 - std::f64::consts::SQRT_2;
    Ok((c1 && c2 && c3 && (slack - want).abs() <= 0.02, format!("slack={slack:.6} ({want:.6})")))
}

fn homogeneous_fan() -> Outcome {
    let m = metric(MediumSpec::homogeneous())?;
    let fan = sample_fan(&m, &TorusGrid::new(2, 32)?, &equiangular_directions(16), &SolverParams::default())?;
    let worst = fan.entries.iter().map(|e| (e.phi - 1.0).abs()).fold(0.0, f64::max);
    let rows = fan.to_csv().lines().count() - 1;
    Ok((
        rows == 16 && fan.all_certified() && worst <= 0.02,
        format!("{rows} rows, max |phi-1| = {worst:.2e}"),
    ))
}

fn disc_area() -> Outcome {
    let w = wulff_from_fn(64, |p| p[0].hypot(p[1]))?;
    let rel = (w.area - std::f64::consts::PI).abs() / std::f64::consts::PI;
    Ok((rel <= 0.01, format!("|W|={:.6}", w.area)))
}

fn single_cell() -> Outcome {
    let m = metric(MediumSpec::homogeneous())?;
    let g = BoxGrid::new(4, 0.125)?;
    let mut mask = BitMask::empty(g);
    mask.cells[5] = true;
    let e = set_energy(&m, &g, &mask, None)?;
    let want = (2.0 + std::f64::consts::SQRT_2) * 0.125;
    Ok(((e - want).abs() < 1e-14, format!("E={e} ({want})")))
}

fn iso_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let specs = [MediumSpec::homogeneous(), laminate(), MediumSpec::smooth_trig(1.5, 0.5)];
    let mut details = Vec::new();
    let mut pass = true;
    for (i, spec) in specs.into_iter().enumerate() {
        let m = metric(spec)?;
        let n = 4 + i % 2;
        let g = BoxGrid::with_side(n, 1.0)?;
        let k = rng.gen_range(2..n * n - 2);
        let v = k as f64 * g.h() * g.h();
        let r = solve_iso(&m, &IsoParams::constrained(n, 1.0, v), None)?;
        let (_, best) = brute_force_iso(&m, &g, v, None)?;
        pass &= (r.energy - best).abs() <= 1e-9;
        details.push(format!("{n}x{n} k={k}: {:.9} vs {best:.9}", r.energy));
    }
    Ok((pass, details.join("; ")))
}

fn birkhoff() -> Outcome {
    let m = metric(laminate())?;
    let params = SolverParams::default().with_tol_gap(1e-4).with_max_iters(100_000);
    let s = solve_cell(&m, &TorusGrid::new(2, 16)?, &[0.0, 1.0], &params)?;
    let e = extract_planelike(&s, 0.0, 4)?;
    let r = check_birkhoff(&e, 3)?;
    Ok((s.certified && r.pass, format!("{} translations checked", r.checks.len())))
}
