use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stablenorm::cell_solver::{solve_cell, subgradient_estimate, SolverParams};
use stablenorm::grid::{BitMask, FieldHeader, TorusGrid};
use stablenorm::isoperimetric::*;
use stablenorm::metric::PeriodicMetric;
use stablenorm::planelike::*;
use stablenorm::stable_norm::*;

use crate::config::RunConfig;
use crate::output::Run;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub metric: PeriodicMetric,
    pub run: Run,
    pub seed: Option<u64>,
}

fn missing(block: &str) -> anyhow::Error {
    anyhow::anyhow!("config has no `{block}` block")
}

fn torus(cfg: &RunConfig) -> Result<TorusGrid> {
    Ok(TorusGrid::new(cfg.dim(), cfg.n)?)
}

fn field_csv(header: &FieldHeader, write: impl FnOnce(&mut Vec<u8>) -> stablenorm::Result<()>) -> Result<(Vec<u8>, String)> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok((buf, serde_json::to_string_pretty(header)? + "\n"))
}

fn mask_csv(mask: &BitMask) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    mask.write_index_csv(&mut buf)?;
    Ok(buf)
}

pub fn phi(ctx: &mut Ctx) -> Result<()> {
    let block = ctx.cfg.phi.as_ref().ok_or_else(|| missing("phi"))?;
    ctx.run.manifest.grid_n = Some(ctx.cfg.n);
    ctx.run.manifest.tol_gap = Some(ctx.cfg.solver.tol_gap);
    let t = Instant::now();
    let g = torus(ctx.cfg)?;
    let sol = solve_cell(&ctx.metric, &g, &block.p, &ctx.cfg.solver)?;
    let sg = subgradient_estimate(&sol);
    let slack = sol.history.last().map_or(0.0, |c| c.duality_slack);
    println!(
        "phi({}) = {:.6} ± {:.2e}  gap {:.2e}  certified {}",
        fmt_vec(&block.p),
        sol.primal,
        sol.gap.abs() + slack,
        sol.gap,
        sol.certified
    );
    println!("subgradient {}  certified {}", fmt_vec(&sg.value), sg.certified);
    ctx.run.write_json("phi.json", &sol.summary())?;
    if block.dump_fields {
        let (csv, header) = field_csv(&sol.v.header(), |w| sol.v.write_csv(w))?;
        ctx.run.write("v.csv", csv)?;
        ctx.run.write("v.json", header)?;
        let (csv, header) = field_csv(&sol.z.header(), |w| sol.z.write_csv(w))?;
        ctx.run.write("z.csv", csv)?;
        ctx.run.write("z.json", header)?;
    }
    ctx.run.task(format!("phi {}", fmt_vec(&block.p)), sol.certified, t, sol.iters);
    Ok(())
}

fn fan_directions(dim: usize, k: usize) -> Vec<Vec<f64>> {
    if dim == 3 {
        sphere_directions(k)
    } else {
        equiangular_directions(k)
    }
}

#[derive(Serialize)]
struct OracleComparison {
    max_relative_error: f64,
    entries: Vec<(f64, f64, f64)>,
}

fn oracle_comparison(m: &PeriodicMetric, fan: &FanResult) -> Option<OracleComparison> {
    let (profile, axis) = Profile::from_metric(m)?;
    let mut entries = Vec::new();
    let mut worst: f64 = 0.0;
    for e in &fan.entries {
        let exact = laminate_oracle_for(&profile, axis, &e.p).ok()?.phi;
        let rel = (e.phi - exact).abs() / exact;
        worst = worst.max(rel);
        entries.push((e.angle, exact, rel));
    }
    Some(OracleComparison {
        max_relative_error: worst,
        entries,
    })
}

pub fn fan(ctx: &mut Ctx) -> Result<()> {
    let block = ctx.cfg.fan.as_ref().ok_or_else(|| missing("fan"))?;
    ctx.run.manifest.grid_n = Some(ctx.cfg.n);
    ctx.run.manifest.tol_gap = Some(ctx.cfg.solver.tol_gap);
    let t = Instant::now();
    let fan = sample_fan(
        &ctx.metric,
        &torus(ctx.cfg)?,
        &fan_directions(ctx.cfg.dim(), block.directions),
        &ctx.cfg.solver,
    )?;
    ctx.run.write("fan.csv", fan.to_csv())?;
    let certified = fan.entries.iter().filter(|e| e.certified).count();
    println!("fan: {} directions, {certified} certified", fan.entries.len());
    if let Some(cmp) = oracle_comparison(&ctx.metric, &fan) {
        println!("max relative error against the exact formula: {:.3e}", cmp.max_relative_error);
        ctx.run.write_json("fan_oracle.json", &cmp)?;
    }
    ctx.run.task("fan", fan.all_certified(), t, fan.iters());
    Ok(())
}

pub fn facets(ctx: &mut Ctx) -> Result<()> {
    let block = ctx.cfg.facets.as_ref().ok_or_else(|| missing("facets"))?;
    let params = block.solver.clone().unwrap_or_else(|| ctx.cfg.solver.clone());
    ctx.run.manifest.grid_n = Some(ctx.cfg.n);
    ctx.run.manifest.tol_gap = Some(params.tol_gap);
    let g = torus(ctx.cfg)?;
    let profile = Profile::from_metric(&ctx.metric);
    let mut reports = Vec::new();
    for p in &block.p {
        let t = Instant::now();
        let r = facet_probe(&ctx.metric, &g, p, &params, &block.options)?;
        for probe in &r.probes {
            let exact = profile.as_ref().map(|(profile, axis)| exact_opening(profile, *axis, p, &probe.q));
            println!(
                "facet p={} q={}: opening {:.4} ± {:.2e}  verdict {:?}{}",
                fmt_ivec(p),
                fmt_ivec(&probe.q),
                probe.opening,
                probe.error_bar,
                probe.verdict,
                exact.map_or(String::new(), |x| format!("  exact {x:.4}"))
            );
        }
        ctx.run.task(format!("facets {}", fmt_ivec(p)), r.certified, t, 0);
        reports.push(r);
    }
    ctx.run.write_json("facets.json", &reports)?;
    Ok(())
}

/// Exact opening of a layered medium: `|q| · 2∫sqrt(a² - min a²)` for `p`
/// along the layering axis, zero elsewhere.
fn exact_opening(profile: &Profile, axis: usize, p: &[i64], q: &[i64]) -> f64 {
    if p[axis] != 0 && p[1 - axis] == 0 {
        let pf = [0.0, 1.0];
        let o = laminate_oracle(profile, &pf).map_or(f64::NAN, |o| o.facet_opening);
        o * (q[0] as f64).hypot(q[1] as f64)
    } else {
        0.0
    }
}

/// `W` from the exact formula when the medium is layered with a Euclidean
/// base norm, else from a sampled fan. Returns the shape, its source, the
/// fan's certification flag and the fan itself when one was sampled.
fn wulff_for(
    m: &PeriodicMetric,
    n: usize,
    params: &SolverParams,
    k: usize,
) -> Result<(WulffShape, &'static str, bool, Option<FanResult>)> {
    if let Some((profile, axis)) = Profile::from_metric(m) {
        let w = wulff_from_fn(k, |p| laminate_oracle_for(&profile, axis, p).map_or(f64::NAN, |o| o.phi))?;
        return Ok((w, "exact", true, None));
    }
    let fan = sample_fan(m, &TorusGrid::new(2, n)?, &equiangular_directions(k), params)?;
    let w = build_wulff(&fan)?;
    Ok((w, "fan", fan.all_certified(), Some(fan)))
}

#[derive(Serialize)]
struct WulffMeta<'a> {
    source: &'a str,
    directions: usize,
    area: f64,
    diameter: f64,
    centroid: [f64; 2],
    vertices: usize,
    max_normal_gap: f64,
    /// Factor applied to `W` in the vertex CSV.
    scale: f64,
}

fn wulff_meta<'a>(w: &WulffShape, source: &'a str, k: usize, scale: f64) -> WulffMeta<'a> {
    WulffMeta {
        source,
        directions: k,
        area: w.area,
        diameter: w.diameter(),
        centroid: w.centroid(),
        vertices: w.vertices.len(),
        max_normal_gap: w.max_normal_gap,
        scale,
    }
}

pub fn wulff(ctx: &mut Ctx) -> Result<()> {
    let block = ctx.cfg.wulff.as_ref().ok_or_else(|| missing("wulff"))?;
    if ctx.cfg.dim() != 2 {
        bail!("Wulff shapes are two-dimensional");
    }
    ctx.run.manifest.grid_n = Some(ctx.cfg.n);
    ctx.run.manifest.tol_gap = Some(ctx.cfg.solver.tol_gap);
    let t = Instant::now();
    let g = torus(ctx.cfg)?;
    let fan = sample_fan(&ctx.metric, &g, &equiangular_directions(block.directions), &ctx.cfg.solver)?;
    ctx.run.write("fan.csv", fan.to_csv())?;
    ctx.run.task("fan", fan.all_certified(), t, fan.iters());
    let t = Instant::now();
    let w = build_wulff(&fan)?;
    ctx.run.write("wulff.csv", w.vertices_csv())?;
    ctx.run.write_json("wulff.json", &wulff_meta(&w, "fan", block.directions, 1.0))?;
    println!(
        "wulff: {} vertices, area {:.6}, diameter {:.6}",
        w.vertices.len(),
        w.area,
        w.diameter()
    );
    ctx.run.task("wulff", fan.all_certified(), t, 0);
    if let Some(c) = &block.convexity {
        let t = Instant::now();
        let seed = ctx.seed.unwrap_or(c.seed);
        let mut pairs = sample_pairs(c.pairs, c.min_angle_deg, seed);
        pairs.extend(
            equiangular_directions(c.parallel.max(1))
                .into_iter()
                .take(c.parallel)
                .map(|d| (d.clone(), d)),
        );
        let r = strict_convexity_scan(&ctx.metric, &g, Some(&fan), &pairs, &ctx.cfg.solver)?;
        println!(
            "convexity: {} pairs, min slack {:.4e}, strictly convex {}",
            r.pairs.len(),
            r.min_slack,
            r.strictly_convex
        );
        ctx.run.write_json("convexity.json", &r)?;
        ctx.run.task("convexity", r.certified, t, 0);
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanelikeEntry {
    p: [f64; 2],
    certified: bool,
    phi: f64,
    sets: Vec<PlanelikeSetEntry>,
    gap_fraction: f64,
    coverage_fraction: f64,
    gap_components: Vec<usize>,
    calibration: CalibrationSummary,
}

#[derive(Serialize)]
struct PlanelikeSetEntry {
    s: f64,
    file: String,
    slab: SlabReport,
    birkhoff_pass: bool,
    birkhoff_violations: usize,
}

#[derive(Serialize)]
struct CalibrationSummary {
    weighted_mean_residual: f64,
    relative_residual: f64,
    certified_relative_gap: f64,
    within_bound: bool,
}

pub fn planelike(ctx: &mut Ctx) -> Result<()> {
    let block = ctx.cfg.planelike.as_ref().ok_or_else(|| missing("planelike"))?;
    if ctx.cfg.dim() != 2 {
        bail!("plane-like sets are two-dimensional");
    }
    ctx.run.manifest.grid_n = Some(ctx.cfg.n);
    ctx.run.manifest.tol_gap = Some(ctx.cfg.solver.tol_gap);
    let g = torus(ctx.cfg)?;
    let mut entries = Vec::new();
    for (i, p) in block.p.iter().enumerate() {
        let t = Instant::now();
        let sol = solve_cell(&ctx.metric, &g, p, &ctx.cfg.solver)?;
        let mut sets = Vec::new();
        let mut pass = true;
        for (j, &s) in block.offsets.iter().enumerate() {
            let e = extract_planelike(&sol, s, block.copies)?;
            let file = format!("planelike_{i}_{j}.csv");
            ctx.run.write(&file, e.index_csv())?;
            let slab = slab_report(&sol, s, block.copies)?;
            let b = check_birkhoff(&e, block.q_max)?;
            pass &= b.pass && slab.finite && slab.stable;
            sets.push(PlanelikeSetEntry {
                s,
                file,
                slab,
                birkhoff_pass: b.pass,
                birkhoff_violations: b.checks.iter().map(|c| c.violations).sum(),
            });
        }
        let lam = lamination_coverage(&sol, default_eta(p))?;
        let mut gaps = String::from("index\n");
        lam.gap_cells.iter().for_each(|c| gaps.push_str(&format!("{c}\n")));
        ctx.run.write(&format!("lamination_{i}.csv"), gaps)?;
        let cal = check_calibration(&ctx.metric, &sol, default_eta(p))?;
        let within = cal.relative_residual <= 5.0 * cal.certified_relative_gap;
        println!(
            "planelike p={}: birkhoff+slab {}  gap fraction {:.3}  calibration {:.2e} (bound {:.2e})",
            fmt_vec(p),
            if pass { "pass" } else { "FAIL" },
            lam.gap_fraction,
            cal.relative_residual,
            5.0 * cal.certified_relative_gap
        );
        ctx.run.task(format!("planelike {}", fmt_vec(p)), sol.certified, t, sol.iters);
        entries.push(PlanelikeEntry {
            p: *p,
            certified: sol.certified,
            phi: sol.primal,
            sets,
            gap_fraction: lam.gap_fraction,
            coverage_fraction: lam.coverage_fraction,
            gap_components: lam.components,
            calibration: CalibrationSummary {
                weighted_mean_residual: cal.weighted_mean_residual,
                relative_residual: cal.relative_residual,
                certified_relative_gap: cal.certified_relative_gap,
                within_bound: within,
            },
        });
    }
    ctx.run.write_json("planelike.json", &entries)?;
    Ok(())
}

#[derive(Serialize)]
struct ThresholdReport {
    mu: f64,
    trail: Vec<(f64, f64)>,
    /// Penalized solve at twice the threshold against the constrained solve.
    check_mu: f64,
    penalized_energy: f64,
    constrained_energy: f64,
    penalized_volume: f64,
    constrained_volume: f64,
    energy_tolerance: f64,
    volume_tolerance: f64,
    agree: bool,
}

pub fn iso(ctx: &mut Ctx) -> Result<()> {
    let block = ctx.cfg.iso.as_ref().ok_or_else(|| missing("iso"))?;
    let mut params = block.params.clone();
    if let Some(seed) = ctx.seed {
        params.seed = seed;
    }
    let grid = params.validate()?;
    ctx.run.manifest.grid_n = Some(params.n);
    ctx.run.manifest.tol_gap = Some(params.solver.tol_gap);
    let bulk = match &params.bulk {
        Some(spec) => Some(load_bulk(spec, grid, &ctx.cfg.base_dir)?),
        None => None,
    };
    let m = PeriodicMetric::new(&ctx.cfg.medium, 2).context("isoperimetric solves need a 2D medium")?;

    let t = Instant::now();
    let r = solve_iso(&m, &params, bulk.as_ref())?;
    println!(
        "iso: energy {:.6}  volume {:.6} (target {:.6})  relaxed {:.6}  certified {}",
        r.energy, r.volume, params.volume, r.relaxed_energy, r.certified
    );
    ctx.run.write_json("iso.json", &r)?;
    ctx.run.write("iso_mask.csv", mask_csv(r.mask())?)?;
    let u = r.density();
    let (csv, header) = field_csv(&u.header(), |w| u.write_csv(w))?;
    ctx.run.write("iso_u.csv", csv)?;
    ctx.run.write("iso_u.json", header)?;
    ctx.run.task("iso", r.certified, t, r.iters);

    if block.oracle {
        let t = Instant::now();
        let best = match params.mode {
            IsoMode::Constrained => brute_force_iso(&m, &grid, params.volume, bulk.as_ref())?.1,
            IsoMode::Penalized { mu } => brute_force_penalized(&m, &grid, params.volume, mu, bulk.as_ref())?.1,
        };
        let got = match params.mode {
            IsoMode::Constrained => r.energy,
            IsoMode::Penalized { mu } => r.energy + mu * (r.volume - params.volume).abs(),
        };
        let matched = (got - best).abs() <= 1e-9;
        if matched {
            println!("ORACLE MATCH energy {got:.12}");
        } else {
            println!("ORACLE MISMATCH solver {got:.12} brute force {best:.12}");
        }
        ctx.run.write_json(
            "iso_oracle.json",
            &serde_json::json!({ "solver": got, "brute_force": best, "match": matched }),
        )?;
        ctx.run.task("iso oracle", matched, t, 0);
    }

    if let Some(doublings) = block.threshold_doublings {
        let t = Instant::now();
        let Some(th) = penalty_threshold(&m, &params, bulk.as_ref(), doublings)? else {
            println!("penalty threshold: not reached after {doublings} doublings");
            ctx.run.task("penalty threshold", false, t, 0);
            return Ok(());
        };
        ctx.run.manifest.penalty_threshold = Some(th.mu);
        let check_mu = 2.0 * th.mu;
        let pen = solve_iso(
            &m,
            &IsoParams {
                mode: IsoMode::Penalized { mu: check_mu },
                ..params.clone()
            },
            bulk.as_ref(),
        )?;
        let h2 = grid.h() * grid.h();
        let energy_tolerance = 2.0 * params.solver.tol_gap * r.relaxed_energy.abs().max(pen.relaxed_energy.abs());
        let volume_tolerance = h2 * r.boundary_cells as f64;
        let agree = (pen.energy - r.energy).abs() <= energy_tolerance && (pen.volume - r.volume).abs() <= volume_tolerance;
        println!(
            "penalty threshold μ = {}  at 2μ: energy {:.6} vs {:.6}, volume {:.6} vs {:.6}  agree {agree}",
            th.mu, pen.energy, r.energy, pen.volume, r.volume
        );
        ctx.run.write_json(
            "iso_threshold.json",
            &ThresholdReport {
                mu: th.mu,
                trail: th.trail,
                check_mu,
                penalized_energy: pen.energy,
                constrained_energy: r.energy,
                penalized_volume: pen.volume,
                constrained_volume: r.volume,
                energy_tolerance,
                volume_tolerance,
                agree,
            },
        )?;
        ctx.run.task("penalty threshold", th.result.certified && pen.certified, t, th.result.iters + pen.iters);
    }

    if let Some(k) = block.wulff_directions {
        let t = Instant::now();
        let (w, source, certified, _) = wulff_for(&m, ctx.cfg.n, &ctx.cfg.solver, k)?;
        let sm = shape_metrics(r.mask(), &w, params.volume)?;
        println!(
            "shape: symmetric difference {:.4}  hausdorff {:.4}",
            sm.symmetric_difference, sm.hausdorff
        );
        ctx.run.write_json("shape.json", &sm)?;
        ctx.run.write("wulff.csv", scaled_vertices(&w, sm.scale, sm.centroid_shift))?;
        ctx.run.write_json("wulff.json", &wulff_meta(&w, source, k, sm.scale))?;
        ctx.run.task("shape", certified, t, 0);
    }
    Ok(())
}

/// Vertices of `s W + z` as `x,y` rows.
fn scaled_vertices(w: &WulffShape, s: f64, z: [f64; 2]) -> String {
    let mut out = String::from("x,y\n");
    for v in &w.vertices {
        out.push_str(&format!("{},{}\n", s * v[0] + z[0], s * v[1] + z[1]));
    }
    out
}

#[derive(Serialize)]
struct RescaleReport {
    volume: f64,
    side: f64,
    n: usize,
    diameter: f64,
    wulff_source: String,
    entries: Vec<RescaleEntry>,
    slack: f64,
    nonincreasing: bool,
    final_symmetric_difference: f64,
}

pub fn rescale(ctx: &mut Ctx) -> Result<()> {
    let block = ctx.cfg.rescale.as_ref().ok_or_else(|| missing("rescale"))?;
    let m = PeriodicMetric::new(&ctx.cfg.medium, 2).context("rescale runs need a 2D medium")?;
    ctx.run.manifest.grid_n = Some(block.n);
    ctx.run.manifest.tol_gap = Some(block.solver.tol_gap);
    let t = Instant::now();
    let (w, source, certified, fan) = wulff_for(&m, ctx.cfg.n, &ctx.cfg.solver, block.wulff_directions)?;
    if let Some(fan) = &fan {
        ctx.run.write("fan.csv", fan.to_csv())?;
    }
    ctx.run.task("wulff", certified, t, fan.as_ref().map_or(0, |f| f.iters()));

    let scale = block.diameter / w.diameter();
    let volume = w.area * scale * scale;
    let side = block.side.unwrap_or_else(|| wulff_box_side(&w, volume));
    let mut base = block.iso_params(side, volume);
    if let Some(seed) = ctx.seed {
        base.seed = seed;
    }
    base.validate()?;
    ctx.run.write("wulff.csv", scaled_vertices(&w, scale, [0.0, 0.0]))?;
    ctx.run.write_json("wulff.json", &wulff_meta(&w, source, block.wulff_directions, scale))?;

    let t = Instant::now();
    // periods are measured in units of the scaled shape's diameter
    let periods: Vec<f64> = block.epsilons.iter().map(|e| e * block.diameter).collect();
    let mut entries = rescale_experiment(&m, &base, &periods, &w)?;
    let mut csv = String::from("epsilon,period,symmetric_difference,hausdorff,shift_x,shift_y,energy,certified,iters,touches_wall\n");
    for (k, (e, eps)) in entries.iter_mut().zip(&block.epsilons).enumerate() {
        let period = e.epsilon;
        e.epsilon = *eps;
        let sm = &e.metrics;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            eps,
            period,
            sm.symmetric_difference,
            sm.hausdorff,
            sm.centroid_shift[0],
            sm.centroid_shift[1],
            e.energy,
            e.certified,
            e.iters,
            e.touches_wall
        ));
        if let Some(mask) = &e.mask {
            ctx.run.write(&format!("rescale_mask_{k}.csv"), mask_csv(mask)?)?;
        }
        println!(
            "rescale ε={eps}: symmetric difference {:.4}  hausdorff {:.4}  certified {}",
            sm.symmetric_difference, sm.hausdorff, e.certified
        );
    }
    ctx.run.write("rescale.csv", csv)?;
    let nonincreasing = nonincreasing_within(&entries, block.slack);
    let last = entries.last().map_or(f64::NAN, |e| e.metrics.symmetric_difference);
    println!("rescale: non-increasing within {} {nonincreasing}  final {last:.4}", block.slack);
    let all = entries.iter().all(|e| e.certified);
    let iters = entries.iter().map(|e| e.iters).sum();
    ctx.run.write_json(
        "rescale.json",
        &RescaleReport {
            volume,
            side,
            n: block.n,
            diameter: block.diameter,
            wulff_source: source.into(),
            entries,
            slack: block.slack,
            nonincreasing,
            final_symmetric_difference: last,
        },
    )?;
    ctx.run.task("rescale", all, t, iters);
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(","))
}

fn fmt_ivec(v: &[i64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(","))
}
