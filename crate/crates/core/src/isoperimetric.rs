//! Volume-constrained minimization of the anisotropic perimeter on a box,
//!
//! ```text
//! min { E(E) + ∫_E g : |E| = v },    E(E) = h² Σ_e F(x_e, (Dχ_E)_e),
//! ```
//!
//! relaxed to densities `u ∈ [0, 1]` and solved by the same primal-dual
//! iteration as the cell problem. The relaxed value is a certified lower
//! bound, but its minimizer is typically a flat density spread over the box,
//! so masks come from an exact-volume swap search seeded by its level set
//! and by compact balls ([`solve_iso`]), optionally followed by a narrow-band
//! refinement ([`Band`]). A penalized variant replaces the constraint by
//! `μ |h² Σ u - v|`. Small boxes are solved exhaustively to provide an oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_solver::{SampledMetric, SolverParams};
use crate::error::{Error, Result};
use crate::grid::{BitMask, BoxGrid, Grid, ScalarField};
use crate::metric::PeriodicMetric;
use crate::stable_norm::{convex_hull, WulffShape};

/// Sampled bulk term `g`, one value per box cell, scaled by `amplitude` and
/// re-centred to zero mean on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkSpec {
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// CSV with header `value`, resolved relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum IsoMode {
    Constrained,
    Penalized { mu: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoParams {
    /// Cells per box side.
    pub n: usize,
    /// Box side length `L`; the box is `[0, L)²`.
    pub side: f64,
    /// Target volume in physical units.
    pub volume: f64,
    #[serde(default = "constrained")]
    pub mode: IsoMode,
    #[serde(default = "iso_solver_defaults")]
    pub solver: SolverParams,
    /// Period of the medium; the coefficient is evaluated at `x / period`.
    #[serde(default = "unit_period")]
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk: Option<BulkSpec>,
    /// Exact-volume swap search after level selection.
    #[serde(default = "yes")]
    pub polish: bool,
    /// Random restarts of the swap search from perturbed optima.
    #[serde(default = "default_kicks")]
    pub polish_kicks: usize,
    /// Seed of the restart perturbations.
    #[serde(default)]
    pub seed: u64,
    /// Narrow-band refinement after polishing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
}

/// Narrow-band refinement of the polished mask. Each round frees the cells
/// within `width` cells of the interface (default: a quarter of the
/// equal-area disc radius, at least 3 cells), holds the rest at their mask
/// value, and re-solves the relaxation there with the tangent `α (1 − 2 u_k)`
/// of `α u (1 − u)` added to the linear term (`α h = strength`); the next
/// mask is the level set of the new density.
///
/// Binary masks pay the forward-difference stencil's own anisotropy; a
/// density ramp a few cells wide does not. Holding the far field prevents
/// the volume from spreading, which the relaxation otherwise prefers
/// (perimeter is concave in volume), and the weak concave term resolves the
/// remaining ties inside the band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default = "default_band_strength")]
    pub strength: f64,
    #[serde(default = "default_band_rounds")]
    pub rounds: usize,
}

fn default_band_strength() -> f64 {
    0.01
}

fn default_band_rounds() -> usize {
    10
}

impl Band {
    /// The band width in cells for a target volume on a grid of spacing `h`.
    pub fn width_for(&self, volume: f64, h: f64) -> f64 {
        self.width.unwrap_or_else(|| (0.25 * (volume / std::f64::consts::PI).sqrt() / h).max(3.0))
    }
}

impl Default for Band {
    fn default() -> Self {
        Band {
            width: None,
            strength: default_band_strength(),
            rounds: default_band_rounds(),
        }
    }
}

fn default_kicks() -> usize {
    200
}

fn constrained() -> IsoMode {
    IsoMode::Constrained
}

fn unit_period() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// The cell-problem defaults with a larger iteration budget: sharp
/// interfaces need more iterations than the cell problem.
pub fn iso_solver_defaults() -> SolverParams {
    SolverParams::default().with_max_iters(50_000)
}

impl IsoParams {
    pub fn constrained(n: usize, side: f64, volume: f64) -> Self {
        IsoParams {
            n,
            side,
            volume,
            mode: IsoMode::Constrained,
            solver: iso_solver_defaults(),
            period: 1.0,
            bulk: None,
            polish: true,
            polish_kicks: default_kicks(),
            seed: 0,
            band: None,
        }
    }

    pub fn penalized(n: usize, side: f64, volume: f64, mu: f64) -> Self {
        IsoParams {
            mode: IsoMode::Penalized { mu },
            ..Self::constrained(n, side, volume)
        }
    }

    pub fn grid(&self) -> Result<BoxGrid> {
        BoxGrid::with_side(self.n, self.side)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks the box, the volume and the refinement settings; returns the box.
    pub fn validate(&self) -> Result<BoxGrid> {
        let g = self.grid()?;
        let capacity = g.side() * g.side();
        if !(self.volume >= 0.0 && self.volume <= capacity) || !self.volume.is_finite() {
            return Err(Error::InfeasibleVolume {
                volume: self.volume,
                capacity,
            });
        }
        if let Some(b) = self.band {
            if !(b.width.is_none_or(|w| w >= 1.0 && w.is_finite()) && b.strength >= 0.0 && b.strength.is_finite()) {
                return Err(Error::Params(format!("band width {:?} must be ≥ 1 and strength {} ≥ 0", b.width, b.strength)));
            }
            if !self.polish {
                return Err(Error::Params("band refinement starts from the polished mask".into()));
            }
        }
        if let IsoMode::Penalized { mu } = self.mode {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Params(format!("penalty μ = {mu} must be positive")));
            }
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Params(format!("period {} must be positive", self.period)));
        }
        Ok(g)
    }
}

/// Loads and re-centres a bulk field for `grid`.
pub fn load_bulk(spec: &BulkSpec, grid: BoxGrid, base_dir: &std::path::Path) -> Result<ScalarField> {
    let raw = match (&spec.values, &spec.file) {
        (Some(v), None) => v.clone(),
        (None, Some(f)) => crate::metric::read_coefficient_csv(&base_dir.join(f))
            .or_else(|_| ScalarField::load(&base_dir.join(f)).map(|s| s.values))?,
        _ => return Err(Error::Params("bulk term needs exactly one of `values` or `file`".into())),
    };
    if raw.len() != grid.cells() {
        return Err(Error::Shape(format!("bulk term has {} values, box has {}", raw.len(), grid.cells())));
    }
    recentred_bulk(grid, raw.iter().map(|g| spec.amplitude * g).collect())
}

/// `g - mean(g)` as a field on `grid`.
pub fn recentred_bulk(grid: BoxGrid, values: Vec<f64>) -> Result<ScalarField> {
    let mut f = ScalarField::from_values(grid, values)?;
    let mean = f.mean();
    f.values.iter_mut().for_each(|g| *g -= mean);
    Ok(f)
}

/// Coefficients frozen on the gradient lattice of a box, plus the bulk term.
#[derive(Clone, Debug)]
pub struct IsoProblem {
    pub grid: BoxGrid,
    metric: SampledMetric,
    bulk: Option<Vec<f64>>,
}

impl IsoProblem {
    pub fn new(m: &PeriodicMetric, grid: BoxGrid, period: f64, bulk: Option<&ScalarField>) -> Result<Self> {
        if m.dim() != 2 {
            return Err(Error::Domain("isoperimetric solves are two-dimensional".into()));
        }
        if let Some(b) = bulk {
            if b.grid != Grid::Box(grid) {
                return Err(Error::Shape("bulk term lives on another grid".into()));
            }
        }
        let a = (0..grid.lattice_cells())
            .map(|e| {
                let x = grid.lattice_center(e);
                m.coefficient_at(&[x[0] / period, x[1] / period])
            })
            .collect();
        Ok(IsoProblem {
            grid,
            metric: SampledMetric {
                a,
                base: m.base().clone(),
            },
            bulk: bulk.map(|b| b.values.clone()),
        })
    }

    fn n(&self) -> usize {
        self.grid.n()
    }

    fn h(&self) -> f64 {
        self.grid.h()
    }

    /// `h² Σ_e F(x_e, (Du)_e) + h² Σ_i g_i u_i` for a density `u`.
    pub fn relaxed_energy(&self, u: &[f64]) -> f64 {
        let g = Grid::Box(self.grid);
        let mut w = vec![0.0; 2 * g.vector_cells()];
        g.gradient_into(u, &mut w);
        self.metric.energy(&w, 2, g.cell_volume()) + self.bulk_energy(u)
    }

    fn bulk_energy(&self, u: &[f64]) -> f64 {
        let h2 = self.h() * self.h();
        self.bulk
            .as_ref()
            .map_or(0.0, |g| h2 * g.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Energy of lattice cell `(i0, i1)`, `-1 <= i0, i1 < n`, for a mask.
    #[inline]
    fn lattice_term(&self, cells: &[bool], i0: isize, i1: isize) -> f64 {
        let n = self.n() as isize;
        let at = |a: isize, b: isize| -> f64 {
            if a >= 0 && b >= 0 && a < n && b < n && cells[(b * n + a) as usize] {
                1.0
            } else {
                0.0
            }
        };
        let c = at(i0, i1);
        let (dx, dy) = (at(i0 + 1, i1) - c, at(i0, i1 + 1) - c);
        if dx == 0.0 && dy == 0.0 {
            return 0.0;
        }
        let e = self.grid.lattice_index(i0, i1);
        self.h() * self.metric.a[e] * self.metric.base.norm(&[dx, dy])
    }

    /// Exact discrete energy of a mask, bulk included.
    pub fn energy(&self, mask: &BitMask) -> f64 {
        self.energy_of(&mask.cells)
    }

    fn energy_of(&self, cells: &[bool]) -> f64 {
        let n = self.n() as isize;
        let mut total = 0.0;
        for i1 in -1..n {
            for i0 in -1..n {
                total += self.lattice_term(cells, i0, i1);
            }
        }
        total + self.bulk_mask(cells)
    }

    fn bulk_mask(&self, cells: &[bool]) -> f64 {
        let h2 = self.h() * self.h();
        self.bulk.as_ref().map_or(0.0, |g| {
            h2 * g.iter().zip(cells).filter(|(_, c)| **c).map(|(v, _)| v).sum::<f64>()
        })
    }

    fn bulk_at(&self, i: usize) -> f64 {
        self.bulk.as_ref().map_or(0.0, |g| self.h() * self.h() * g[i])
    }

    /// Lattice cells whose gradient reads box cell `i`.
    fn stencil(&self, i: usize) -> [(isize, isize); 3] {
        let n = self.n();
        let (i0, i1) = ((i % n) as isize, (i / n) as isize);
        [(i0, i1), (i0 - 1, i1), (i0, i1 - 1)]
    }

    /// Energy change from flipping the cells in `flips` (distinct).
    fn flip_delta(&self, cells: &mut [bool], flips: &[usize]) -> f64 {
        let mut touched: Vec<(isize, isize)> = flips.iter().flat_map(|&i| self.stencil(i)).collect();
        touched.sort_unstable();
        touched.dedup();
        let before: f64 = touched.iter().map(|&(a, b)| self.lattice_term(cells, a, b)).sum();
        for &i in flips {
            cells[i] = !cells[i];
        }
        let after: f64 = touched.iter().map(|&(a, b)| self.lattice_term(cells, a, b)).sum();
        for &i in flips {
            cells[i] = !cells[i];
        }
        let bulk: f64 = flips
            .iter()
            .map(|&i| if cells[i] { -self.bulk_at(i) } else { self.bulk_at(i) })
            .sum();
        after - before + bulk
    }
}

/// Energy of a mask on a box with the medium at unit period, the formula the
/// relaxed solver minimizes.
pub fn set_energy(m: &PeriodicMetric, grid: &BoxGrid, mask: &BitMask, bulk: Option<&ScalarField>) -> Result<f64> {
    if mask.grid != Grid::Box(*grid) {
        return Err(Error::Shape("mask lives on another grid".into()));
    }
    Ok(IsoProblem::new(m, *grid, 1.0, bulk)?.energy(mask))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiameterReport {
    /// Largest distance between cell centres of the mask.
    pub diameter: f64,
    /// The mask occupies a cell of the outermost ring: the box may truncate it.
    pub touches_wall: bool,
    pub box_side: f64,
}

pub fn diameter_report(mask: &BitMask) -> Result<DiameterReport> {
    let Grid::Box(g) = mask.grid else {
        return Err(Error::Domain("diameter reports are defined on boxes".into()));
    };
    let n = g.n();
    let pts: Vec<[f64; 2]> = (0..g.cells()).filter(|&i| mask.cells[i]).map(|i| g.center(i)).collect();
    if pts.is_empty() {
        return Err(Error::Domain("diameter of an empty mask".into()));
    }
    let hull = if pts.len() > 2 { convex_hull(&pts) } else { (0..pts.len()).collect() };
    let hull = if hull.is_empty() { (0..pts.len()).collect() } else { hull };
    let mut diameter: f64 = 0.0;
    for &a in &hull {
        for &b in &hull {
            diameter = diameter.max((pts[a][0] - pts[b][0]).hypot(pts[a][1] - pts[b][1]));
        }
    }
    let touches_wall = (0..g.cells()).any(|i| {
        let (i0, i1) = (i % n, i / n);
        mask.cells[i] && (i0 == 0 || i1 == 0 || i0 == n - 1 || i1 == n - 1)
    });
    Ok(DiameterReport {
        diameter,
        touches_wall,
        box_side: g.side(),
    })
}

/// Number of 4-connected components of a box mask.
pub fn component_count(mask: &BitMask) -> usize {
    let n = mask.grid.n();
    let mut seen = vec![false; mask.cells.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.cells.len() {
        if !mask.cells[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(c) = stack.pop() {
            let (i0, i1) = (c % n, c / n);
            let mut visit = |j: usize| {
                if mask.cells[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if i0 > 0 {
                visit(c - 1);
            }
            if i0 + 1 < n {
                visit(c + 1);
            }
            if i1 > 0 {
                visit(c - n);
            }
            if i1 + 1 < n {
                visit(c + n);
            }
        }
    }
    count
}

/// Mask cells with a 4-neighbour outside the mask or on the box wall.
pub fn boundary_cells(mask: &BitMask) -> Vec<usize> {
    let n = mask.grid.n();
    (0..mask.cells.len())
        .filter(|&i| {
            if !mask.cells[i] {
                return false;
            }
            let (i0, i1) = (i % n, i / n);
            i0 == 0
                || i1 == 0
                || i0 + 1 == n
                || i1 + 1 == n
                || !mask.cells[i - 1]
                || !mask.cells[i + 1]
                || !mask.cells[i - n]
                || !mask.cells[i + n]
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IsoResult {
    pub mode: IsoMode,
    pub target_volume: f64,
    /// Relaxed density, one value per box cell, in `[0, 1]`: the last band
    /// round's when a band is set, else the plain relaxation's.
    #[serde(skip)]
    pub u: Option<ScalarField>,
    /// Level of the mask selected from `u`.
    pub level: f64,
    #[serde(skip)]
    pub mask: Option<BitMask>,
    pub volume: f64,
    /// Discrete energy of the final mask (bulk included).
    pub energy: f64,
    /// Energy of the level-set mask of the plain relaxation.
    pub level_energy: f64,
    /// Objective of the plain relaxation (penalty included in penalized mode).
    pub relaxed_energy: f64,
    /// Certified lower bound on the relaxed objective.
    pub dual: f64,
    pub gap: f64,
    /// Every relaxed solve, band rounds included, met its gap tolerance.
    pub certified: bool,
    pub iters: usize,
    pub polish_swaps: usize,
    pub boundary_cells: usize,
    pub components: usize,
    pub diameter: Option<DiameterReport>,
}

impl IsoResult {
    pub fn mask(&self) -> &BitMask {
        self.mask.as_ref().expect("solver results carry their mask")
    }

    pub fn density(&self) -> &ScalarField {
        self.u.as_ref().expect("solver results carry their density")
    }

    /// Relative duality gap of the relaxed problem.
    pub fn relative_gap(&self) -> f64 {
        self.gap / self.relaxed_energy.abs().max(f64::MIN_POSITIVE)
    }
}

/// Projection of `y` onto `{u ∈ [0, 1]^N : Σ u = target}` (or, with `cap`,
/// the shift `t` restricted to `|t| <= cap` as in the penalty's prox):
/// `u = clamp(y + t)` with `t` found by a bracketed Newton iteration on the
/// piecewise-linear volume, then an exact solve on the free set.
fn shift_project(y: &[f64], u: &mut [f64], target: f64, cap: Option<f64>) {
    let volume = |t: f64| -> (f64, usize) {
        let mut s = 0.0;
        let mut free = 0;
        for &v in y {
            let w = v + t;
            if w >= 1.0 {
                s += 1.0;
            } else if w > 0.0 {
                s += w;
                free += 1;
            }
        }
        (s, free)
    };
    let (ymin, ymax) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut lo, mut hi) = (-ymax, 1.0 - ymin);
    let tol = 1e-12 * target.max(1.0);
    let mut t = 0.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let (s, free) = volume(t);
        let err = s - target;
        if err.abs() <= tol {
            break;
        }
        if err > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = if free > 0 { t - err / free as f64 } else { f64::NAN };
        t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 {
            break;
        }
    }
    if let Some(cap) = cap {
        t = t.clamp(-cap, cap);
    }
    for (o, v) in u.iter_mut().zip(y) {
        *o = (v + t).clamp(0.0, 1.0);
    }
}

/// `min { ⟨c, u⟩ + penalty(Σ u) : u ∈ [0, 1]^N }` in cell units, where the
/// volume is fixed (`None`) or penalized by `mu_cells |Σ u - target|`.
fn knapsack_bound(c: &[f64], target: f64, mu_cells: Option<f64>) -> f64 {
    let mut sorted = c.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let cost_at = |k: f64| -> f64 {
        let whole = k.floor() as usize;
        let mut s: f64 = sorted[..whole.min(sorted.len())].iter().sum();
        if whole < sorted.len() {
            s += (k - whole as f64) * sorted[whole];
        }
        s
    };
    match mu_cells {
        None => cost_at(target),
        Some(mu) => {
            let mut best = cost_at(target);
            let mut prefix = 0.0;
            for k in 0..=sorted.len() {
                best = best.min(prefix + mu * (k as f64 - target).abs());
                if k < sorted.len() {
                    prefix += sorted[k];
                }
            }
            best
        }
    }
}

/// Relaxed solve, level selection, swap search over several starting masks
/// (best objective wins) and the optional band refinement.
pub fn solve_iso(m: &PeriodicMetric, params: &IsoParams, bulk: Option<&ScalarField>) -> Result<IsoResult> {
    let grid = params.validate()?;
    let problem = IsoProblem::new(m, grid, params.period, bulk)?;
    let g = Grid::Box(grid);
    let n_cells = grid.cells();
    let h2 = g.cell_volume();
    let target = params.volume / h2;
    let mu = match params.mode {
        IsoMode::Constrained => None,
        IsoMode::Penalized { mu } => Some(mu),
    };
    let bulk_v: Vec<f64> = problem.bulk.clone().unwrap_or_else(|| vec![0.0; n_cells]);

    let mut state = Relaxation {
        u: vec![(target / n_cells as f64).clamp(0.0, 1.0); n_cells],
        z: vec![0.0; 2 * g.vector_cells()],
    };
    let Stage {
        primal,
        dual,
        mut iters,
        mut certified,
    } = state.run(&problem, params, &bulk_v, target, mu)?;
    let density = ScalarField::from_values(grid, state.u.clone())?;
    let achieved = h2 * density.values.iter().sum::<f64>();
    let count_target = match mu {
        None => target,
        Some(_) => achieved / h2,
    };
    let (level, level_mask) = select_level(&density, count_target);
    let level_energy = problem.energy(&level_mask);

    let (mask, swaps) = if params.polish {
        let k = count_target.round().clamp(0.0, n_cells as f64) as usize;
        // a nearly flat density ranks cells by noise: compact balls around
        // its centroid join the level set as starting masks
        let mut starts = vec![top_k(&density, k)];
        starts.extend(compact_starts(&density, k));
        let (mut best, mut best_obj, mut swaps) = (level_mask.clone(), f64::INFINITY, 0);
        for start in starts {
            let (polished, s) = improve(
                &problem,
                start,
                mu.map(|mu| (mu, params.volume)),
                params.polish_kicks,
                params.seed,
            );
            let obj = objective_mask(&problem, &polished, mu, params.volume);
            if obj < best_obj {
                (best, best_obj, swaps) = (polished, obj, s);
            }
        }
        let keep_level = mu.is_some() && objective_mask(&problem, &level_mask, mu, params.volume) < best_obj;
        if keep_level {
            (level_mask, 0)
        } else {
            (recentre(&problem, best), swaps)
        }
    } else {
        (level_mask, 0)
    };
    let (density, level, mask) = match params.band {
        Some(band) => {
            let mut state = Relaxation {
                u: mask.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
                z: state.z,
            };
            let (mut level, mut mask) = (level, mask);
            let alpha = band.strength / problem.h();
            let width = band.width_for(params.volume, problem.h());
            for _ in 0..band.rounds {
                let fixed = band_outside(&mask, width);
                let lin: Vec<f64> = (0..n_cells).map(|i| bulk_v[i] + alpha * (1.0 - 2.0 * state.u[i])).collect();
                let stage = state.run_fixed(&problem, params, &lin, target, mu, Some(&fixed))?;
                certified &= stage.certified;
                iters += stage.iters;
                let f = ScalarField::from_values(grid, state.u.clone())?;
                let count = match mu {
                    None => target,
                    Some(_) => f.values.iter().sum::<f64>(),
                };
                (level, mask) = select_level(&f, count);
            }
            (ScalarField::from_values(grid, state.u)?, level, mask)
        }
        None => (density, level, mask),
    };
    let energy = problem.energy(&mask);
    Ok(IsoResult {
        mode: params.mode,
        target_volume: params.volume,
        level,
        volume: mask.volume(),
        energy,
        level_energy,
        relaxed_energy: primal,
        dual,
        gap: primal - dual,
        certified,
        iters,
        polish_swaps: swaps,
        boundary_cells: boundary_cells(&mask).len(),
        components: component_count(&mask),
        diameter: diameter_report(&mask).ok(),
        u: Some(density),
        mask: Some(mask),
    })
}

/// Penalized solve: `solve_iso` with `mode = penalized(mu)`.
pub fn solve_penalized(m: &PeriodicMetric, params: &IsoParams, bulk: Option<&ScalarField>) -> Result<IsoResult> {
    if !matches!(params.mode, IsoMode::Penalized { .. }) {
        return Err(Error::Params("penalized solve needs mode = penalized".into()));
    }
    solve_iso(m, params, bulk)
}

/// The smallest `μ` in the doubling sequence from `1 / c0` whose penalized
/// solve achieves the target volume within `h²` per boundary cell, and that
/// solve. `None` when `doublings` are exhausted.
#[derive(Clone, Debug)]
pub struct PenaltyThreshold {
    pub mu: f64,
    pub result: IsoResult,
    /// `(μ, achieved volume)` for every solve tried.
    pub trail: Vec<(f64, f64)>,
}

pub fn penalty_threshold(
    m: &PeriodicMetric,
    params: &IsoParams,
    bulk: Option<&ScalarField>,
    doublings: usize,
) -> Result<Option<PenaltyThreshold>> {
    let h2 = params.grid()?.h().powi(2);
    let mut mu = 1.0 / m.c0();
    let mut trail = Vec::new();
    for _ in 0..=doublings {
        let p = IsoParams {
            mode: IsoMode::Penalized { mu },
            ..params.clone()
        };
        let r = solve_iso(m, &p, bulk)?;
        trail.push((mu, r.volume));
        if (r.volume - params.volume).abs() <= h2 * r.boundary_cells as f64 {
            return Ok(Some(PenaltyThreshold { mu, result: r, trail }));
        }
        mu *= 2.0;
    }
    Ok(None)
}

/// Cells farther than `width` cells (Euclidean, between centres) from every
/// cell of the other phase keep their mask value; the rest are free.
fn band_outside(mask: &BitMask, width: f64) -> Vec<Option<bool>> {
    let n = match mask.grid {
        Grid::Box(g) => g.n(),
        _ => unreachable!(),
    };
    let r = width.ceil() as isize;
    let cells = &mask.cells;
    (0..n * n)
        .map(|k| {
            let (i, j) = ((k % n) as isize, (k / n) as isize);
            let me = cells[k];
            for dj in -r..=r {
                for di in -r..=r {
                    if ((di * di + dj * dj) as f64) > width * width {
                        continue;
                    }
                    let (a, b) = (i + di, j + dj);
                    let other = if a < 0 || b < 0 || a >= n as isize || b >= n as isize {
                        false
                    } else {
                        cells[(b as usize) * n + a as usize]
                    };
                    if other != me {
                        return None;
                    }
                }
            }
            Some(me)
        })
        .collect()
}

struct Relaxation {
    u: Vec<f64>,
    z: Vec<f64>,
}

struct Stage {
    primal: f64,
    dual: f64,
    iters: usize,
    certified: bool,
}

impl Relaxation {
    /// Primal-dual iterations on `TV(u) + h² ⟨lin, u⟩` (plus the volume
    /// penalty) until the knapsack dual certifies.
    fn run(&mut self, problem: &IsoProblem, params: &IsoParams, lin: &[f64], target: f64, mu: Option<f64>) -> Result<Stage> {
        self.run_fixed(problem, params, lin, target, mu, None)
    }

    /// As `run`, with the cells where `fixed` is `Some(b)` held at `b`.
    fn run_fixed(
        &mut self,
        problem: &IsoProblem,
        params: &IsoParams,
        lin: &[f64],
        target: f64,
        mu: Option<f64>,
        fixed: Option<&[Option<bool>]>,
    ) -> Result<Stage> {
        let g = Grid::Box(problem.grid);
        let (tau, sigma, _) = params.solver.resolve(&g)?;
        let n_cells = self.u.len();
        let h2 = g.cell_volume();
        let mut u_bar = self.u.clone();
        let mut u_new = vec![0.0; n_cells];
        let mut y = vec![0.0; n_cells];
        let mut w = vec![0.0; self.z.len()];
        let mut div = vec![0.0; n_cells];
        let objective = |u: &[f64]| {
            let mut w = vec![0.0; 2 * g.vector_cells()];
            g.gradient_into(u, &mut w);
            let base = problem.metric.energy(&w, 2, h2) + h2 * lin.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            match mu {
                None => base,
                Some(mu) => base + mu * (h2 * u.iter().sum::<f64>() - params.volume).abs(),
            }
        };
        let mut stage = Stage {
            primal: f64::NAN,
            dual: f64::NAN,
            iters: 0,
            certified: false,
        };
        while stage.iters < params.solver.max_iters {
            g.gradient_into(&u_bar, &mut w);
            for (zi, wi) in self.z.iter_mut().zip(&w) {
                *zi += sigma * wi;
            }
            problem.metric.project(&mut self.z, 2);
            g.divergence_into(&self.z, &mut div);
            for i in 0..n_cells {
                y[i] = self.u[i] + tau * (div[i] - lin[i]);
            }
            if let Some(f) = fixed {
                for (yi, fi) in y.iter_mut().zip(f) {
                    match fi {
                        Some(true) => *yi = 1e9,
                        Some(false) => *yi = -1e9,
                        None => {}
                    }
                }
            }
            // soft shift in penalized mode: volume moves toward the target by at most τμ
            shift_project(&y, &mut u_new, target, mu.map(|mu| tau * mu));
            for i in 0..n_cells {
                u_bar[i] = 2.0 * u_new[i] - self.u[i];
            }
            std::mem::swap(&mut self.u, &mut u_new);
            stage.iters += 1;

            if stage.iters % params.solver.check_every == 0 || stage.iters == params.solver.max_iters {
                stage.primal = objective(&self.u);
                let c = |i: usize| h2 * (lin[i] - div[i]);
                stage.dual = match fixed {
                    None => knapsack_bound(&(0..n_cells).map(c).collect::<Vec<_>>(), target, mu.map(|mu| mu * h2)),
                    Some(f) => {
                        let ones: Vec<usize> = (0..n_cells).filter(|&i| f[i] == Some(true)).collect();
                        let free: Vec<f64> = (0..n_cells).filter(|&i| f[i].is_none()).map(c).collect();
                        ones.iter().map(|&i| c(i)).sum::<f64>()
                            + knapsack_bound(&free, target - ones.len() as f64, mu.map(|mu| mu * h2))
                    }
                };
                if !(stage.primal.is_finite() && stage.dual.is_finite()) {
                    return Err(Error::NonFinite("isoperimetric iterate"));
                }
                if stage.primal - stage.dual <= params.solver.tol_gap * stage.primal.abs() {
                    stage.certified = true;
                    break;
                }
            }
        }
        Ok(stage)
    }
}

fn objective_mask(problem: &IsoProblem, mask: &BitMask, mu: Option<f64>, volume: f64) -> f64 {
    problem.energy(mask) + mu.map_or(0.0, |mu| mu * (mask.volume() - volume).abs())
}

/// The level `s` whose mask `{u > s}` has a cell count closest to `target`
/// (ties toward the larger mask).
pub fn select_level(u: &ScalarField, target: f64) -> (f64, BitMask) {
    let mut levels: Vec<f64> = u.values.clone();
    levels.sort_unstable_by(|a, b| b.total_cmp(a));
    levels.dedup();
    // {u > levels[j]} holds the cells strictly above the j-th distinct value
    let mut best = (f64::INFINITY, usize::MAX, f64::NAN);
    let mut above = 0;
    let mut idx = 0;
    let mut sorted = u.values.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    for &s in levels.iter().chain(std::iter::once(&f64::NEG_INFINITY)) {
        while idx < sorted.len() && sorted[idx] > s {
            idx += 1;
            above += 1;
        }
        let miss = (above as f64 - target).abs();
        if miss < best.0 || (miss == best.0 && above > best.1) {
            best = (miss, above, s);
        }
    }
    let s = if best.2 == f64::NEG_INFINITY { -1.0 } else { best.2 };
    let mask = BitMask {
        grid: u.grid,
        cells: u.values.iter().map(|v| *v > s).collect(),
    };
    (s, mask)
}

/// The `k` cells with the largest density (ties by index).
/// The `k` cells nearest the centroid of `u` in the ℓ², ℓ¹ and ℓ∞ norms.
fn compact_starts(u: &ScalarField, k: usize) -> Vec<BitMask> {
    let Grid::Box(g) = u.grid else { return Vec::new() };
    let n = g.n();
    let mass: f64 = u.values.iter().sum();
    if mass <= 0.0 {
        return Vec::new();
    }
    let mut c = [0.0; 2];
    for (idx, w) in u.values.iter().enumerate() {
        c[0] += w * (idx % n) as f64;
        c[1] += w * (idx / n) as f64;
    }
    let c = [c[0] / mass, c[1] / mass];
    let norms: [fn(f64, f64) -> f64; 3] = [|x, y| x.hypot(y), |x, y| x.abs() + y.abs(), |x, y| x.abs().max(y.abs())];
    norms
        .iter()
        .map(|norm| {
            let dist: Vec<f64> = (0..n * n).map(|idx| -norm((idx % n) as f64 - c[0], (idx / n) as f64 - c[1])).collect();
            top_k(&ScalarField::from_values(g, dist).expect("box-sized field"), k)
        })
        .collect()
}

fn top_k(u: &ScalarField, k: usize) -> BitMask {
    let mut order: Vec<usize> = (0..u.values.len()).collect();
    order.sort_by(|&a, &b| u.values[b].total_cmp(&u.values[a]).then(a.cmp(&b)));
    let mut cells = vec![false; u.values.len()];
    for &i in &order[..k] {
        cells[i] = true;
    }
    BitMask { grid: u.grid, cells }
}

/// Iterated local search: polish, then repeatedly perturb the best mask (a
/// random translation and up to five random swaps near its interface, or now
/// and then, on boxes of at most 64 cells, a fresh random mask of the same
/// size) and polish again, keeping
/// strict improvements.
fn improve(
    problem: &IsoProblem,
    start: BitMask,
    penalty: Option<(f64, f64)>,
    kicks: usize,
    seed: u64,
) -> (BitMask, usize) {
    let score = |m: &BitMask| {
        problem.energy(m) + penalty.map_or(0.0, |(mu, v)| mu * (m.volume() - v).abs())
    };
    let (mut best, mut swaps) = polish(problem, start, penalty);
    let mut best_score = score(&best);
    let tol = 1e-12 * best_score.abs().max(problem.h());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.n();
    for _ in 0..kicks {
        let inside: Vec<usize> = (0..best.cells.len()).filter(|&i| best.cells[i]).collect();
        let outside: Vec<usize> = (0..best.cells.len()).filter(|&i| !best.cells[i]).collect();
        if inside.is_empty() || outside.is_empty() {
            break;
        }
        let near = |i: usize, pool: &[usize]| -> Vec<usize> {
            // candidates within two cells of `i`, or anywhere on small boxes
            if best.cells.len() <= 64 {
                return pool.to_vec();
            }
            let (a0, a1) = ((i % n) as isize, (i / n) as isize);
            pool.iter()
                .copied()
                .filter(|&j| {
                    let (b0, b1) = ((j % n) as isize, (j / n) as isize);
                    (a0 - b0).abs() <= 2 && (a1 - b1).abs() <= 2
                })
                .collect()
        };
        let mut trial = best.clone();
        if best.cells.len() <= 64 && rng.gen_bool(0.1) {
            // restart from a random mask of the same size
            let mut order: Vec<usize> = (0..best.cells.len()).collect();
            order.shuffle(&mut rng);
            trial.cells.iter_mut().for_each(|c| *c = false);
            for &i in &order[..inside.len()] {
                trial.cells[i] = true;
            }
        } else if rng.gen_bool(0.5) {
            if let Some(shifted) = random_translate(&best, &mut rng) {
                trial = shifted;
            }
        }
        for _ in 0..rng.gen_range(0..=5) {
            let boundary = boundary_cells(&trial);
            let pool = if boundary.is_empty() { inside.clone() } else { boundary };
            let a = pool[rng.gen_range(0..pool.len())];
            let outs: Vec<usize> = near(a, &outside).into_iter().filter(|&j| !trial.cells[j]).collect();
            if outs.is_empty() {
                continue;
            }
            let b = outs[rng.gen_range(0..outs.len())];
            trial.cells[a] = false;
            trial.cells[b] = true;
        }
        let (candidate, s) = polish(problem, trial, penalty);
        let cs = score(&candidate);
        if cs < best_score - tol {
            best = candidate;
            best_score = cs;
            swaps += s;
        }
    }
    (best, swaps)
}

/// Wall contact costs nothing extra, so the search can leave the shape
/// anywhere. Moves it to the translate nearest the box centre that does not
/// raise the energy.
fn recentre(problem: &IsoProblem, mask: BitMask) -> BitMask {
    let n = problem.n() as isize;
    let Some([lo0, hi0, lo1, hi1]) = bounding_box(&mask, n) else {
        return mask;
    };
    let ideal = [
        (n - 1 - hi0 - lo0) as f64 / 2.0,
        (n - 1 - hi1 - lo1) as f64 / 2.0,
    ];
    let off = |d: [isize; 2]| (d[0] as f64 - ideal[0]).hypot(d[1] as f64 - ideal[1]);
    let current = off([0, 0]);
    let mut shifts: Vec<[isize; 2]> = (-lo0..=n - 1 - hi0)
        .flat_map(|d0| (-lo1..=n - 1 - hi1).map(move |d1| [d0, d1]))
        .filter(|&d| off(d) < current - 1e-9)
        .collect();
    shifts.sort_by(|a, b| off(*a).total_cmp(&off(*b)).then(a.cmp(b)));
    let energy = problem.energy(&mask);
    let tol = 1e-12 * energy.abs().max(problem.h());
    for d in shifts.into_iter().take(400) {
        let moved = shift_mask(&mask, n, d);
        if problem.energy(&moved) <= energy + tol {
            return moved;
        }
    }
    mask
}

fn bounding_box(mask: &BitMask, n: isize) -> Option<[isize; 4]> {
    let (mut lo0, mut lo1, mut hi0, mut hi1) = (n, n, -1, -1);
    for (i, _) in mask.cells.iter().enumerate().filter(|(_, c)| **c) {
        let (a, b) = ((i as isize) % n, (i as isize) / n);
        lo0 = lo0.min(a);
        hi0 = hi0.max(a);
        lo1 = lo1.min(b);
        hi1 = hi1.max(b);
    }
    (hi0 >= 0).then_some([lo0, hi0, lo1, hi1])
}

fn shift_mask(mask: &BitMask, n: isize, d: [isize; 2]) -> BitMask {
    let mut cells = vec![false; mask.cells.len()];
    for (i, _) in mask.cells.iter().enumerate().filter(|(_, c)| **c) {
        let (a, b) = ((i as isize) % n + d[0], (i as isize) / n + d[1]);
        cells[(b * n + a) as usize] = true;
    }
    BitMask { grid: mask.grid, cells }
}

/// The mask moved by a random nonzero offset that keeps it inside the box.
fn random_translate(mask: &BitMask, rng: &mut ChaCha8Rng) -> Option<BitMask> {
    let n = mask.grid.n() as isize;
    let [lo0, hi0, lo1, hi1] = bounding_box(mask, n)?;
    if lo0 == 0 && hi0 == n - 1 && lo1 == 0 && hi1 == n - 1 {
        return None;
    }
    loop {
        let d = [rng.gen_range(-lo0..=n - 1 - hi0), rng.gen_range(-lo1..=n - 1 - hi1)];
        if d != [0, 0] {
            return Some(shift_mask(mask, n, d));
        }
    }
}

/// Best-improvement local search over single-cell swaps (volume kept) and,
/// with a penalty `(μ, v)`, single flips. Candidates are cells within one
/// 8-neighbour step of the interface; boxes of at most 64 cells use all cells.
fn polish(problem: &IsoProblem, mut mask: BitMask, penalty: Option<(f64, f64)>) -> (BitMask, usize) {
    let n = problem.n();
    let all = mask.cells.len() <= 64;
    let h2 = problem.h() * problem.h();
    let scale = problem.energy(&mask).abs().max(problem.h());
    let mut swaps = 0;
    let max_rounds = 4 * mask.cells.len() + 16;
    for _ in 0..max_rounds {
        let near = |i: usize, cells: &[bool]| -> bool {
            if all {
                return true;
            }
            let (i0, i1) = ((i % n) as isize, (i / n) as isize);
            let me = cells[i];
            for d1 in -1..=1 {
                for d0 in -1..=1 {
                    let (a, b) = (i0 + d0, i1 + d1);
                    let other = a >= 0 && b >= 0 && a < n as isize && b < n as isize && cells[(b * n as isize + a) as usize];
                    if other != me {
                        return true;
                    }
                }
            }
            false
        };
        let remove: Vec<usize> = (0..mask.cells.len()).filter(|&i| mask.cells[i] && near(i, &mask.cells)).collect();
        let add: Vec<usize> = (0..mask.cells.len()).filter(|&i| !mask.cells[i] && near(i, &mask.cells)).collect();
        let mut cells = mask.cells.clone();
        let d_remove: Vec<f64> = remove.iter().map(|&i| problem.flip_delta(&mut cells, &[i])).collect();
        let d_add: Vec<f64> = add.iter().map(|&i| problem.flip_delta(&mut cells, &[i])).collect();

        let mut best: (f64, Vec<usize>) = (-1e-12 * scale, Vec::new());
        for (ra, &a) in remove.iter().enumerate() {
            let (a0, a1) = ((a % n) as isize, (a / n) as isize);
            for (rb, &b) in add.iter().enumerate() {
                let (b0, b1) = ((b % n) as isize, (b / n) as isize);
                let (dx, dy) = (b0 - a0, b1 - a1);
                let interacting = (dx.abs() + dy.abs() == 1) || (dx == -1 && dy == 1) || (dx == 1 && dy == -1);
                let delta = if interacting {
                    problem.flip_delta(&mut cells, &[a, b])
                } else {
                    d_remove[ra] + d_add[rb]
                };
                if delta < best.0 {
                    best = (delta, vec![a, b]);
                }
            }
        }
        if let Some((mu, v)) = penalty {
            let vol = mask.volume();
            for (k, &a) in remove.iter().enumerate() {
                let delta = d_remove[k] + mu * ((vol - h2 - v).abs() - (vol - v).abs());
                if delta < best.0 {
                    best = (delta, vec![a]);
                }
            }
            for (k, &b) in add.iter().enumerate() {
                let delta = d_add[k] + mu * ((vol + h2 - v).abs() - (vol - v).abs());
                if delta < best.0 {
                    best = (delta, vec![b]);
                }
            }
        }
        if best.1.is_empty() {
            break;
        }
        for &i in &best.1 {
            mask.cells[i] = !mask.cells[i];
        }
        swaps += 1;
    }
    (mask, swaps)
}

/// Exhaustive minimum of the mask energy over all masks with exactly
/// `round(volume / h²)` cells, on boxes of at most 25 cells. Ties go to the
/// lexicographically smallest cell-index bit pattern.
pub fn brute_force_iso(
    m: &PeriodicMetric,
    grid: &BoxGrid,
    volume: f64,
    bulk: Option<&ScalarField>,
) -> Result<(BitMask, f64)> {
    let problem = IsoProblem::new(m, *grid, 1.0, bulk)?;
    let cells = grid.cells();
    if cells > 25 {
        return Err(Error::Params(format!("brute force is limited to 25 cells, box has {cells}")));
    }
    let k = (volume / (grid.h() * grid.h())).round();
    if !(0.0..=cells as f64).contains(&k) {
        return Err(Error::InfeasibleVolume {
            volume,
            capacity: grid.side() * grid.side(),
        });
    }
    let k = k as u32;
    let best = enumerate_subsets(cells as u32, k, |bits| energy_bits(&problem, bits));
    Ok((bits_to_mask(*grid, best.1), best.0))
}

/// Exhaustive minimum of `E(E) + μ ||E| - v|` over all masks.
pub fn brute_force_penalized(
    m: &PeriodicMetric,
    grid: &BoxGrid,
    volume: f64,
    mu: f64,
    bulk: Option<&ScalarField>,
) -> Result<(BitMask, f64)> {
    let problem = IsoProblem::new(m, *grid, 1.0, bulk)?;
    let cells = grid.cells() as u32;
    if cells > 25 {
        return Err(Error::Params(format!("brute force is limited to 25 cells, box has {cells}")));
    }
    let h2 = grid.h() * grid.h();
    let best = (0..=cells)
        .into_par_iter()
        .map(|k| {
            enumerate_subsets(cells, k, |bits| {
                energy_bits(&problem, bits) + mu * (k as f64 * h2 - volume).abs()
            })
        })
        .reduce(|| (f64::INFINITY, u32::MAX), min_pair);
    Ok((bits_to_mask(*grid, best.1), best.0))
}

fn min_pair(a: (f64, u32), b: (f64, u32)) -> (f64, u32) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

fn energy_bits(problem: &IsoProblem, bits: u32) -> f64 {
    let cells: Vec<bool> = (0..problem.grid.cells()).map(|i| bits >> i & 1 == 1).collect();
    problem.energy_of(&cells)
}

fn bits_to_mask(grid: BoxGrid, bits: u32) -> BitMask {
    BitMask {
        grid: Grid::Box(grid),
        cells: (0..grid.cells()).map(|i| bits >> i & 1 == 1).collect(),
    }
}

/// Minimum of `f` over `k`-subsets of `{0..n}` as bit patterns, split over the
/// highest set bit for parallelism.
fn enumerate_subsets(n: u32, k: u32, f: impl Fn(u32) -> f64 + Sync) -> (f64, u32) {
    if k == 0 {
        return (f(0), 0);
    }
    (k - 1..n)
        .into_par_iter()
        .map(|top| {
            let high = 1u32 << top;
            let mut best = (f64::INFINITY, u32::MAX);
            let rest = k - 1;
            if rest == 0 {
                return (f(high), high);
            }
            // Gosper's hack over `rest`-subsets of the `top` lower bits
            let mut s: u32 = (1u32 << rest) - 1;
            let limit = 1u32 << top;
            while s < limit {
                let bits = s | high;
                best = min_pair(best, (f(bits), bits));
                let c = s & s.wrapping_neg();
                let r = s + c;
                s = (((r ^ s) >> 2) / c) | r;
            }
            best
        })
        .reduce(|| (f64::INFINITY, u32::MAX), min_pair)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    /// `|E Δ (W' + z)| / |W'|`, both rasterized at cell centres.
    pub symmetric_difference: f64,
    /// Hausdorff distance between the mask boundary cells and `∂(W' + z)`.
    pub hausdorff: f64,
    /// Translation aligning the centroid of `W'` with that of the mask.
    pub centroid_shift: [f64; 2],
    /// Scale with `|W'| = |s W| = target area`.
    pub scale: f64,
}

/// Compares a box mask with the Wulff shape scaled to `area` and translated
/// onto the mask's centroid.
pub fn shape_metrics(mask: &BitMask, wulff: &WulffShape, area: f64) -> Result<ShapeMetrics> {
    let Grid::Box(g) = mask.grid else {
        return Err(Error::Domain("shape metrics are defined on boxes".into()));
    };
    let count = mask.cells.iter().filter(|c| **c).count();
    if count == 0 {
        return Err(Error::Domain("shape metrics of an empty mask".into()));
    }
    let scale = (area / wulff.area).sqrt();
    let scaled = WulffShape::from_support(wulff.support.iter().map(|(nu, f)| (*nu, f * scale)).collect())?;
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in (0..g.cells()).filter(|&i| mask.cells[i]) {
        let c = g.center(i);
        cx += c[0];
        cy += c[1];
    }
    let wc = scaled.centroid();
    let z = [cx / count as f64 - wc[0], cy / count as f64 - wc[1]];
    let xor = (0..g.cells())
        .filter(|&i| {
            let c = g.center(i);
            mask.cells[i] != scaled.contains([c[0] - z[0], c[1] - z[1]])
        })
        .count();
    let h = g.h();
    let boundary: Vec<[f64; 2]> = boundary_cells(mask).iter().map(|&i| g.center(i)).collect();
    let d_mask = boundary
        .iter()
        .map(|c| scaled.boundary_distance([c[0] - z[0], c[1] - z[1]]))
        .fold(0.0, f64::max);
    let k = scaled.vertices.len();
    let mut d_shape: f64 = 0.0;
    for j in 0..k {
        let (a, b) = (scaled.vertices[j], scaled.vertices[(j + 1) % k]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let steps = ((len / (0.5 * h)).ceil() as usize).max(1);
        for s in 0..steps {
            let t = s as f64 / steps as f64;
            let p = [a[0] + t * (b[0] - a[0]) + z[0], a[1] + t * (b[1] - a[1]) + z[1]];
            let near = boundary
                .iter()
                .map(|c| (c[0] - p[0]).hypot(c[1] - p[1]))
                .fold(f64::INFINITY, f64::min);
            d_shape = d_shape.max(near);
        }
    }
    Ok(ShapeMetrics {
        symmetric_difference: xor as f64 * h * h / area,
        hausdorff: d_mask.max(d_shape),
        centroid_shift: z,
        scale,
    })
}

/// Box side suggested by the Wulff estimate, `3 (v / |W|)^{1/2} diam(W)`.
pub fn wulff_box_side(wulff: &WulffShape, volume: f64) -> f64 {
    3.0 * (volume / wulff.area).sqrt() * wulff.diameter()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RescaleEntry {
    pub epsilon: f64,
    pub metrics: ShapeMetrics,
    pub energy: f64,
    pub certified: bool,
    pub iters: usize,
    pub touches_wall: bool,
    #[serde(skip)]
    pub mask: Option<BitMask>,
}

/// Solves the isoperimetric problem with the medium period shrunk to each
/// `ε` on a fixed box, and compares every minimizer with `W` scaled to the
/// target volume. Runs the `ε` values in parallel; output order follows input.
pub fn rescale_experiment(
    m: &PeriodicMetric,
    base: &IsoParams,
    epsilons: &[f64],
    wulff: &WulffShape,
) -> Result<Vec<RescaleEntry>> {
    epsilons
        .par_iter()
        .map(|&eps| {
            let params = IsoParams {
                period: eps,
                ..base.clone()
            };
            let r = solve_iso(m, &params, None)?;
            Ok(RescaleEntry {
                epsilon: eps,
                metrics: shape_metrics(r.mask(), wulff, base.volume)?,
                energy: r.energy,
                certified: r.certified,
                iters: r.iters,
                touches_wall: r.diameter.as_ref().is_some_and(|d| d.touches_wall),
                mask: r.mask,
            })
        })
        .collect()
}

/// Symmetric differences non-increasing in `ε → 0`, each allowed to exceed
/// its predecessor by the relative `slack`.
pub fn nonincreasing_within(entries: &[RescaleEntry], slack: f64) -> bool {
    entries
        .windows(2)
        .all(|w| w[1].metrics.symmetric_difference <= (1.0 + slack) * w[0].metrics.symmetric_difference)
}
