//! Plane-like sets `{u > s}` with `u(x) = v_p(x mod 1) + p·x`, evaluated on a
//! square window of fundamental cells, and the checks run on them: slab
//! confinement, Birkhoff nesting, ordering, lamination gaps and the
//! calibration residual.
//!
//! For integer `p`, `p·x` at the cell center `(2i+1)/(2n)` is the integer
//! `p·(2i+1)` divided by `2n`. Since correctly rounded division and addition
//! are monotone, `u(x+q) >= u(x)` holds exactly in floating point whenever
//! `p·q >= 0`, so the Birkhoff containments are exact cell by cell.

use serde::{Deserialize, Serialize};

use crate::cell_solver::CellSolution;
use crate::error::{Error, Result};
use crate::grid::{gradient, Grid, VectorField};
use crate::metric::PeriodicMetric;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneLikeSet {
    pub p: [i64; 2],
    pub s: f64,
    /// Cells per fundamental period.
    pub n: usize,
    /// Fundamental cells per window side.
    pub copies: usize,
    /// Global index of the window's first cell along each axis.
    pub lo: [i64; 2],
    /// Row-major over the window, axis 0 fastest.
    pub cells: Vec<bool>,
    pub certified: bool,
}

fn integer_direction(p: &[f64]) -> Result<[i64; 2]> {
    if p.len() != 2 {
        return Err(Error::Domain("plane-like sets are two-dimensional".into()));
    }
    let mut out = [0i64; 2];
    for (o, v) in out.iter_mut().zip(p) {
        if v.fract() != 0.0 || v.abs() > 1e6 {
            return Err(Error::Domain(format!("direction {p:?} must be an integer vector")));
        }
        *o = *v as i64;
    }
    Ok(out)
}

impl PlaneLikeSet {
    pub fn side(&self) -> usize {
        self.copies * self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Window-local `(i, j)` of a global cell, if inside.
    fn local(&self, gi: i64, gj: i64) -> Option<usize> {
        let side = self.side() as i64;
        let (i, j) = (gi - self.lo[0], gj - self.lo[1]);
        (0..side).contains(&i).then_some(())?;
        (0..side).contains(&j).then_some(())?;
        Some((j * side + i) as usize)
    }

    pub fn contains_global(&self, gi: i64, gj: i64) -> Option<bool> {
        self.local(gi, gj).map(|k| self.cells[k])
    }

    pub fn center(&self, k: usize) -> [f64; 2] {
        let side = self.side();
        let (i, j) = ((k % side) as i64 + self.lo[0], (k / side) as i64 + self.lo[1]);
        let two_n = 2.0 * self.n as f64;
        [(2 * i + 1) as f64 / two_n, (2 * j + 1) as f64 / two_n]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    /// Cells of the set with a 4-neighbour outside it, plus cells outside
    /// with a neighbour inside (neighbours beyond the window are ignored).
    pub fn boundary_cells(&self) -> Vec<usize> {
        let side = self.side();
        let mut out = Vec::new();
        for j in 0..side {
            for i in 0..side {
                let k = j * side + i;
                let here = self.cells[k];
                let differs = (i > 0 && self.cells[k - 1] != here)
                    || (i + 1 < side && self.cells[k + 1] != here)
                    || (j > 0 && self.cells[k - side] != here)
                    || (j + 1 < side && self.cells[k + side] != here);
                if differs {
                    out.push(k);
                }
            }
        }
        out
    }

    /// Observed slab half-width `max |p·x - s| / |p|` over boundary cells
    /// (`∞` when the window holds no boundary).
    pub fn slab_width(&self) -> f64 {
        let norm = ((self.p[0] * self.p[0] + self.p[1] * self.p[1]) as f64).sqrt();
        let boundary = self.boundary_cells();
        if boundary.is_empty() {
            return f64::INFINITY;
        }
        boundary
            .iter()
            .map(|&k| {
                let x = self.center(k);
                ((self.p[0] as f64 * x[0] + self.p[1] as f64 * x[1]) - self.s).abs() / norm
            })
            .fold(0.0, f64::max)
    }

    /// Run lengths over the window, alternating and starting with excluded cells.
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let (mut current, mut len) = (false, 0usize);
        for &c in &self.cells {
            if c == current {
                len += 1;
            } else {
                runs.push(len);
                current = c;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    /// CSV of global cell indices `i,j` in the set.
    pub fn index_csv(&self) -> String {
        let side = self.side();
        let mut out = String::from("i,j\n");
        for (k, _) in self.cells.iter().enumerate().filter(|(_, c)| **c) {
            out.push_str(&format!(
                "{},{}\n",
                (k % side) as i64 + self.lo[0],
                (k / side) as i64 + self.lo[1]
            ));
        }
        out
    }
}

/// `{v_p(x mod 1) + p·x > s}` on a window of `copies x copies` fundamental
/// cells centred on the origin.
pub fn extract_planelike(sol: &CellSolution, s: f64, copies: usize) -> Result<PlaneLikeSet> {
    let p = integer_direction(&sol.p)?;
    if sol.grid.dim() != 2 {
        return Err(Error::Domain("plane-like sets are two-dimensional".into()));
    }
    if copies == 0 {
        return Err(Error::Params("window needs at least one copy".into()));
    }
    let n = sol.grid.n();
    let side = copies * n;
    let lo = -((side / 2) as i64);
    let two_n = 2.0 * n as f64;
    let ni = n as i64;
    let mut cells = Vec::with_capacity(side * side);
    for j in 0..side as i64 {
        for i in 0..side as i64 {
            let (gi, gj) = (lo + i, lo + j);
            let v = sol.v.values[(gj.rem_euclid(ni) * ni + gi.rem_euclid(ni)) as usize];
            let linear = (p[0] * (2 * gi + 1) + p[1] * (2 * gj + 1)) as f64 / two_n;
            cells.push(v + linear > s);
        }
    }
    Ok(PlaneLikeSet {
        p,
        s,
        n,
        copies,
        lo: [lo, lo],
        cells,
        certified: sol.certified,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabReport {
    pub m_obs: f64,
    /// `M_obs` on a window two copies wider.
    pub m_obs_widened: f64,
    pub h: f64,
    pub finite: bool,
    /// `|M_obs - M_obs(widened)| <= h`.
    pub stable: bool,
}

pub fn slab_report(sol: &CellSolution, s: f64, copies: usize) -> Result<SlabReport> {
    let a = extract_planelike(sol, s, copies)?;
    let b = extract_planelike(sol, s, copies + 2)?;
    let (m_obs, m_obs_widened) = (a.slab_width(), b.slab_width());
    let finite = m_obs.is_finite() && m_obs_widened.is_finite();
    Ok(SlabReport {
        m_obs,
        m_obs_widened,
        h: a.h(),
        finite,
        stable: finite && (m_obs - m_obs_widened).abs() <= a.h(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Containment {
    /// `E ⊆ E + q` (required when `p·q <= 0`).
    SetInTranslate,
    /// `E + q ⊆ E` (required when `p·q >= 0`).
    TranslateInSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffCheck {
    pub q: [i64; 2],
    pub containments: Vec<Containment>,
    pub pass: bool,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffReport {
    pub q_max: i64,
    pub checks: Vec<BirkhoffCheck>,
    pub pass: bool,
}

/// Cells `x` of the common window with `x ∈ A` and `x - q ∉ B` (`a_in_b`) or
/// `x - q ∈ B` and `x ∉ A`, counted over the window.
fn translate_violations(e: &PlaneLikeSet, q: [i64; 2], set_in_translate: bool) -> usize {
    let side = e.side() as i64;
    let n = e.n as i64;
    let (sx, sy) = (q[0] * n, q[1] * n);
    let mut violations = 0;
    for j in 0..side {
        for i in 0..side {
            let (gi, gj) = (e.lo[0] + i, e.lo[1] + j);
            let Some(shifted) = e.contains_global(gi - sx, gj - sy) else {
                continue;
            };
            let here = e.cells[(j * side + i) as usize];
            // x ∈ E+q  iff  x - q ∈ E
            let bad = if set_in_translate { here && !shifted } else { shifted && !here };
            violations += bad as usize;
        }
    }
    violations
}

/// Checks every integer `q != 0` with `|q|_∞ <= q_max` on the common window.
pub fn check_birkhoff(e: &PlaneLikeSet, q_max: i64) -> Result<BirkhoffReport> {
    if q_max < 1 || q_max as usize >= e.copies {
        return Err(Error::Params(format!(
            "window of {} copies does not overlap its translates by up to {q_max}",
            e.copies
        )));
    }
    let mut checks = Vec::new();
    for q1 in -q_max..=q_max {
        for q0 in -q_max..=q_max {
            if q0 == 0 && q1 == 0 {
                continue;
            }
            let q = [q0, q1];
            let pq = e.p[0] * q0 + e.p[1] * q1;
            let mut containments = Vec::new();
            if pq <= 0 {
                containments.push(Containment::SetInTranslate);
            }
            if pq >= 0 {
                containments.push(Containment::TranslateInSet);
            }
            let violations = containments
                .iter()
                .map(|c| translate_violations(e, q, *c == Containment::SetInTranslate))
                .sum();
            checks.push(BirkhoffCheck {
                q,
                containments,
                pass: violations == 0,
                violations,
            });
        }
    }
    Ok(BirkhoffReport {
        q_max,
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Ordering {
    Equal,
    /// `E1 ⊆ E2`.
    FirstInSecond,
    /// `E2 ⊆ E1`.
    SecondInFirst,
    /// Witness cells (global indices) of `E1 \ E2` and `E2 \ E1`.
    Crossing {
        first_minus_second: usize,
        second_minus_first: usize,
        witness_first: [i64; 2],
        witness_second: [i64; 2],
    },
}

impl Ordering {
    /// Nested after discounting at most `slack` cells on the smaller side.
    pub fn nested_up_to(&self, slack: usize) -> bool {
        match self {
            Ordering::Crossing {
                first_minus_second,
                second_minus_first,
                ..
            } => (*first_minus_second).min(*second_minus_first) <= slack,
            _ => true,
        }
    }
}

/// Containment verdict for two sets on the same window and direction.
pub fn check_ordering(e1: &PlaneLikeSet, e2: &PlaneLikeSet) -> Result<Ordering> {
    if e1.p != e2.p || e1.n != e2.n || e1.copies != e2.copies || e1.lo != e2.lo {
        return Err(Error::Shape("ordering needs sets with the same p and window".into()));
    }
    let side = e1.side();
    let global = |k: usize| [(k % side) as i64 + e1.lo[0], (k / side) as i64 + e1.lo[1]];
    let mut first = (0usize, None);
    let mut second = (0usize, None);
    for (k, (a, b)) in e1.cells.iter().zip(&e2.cells).enumerate() {
        if *a && !*b {
            first.0 += 1;
            first.1.get_or_insert(global(k));
        }
        if *b && !*a {
            second.0 += 1;
            second.1.get_or_insert(global(k));
        }
    }
    Ok(match (first, second) {
        ((0, _), (0, _)) => Ordering::Equal,
        ((0, _), _) => Ordering::FirstInSecond,
        (_, (0, _)) => Ordering::SecondInFirst,
        ((c1, Some(w1)), (c2, Some(w2))) => Ordering::Crossing {
            first_minus_second: c1,
            second_minus_first: c2,
            witness_first: w1,
            witness_second: w2,
        },
        _ => unreachable!("nonzero counts carry a witness"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaminationReport {
    pub eta: f64,
    /// Torus cell indices with `|p + Dv| < η`.
    pub gap_cells: Vec<usize>,
    pub gap_fraction: f64,
    pub coverage_fraction: f64,
    /// Sizes of the 4-connected components of the gap set on the torus, largest first.
    pub components: Vec<usize>,
    pub certified: bool,
}

/// `p + Dv` as a field on the solution's torus.
fn total_gradient(sol: &CellSolution) -> VectorField {
    let mut w = gradient(&sol.v);
    let cells = sol.grid.cells();
    for (k, pk) in sol.p.iter().enumerate() {
        w.values[k * cells..(k + 1) * cells].iter_mut().for_each(|x| *x += pk);
    }
    w
}

fn cell_norms(w: &VectorField, dim: usize) -> Vec<f64> {
    let cells = w.values.len() / dim;
    (0..cells)
        .map(|i| (0..dim).map(|k| w.values[k * cells + i].powi(2)).sum::<f64>().sqrt())
        .collect()
}

pub fn default_eta(p: &[f64]) -> f64 {
    0.1 * p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cells swept by no level set of `u`, up to the threshold `η`.
pub fn lamination_coverage(sol: &CellSolution, eta: f64) -> Result<LaminationReport> {
    if !(eta > 0.0) {
        return Err(Error::Params(format!("threshold {eta} must be positive")));
    }
    let g = sol.grid;
    let norms = cell_norms(&total_gradient(sol), g.dim());
    let gap: Vec<bool> = norms.iter().map(|r| *r < eta).collect();
    let gap_cells: Vec<usize> = (0..gap.len()).filter(|&i| gap[i]).collect();

    let mut seen = vec![false; gap.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    let n = g.n();
    for &start in &gap_cells {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(c) = stack.pop() {
            size += 1;
            let idx = g.index(c);
            for k in 0..g.dim() {
                for step in [1, n - 1] {
                    let mut nb = idx;
                    nb[k] = (nb[k] + step) % n;
                    let j = g.linear(&nb[..g.dim()]);
                    if gap[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        components.push(size);
    }
    components.sort_unstable_by(|a, b| b.cmp(a));
    let fraction = gap_cells.len() as f64 / gap.len() as f64;
    Ok(LaminationReport {
        eta,
        gap_fraction: fraction,
        coverage_fraction: 1.0 - fraction,
        gap_cells,
        components,
        certified: sol.certified,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResidual {
    pub cell: usize,
    /// `|p + Dv|` at the cell.
    pub weight: f64,
    /// `|z·ν̂ - F(x, ν̂)|`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub eta: f64,
    pub cells: Vec<CellResidual>,
    pub sup_residual: f64,
    pub mean_residual: f64,
    /// `Σ |w| r / Σ |w|` over boundary cells.
    pub weighted_mean_residual: f64,
    /// `Σ |w| r / Σ F(x, w)`: comparable to a relative gap.
    pub relative_residual: f64,
    /// `(gap + ‖v‖ ‖div z‖) / primal` of the solve.
    pub certified_relative_gap: f64,
}

/// Residual of the calibration identity `z·ν̂ = F(x, ν̂)` on the cells where
/// `|w| >= η`, `w = p + Dv`, `ν̂ = w / |w|`, for any candidate field `z`.
pub fn calibration_residual(
    m: &PeriodicMetric,
    sol: &CellSolution,
    z: &VectorField,
    eta: f64,
) -> Result<CalibrationReport> {
    let g = sol.grid;
    let d = g.dim();
    if z.grid != Grid::Torus(g) {
        return Err(Error::Shape("calibration field lives on another grid".into()));
    }
    let w = total_gradient(sol);
    let norms = cell_norms(&w, d);
    let cells = g.cells();
    let mut x = vec![0.0; d];
    let mut nu = vec![0.0; d];
    let mut out = Vec::new();
    let (mut weighted, mut weights, mut energy) = (0.0, 0.0, 0.0);
    for (i, &r) in norms.iter().enumerate() {
        if r < eta {
            continue;
        }
        g.center(i, &mut x);
        for k in 0..d {
            nu[k] = w.values[k * cells + i] / r;
        }
        let f = m.eval(&x, &nu);
        let zn: f64 = (0..d).map(|k| z.values[k * cells + i] * nu[k]).sum();
        let residual = (zn - f).abs();
        weighted += r * residual;
        weights += r;
        energy += r * f;
        out.push(CellResidual {
            cell: i,
            weight: r,
            residual,
        });
    }
    let count = out.len().max(1) as f64;
    let slack = sol.history.last().map_or(0.0, |c| c.duality_slack);
    Ok(CalibrationReport {
        eta,
        sup_residual: out.iter().map(|c| c.residual).fold(0.0, f64::max),
        mean_residual: out.iter().map(|c| c.residual).sum::<f64>() / count,
        weighted_mean_residual: if weights > 0.0 { weighted / weights } else { 0.0 },
        relative_residual: if energy > 0.0 { weighted / energy } else { 0.0 },
        certified_relative_gap: (sol.gap + slack).max(0.0) / sol.primal,
        cells: out,
    })
}

/// Calibration residual of the solver's own dual field.
pub fn check_calibration(m: &PeriodicMetric, sol: &CellSolution, eta: f64) -> Result<CalibrationReport> {
    calibration_residual(m, sol, &sol.z, eta)
}
