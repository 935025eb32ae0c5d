//! Discrete cell problem on the torus,
//!
//! ```text
//! φ_h(p) = min_v  h^d Σ_i F(x_i, p + (Dv)_i),
//! ```
//!
//! solved as the saddle point `min_v max_z ⟨z, p + Dv⟩` over fields `z` with
//! `F°(x_i, z_i) <= 1`. The dual iterate is a discrete calibration candidate:
//! once `div z = 0` its average `h^d Σ z` is a subgradient estimate and
//! `(h^d Σ z)·p` a lower bound for the primal value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{divergence, Grid, ScalarField, TorusGrid, VectorField};
use crate::metric::{BaseNorm, PeriodicMetric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub max_iters: usize,
    /// Relative duality-gap target, `gap <= tol_gap * primal`.
    pub tol_gap: f64,
    /// Target for `‖div z‖` in the `h^d`-weighted 2-norm; `None` means `1e-6 n`.
    pub tol_feas: Option<f64>,
    pub check_every: usize,
    /// Primal step; `None` means `h / (2 sqrt d)`.
    pub tau: Option<f64>,
    /// Dual step; `None` means `h / (2 sqrt d)`.
    pub sigma: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            max_iters: 20_000,
            tol_gap: 1e-3,
            tol_feas: None,
            check_every: 50,
            tau: None,
            sigma: None,
        }
    }
}

impl SolverParams {
    pub fn with_tol_gap(mut self, tol: f64) -> Self {
        self.tol_gap = tol;
        self
    }

    pub fn with_max_iters(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self
    }

    /// Resolved `(tau, sigma, tol_feas)` for `grid`, validated against the
    /// step condition `tau sigma ‖D‖² <= 1`.
    pub fn resolve(&self, grid: &Grid) -> Result<(f64, f64, f64)> {
        let h = grid.h();
        let default_step = h / (2.0 * (grid.dim() as f64).sqrt());
        let tau = self.tau.unwrap_or(default_step);
        let sigma = self.sigma.unwrap_or(default_step);
        let tol_feas = self.tol_feas.unwrap_or(1e-6 * grid.n() as f64);
        if !(tau > 0.0 && sigma > 0.0) {
            return Err(Error::Params(format!("steps must be positive: tau={tau}, sigma={sigma}")));
        }
        if tau * sigma * grid.gradient_norm_sq_bound() > 1.0 + 1e-12 {
            return Err(Error::Params(format!(
                "tau sigma 4d/h² = {} > 1",
                tau * sigma * grid.gradient_norm_sq_bound()
            )));
        }
        if !(self.tol_gap > 0.0) || self.check_every == 0 || self.max_iters == 0 {
            return Err(Error::Params("tol_gap, check_every and max_iters must be positive".into()));
        }
        Ok((tau, sigma, tol_feas))
    }
}

/// One certification checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iter: usize,
    pub primal: f64,
    pub dual: f64,
    pub div_residual: f64,
    /// `‖v‖ ‖div z‖`: the amount by which `dual` may exceed `primal`.
    pub duality_slack: f64,
}

#[derive(Clone, Debug)]
pub struct CellSolution {
    pub p: Vec<f64>,
    pub grid: TorusGrid,
    /// Periodic part of the minimizer, mean zero.
    pub v: ScalarField,
    /// Calibration candidate.
    pub z: VectorField,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub div_residual: f64,
    pub feas_residual: f64,
    pub iters: usize,
    pub certified: bool,
    /// Relative gap and feasibility targets the run was certified against.
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub history: Vec<Checkpoint>,
}

/// JSON summary of a solve (fields are not included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub p: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub div_residual: f64,
    pub feas_residual: f64,
    pub iters: usize,
    pub certified: bool,
    pub subgradient: Vec<f64>,
}

impl CellSolution {
    pub fn relative_gap(&self) -> f64 {
        self.gap / self.primal.abs().max(f64::MIN_POSITIVE)
    }

    pub fn summary(&self) -> CellSummary {
        CellSummary {
            p: self.p.clone(),
            n: self.grid.n(),
            dim: self.grid.dim(),
            primal: self.primal,
            dual: self.dual,
            gap: self.gap,
            relative_gap: self.relative_gap(),
            div_residual: self.div_residual,
            feas_residual: self.feas_residual,
            iters: self.iters,
            certified: self.certified,
            subgradient: self.z.integral(),
        }
    }

    /// `p + (Dv)_i` at every cell, component-major.
    pub fn total_gradient(&self) -> VectorField {
        let mut w = crate::grid::gradient(&self.v);
        let cells = self.grid.cells();
        for (k, pk) in self.p.iter().enumerate() {
            w.values[k * cells..(k + 1) * cells]
                .iter_mut()
                .for_each(|x| *x += pk);
        }
        w
    }
}

/// Estimate of a subgradient of φ at `sol.p`: `h^d Σ z`, with the certification
/// flag it inherits from the solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subgradient {
    pub value: Vec<f64>,
    pub certified: bool,
}

pub fn subgradient_estimate(sol: &CellSolution) -> Subgradient {
    Subgradient {
        value: sol.z.integral(),
        certified: sol.certified,
    }
}

/// Coefficients and norm of `F = a(x) N(p)` frozen on the cells of a grid.
#[derive(Clone, Debug)]
pub(crate) struct SampledMetric {
    pub a: Vec<f64>,
    pub base: BaseNorm,
}

impl SampledMetric {
    pub fn on_torus(m: &PeriodicMetric, g: &TorusGrid) -> Self {
        let mut x = [0.0; 3];
        let a = (0..g.cells())
            .map(|i| {
                g.center(i, &mut x);
                m.coefficient_at(&x[..g.dim()])
            })
            .collect();
        SampledMetric {
            a,
            base: m.base().clone(),
        }
    }

    /// `h^d Σ_i a_i N(w_i)` for a component-major vector field `w`.
    pub fn energy(&self, w: &[f64], dim: usize, cell_volume: f64) -> f64 {
        let m = self.a.len();
        let mut buf = [0.0; 3];
        let mut total = 0.0;
        for (i, a) in self.a.iter().enumerate() {
            for k in 0..dim {
                buf[k] = w[k * m + i];
            }
            total += a * self.base.norm(&buf[..dim]);
        }
        cell_volume * total
    }

    /// `z_i <- proj_{F°(x_i, ·) <= 1}(z_i)` for every cell; returns the largest
    /// violation `F°(x_i, z_i) - 1` left after projection.
    pub fn project(&self, z: &mut [f64], dim: usize) -> f64 {
        let m = self.a.len();
        let mut worst: f64 = 0.0;
        match (&self.base, dim) {
            (BaseNorm::Euclidean, 2) => {
                let (z0, z1) = z.split_at_mut(m);
                for i in 0..m {
                    let r = (z0[i] * z0[i] + z1[i] * z1[i]).sqrt();
                    let a = self.a[i];
                    if r > a {
                        let s = a / r;
                        z0[i] *= s;
                        z1[i] *= s;
                        let after = (z0[i] * z0[i] + z1[i] * z1[i]).sqrt() / a - 1.0;
                        worst = worst.max(after);
                    }
                }
            }
            _ => {
                let mut buf = [0.0; 3];
                for i in 0..m {
                    for k in 0..dim {
                        buf[k] = z[k * m + i];
                    }
                    self.base.project_polar_ball(&mut buf[..dim], self.a[i]);
                    worst = worst.max(self.base.polar(&buf[..dim]) / self.a[i] - 1.0);
                    for k in 0..dim {
                        z[k * m + i] = buf[k];
                    }
                }
            }
        }
        worst
    }

    pub fn max_violation(&self, z: &[f64], dim: usize) -> f64 {
        let m = self.a.len();
        let mut buf = [0.0; 3];
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for k in 0..dim {
                buf[k] = z[k * m + i];
            }
            worst = worst.max(self.base.polar(&buf[..dim]) / self.a[i] - 1.0);
        }
        worst
    }
}

/// `h^d Σ_i F(x_i, p + (Dv)_i)` for an arbitrary candidate `v`.
pub fn primal_energy(m: &PeriodicMetric, g: &TorusGrid, p: &[f64], v: &ScalarField) -> Result<f64> {
    check_direction(g, p)?;
    if v.grid != Grid::Torus(*g) {
        return Err(Error::Shape("candidate field lives on a different grid".into()));
    }
    let sampled = SampledMetric::on_torus(m, g);
    let mut w = crate::grid::gradient(v).values;
    add_direction(&mut w, p, g.cells());
    Ok(sampled.energy(&w, g.dim(), Grid::Torus(*g).cell_volume()))
}

fn check_direction(g: &TorusGrid, p: &[f64]) -> Result<()> {
    if p.len() != g.dim() {
        return Err(Error::Shape(format!("direction has {} components, grid dim {}", p.len(), g.dim())));
    }
    if p.iter().any(|v| !v.is_finite()) || p.iter().all(|v| *v == 0.0) {
        return Err(Error::Domain(format!("direction {p:?} must be finite and nonzero")));
    }
    Ok(())
}

fn add_direction(w: &mut [f64], p: &[f64], cells: usize) {
    for (k, pk) in p.iter().enumerate() {
        w[k * cells..(k + 1) * cells].iter_mut().for_each(|x| *x += pk);
    }
}

/// Fixed-step primal-dual iteration
///
/// ```text
/// z <- proj(z + σ (p + D v̄)),  v <- v + τ div z,  v̄ <- 2 v_new - v_old
/// ```
///
/// from `v = 0`, `z = 0`, with the duality gap and `‖div z‖` evaluated every
/// `check_every` iterations. The run is certified once both targets hold;
/// otherwise the last iterate is returned with `certified = false`.
pub fn solve_cell(
    m: &PeriodicMetric,
    g: &TorusGrid,
    p: &[f64],
    params: &SolverParams,
) -> Result<CellSolution> {
    check_direction(g, p)?;
    if m.dim() != g.dim() {
        return Err(Error::Shape(format!("metric dim {} vs grid dim {}", m.dim(), g.dim())));
    }
    let grid = Grid::Torus(*g);
    let (tau, sigma, tol_feas) = params.resolve(&grid)?;
    let d = g.dim();
    let cells = g.cells();
    let sampled = SampledMetric::on_torus(m, g);

    let mut v = vec![0.0; cells];
    let mut v_bar = vec![0.0; cells];
    let mut z = vec![0.0; d * cells];
    let mut w = vec![0.0; d * cells];
    let mut div = vec![0.0; cells];

    let mut history = Vec::new();
    let mut iters = 0;
    let mut certified = false;
    let mut last = Checkpoint {
        iter: 0,
        primal: f64::NAN,
        dual: f64::NAN,
        div_residual: f64::NAN,
        duality_slack: f64::NAN,
    };

    while iters < params.max_iters {
        grid.gradient_into(&v_bar, &mut w);
        for k in 0..d {
            let pk = p[k];
            for (zi, wi) in z[k * cells..(k + 1) * cells]
                .iter_mut()
                .zip(&w[k * cells..(k + 1) * cells])
            {
                *zi += sigma * (pk + wi);
            }
        }
        sampled.project(&mut z, d);
        grid.divergence_into(&z, &mut div);
        for i in 0..cells {
            let old = v[i];
            let new = old + tau * div[i];
            v[i] = new;
            v_bar[i] = 2.0 * new - old;
        }
        iters += 1;

        if iters % params.check_every == 0 || iters == params.max_iters {
            // Recentering v and v̄ by the same constant leaves Dv̄ unchanged.
            let mean = v.iter().sum::<f64>() / cells as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            v_bar.iter_mut().for_each(|x| *x -= mean);

            last = checkpoint(&grid, &sampled, p, &v, &z, &mut w, &mut div, iters);
            if !(last.primal.is_finite() && last.dual.is_finite() && last.div_residual.is_finite()) {
                return Err(Error::NonFinite("cell solver iterate"));
            }
            history.push(last.clone());
            if last.primal - last.dual <= params.tol_gap * last.primal && last.div_residual <= tol_feas {
                certified = true;
                break;
            }
        }
    }

    let feas_residual = sampled.max_violation(&z, d).max(0.0);
    Ok(CellSolution {
        p: p.to_vec(),
        grid: *g,
        v: ScalarField { grid, values: v },
        z: VectorField { grid, values: z },
        primal: last.primal,
        dual: last.dual,
        gap: last.primal - last.dual,
        div_residual: last.div_residual,
        feas_residual,
        iters,
        certified,
        tol_gap: params.tol_gap,
        tol_feas,
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn checkpoint(
    grid: &Grid,
    sampled: &SampledMetric,
    p: &[f64],
    v: &[f64],
    z: &[f64],
    w: &mut [f64],
    div: &mut [f64],
    iter: usize,
) -> Checkpoint {
    let d = grid.dim();
    let cells = grid.cells();
    let vol = grid.cell_volume();
    grid.gradient_into(v, w);
    add_direction(w, p, cells);
    let primal = sampled.energy(w, d, vol);
    let dual: f64 = (0..d)
        .map(|k| p[k] * vol * z[k * cells..(k + 1) * cells].iter().sum::<f64>())
        .sum();
    grid.divergence_into(z, div);
    let div_residual = (vol * div.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let v_norm = (vol * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    Checkpoint {
        iter,
        primal,
        dual,
        div_residual,
        duality_slack: v_norm * div_residual,
    }
}

/// `‖div z‖` in the weighted 2-norm, recomputed from the stored field.
pub fn divergence_residual(z: &VectorField) -> f64 {
    divergence(z).norm()
}
