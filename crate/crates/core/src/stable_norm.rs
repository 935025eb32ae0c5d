//! The stable norm φ as a function of the direction: fans of certified cell
//! solves, one-sided derivatives and facet openings, the strict convexity
//! scan, the Wulff shape `{φ° <= 1}`, and the closed-form dual oracle for
//! two-dimensional laminates.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_solver::{solve_cell, CellSolution, SolverParams};
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::metric::{BaseNorm, Coefficient, PeriodicMetric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanEntry {
    /// Polar angle of `p` (2D); `NaN` in 3D.
    pub angle: f64,
    pub p: Vec<f64>,
    pub phi: f64,
    pub gap: f64,
    pub certified: bool,
    pub subgradient: Vec<f64>,
    /// Iterations until the solve certified or stopped.
    pub iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanResult {
    pub n: usize,
    pub tol_gap: f64,
    pub entries: Vec<FanEntry>,
}

impl FanResult {
    pub fn all_certified(&self) -> bool {
        self.entries.iter().all(|e| e.certified)
    }

    pub fn iters(&self) -> usize {
        self.entries.iter().map(|e| e.iters).sum()
    }

    /// Frozen CSV layout: `angle,px,py,phi,gap,certified,sgx,sgy` (3D appends `pz,sgz`).
    pub fn to_csv(&self) -> String {
        let three = self.entries.first().is_some_and(|e| e.p.len() == 3);
        let mut out = String::from("angle,px,py,phi,gap,certified,sgx,sgy");
        if three {
            out.push_str(",pz,sgz");
        }
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}",
                e.angle, e.p[0], e.p[1], e.phi, e.gap, e.certified, e.subgradient[0], e.subgradient[1]
            ));
            if three {
                out.push_str(&format!(",{},{}", e.p[2], e.subgradient[2]));
            }
            out.push('\n');
        }
        out
    }
}

/// `k` unit vectors at angles `2 pi j / k`.
pub fn equiangular_directions(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / k as f64;
            vec![t.cos(), t.sin()]
        })
        .collect()
}

/// `k` roughly uniform unit vectors on the sphere (Fibonacci lattice).
pub fn sphere_directions(k: usize) -> Vec<Vec<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|j| {
            let z = 1.0 - 2.0 * (j as f64 + 0.5) / k as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * j as f64;
            vec![r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

fn unit(p: &[f64]) -> Vec<f64> {
    let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    p.iter().map(|v| v / r).collect()
}

/// One certified solve per direction (normalized to unit length), in parallel,
/// results ordered as the input.
pub fn sample_fan(
    m: &PeriodicMetric,
    g: &TorusGrid,
    directions: &[Vec<f64>],
    params: &SolverParams,
) -> Result<FanResult> {
    if directions.iter().any(|d| d.iter().all(|v| *v == 0.0)) {
        return Err(Error::Domain("fan directions must be nonzero".into()));
    }
    let entries = directions
        .par_iter()
        .map(|d| {
            let p = unit(d);
            let sol = solve_cell(m, g, &p, params)?;
            Ok(FanEntry {
                angle: if p.len() == 2 { p[1].atan2(p[0]) } else { f64::NAN },
                subgradient: sol.z.integral(),
                phi: sol.primal,
                gap: sol.gap,
                certified: sol.certified,
                iters: sol.iters,
                p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FanResult {
        n: g.n(),
        tol_gap: params.tol_gap,
        entries,
    })
}

/// Periodic 1D coefficient profile `a(t)`, `t` in `[0, 1)`.
#[derive(Clone)]
pub enum Profile {
    /// Consecutive layers `(width, value)`; widths sum to 1.
    Layers(Vec<(f64, f64)>),
    /// A continuous profile, integrated by composite Gauss-Legendre quadrature.
    Smooth(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Profile::Layers(l) => f.debug_tuple("Layers").field(l).finish(),
            Profile::Smooth(_) => f.write_str("Smooth(..)"),
        }
    }
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];
const SMOOTH_PANELS: usize = 2048;

impl Profile {
    /// The profile of a laminate or homogeneous medium, with the axis the
    /// layers vary along. `None` for other media or a non-Euclidean base norm.
    pub fn from_metric(m: &PeriodicMetric) -> Option<(Profile, usize)> {
        if m.dim() != 2 || *m.base() != BaseNorm::Euclidean {
            return None;
        }
        match m.coefficient() {
            Coefficient::Constant(a) => Some((Profile::Layers(vec![(1.0, *a)]), 1)),
            Coefficient::Laminate {
                axis,
                a_low,
                a_high,
                theta,
            } => Some((
                Profile::Layers(vec![(*theta, *a_low), (1.0 - theta, *a_high)]),
                *axis,
            )),
            _ => None,
        }
    }

    /// `∫_0^1 f(a(t)) dt`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            Profile::Layers(layers) => layers.iter().map(|(w, a)| w * f(*a)).sum(),
            Profile::Smooth(a) => {
                let width = 1.0 / SMOOTH_PANELS as f64;
                let mut total = 0.0;
                for k in 0..SMOOTH_PANELS {
                    let mid = (k as f64 + 0.5) * width;
                    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                        total += w * f(a(mid + 0.5 * width * x));
                    }
                }
                0.5 * width * total
            }
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Profile::Layers(layers) => layers
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .fold(f64::MAX, |m, (_, a)| m.min(*a)),
            Profile::Smooth(a) => {
                // dense scan, then golden-section refinement around the best sample
                let samples = 4096;
                let (mut best_t, mut best) = (0.0, f64::MAX);
                for k in 0..samples {
                    let t = k as f64 / samples as f64;
                    let v = a(t);
                    if v < best {
                        best = v;
                        best_t = t;
                    }
                }
                let (mut lo, mut hi) = (best_t - 1.0 / samples as f64, best_t + 1.0 / samples as f64);
                let r = (5f64.sqrt() - 1.0) / 2.0;
                for _ in 0..80 {
                    let m1 = hi - r * (hi - lo);
                    let m2 = lo + r * (hi - lo);
                    if a(m1) < a(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                best.min(a(0.5 * (lo + hi)))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaminateOracle {
    pub phi: f64,
    /// Optimal constant normal component `c* = z_2` of the calibration.
    pub c_star: f64,
    /// `φ'(e2; e1) + φ'(e2; -e1) = 2 ∫ sqrt(a² - min(a)²)`.
    pub facet_opening: f64,
}

/// Exact stable norm of a laminate `a(x_2)` with Euclidean base norm:
///
/// ```text
/// φ(p) = max_{|c| <= min a}  p_2 c + |p_1| ∫ sqrt(a(t)² - c²) dt.
/// ```
///
/// The objective is concave in `c`; its derivative is bisected to `1e-10`
/// (exact endpoints when the derivative keeps its sign).
pub fn laminate_oracle(profile: &Profile, p: &[f64]) -> Result<LaminateOracle> {
    if p.len() != 2 {
        return Err(Error::Domain("laminate oracle is two-dimensional".into()));
    }
    let m = profile.min();
    if !(m > 0.0) {
        return Err(Error::InvalidMedium(format!("profile minimum {m} must be positive")));
    }
    let (p1, p2) = (p[0].abs(), p[1]);
    let objective = |c: f64| p2 * c + p1 * profile.integrate(|a| (a * a - c * c).max(0.0).sqrt());
    let slope = |c: f64| {
        p2 - p1
            * profile.integrate(|a| {
                let r = a * a - c * c;
                if r > 0.0 {
                    c / r.sqrt()
                } else {
                    c.signum() * f64::INFINITY
                }
            })
    };
    let c_star = if p1 == 0.0 {
        p2.signum() * m
    } else if slope(m) >= 0.0 {
        m
    } else if slope(-m) <= 0.0 {
        -m
    } else {
        let (mut lo, mut hi) = (-m, m);
        while hi - lo > 1e-10 * m.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(LaminateOracle {
        phi: objective(c_star),
        c_star,
        facet_opening: 2.0 * profile.integrate(|a| (a * a - m * m).max(0.0).sqrt()),
    })
}

/// Laminate oracle for a direction given in grid coordinates of a medium whose
/// layers vary along `axis`.
pub fn laminate_oracle_for(profile: &Profile, axis: usize, p: &[f64]) -> Result<LaminateOracle> {
    if axis == 1 {
        laminate_oracle(profile, p)
    } else {
        laminate_oracle(profile, &[p[1], p[0]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDerivative {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Richardson-extrapolated `φ'(p; q)`.
    pub value: f64,
    pub error_bar: f64,
    pub certified: bool,
    /// `(t, φ(p + t q))`, `t = 0` first.
    pub samples: Vec<(f64, f64)>,
}

/// Certified uncertainty of a solve's value: the gap plus the duality slack
/// allowed by the residual divergence.
fn value_uncertainty(sol: &CellSolution) -> f64 {
    let slack = sol.history.last().map_or(0.0, |c| c.duality_slack);
    sol.gap.abs() + slack
}

/// Default first step of the difference quotients.
pub const DEFAULT_T0: f64 = 0.125;

/// `φ'(p; q)` from the quotients `D(t) = (φ(p + t q) - φ(p)) / t` at
/// `t0, t0/2, t0/4`, extrapolated twice (`O(t)` and `O(t²)` terms removed).
/// The error bar is the larger of the last extrapolation correction and the
/// propagated value uncertainty of the four solves.
pub fn directional_derivative(
    m: &PeriodicMetric,
    g: &TorusGrid,
    p: &[f64],
    q: &[f64],
    params: &SolverParams,
) -> Result<DirectionalDerivative> {
    let base = solve_cell(m, g, p, params)?;
    directional_derivative_from(m, g, &base, q, params, DEFAULT_T0)
}

fn directional_derivative_from(
    m: &PeriodicMetric,
    g: &TorusGrid,
    base: &CellSolution,
    q: &[f64],
    params: &SolverParams,
    t0: f64,
) -> Result<DirectionalDerivative> {
    let p = &base.p;
    if q.len() != p.len() || q.iter().all(|v| *v == 0.0) {
        return Err(Error::Domain(format!("probe vector {q:?} must be nonzero and match p")));
    }
    let ts = [t0, t0 / 2.0, t0 / 4.0];
    let sols = ts
        .par_iter()
        .map(|&t| {
            let pt: Vec<f64> = p.iter().zip(q).map(|(a, b)| a + t * b).collect();
            solve_cell(m, g, &pt, params)
        })
        .collect::<Result<Vec<_>>>()?;
    let d: Vec<f64> = sols
        .iter()
        .zip(ts)
        .map(|(s, t)| (s.primal - base.primal) / t)
        .collect();
    let r1_coarse = 2.0 * d[1] - d[0];
    let r1_fine = 2.0 * d[2] - d[1];
    let value = (4.0 * r1_fine - r1_coarse) / 3.0;
    // value = (8 D(t/4) - 6 D(t/2) + D(t)) / 3
    let u0 = value_uncertainty(base);
    let weights = [1.0 / 3.0, 2.0, 8.0 / 3.0];
    let propagated: f64 = sols
        .iter()
        .zip(ts)
        .zip(weights)
        .map(|((s, t), w)| w * (value_uncertainty(s) + u0) / t)
        .sum();
    let correction = (value - r1_fine).abs();
    let mut samples = vec![(0.0, base.primal)];
    samples.extend(ts.iter().zip(&sols).map(|(t, s)| (*t, s.primal)));
    Ok(DirectionalDerivative {
        p: p.clone(),
        q: q.to_vec(),
        value,
        error_bar: correction.max(propagated),
        certified: base.certified && sols.iter().all(|s| s.certified),
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Kink,
    Smooth,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FacetProbe {
    pub q: Vec<i64>,
    /// `φ'(p; q) + φ'(p; -q)`.
    pub opening: f64,
    pub error_bar: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub forward: DirectionalDerivative,
    pub backward: DirectionalDerivative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FacetReport {
    pub p: Vec<i64>,
    pub phi: f64,
    pub probes: Vec<FacetProbe>,
    /// Rank of the probes with a kink verdict: a lower bound on `dim ∂φ(p)`.
    pub subgradient_dim: usize,
    pub delta_facet: f64,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FacetOptions {
    /// Largest Euclidean length of a probe vector.
    pub q_max: f64,
    pub delta_facet: f64,
    pub t0: f64,
}

impl Default for FacetOptions {
    fn default() -> Self {
        FacetOptions {
            q_max: 3.0,
            delta_facet: 0.05,
            t0: DEFAULT_T0,
        }
    }
}

/// Nonzero integer vectors orthogonal to `p` with `|q| <= q_max`, one per
/// `±q` pair (first nonzero component positive).
pub fn orthogonal_probes(p: &[i64], q_max: f64) -> Vec<Vec<i64>> {
    let r = q_max.floor() as i64;
    let d = p.len();
    let mut out = Vec::new();
    let mut q = vec![-r; d];
    loop {
        let dot: i64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
        let len2: i64 = q.iter().map(|a| a * a).sum();
        let leading_positive = q.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0);
        if dot == 0 && len2 > 0 && (len2 as f64) <= q_max * q_max && leading_positive {
            out.push(q.clone());
        }
        let mut k = 0;
        loop {
            if k == d {
                out.sort_by_key(|v| (v.iter().map(|a| a * a).sum::<i64>(), v.clone()));
                return out;
            }
            q[k] += 1;
            if q[k] <= r {
                break;
            }
            q[k] = -r;
            k += 1;
        }
    }
}

/// Rank of a set of small integer vectors.
fn rank(vectors: &[Vec<i64>]) -> usize {
    let mut rows: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().map(|&a| a as f64).collect())
        .collect();
    let cols = rows.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][c].abs() > 1e-9) else {
            continue;
        };
        rows.swap(rank, pivot);
        for r in 0..rows.len() {
            if r != rank {
                let f = rows[r][c] / rows[rank][c];
                for k in 0..cols {
                    rows[r][k] -= f * rows[rank][k];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Facet openings of φ at an integer direction `p` along every integer probe
/// vector orthogonal to `p`.
pub fn facet_probe(
    m: &PeriodicMetric,
    g: &TorusGrid,
    p: &[i64],
    params: &SolverParams,
    opts: &FacetOptions,
) -> Result<FacetReport> {
    let pf: Vec<f64> = p.iter().map(|&a| a as f64).collect();
    let base = solve_cell(m, g, &pf, params)?;
    let probes = orthogonal_probes(p, opts.q_max)
        .into_iter()
        .map(|q| {
            let qf: Vec<f64> = q.iter().map(|&a| a as f64).collect();
            let neg: Vec<f64> = qf.iter().map(|a| -a).collect();
            let forward = directional_derivative_from(m, g, &base, &qf, params, opts.t0)?;
            let backward = directional_derivative_from(m, g, &base, &neg, params, opts.t0)?;
            let opening = forward.value + backward.value;
            let error_bar = forward.error_bar + backward.error_bar;
            let threshold = opts.delta_facet.max(3.0 * error_bar);
            let verdict = if !(forward.certified && backward.certified) {
                Verdict::Inconclusive
            } else if opening > threshold {
                Verdict::Kink
            } else if opening <= opts.delta_facet && 3.0 * error_bar <= opts.delta_facet {
                Verdict::Smooth
            } else {
                Verdict::Inconclusive
            };
            Ok(FacetProbe {
                q,
                opening,
                error_bar,
                threshold,
                verdict,
                forward,
                backward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kinks: Vec<Vec<i64>> = probes
        .iter()
        .filter(|pr| pr.verdict == Verdict::Kink)
        .map(|pr| pr.q.clone())
        .collect();
    let certified = base.certified
        && probes
            .iter()
            .all(|pr| pr.forward.certified && pr.backward.certified);
    Ok(FacetReport {
        p: p.to_vec(),
        phi: base.primal,
        subgradient_dim: rank(&kinks),
        probes,
        delta_facet: opts.delta_facet,
        certified,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityPair {
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    /// Angle between `p1` and `p2` in degrees.
    pub angle_deg: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phi_sum: f64,
    /// `φ(p1) + φ(p2) - φ(p1 + p2)`.
    pub slack: f64,
    /// Absolute gap tolerance of the triple, `tol_gap φ(p1 + p2)`.
    pub tolerance: f64,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub pairs: Vec<ConvexityPair>,
    /// Minimum slack over pairs at least 10 degrees from parallel.
    pub min_slack: f64,
    /// Every such pair has `slack > 3 tolerance`.
    pub strictly_convex: bool,
    pub certified: bool,
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Minimum angle, in degrees, for a pair to count as non-parallel.
pub const MIN_PAIR_ANGLE_DEG: f64 = 10.0;

/// `count` pairs of unit vectors with a uniformly random first angle and an
/// opening angle uniform in `[min_angle, 180 - min_angle]` degrees.
pub fn sample_pairs(count: usize, min_angle_deg: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t1 = rng.gen_range(0.0..2.0 * PI);
            let d = rng.gen_range(min_angle_deg..=180.0 - min_angle_deg).to_radians();
            let t2 = if rng.gen_bool(0.5) { t1 + d } else { t1 - d };
            (vec![t1.cos(), t1.sin()], vec![t2.cos(), t2.sin()])
        })
        .collect()
}

/// Triangle-inequality slacks of φ over the given pairs, each from three
/// certified solves. Values already present in `fan` (same unit direction)
/// are reused.
pub fn strict_convexity_scan(
    m: &PeriodicMetric,
    g: &TorusGrid,
    fan: Option<&FanResult>,
    pairs: &[(Vec<f64>, Vec<f64>)],
    params: &SolverParams,
) -> Result<ConvexityReport> {
    let lookup = |p: &[f64]| -> Option<(f64, bool)> {
        let fan = fan?;
        let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        fan.entries
            .iter()
            .find(|e| e.p.iter().zip(p).all(|(a, b)| (a - b / r).abs() < 1e-14))
            .map(|e| (e.phi * r, e.certified))
    };
    let value = |p: &[f64]| -> Result<(f64, bool)> {
        if let Some(v) = lookup(p) {
            return Ok(v);
        }
        let s = solve_cell(m, g, p, params)?;
        Ok((s.primal, s.certified))
    };
    let results = pairs
        .par_iter()
        .map(|(p1, p2)| {
            let sum: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| a + b).collect();
            let (phi1, c1) = value(p1)?;
            let (phi2, c2) = value(p2)?;
            let (phi_sum, c3) = value(&sum)?;
            Ok(ConvexityPair {
                angle_deg: angle_between(p1, p2),
                p1: p1.clone(),
                p2: p2.clone(),
                phi1,
                phi2,
                phi_sum,
                slack: phi1 + phi2 - phi_sum,
                tolerance: params.tol_gap * phi_sum,
                certified: c1 && c2 && c3,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let strict: Vec<&ConvexityPair> = results
        .iter()
        .filter(|r| r.angle_deg >= MIN_PAIR_ANGLE_DEG && r.angle_deg <= 180.0 - MIN_PAIR_ANGLE_DEG)
        .collect();
    let min_slack = strict.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport {
        strictly_convex: strict.iter().all(|r| r.slack > 3.0 * r.tolerance),
        certified: results.iter().all(|r| r.certified),
        min_slack,
        pairs: results,
    })
}

/// `W = ∩_j {x · ν_j <= φ(ν_j)}` for unit normals `ν_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WulffShape {
    pub support: Vec<([f64; 2], f64)>,
    /// Counter-clockwise vertices.
    pub vertices: Vec<[f64; 2]>,
    /// Indices into `support` of the non-redundant half-planes, in angular order.
    pub active: Vec<usize>,
    pub area: f64,
    /// Largest angle between consecutive active normals (radians).
    pub max_normal_gap: f64,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull indices (Andrew's monotone chain).
pub(crate) fn convex_hull(points: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
    });
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &i in iter {
            while hull.len() >= start + 2
                && cross(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[i]) <= 1e-15
            {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    hull
}

pub fn shoelace(vertices: &[[f64; 2]]) -> f64 {
    let k = vertices.len();
    0.5 * (0..k)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % k]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

impl WulffShape {
    /// Intersects the half-planes of a support-function sample. The polar
    /// points `ν_j / φ_j` are hulled: hull vertices are the active half-planes
    /// and every hull edge `(a, b)` yields the vertex `x` with `x·a = x·b = 1`.
    pub fn from_support(support: Vec<([f64; 2], f64)>) -> Result<Self> {
        if support.iter().any(|(nu, f)| !(*f > 0.0 && f.is_finite()) || !nu.iter().all(|v| v.is_finite())) {
            return Err(Error::DegenerateWulff("support values must be positive".into()));
        }
        let polar: Vec<[f64; 2]> = support
            .iter()
            .map(|(nu, f)| [nu[0] / f, nu[1] / f])
            .collect();
        let hull = convex_hull(&polar);
        if hull.len() < 3 {
            return Err(Error::DegenerateWulff(format!("{} active half-planes", hull.len())));
        }
        // the origin must be interior to the polar hull for W to be bounded
        for k in 0..hull.len() {
            let (a, b) = (polar[hull[k]], polar[hull[(k + 1) % hull.len()]]);
            if cross(a, b, [0.0, 0.0]) <= 0.0 {
                return Err(Error::DegenerateWulff("normals do not surround the origin".into()));
            }
        }
        let vertices: Vec<[f64; 2]> = (0..hull.len())
            .map(|k| {
                let (a, b) = (polar[hull[k]], polar[hull[(k + 1) % hull.len()]]);
                let det = a[0] * b[1] - a[1] * b[0];
                [(b[1] - a[1]) / det, (a[0] - b[0]) / det]
            })
            .collect();
        let max_normal_gap = (0..hull.len())
            .map(|k| {
                let (a, b) = (support[hull[k]].0, support[hull[(k + 1) % hull.len()]].0);
                angle_between(&a, &b).to_radians()
            })
            .fold(0.0, f64::max);
        Ok(WulffShape {
            area: shoelace(&vertices),
            vertices,
            active: hull,
            support,
            max_normal_gap,
        })
    }

    /// Gauge `φ°(x) = max_j x·ν_j / φ_j`; `W = {gauge <= 1}`.
    pub fn gauge(&self, x: [f64; 2]) -> f64 {
        self.active
            .iter()
            .map(|&j| {
                let (nu, f) = self.support[j];
                (x[0] * nu[0] + x[1] * nu[1]) / f
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        self.gauge(x) <= 1.0
    }

    pub fn centroid(&self) -> [f64; 2] {
        let k = self.vertices.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..k {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % k]);
            let c = a[0] * b[1] - a[1] * b[0];
            cx += (a[0] + b[0]) * c;
            cy += (a[1] + b[1]) * c;
        }
        [cx / (6.0 * self.area), cy / (6.0 * self.area)]
    }

    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for a in &self.vertices {
            for b in &self.vertices {
                best = best.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        best
    }

    /// Euclidean distance from `x` to the polygon boundary.
    pub fn boundary_distance(&self, x: [f64; 2]) -> f64 {
        let k = self.vertices.len();
        (0..k)
            .map(|i| segment_distance(x, self.vertices[i], self.vertices[(i + 1) % k]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Vertex CSV: header `x,y`.
    pub fn vertices_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for v in &self.vertices {
            out.push_str(&format!("{},{}\n", v[0], v[1]));
        }
        out
    }
}

pub fn segment_distance(x: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x[0] - a[0]) * dx + (x[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (a[0] + t * dx, a[1] + t * dy);
    ((x[0] - px).powi(2) + (x[1] - py).powi(2)).sqrt()
}

/// Wulff shape of a certified 2D fan with at least 16 directions.
pub fn build_wulff(fan: &FanResult) -> Result<WulffShape> {
    if fan.entries.iter().any(|e| e.p.len() != 2) {
        return Err(Error::Domain("Wulff polygons are two-dimensional".into()));
    }
    let certified = fan.entries.iter().filter(|e| e.certified).count();
    if certified < 16 {
        return Err(Error::DegenerateWulff(format!("{certified} certified directions, need 16")));
    }
    WulffShape::from_support(
        fan.entries
            .iter()
            .filter(|e| e.certified)
            .map(|e| ([e.p[0], e.p[1]], e.phi))
            .collect(),
    )
}

/// Wulff shape sampled from an exact support function `φ`.
pub fn wulff_from_fn(k: usize, phi: impl Fn(&[f64]) -> f64) -> Result<WulffShape> {
    WulffShape::from_support(
        equiangular_directions(k)
            .into_iter()
            .map(|d| ([d[0], d[1]], phi(&d)))
            .collect(),
    )
}
