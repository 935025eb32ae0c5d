//! Periodic one-homogeneous integrands `F(x, p) = a(x) N(p)`.
//!
//! Every built-in medium is a positive periodic coefficient `a(x)` times a
//! fixed base norm `N`. That product structure makes the polar, the gradient
//! in `p` and the projection onto the dual ball `{F°(x, ·) ≤ 1}` exact and
//! cheap, which is what the saddle-point solvers need per cell and per
//! iteration.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient families of the medium gallery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediumKind {
    Homogeneous,
    Laminate,
    CheckerboardSmoothed,
    SmoothTrig,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseNormKind {
    Euclidean,
    Ell1,
    Ellipse,
}

/// Kind-specific scalars. Unused fields must be absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumParams {
    /// Constant coefficient of a homogeneous medium (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Laminate: coordinate index along which the layers vary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_high: Option<f64>,
    /// Laminate: volume fraction of the `a_low` layer, which occupies `[0, theta)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Checkerboard: width of the linear interface ramp.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    /// Sampled: cells per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Sampled: `n*n` cell values, row-major (axis 0 fastest).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// Sampled: CSV file with header `a`, used when `values` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Ellipse base norm: semi-axes of the unit ball `{N <= 1}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<f64>>,
}

/// Serializable description of a medium: `{"kind", "base_norm", "params"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub kind: MediumKind,
    #[serde(default = "default_base_norm")]
    pub base_norm: BaseNormKind,
    #[serde(default)]
    pub params: MediumParams,
}

fn default_base_norm() -> BaseNormKind {
    BaseNormKind::Euclidean
}

impl MediumSpec {
    pub fn homogeneous() -> Self {
        MediumSpec {
            kind: MediumKind::Homogeneous,
            base_norm: BaseNormKind::Euclidean,
            params: MediumParams::default(),
        }
    }

    /// Two-layer laminate varying along `axis`: `a_low` on `[0, theta)`, `a_high` on `[theta, 1)`.
    pub fn laminate(axis: usize, a_low: f64, a_high: f64, theta: f64) -> Self {
        MediumSpec {
            kind: MediumKind::Laminate,
            base_norm: BaseNormKind::Euclidean,
            params: MediumParams {
                axis: Some(axis),
                a_low: Some(a_low),
                a_high: Some(a_high),
                theta: Some(theta),
                ..Default::default()
            },
        }
    }

    /// `a(x) = a_bar + beta * prod_k cos(2 pi x_k)`.
    pub fn smooth_trig(a_bar: f64, beta: f64) -> Self {
        MediumSpec {
            kind: MediumKind::SmoothTrig,
            base_norm: BaseNormKind::Euclidean,
            params: MediumParams {
                a_bar: Some(a_bar),
                beta: Some(beta),
                ..Default::default()
            },
        }
    }

    pub fn checkerboard(a_bar: f64, beta: f64, width: f64) -> Self {
        MediumSpec {
            kind: MediumKind::CheckerboardSmoothed,
            base_norm: BaseNormKind::Euclidean,
            params: MediumParams {
                a_bar: Some(a_bar),
                beta: Some(beta),
                width: Some(width),
                ..Default::default()
            },
        }
    }

    /// Piecewise-constant medium on an `n x n` cell grid (2D only).
    pub fn sampled(n: usize, values: Vec<f64>) -> Self {
        MediumSpec {
            kind: MediumKind::Sampled,
            base_norm: BaseNormKind::Euclidean,
            params: MediumParams {
                n: Some(n),
                values: Some(values),
                ..Default::default()
            },
        }
    }

    pub fn with_base_norm(mut self, base: BaseNormKind) -> Self {
        self.base_norm = base;
        self
    }

    pub fn with_ellipse(mut self, axes: Vec<f64>) -> Self {
        self.base_norm = BaseNormKind::Ellipse;
        self.params.axes = Some(axes);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Inlines the values of a `file`-backed sampled medium, resolving the
    /// path relative to `base_dir`.
    pub fn resolve_files(&mut self, base_dir: &Path) -> Result<()> {
        if self.kind == MediumKind::Sampled && self.params.values.is_none() {
            if let Some(file) = &self.params.file {
                let path = base_dir.join(file);
                let values = read_coefficient_csv(&path)?;
                let n = (values.len() as f64).sqrt().round() as usize;
                if n * n != values.len() {
                    return Err(Error::InvalidMedium(format!(
                        "{} holds {} values, not a square grid",
                        path.display(),
                        values.len()
                    )));
                }
                self.params.n.get_or_insert(n);
                self.params.values = Some(values);
                self.params.file = None;
            }
        }
        Ok(())
    }
}

/// Reads a sampled coefficient CSV: header `a`, one value per line, row-major.
pub fn read_coefficient_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 1 || &headers[0] != "a" {
        return Err(Error::Parse(format!(
            "{}: expected single header `a`",
            path.display()
        )));
    }
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let value: f64 = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        values.push(value);
    }
    Ok(values)
}

pub fn write_coefficient_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["a"])?;
    for v in values {
        writer.write_record([v.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Base norm `N` together with its polar and dual-ball projection.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseNorm {
    Euclidean,
    Ell1,
    /// Unit ball `{sum (p_k / axes_k)^2 <= 1}`.
    Ellipse(Vec<f64>),
}

impl BaseNorm {
    pub fn name(&self) -> &'static str {
        match self {
            BaseNorm::Euclidean => "euclidean",
            BaseNorm::Ell1 => "ell1",
            BaseNorm::Ellipse(_) => "ellipse",
        }
    }

    #[inline]
    pub fn norm(&self, p: &[f64]) -> f64 {
        match self {
            BaseNorm::Euclidean => p.iter().map(|v| v * v).sum::<f64>().sqrt(),
            BaseNorm::Ell1 => p.iter().map(|v| v.abs()).sum(),
            BaseNorm::Ellipse(axes) => p
                .iter()
                .zip(axes)
                .map(|(v, s)| (v / s) * (v / s))
                .sum::<f64>()
                .sqrt(),
        }
    }

    #[inline]
    pub fn polar(&self, z: &[f64]) -> f64 {
        match self {
            BaseNorm::Euclidean => z.iter().map(|v| v * v).sum::<f64>().sqrt(),
            BaseNorm::Ell1 => z.iter().fold(0.0, |m, v| m.max(v.abs())),
            BaseNorm::Ellipse(axes) => z
                .iter()
                .zip(axes)
                .map(|(v, s)| (v * s) * (v * s))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Projects `z` in place onto `{w : polar(w) <= radius}`.
    #[inline]
    pub fn project_polar_ball(&self, z: &mut [f64], radius: f64) {
        match self {
            BaseNorm::Euclidean => {
                let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > radius {
                    let s = radius / r;
                    z.iter_mut().for_each(|v| *v *= s);
                }
            }
            BaseNorm::Ell1 => z.iter_mut().for_each(|v| *v = v.clamp(-radius, radius)),
            BaseNorm::Ellipse(axes) => project_ellipsoid(z, axes, radius),
        }
    }

    /// Gradient of `N` at `p != 0`. The ell1 norm is not differentiable.
    pub fn grad(&self, p: &[f64]) -> Result<Vec<f64>> {
        match self {
            BaseNorm::Euclidean => {
                let r = self.norm(p);
                Ok(p.iter().map(|v| v / r).collect())
            }
            BaseNorm::Ell1 => Err(Error::Unsupported {
                norm: "ell1",
                op: "grad_p",
            }),
            BaseNorm::Ellipse(axes) => {
                let r = self.norm(p);
                Ok(p.iter().zip(axes).map(|(v, s)| v / (s * s * r)).collect())
            }
        }
    }

    /// `(lower, upper)` with `lower |p| <= N(p) <= upper |p|`.
    pub fn euclidean_bounds(&self, dim: usize) -> (f64, f64) {
        match self {
            BaseNorm::Euclidean => (1.0, 1.0),
            BaseNorm::Ell1 => (1.0, (dim as f64).sqrt()),
            BaseNorm::Ellipse(axes) => {
                let max = axes.iter().cloned().fold(f64::MIN, f64::max);
                let min = axes.iter().cloned().fold(f64::MAX, f64::min);
                (1.0 / max, 1.0 / min)
            }
        }
    }
}

/// Euclidean projection onto `{sum (axes_k w_k)^2 <= radius^2}`.
///
/// The minimizer is `w_k = z_k / (1 + lambda axes_k^2)` where `lambda >= 0`
/// solves the secular equation `g(lambda) = sum axes_k^2 w_k^2 - radius^2 = 0`.
/// `g` is convex and decreasing, so Newton from `lambda = 0` increases
/// monotonically to the root.
fn project_ellipsoid(z: &mut [f64], axes: &[f64], radius: f64) {
    let r2 = radius * radius;
    let value = |lambda: f64| -> (f64, f64) {
        let mut g = -r2;
        let mut dg = 0.0;
        for (v, s) in z.iter().zip(axes) {
            let s2 = s * s;
            let denom = 1.0 + lambda * s2;
            let w = v / denom;
            g += s2 * w * w;
            dg += -2.0 * s2 * s2 * v * v / (denom * denom * denom);
        }
        (g, dg)
    };
    let (g0, _) = value(0.0);
    if g0 <= 0.0 {
        return;
    }
    let mut lambda = 0.0;
    for _ in 0..50 {
        let (g, dg) = value(lambda);
        if g <= 1e-12 * r2 || dg == 0.0 {
            break;
        }
        lambda -= g / dg;
    }
    for (v, s) in z.iter_mut().zip(axes) {
        *v /= 1.0 + lambda * s * s;
    }
    // Newton stops just outside the ball; pull the last rounding inside.
    let p: f64 = z
        .iter()
        .zip(axes)
        .map(|(v, s)| (v * s) * (v * s))
        .sum::<f64>()
        .sqrt();
    if p > radius {
        let k = radius / p;
        z.iter_mut().for_each(|v| *v *= k);
    }
}

/// Periodic coefficient `a(x)`; `x` is reduced mod 1 before lookup.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Laminate {
        axis: usize,
        a_low: f64,
        a_high: f64,
        theta: f64,
    },
    Checkerboard {
        a_bar: f64,
        beta: f64,
        width: f64,
    },
    Trig {
        a_bar: f64,
        beta: f64,
    },
    Sampled {
        n: usize,
        values: Vec<f64>,
    },
}

#[inline]
fn frac(t: f64) -> f64 {
    let f = t - t.floor();
    // t slightly below an integer can round up to exactly 1.0.
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Square wave `+1` on `[0, 1/2)`, `-1` on `[1/2, 1)`, with linear ramps of
/// total width `width` centred on both interfaces.
fn smoothed_square(t: f64, width: f64) -> f64 {
    let u = frac(t);
    let signed = if u < 0.5 {
        u.min(0.5 - u)
    } else {
        -(u - 0.5).min(1.0 - u)
    };
    (signed / (0.5 * width)).clamp(-1.0, 1.0)
}

impl Coefficient {
    #[inline]
    pub fn at(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(a) => *a,
            Coefficient::Laminate {
                axis,
                a_low,
                a_high,
                theta,
            } => {
                if frac(x[*axis]) < *theta {
                    *a_low
                } else {
                    *a_high
                }
            }
            Coefficient::Checkerboard { a_bar, beta, width } => {
                a_bar + beta * x.iter().map(|&t| smoothed_square(t, *width)).product::<f64>()
            }
            Coefficient::Trig { a_bar, beta } => {
                a_bar + beta * x.iter().map(|&t| (2.0 * PI * t).cos()).product::<f64>()
            }
            Coefficient::Sampled { n, values } => {
                let i0 = ((frac(x[0]) * *n as f64) as usize).min(n - 1);
                let i1 = ((frac(x[1]) * *n as f64) as usize).min(n - 1);
                values[i1 * n + i0]
            }
        }
    }

    /// Exact `(min, max)` of `a` over the torus.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Coefficient::Constant(a) => (*a, *a),
            Coefficient::Laminate {
                a_low,
                a_high,
                theta,
                ..
            } => {
                if *theta <= 0.0 {
                    (*a_high, *a_high)
                } else if *theta >= 1.0 {
                    (*a_low, *a_low)
                } else {
                    (a_low.min(*a_high), a_low.max(*a_high))
                }
            }
            Coefficient::Checkerboard { a_bar, beta, .. } | Coefficient::Trig { a_bar, beta } => {
                (a_bar - beta, a_bar + beta)
            }
            Coefficient::Sampled { values, .. } => values
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        }
    }
}

/// The integrand `F(x, p) = a(x) N(p)` with bound constant `c0`:
/// `c0 |p| <= F(x, p) <= |p| / c0`.
#[derive(Clone, Debug)]
pub struct PeriodicMetric {
    spec: MediumSpec,
    dim: usize,
    coefficient: Coefficient,
    base: BaseNorm,
    c0: f64,
}

fn require(name: &str, value: Option<f64>) -> Result<f64> {
    value.ok_or_else(|| Error::InvalidMedium(format!("missing parameter `{name}`")))
}

impl PeriodicMetric {
    pub fn new(spec: &MediumSpec, dim: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidMedium(format!("dimension {dim} not in {{2, 3}}")));
        }
        let p = &spec.params;
        let coefficient = match spec.kind {
            MediumKind::Homogeneous => {
                let a = p.a.unwrap_or(1.0);
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::InvalidMedium(format!("coefficient {a} must be positive")));
                }
                Coefficient::Constant(a)
            }
            MediumKind::Laminate => {
                let axis = p
                    .axis
                    .ok_or_else(|| Error::InvalidMedium("missing parameter `axis`".into()))?;
                if axis >= dim {
                    return Err(Error::InvalidMedium(format!("laminate axis {axis} >= dim {dim}")));
                }
                let a_low = require("a_low", p.a_low)?;
                let a_high = require("a_high", p.a_high)?;
                let theta = p.theta.unwrap_or(0.5);
                if !(a_low > 0.0 && a_high > 0.0 && a_low.is_finite() && a_high.is_finite()) {
                    return Err(Error::InvalidMedium(format!(
                        "layer values must be positive, got {a_low} and {a_high}"
                    )));
                }
                if !(0.0..=1.0).contains(&theta) {
                    return Err(Error::InvalidMedium(format!("layer fraction {theta} not in [0, 1]")));
                }
                Coefficient::Laminate {
                    axis,
                    a_low,
                    a_high,
                    theta,
                }
            }
            MediumKind::CheckerboardSmoothed | MediumKind::SmoothTrig => {
                let a_bar = require("a_bar", p.a_bar)?;
                let beta = require("beta", p.beta)?;
                if !(a_bar > beta && beta >= 0.0 && a_bar.is_finite()) {
                    return Err(Error::InvalidMedium(format!(
                        "need a_bar > beta >= 0, got a_bar={a_bar}, beta={beta}"
                    )));
                }
                if spec.kind == MediumKind::SmoothTrig {
                    Coefficient::Trig { a_bar, beta }
                } else {
                    let width = p.width.unwrap_or(1.0 / 32.0);
                    if !(width > 0.0 && width <= 0.5) {
                        return Err(Error::InvalidMedium(format!("ramp width {width} not in (0, 1/2]")));
                    }
                    Coefficient::Checkerboard { a_bar, beta, width }
                }
            }
            MediumKind::Sampled => {
                if dim != 2 {
                    return Err(Error::InvalidMedium("sampled media are 2D only".into()));
                }
                let values = p.values.clone().ok_or_else(|| {
                    Error::InvalidMedium("sampled medium needs `values` (or a resolved `file`)".into())
                })?;
                let n = p
                    .n
                    .unwrap_or_else(|| (values.len() as f64).sqrt().round() as usize);
                if n == 0 || n * n != values.len() {
                    return Err(Error::InvalidMedium(format!(
                        "sampled medium has {} values, expected {n}x{n}",
                        values.len()
                    )));
                }
                if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(Error::InvalidMedium(format!("sampled value {bad} must be positive")));
                }
                Coefficient::Sampled { n, values }
            }
        };
        let base = match spec.base_norm {
            BaseNormKind::Euclidean => BaseNorm::Euclidean,
            BaseNormKind::Ell1 => BaseNorm::Ell1,
            BaseNormKind::Ellipse => {
                let axes = p.axes.clone().unwrap_or_else(|| vec![1.0; dim]);
                if axes.len() != dim || axes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(Error::InvalidMedium(format!(
                        "ellipse needs {dim} positive semi-axes, got {axes:?}"
                    )));
                }
                BaseNorm::Ellipse(axes)
            }
        };
        let (a_min, a_max) = coefficient.range();
        let (n_lo, n_hi) = base.euclidean_bounds(dim);
        let c0 = (a_min * n_lo).min(1.0 / (a_max * n_hi)).min(1.0);
        Ok(PeriodicMetric {
            spec: spec.clone(),
            dim,
            coefficient,
            base,
            c0,
        })
    }

    pub fn spec(&self) -> &MediumSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn base(&self) -> &BaseNorm {
        &self.base
    }

    pub fn coefficient(&self) -> &Coefficient {
        &self.coefficient
    }

    /// `a(x)` with `x` reduced mod 1.
    #[inline]
    pub fn coefficient_at(&self, x: &[f64]) -> f64 {
        self.coefficient.at(x)
    }

    #[inline]
    pub fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        self.coefficient.at(x) * self.base.norm(p)
    }

    /// `F°(x, z) = sup { z . p : F(x, p) <= 1 }`.
    #[inline]
    pub fn polar_eval(&self, x: &[f64], z: &[f64]) -> f64 {
        self.base.polar(z) / self.coefficient.at(x)
    }

    pub fn grad_p(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        if p.iter().all(|v| *v == 0.0) {
            return Err(Error::Domain("grad_p at p = 0".into()));
        }
        let a = self.coefficient.at(x);
        Ok(self.base.grad(p)?.into_iter().map(|g| a * g).collect())
    }

    /// Euclidean projection of `z` onto `{w : F°(x, w) <= 1}`.
    pub fn project_dual(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut w = z.to_vec();
        self.base.project_polar_ball(&mut w, self.coefficient.at(x));
        w
    }
}
