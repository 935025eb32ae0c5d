//! Run configuration: one JSON object with the medium, the cell grid, solver
//! tolerances and one optional block per command. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stablenorm::cell_solver::SolverParams;
use stablenorm::isoperimetric::{iso_solver_defaults, Band, BulkSpec, IsoMode, IsoParams};
use stablenorm::metric::{MediumSpec, PeriodicMetric};
use stablenorm::stable_norm::FacetOptions;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub medium: MediumSpec,
    /// Cells per side of the periodic cell grid.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub solver: SolverParams,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; `--workers` takes precedence.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub phi: Option<PhiBlock>,
    #[serde(default)]
    pub fan: Option<FanBlock>,
    #[serde(default)]
    pub facets: Option<FacetsBlock>,
    #[serde(default)]
    pub wulff: Option<WulffBlock>,
    #[serde(default)]
    pub planelike: Option<PlanelikeBlock>,
    #[serde(default)]
    pub iso: Option<IsoBlock>,
    #[serde(default)]
    pub rescale: Option<RescaleBlock>,
    /// Directory that relative file references resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_n() -> usize {
    64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiBlock {
    pub p: Vec<f64>,
    /// Also write `v.csv` and `z.csv`.
    #[serde(default)]
    pub dump_fields: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanBlock {
    pub directions: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacetsBlock {
    /// Integer directions to probe.
    pub p: Vec<Vec<i64>>,
    #[serde(default)]
    pub options: FacetOptions,
    /// Solver overrides for the derivative solves.
    #[serde(default)]
    pub solver: Option<SolverParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WulffBlock {
    pub directions: usize,
    #[serde(default)]
    pub convexity: Option<ConvexityBlock>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexityBlock {
    pub pairs: usize,
    #[serde(default = "default_min_angle")]
    pub min_angle_deg: f64,
    #[serde(default)]
    pub seed: u64,
    /// Parallel pairs `(ν, ν)` added to the scan.
    #[serde(default)]
    pub parallel: usize,
}

fn default_min_angle() -> f64 {
    10.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanelikeBlock {
    pub p: Vec<[f64; 2]>,
    /// Level offsets `s` of the extracted sets.
    #[serde(default = "default_offsets")]
    pub offsets: Vec<f64>,
    #[serde(default = "default_copies")]
    pub copies: usize,
    #[serde(default = "default_q_max")]
    pub q_max: i64,
}

fn default_offsets() -> Vec<f64> {
    vec![0.0]
}

fn default_copies() -> usize {
    4
}

fn default_q_max() -> i64 {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoBlock {
    pub params: IsoParams,
    /// Compare against exhaustive enumeration (boxes of at most 25 cells).
    #[serde(default)]
    pub oracle: bool,
    /// Search the penalty threshold by doubling μ this many times.
    #[serde(default)]
    pub threshold_doublings: Option<usize>,
    /// Compare the mask with the Wulff shape sampled in this many directions.
    #[serde(default)]
    pub wulff_directions: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleBlock {
    pub epsilons: Vec<f64>,
    /// Cells per box side.
    pub n: usize,
    /// `W` is scaled to this diameter; the target volume is its area.
    #[serde(default = "unit")]
    pub diameter: f64,
    /// Box side; defaults to `3 (v / |W|)^{1/2} diam(W)`.
    #[serde(default)]
    pub side: Option<f64>,
    #[serde(default = "rescale_solver")]
    pub solver: SolverParams,
    #[serde(default = "default_band")]
    pub band: Option<Band>,
    #[serde(default = "default_wulff_directions")]
    pub wulff_directions: usize,
    /// Relative slack of the monotonicity check.
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

fn rescale_solver() -> SolverParams {
    iso_solver_defaults().with_tol_gap(1e-3).with_max_iters(200_000)
}

fn default_band() -> Option<Band> {
    Some(Band::default())
}

fn default_wulff_directions() -> usize {
    256
}

fn default_slack() -> f64 {
    0.2
}

impl RunConfig {
    /// Parses and validates; relative file references resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).context("config does not match the schema")?;
        cfg.medium.resolve_files(base_dir)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(text, base)?, bytes))
    }

    pub fn metric(&self) -> Result<PeriodicMetric> {
        Ok(PeriodicMetric::new(&self.medium, self.dim())?)
    }

    /// Cell problems run in 3D only when the `phi` direction has three components.
    pub fn dim(&self) -> usize {
        self.phi.as_ref().map_or(2, |b| b.p.len())
    }

    fn validate(&self) -> Result<()> {
        self.metric()?;
        if self.n < 2 {
            bail!("n must be at least 2, got {}", self.n);
        }
        if let Some(phi) = &self.phi {
            if !(2..=3).contains(&phi.p.len()) || phi.p.iter().all(|x| *x == 0.0) {
                bail!("phi.p must be a nonzero vector of length 2 or 3");
            }
        }
        if let Some(fan) = &self.fan {
            if fan.directions == 0 {
                bail!("fan.directions must be positive");
            }
        }
        if let Some(f) = &self.facets {
            if f.p.is_empty() || f.p.iter().any(|p| p.len() != 2 || p.iter().all(|x| *x == 0)) {
                bail!("facets.p must list nonzero integer pairs");
            }
        }
        if let Some(w) = &self.wulff {
            if w.directions < 16 {
                bail!("wulff.directions must be at least 16");
            }
        }
        if let Some(pl) = &self.planelike {
            if pl.p.is_empty() || pl.p.iter().any(|p| p[0] == 0.0 && p[1] == 0.0) {
                bail!("planelike.p must list nonzero directions");
            }
        }
        if let Some(iso) = &self.iso {
            iso.params.validate()?;
            if iso.threshold_doublings.is_some() && iso.params.mode != IsoMode::Constrained {
                bail!("iso.threshold_doublings searches μ itself; use mode = constrained");
            }
        }
        if let Some(r) = &self.rescale {
            if r.epsilons.is_empty() || r.epsilons.iter().any(|e| !(*e > 0.0)) {
                bail!("rescale.epsilons must be positive");
            }
            if !(r.diameter > 0.0) || r.side.is_some_and(|s| !(s > 0.0)) {
                bail!("rescale.diameter and rescale.side must be positive");
            }
        }
        Ok(())
    }
}

impl RescaleBlock {
    pub fn iso_params(&self, side: f64, volume: f64) -> IsoParams {
        IsoParams {
            solver: self.solver.clone(),
            band: self.band,
            seed: self.seed,
            bulk: None::<BulkSpec>,
            ..IsoParams::constrained(self.n, side, volume)
        }
    }
}
