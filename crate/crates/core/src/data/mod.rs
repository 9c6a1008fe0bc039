//! Synthetic datasets, MNIST parsing, metrics and measured-data import.

pub mod idx;
pub mod measured;
pub mod metrics;
pub mod shapes;

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{PermittivityMap, ProblemConfig};
use crate::error::{Error, Result};
use crate::io::{read_bundle, write_bundle, Field};
use crate::operators::{simulate, OperatorSet};
use crate::spectral::contrast;
use crate::CMatrix;

pub use idx::{load_idx, parse_idx, write_idx, IdxImages};
pub use measured::{export_measured_csv, import_measured_csv, MeasuredData};
pub use metrics::{metrics, rmse, ssim};
pub use shapes::{gen_random_circles, rasterize_circles, rasterize_profile, Circle, CircleRanges, ScattererSpec};

/// Random-circle dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    /// Upper bound of `Im εr` in lossy problems.
    pub eps_im_max: f64,
    pub max_circles: usize,
    /// Sub-points per cell side when rasterizing discs.
    pub supersample: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_val: 40,
            seed: 2024,
            radius_min: 0.1,
            radius_max: 0.5,
            eps_min: 1.5,
            eps_max: 2.5,
            eps_im_max: 0.9,
            max_circles: 3,
            supersample: 4,
        }
    }
}

impl DatasetConfig {
    pub fn ranges(&self, lossy: bool) -> CircleRanges {
        CircleRanges {
            radius: (self.radius_min, self.radius_max),
            eps_re: (self.eps_min, self.eps_max),
            eps_im_max: if lossy { self.eps_im_max } else { 0.0 },
            max_circles: self.max_circles,
        }
    }
}

/// One scatterer with its measurements and references.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub circles: Vec<Circle>,
    /// True permittivity on the inversion grid.
    pub truth: PermittivityMap,
    /// Noiseless scattered field synthesized on the simulation grid, `Nr × Ni`.
    pub es: CMatrix,
    /// Currents of the inversion-grid forward solve of `truth`, `M × Ni`.
    pub j_mom: CMatrix,
}

/// Simulation and inversion operators of one problem.
#[derive(Debug)]
pub struct Workspace {
    pub sim: OperatorSet,
    pub inv: OperatorSet,
}

impl Workspace {
    /// Builds both operator sets, refusing identical grids unless allowed.
    pub fn new(problem: &ProblemConfig) -> Result<Self> {
        problem.validate()?;
        problem.check_inverse_crime()?;
        Ok(Self { sim: OperatorSet::simulation(problem)?, inv: OperatorSet::inversion(problem)? })
    }
}

/// Synthesizes measurements and references of a disc scatterer.
pub fn make_sample(ws: &Workspace, circles: Vec<Circle>, supersample: usize) -> Result<Sample> {
    let sim_eps = rasterize_circles(&circles, &ws.sim.grid, supersample);
    let es = simulate(&ws.sim, &contrast(&ws.sim, &sim_eps))?.scattered;
    let truth = rasterize_circles(&circles, &ws.inv.grid, supersample);
    let j_mom = simulate(&ws.inv, &contrast(&ws.inv, &truth))?.current;
    Ok(Sample { circles, truth, es, j_mom })
}

/// Training and validation samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Generates `n_train + n_val` random-circle samples. Sample `i` depends
/// only on the dataset seed and `i`.
pub fn generate_dataset(ws: &Workspace, problem: &ProblemConfig, cfg: &DatasetConfig) -> Result<Dataset> {
    let specs = gen_random_circles(cfg.n_train + cfg.n_val, cfg.seed, &cfg.ranges(problem.lossy), problem.doi_side);
    let mut samples = specs
        .into_iter()
        .map(|s| make_sample(ws, s.circles, cfg.supersample))
        .collect::<Result<Vec<_>>>()?;
    let val = samples.split_off(cfg.n_train);
    Ok(Dataset { train: samples, val })
}

fn circles_field(circles: &[Circle]) -> Field {
    Field::Real {
        rows: circles.len(),
        cols: 5,
        data: circles.iter().flat_map(|c| [c.cx, c.cy, c.radius, c.eps.re, c.eps.im]).collect(),
    }
}

fn map_field(map: &PermittivityMap) -> Field {
    Field::Complex { rows: map.n, cols: map.n, data: map.values.clone() }
}

impl Dataset {
    /// Writes every sample to one bundle (`train.3.truth`, `val.0.es`, ...).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        for (split, samples) in [("train", &self.train), ("val", &self.val)] {
            for (i, s) in samples.iter().enumerate() {
                entries.push((format!("{split}.{i}.circles"), circles_field(&s.circles)));
                entries.push((format!("{split}.{i}.truth"), map_field(&s.truth)));
                entries.push((format!("{split}.{i}.es"), Field::from_cmatrix(&s.es)));
                entries.push((format!("{split}.{i}.jmom"), Field::from_cmatrix(&s.j_mom)));
            }
        }
        write_bundle(path, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = read_bundle(path)?;
        let bad = |m: String| Error::Format { path: path.to_path_buf(), message: m };
        let mut out = Dataset { train: Vec::new(), val: Vec::new() };
        for chunk in entries.chunks(4) {
            let [(n0, circles), (_, truth), (_, es), (_, jmom)] = chunk else {
                return Err(bad("incomplete sample record".into()));
            };
            let circles = circles.to_real()?;
            let circles = (0..circles.nrows())
                .map(|r| Circle {
                    cx: circles[(r, 0)],
                    cy: circles[(r, 1)],
                    radius: circles[(r, 2)],
                    eps: Complex64::new(circles[(r, 3)], circles[(r, 4)]),
                })
                .collect();
            let t = truth.to_cmatrix();
            if t.nrows() != t.ncols() {
                return Err(bad(format!("truth map of `{n0}` is not square")));
            }
            let n = t.nrows();
            let truth = PermittivityMap { n, values: (0..n * n).map(|k| t[(k / n, k % n)]).collect() };
            let sample = Sample { circles, truth, es: es.to_cmatrix(), j_mom: jmom.to_cmatrix() };
            match n0.split('.').next() {
                Some("train") => out.train.push(sample),
                Some("val") => out.val.push(sample),
                _ => return Err(bad(format!("unexpected record `{n0}`"))),
            }
        }
        Ok(out)
    }
}
