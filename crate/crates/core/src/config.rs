//! Problem configuration, discretization grids and incident fields.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{specialfn, CMatrix, CVector};

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;
/// Vacuum permeability (H/m).
pub const MU0: f64 = 1.256_637_062_12e-6;

/// Geometry and discretization of one scattering experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Operating frequency in Hz.
    pub frequency: f64,
    /// Side of the square domain of interest, meters.
    pub doi_side: f64,
    /// Cells per side of the grid used to synthesize measurements.
    pub sim_grid: usize,
    /// Cells per side of the grid used for inversion.
    pub inv_grid: usize,
    pub n_sources: usize,
    pub n_receivers: usize,
    /// Radius of the source and receiver ring, meters.
    pub ring_radius: f64,
    /// Angular extent of the source and receiver arcs, degrees.
    pub aperture: f64,
    /// Number of singular triplets in the deterministic current.
    pub subspace_dim: usize,
    /// Number of unrolled stages.
    pub stages: usize,
    /// Noise level as a Frobenius-norm fraction of the scattered field.
    pub noise_level: f64,
    /// Allow complex permittivity.
    pub lossy: bool,
    /// Permit `sim_grid == inv_grid` when synthesizing data.
    pub allow_inverse_crime: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ProblemConfig {
    /// Small configuration that runs in seconds on one core.
    pub fn desk() -> Self {
        Self {
            frequency: 400e6,
            doi_side: 2.0,
            sim_grid: 48,
            inv_grid: 32,
            n_sources: 8,
            n_receivers: 16,
            ring_radius: 3.0,
            aperture: 360.0,
            subspace_dim: 7,
            stages: 4,
            noise_level: 0.0,
            lossy: false,
            allow_inverse_crime: false,
        }
    }

    /// 16 sources, 32 receivers, 100×100 simulation and 64×64 inversion grids.
    pub fn full_scale() -> Self {
        Self {
            sim_grid: 100,
            inv_grid: 64,
            n_sources: 16,
            n_receivers: 32,
            subspace_dim: 15,
            ..Self::desk()
        }
    }

    /// Free-space wavenumber `2πf√(ε0μ0)`.
    pub fn k0(&self) -> f64 {
        2.0 * PI * self.frequency * (EPS0 * MU0).sqrt()
    }

    /// Free-space impedance `√(μ0/ε0)`.
    pub fn eta0(&self) -> f64 {
        (MU0 / EPS0).sqrt()
    }

    pub fn sim(&self) -> Grid {
        Grid::new(self.sim_grid, self.doi_side)
    }

    pub fn inv(&self) -> Grid {
        Grid::new(self.inv_grid, self.doi_side)
    }

    pub fn sources(&self) -> Result<Vec<Point>> {
        ring_positions(self.n_sources, self.ring_radius, self.aperture)
    }

    pub fn receivers(&self) -> Result<Vec<Point>> {
        ring_positions(self.n_receivers, self.ring_radius, self.aperture)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.frequency > 0.0) || !(self.doi_side > 0.0) {
            return bad("frequency and doi_side must be positive".into());
        }
        if self.sim_grid == 0 || self.inv_grid == 0 {
            return bad("grids need at least one cell".into());
        }
        if self.n_sources == 0 || self.n_receivers == 0 {
            return bad("need at least one source and one receiver".into());
        }
        let m = self.inv_grid * self.inv_grid;
        if self.subspace_dim == 0 || self.subspace_dim > self.n_receivers.min(m) {
            return bad(format!(
                "subspace_dim {} must lie in 1..={}",
                self.subspace_dim,
                self.n_receivers.min(m)
            ));
        }
        if self.stages == 0 {
            return bad("stages must be at least 1".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be non-negative".into());
        }
        if !(self.aperture > 0.0 && self.aperture <= 360.0) {
            return bad(format!("aperture {} outside (0, 360]", self.aperture));
        }
        if !(self.ring_radius > self.doi_side / 2f64.sqrt()) {
            return bad("the measurement ring must enclose the domain of interest".into());
        }
        Ok(())
    }

    /// Refuses identical simulation and inversion grids unless overridden.
    pub fn check_inverse_crime(&self) -> Result<()> {
        if self.sim_grid == self.inv_grid && !self.allow_inverse_crime {
            return Err(Error::Config(
                "sim_grid equals inv_grid; set allow_inverse_crime to synthesize anyway".into(),
            ));
        }
        Ok(())
    }
}

/// A point in the plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Uniform square grid of pulse-basis cells centered on the origin.
///
/// Cell `m = row * n + col` has center
/// `(-side/2 + (col + ½)h, -side/2 + (row + ½)h)` with `h = side / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub side: f64,
    pub cell_side: f64,
    pub centers: Vec<Point>,
}

impl Grid {
    pub fn new(n: usize, side: f64) -> Self {
        let h = side / n as f64;
        let mut centers = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                centers.push(Point::new(
                    -0.5 * side + (col as f64 + 0.5) * h,
                    -0.5 * side + (row as f64 + 0.5) * h,
                ));
            }
        }
        Self { n, side, cell_side: h, centers }
    }

    /// Number of cells `M = n²`.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Radius of the disc with the same area as a cell, `h/√π`.
    pub fn equivalent_radius(&self) -> f64 {
        self.cell_side / PI.sqrt()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x.abs() <= 0.5 * self.side && p.y.abs() <= 0.5 * self.side
    }
}

/// `n` points on a circle of `radius`, spaced `aperture/n` degrees apart
/// starting at angle zero.
///
/// With a full aperture the spacing closes the ring; with a partial one the
/// same spacing covers the arc, so 12 of the 16 full-ring positions span 270°.
pub fn ring_positions(n: usize, radius: f64, aperture: f64) -> Result<Vec<Point>> {
    if n == 0 || !(radius > 0.0) || !(aperture > 0.0 && aperture <= 360.0) {
        return Err(Error::Domain(format!(
            "ring needs n >= 1, radius > 0 and aperture in (0, 360]; got {n}, {radius}, {aperture}"
        )));
    }
    let step = aperture.to_radians() / n as f64;
    Ok((0..n)
        .map(|k| {
            let (s, c) = (k as f64 * step).sin_cos();
            Point::new(radius * c, radius * s)
        })
        .collect())
}

/// Field `(i/4) H0(k0 |r_m - source|)` of a unit line source at every cell.
pub fn incident_field_at(k0: f64, grid: &Grid, source: Point) -> Result<CVector> {
    let quarter_i = Complex64::new(0.0, 0.25);
    let mut out = CVector::zeros(grid.len());
    for (m, c) in grid.centers.iter().enumerate() {
        let d = c.dist(source);
        if d <= 1e-12 * grid.side {
            return Err(Error::Geometry(format!("source at ({}, {}) sits on cell {m}", source.x, source.y)));
        }
        out[m] = quarter_i * specialfn::h0(k0 * d);
    }
    Ok(out)
}

/// Incident field of transmitter `tx_index` on `grid`.
pub fn incident_field(config: &ProblemConfig, grid: &Grid, tx_index: usize) -> Result<CVector> {
    let sources = config.sources()?;
    let src = sources.get(tx_index).ok_or_else(|| {
        Error::Domain(format!("transmitter {tx_index} out of range (have {})", sources.len()))
    })?;
    incident_field_at(config.k0(), grid, *src)
}

/// All incident fields as an `M × Ni` matrix, one column per transmitter.
pub fn incident_fields(config: &ProblemConfig, grid: &Grid) -> Result<CMatrix> {
    let sources = config.sources()?;
    let mut out = CMatrix::zeros(grid.len(), sources.len());
    for (l, s) in sources.iter().enumerate() {
        out.set_column(l, &incident_field_at(config.k0(), grid, *s)?);
    }
    Ok(out)
}

/// Relative permittivity on an `n × n` grid, row-major like [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct PermittivityMap {
    pub n: usize,
    pub values: Vec<Complex64>,
}

impl PermittivityMap {
    /// Background everywhere.
    pub fn vacuum(n: usize) -> Self {
        Self { n, values: vec![Complex64::new(1.0, 0.0); n * n] }
    }

    pub fn from_real(n: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), n * n, "map needs n² values");
        Self { n, values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn imag(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    /// Drops the imaginary part.
    pub fn to_lossless(&self) -> Self {
        Self { n: self.n, values: self.values.iter().map(|v| Complex64::new(v.re, 0.0)).collect() }
    }
}

/// `χ = -i (k0/η0) (εr - 1)` per cell.
pub fn contrast_from_permittivity(eps: &PermittivityMap, config: &ProblemConfig) -> CVector {
    let s = Complex64::new(0.0, -config.k0() / config.eta0());
    CVector::from_iterator(eps.values.len(), eps.values.iter().map(|&e| s * (e - 1.0)))
}

/// Inverse of [`contrast_from_permittivity`]: `εr = 1 + i (η0/k0) χ`.
pub fn permittivity_from_contrast(chi: &CVector, n: usize, config: &ProblemConfig) -> PermittivityMap {
    let s = Complex64::new(0.0, config.eta0() / config.k0());
    PermittivityMap { n, values: chi.iter().map(|&c| 1.0 + s * c).collect() }
}

/// Full workbench configuration file: problem geometry at the top level plus
/// optional `[dataset]`, `[som]` and `[train]` tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkbenchConfig {
    pub problem: ProblemConfig,
    pub dataset: crate::data::DatasetConfig,
    pub som: crate::som::SomConfig,
    pub train: crate::somnet::TrainConfig,
}

fn from_table<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn to_table<T: Serialize>(value: &T) -> toml::Table {
    match toml::Value::try_from(value).expect("configuration serializes") {
        toml::Value::Table(t) => t,
        _ => unreachable!("configuration structs serialize to tables"),
    }
}

impl WorkbenchConfig {
    /// Parses TOML text, applying `key=value` overrides first (dotted keys
    /// address tables, e.g. `train.epochs=5`). Unknown keys are rejected.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let mut section = |name: &str| -> Result<toml::Table> {
            match table.remove(name) {
                None => Ok(toml::Table::new()),
                Some(toml::Value::Table(t)) => Ok(t),
                Some(_) => Err(Error::Config(format!("`{name}` must be a table"))),
            }
        };
        let dataset = from_table(section("dataset")?)?;
        let som = from_table(section("som")?)?;
        let train = from_table(section("train")?)?;
        let problem: ProblemConfig = from_table(table)?;
        problem.validate()?;
        Ok(Self { problem, dataset, som, train })
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        let mut t = to_table(&self.problem);
        t.insert("dataset".into(), toml::Value::Table(to_table(&self.dataset)));
        t.insert("som".into(), toml::Value::Table(to_table(&self.som)));
        t.insert("train".into(), toml::Value::Table(to_table(&self.train)));
        toml::to_string(&t).expect("configuration serializes")
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_scalar(raw.trim());
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{spec}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.trim_matches('"').to_string())
}
