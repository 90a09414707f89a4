//! Run configuration: flat `section.key = value` files.
//!
//! Lines starting with `#` are comments. Lists are comma separated. Paths
//! are resolved relative to the directory of the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use crate::energy::{CapillaryModel, EnergyError, PhaseField, QuadraticCapillary};
use crate::geometry::{build_grid, CostBundle, GeometryError, Grid, GridConfig, MediumSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("phase masses inconsistent with the initial state: {0}")]
    Masses(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

const KEYS: &[&str] = &[
    "grid.nx",
    "grid.ny",
    "grid.x_min",
    "grid.x_max",
    "grid.y_min",
    "grid.y_max",
    "medium.preset",
    "medium.phases",
    "medium.porosity",
    "medium.permeability",
    "medium.viscosities",
    "medium.densities",
    "medium.gravity",
    "medium.masses",
    "medium.csv",
    "capillary.model",
    "capillary.c",
    "capillary.csv",
    "initial.profile",
    "initial.fractions",
    "initial.order",
    "initial.csv",
    "run.tau",
    "run.steps",
    "run.horizon",
    "run.seed",
    "solver.mode",
    "solver.epsilon",
    "solver.fw_tol",
    "solver.max_fw_iter",
    "solver.positivity",
    "output.dir",
    "output.diagnostics",
];

/// Largest grid for which the exact plan-space solver is allowed.
pub const EXACT_CELL_CAP: usize = 64;

/// Relative mass discrepancy above which renormalization is refused.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum MediumSource {
    Uniform { porosity: f64, permeability: f64 },
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CapillarySpec {
    None,
    Scalar(f64),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Uniform(Vec<f64>),
    /// Horizontal layers along the last axis; `order` lists phases from the
    /// bottom up, each filling `fractions[i]` of every column.
    Layers {
        fractions: Vec<f64>,
        order: Vec<usize>,
    },
    /// Columns `cell, s_0..s_N` with densities in `[0, omega]`.
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeSpec {
    Exact,
    Entropic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub phases: usize,
    pub medium: MediumSource,
    pub viscosities: Vec<f64>,
    pub densities: Vec<f64>,
    pub gravity: f64,
    pub masses: Option<Vec<f64>>,
    pub capillary: CapillarySpec,
    pub initial: InitialSpec,
    pub tau: f64,
    pub steps: usize,
    pub seed: u64,
    pub mode: Option<ModeSpec>,
    /// Absolute entropic regularization; defaults to `1e-2 median(Csq_0)`.
    pub epsilon: Option<f64>,
    pub fw_tol: Option<f64>,
    pub max_fw_iter: Option<usize>,
    pub positivity: bool,
    pub output_dir: PathBuf,
    pub diagnostics: bool,
}

struct Raw {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Raw {
    fn take(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn err(key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value { key: key.into(), msg: msg.into() }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key).map(|v| v.parse::<f64>().map_err(|e| Self::err(key, e.to_string()))).transpose().and_then(|v| {
            match v {
                Some(x) if !x.is_finite() => Err(Self::err(key, "must be finite")),
                other => Ok(other),
            }
        })
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.take(key).map(|v| v.parse::<usize>().map_err(|e| Self::err(key, e.to_string()))).transpose()
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)
            .map(|v| v.split(',').map(|x| x.trim().parse::<T>().map_err(|e| Self::err(key, e.to_string()))).collect())
            .transpose()
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.take(key)
            .map(|v| match v {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                other => Err(Self::err(key, format!("expected a boolean, got `{other}`"))),
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|v| self.base.join(v))
    }
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: k + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if !key.contains('.') || value.is_empty() {
            return Err(ConfigError::Syntax { line: k + 1 });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.into()));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::Duplicate(key.into()));
        }
    }
    Ok(map)
}

/// Parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

/// Parse configuration text; relative paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let raw = Raw { map: parse_lines(text)?, base: base.to_path_buf() };
    let preset = raw.take("medium.preset");
    let gravity_column = match preset {
        None => false,
        Some("gravity-column") => true,
        Some(other) => return Err(Raw::err("medium.preset", format!("unknown preset `{other}`"))),
    };

    let nx = raw.usize("grid.nx")?.ok_or(ConfigError::Missing("grid.nx"))?;
    let x = (raw.f64("grid.x_min")?.unwrap_or(0.0), raw.f64("grid.x_max")?.unwrap_or(1.0));
    let grid = match raw.usize("grid.ny")? {
        Some(ny) => {
            GridConfig::rect(nx, ny, x, (raw.f64("grid.y_min")?.unwrap_or(0.0), raw.f64("grid.y_max")?.unwrap_or(1.0)))
        }
        None => {
            if raw.take("grid.y_min").is_some() || raw.take("grid.y_max").is_some() {
                return Err(Raw::err("grid.ny", "y extent given without grid.ny"));
            }
            GridConfig::line(nx, x.0, x.1)
        }
    };

    let phases = raw.usize("medium.phases")?.ok_or(ConfigError::Missing("medium.phases"))?;
    if phases == 0 {
        return Err(Raw::err("medium.phases", "at least one phase is required"));
    }
    let per_phase = |key: &str, v: Option<Vec<f64>>, default: Vec<f64>| -> Result<Vec<f64>, ConfigError> {
        let v = v.unwrap_or(default);
        if v.len() != phases {
            return Err(Raw::err(key, format!("expected {phases} values, got {}", v.len())));
        }
        Ok(v)
    };
    let viscosities = per_phase("medium.viscosities", raw.list("medium.viscosities")?, vec![1.0; phases])?;
    let default_rho = if gravity_column { (1..=phases).map(|i| i as f64).collect() } else { vec![0.0; phases] };
    let densities = per_phase("medium.densities", raw.list("medium.densities")?, default_rho)?;
    let gravity = raw.f64("medium.gravity")?.unwrap_or(if gravity_column { 4.0 } else { 0.0 });
    let masses = raw.list("medium.masses")?.map(|v| per_phase("medium.masses", Some(v), vec![])).transpose()?;
    let medium = match raw.path("medium.csv") {
        Some(p) => {
            if raw.take("medium.porosity").is_some() || raw.take("medium.permeability").is_some() {
                return Err(Raw::err("medium.csv", "conflicts with medium.porosity / medium.permeability"));
            }
            MediumSource::Csv(p)
        }
        None => MediumSource::Uniform {
            porosity: raw.f64("medium.porosity")?.unwrap_or(if gravity_column { 0.5 } else { f64::NAN }),
            permeability: raw.f64("medium.permeability")?.unwrap_or(1.0),
        },
    };
    if let MediumSource::Uniform { porosity, permeability } = medium {
        if porosity.is_nan() {
            return Err(ConfigError::Missing("medium.porosity"));
        }
        if !(porosity > 0.0 && porosity < 1.0) {
            return Err(Raw::err("medium.porosity", "must lie in (0, 1)"));
        }
        if !(permeability > 0.0) {
            return Err(Raw::err("medium.permeability", "must be positive"));
        }
    }

    let capillary = match raw.take("capillary.model").unwrap_or(if raw.take("capillary.c").is_some() {
        "scalar"
    } else {
        "none"
    }) {
        "none" => CapillarySpec::None,
        "scalar" => {
            let c = raw.f64("capillary.c")?.ok_or(ConfigError::Missing("capillary.c"))?;
            if !(c > 0.0) {
                return Err(Raw::err("capillary.c", "must be positive"));
            }
            CapillarySpec::Scalar(c)
        }
        "csv" => CapillarySpec::Csv(raw.path("capillary.csv").ok_or(ConfigError::Missing("capillary.csv"))?),
        other => return Err(Raw::err("capillary.model", format!("unknown model `{other}`"))),
    };

    let fractions = || -> Result<Vec<f64>, ConfigError> {
        let f = per_phase("initial.fractions", raw.list("initial.fractions")?, vec![1.0 / phases as f64; phases])?;
        let total: f64 = f.iter().sum();
        if f.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Raw::err("initial.fractions", format!("must be nonnegative and sum to 1 (sum {total})")));
        }
        Ok(f.iter().map(|v| v / total).collect())
    };
    let default_profile = if gravity_column { "layers" } else { "uniform" };
    let initial = match raw.take("initial.profile").unwrap_or(default_profile) {
        "uniform" => InitialSpec::Uniform(fractions()?),
        "layers" => {
            let order: Vec<usize> = raw.list("initial.order")?.unwrap_or_else(|| (0..phases).collect());
            let mut seen = order.clone();
            seen.sort_unstable();
            if seen != (0..phases).collect::<Vec<_>>() {
                return Err(Raw::err("initial.order", "must be a permutation of the phase indices"));
            }
            InitialSpec::Layers { fractions: fractions()?, order }
        }
        "csv" => InitialSpec::Csv(raw.path("initial.csv").ok_or(ConfigError::Missing("initial.csv"))?),
        other => return Err(Raw::err("initial.profile", format!("unknown profile `{other}`"))),
    };

    let tau = raw.f64("run.tau")?.ok_or(ConfigError::Missing("run.tau"))?;
    if !(tau > 0.0) {
        return Err(Raw::err("run.tau", "must be positive"));
    }
    let steps = match (raw.usize("run.steps")?, raw.f64("run.horizon")?) {
        (Some(_), Some(_)) => return Err(Raw::err("run.horizon", "give either run.steps or run.horizon")),
        (Some(s), None) => s,
        (None, Some(t)) if t >= 0.0 => (t / tau).round() as usize,
        (None, Some(_)) => return Err(Raw::err("run.horizon", "must be nonnegative")),
        (None, None) => return Err(ConfigError::Missing("run.steps")),
    };
    let mode = match raw.take("solver.mode") {
        None => None,
        Some("exact") => Some(ModeSpec::Exact),
        Some("entropic") => Some(ModeSpec::Entropic),
        Some(other) => return Err(Raw::err("solver.mode", format!("unknown mode `{other}`"))),
    };
    let epsilon = raw.f64("solver.epsilon")?;
    if matches!(epsilon, Some(e) if !(e > 0.0)) {
        return Err(Raw::err("solver.epsilon", "must be positive"));
    }
    let fw_tol = raw.f64("solver.fw_tol")?;
    if matches!(fw_tol, Some(e) if !(e > 0.0)) {
        return Err(Raw::err("solver.fw_tol", "must be positive"));
    }
    Ok(RunConfig {
        grid,
        phases,
        medium,
        viscosities,
        densities,
        gravity,
        masses,
        capillary,
        initial,
        tau,
        steps,
        seed: raw
            .take("run.seed")
            .map(|v| v.parse::<u64>().map_err(|e| Raw::err("run.seed", e.to_string())))
            .transpose()?
            .unwrap_or(0),
        mode,
        epsilon,
        fw_tol,
        max_fw_iter: raw.usize("solver.max_fw_iter")?,
        positivity: raw.bool("solver.positivity")?.unwrap_or(false),
        output_dir: raw.path("output.dir").unwrap_or_else(|| base.join("out")),
        diagnostics: raw.bool("output.diagnostics")?.unwrap_or(true),
    })
}

/// Everything a run needs, built from a validated configuration.
pub struct Setup {
    pub grid: Grid,
    pub medium: MediumSpec,
    pub model: QuadraticCapillary,
    pub costs: CostBundle,
    pub initial: PhaseField,
}

impl Setup {
    pub fn model(&self) -> &dyn CapillaryModel {
        &self.model
    }
}

fn initial_densities(cfg: &RunConfig, grid: &Grid, porosity: &[f64]) -> Result<Vec<Vec<f64>>, ConfigError> {
    let n = grid.cell_count();
    let np = cfg.phases;
    match &cfg.initial {
        InitialSpec::Uniform(f) => Ok(f.iter().map(|fi| porosity.iter().map(|w| fi * w).collect()).collect()),
        InitialSpec::Layers { fractions, order } => {
            let [nx, ny] = grid.shape();
            let mut rho = vec![vec![0.0; n]; np];
            let columns: Vec<Vec<usize>> = if grid.dim() == 1 {
                vec![(0..nx).collect()]
            } else {
                (0..nx).map(|i| (0..ny).map(|j| grid.index(i, j)).collect()).collect()
            };
            for col in columns {
                // fill pore volume of the column from the bottom, phase by phase
                let total: f64 = col.iter().map(|&c| porosity[c]).sum();
                let mut queue = order.iter().map(|&i| (i, fractions[i] * total)).collect::<Vec<_>>().into_iter();
                let mut current = queue.next();
                for &c in &col {
                    let mut room = porosity[c];
                    while room > 0.0 {
                        let Some((i, left)) = current else { break };
                        let take = left.min(room);
                        rho[i][c] += take;
                        room -= take;
                        current = if left - take > 1e-15 * total { Some((i, left - take)) } else { queue.next() };
                    }
                    if room > 0.0 {
                        // rounding leftover goes to the top phase of the order
                        rho[*order.last().expect("phases >= 1")][c] += room;
                    }
                }
            }
            Ok(rho)
        }
        InitialSpec::Csv(path) => {
            let mut rdr = csv::ReaderBuilder::new()
                .comment(Some(b'#'))
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| Raw::err("initial.csv", e.to_string()))?;
            let headers = rdr.headers().map_err(|e| Raw::err("initial.csv", e.to_string()))?.clone();
            let col = |name: String| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Raw::err("initial.csv", format!("missing column {name}")))
            };
            let cell_col = col("cell".into())?;
            let cols = (0..np).map(|i| col(format!("s_{i}"))).collect::<Result<Vec<_>, _>>()?;
            let mut rho = vec![vec![f64::NAN; n]; np];
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Raw::err("initial.csv", e.to_string()))?;
                let num = |k: usize| -> Result<f64, ConfigError> {
                    rec.get(k)
                        .unwrap_or("")
                        .parse::<f64>()
                        .map_err(|e| Raw::err("initial.csv", format!("{e} in row {rec:?}")))
                };
                let c = num(cell_col)? as usize;
                if c >= n {
                    return Err(Raw::err("initial.csv", format!("cell {c} out of range")));
                }
                for (i, &k) in cols.iter().enumerate() {
                    rho[i][c] = num(k)?;
                }
            }
            for c in 0..n {
                let sum: f64 = (0..np).map(|i| rho[i][c]).sum();
                if !sum.is_finite() || (0..np).any(|i| rho[i][c] < 0.0) {
                    return Err(Raw::err("initial.csv", format!("cell {c} missing or negative")));
                }
                let rel = (sum - porosity[c]).abs() / porosity[c];
                if rel > MASS_TOLERANCE {
                    return Err(ConfigError::Masses(format!(
                        "cell {c}: densities sum to {sum}, porosity is {}",
                        porosity[c]
                    )));
                }
                if rel > 0.0 {
                    info!("renormalizing cell {c} of the initial state (relative discrepancy {rel:.3e})");
                }
                for r in rho.iter_mut() {
                    r[c] *= porosity[c] / sum;
                }
            }
            Ok(rho)
        }
    }
}

impl RunConfig {
    /// Build grid, medium, capillary model, costs and the initial state.
    /// Phase masses are those of the initial state; configured masses must
    /// agree with them to `MASS_TOLERANCE` relative.
    pub fn build(&self) -> Result<Setup, ConfigError> {
        let grid = build_grid(&self.grid)?;
        let n = grid.cell_count();
        let placeholder = vec![1.0 / self.phases as f64; self.phases];
        let mut medium =
            match &self.medium {
                MediumSource::Uniform { porosity, permeability } => {
                    MediumSpec::homogeneous(&grid, *porosity, *permeability, &self.viscosities, &placeholder)
                        .with_gravity(&grid, &self.densities, self.gravity)
                }
                MediumSource::Csv(path) => {
                    let mut m = MediumSpec::from_csv(&grid, path, &self.viscosities, &placeholder)?;
                    if self.gravity != 0.0 {
                        let g = MediumSpec::homogeneous(&grid, 0.5, 1.0, &self.viscosities, &placeholder).with_gravity(
                            &grid,
                            &self.densities,
                            self.gravity,
                        );
                        for (p, extra) in m.potentials.iter_mut().zip(&g.potentials) {
                            p.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
                        }
                    }
                    m
                }
            };
        let rho = initial_densities(self, &grid, &medium.porosity)?;
        let initial = PhaseField::from_densities(&grid, &rho);
        let actual: Vec<f64> = initial.masses.iter().map(|m| m.iter().sum()).collect();
        if let Some(given) = &self.masses {
            let mut bad = Vec::new();
            for (i, (g, a)) in given.iter().zip(&actual).enumerate() {
                let rel = (g - a).abs() / a.abs().max(f64::MIN_POSITIVE);
                if rel > MASS_TOLERANCE {
                    bad.push(format!("phase {i}: configured {g}, initial state {a} (relative {rel:.3e})"));
                }
            }
            if !bad.is_empty() {
                return Err(ConfigError::Masses(bad.join("; ")));
            }
        }
        medium.masses = actual;
        let rel = medium.normalize_masses(&grid, MASS_TOLERANCE)?;
        if rel > 0.0 {
            info!("renormalized phase masses to the pore volume (relative discrepancy {rel:.3e})");
        }
        medium.validate(&grid)?;
        let model = match &self.capillary {
            CapillarySpec::None => QuadraticCapillary::disabled(n, self.phases - 1),
            CapillarySpec::Scalar(c) => QuadraticCapillary::scalar(n, self.phases - 1, *c)?,
            CapillarySpec::Csv(path) => QuadraticCapillary::from_csv(path, n, self.phases - 1)?,
        };
        let costs = CostBundle::build(&grid, &medium)?;
        Ok(Setup { grid, medium, model, costs, initial })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "grid.nx = 4\nmedium.phases = 1\nmedium.porosity = 0.5\nrun.tau = 0.1\nrun.steps = 2\n";

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, Path::new("/tmp"))
    }

    #[test]
    fn minimal_single_phase() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.phases, 1);
        assert_eq!(cfg.steps, 2);
        let setup = cfg.build().unwrap();
        assert_eq!(setup.medium.masses, vec![0.5]);
        assert_eq!(setup.initial.masses[0], vec![0.125; 4]);
    }

    #[test]
    fn missing_and_unknown_keys() {
        let no_tau = MINIMAL.replace("run.tau = 0.1\n", "");
        assert!(matches!(parse(&no_tau), Err(ConfigError::Missing("run.tau"))));
        assert!(matches!(parse(&format!("{MINIMAL}run.colour = red\n")), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(parse(&format!("{MINIMAL}run.tau = 0.2\n")), Err(ConfigError::Duplicate(_))));
        assert!(matches!(parse("grid.nx 4\n"), Err(ConfigError::Syntax { line: 1 })));
        assert!(parse(&MINIMAL.replace("0.1", "-0.1")).is_err());
    }

    #[test]
    fn inconsistent_masses_are_refused() {
        let text = "grid.nx = 4\nmedium.phases = 2\nmedium.porosity = 0.5\ninitial.fractions = 0.5, 0.5\n\
                    run.tau = 0.1\nrun.steps = 1\n";
        let off = format!("{text}medium.masses = 0.25, 0.25025\n");
        let err = parse(&off).unwrap().build().err().expect("must fail");
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Masses(_)));
        assert!(msg.contains("phase 1") && msg.contains("0.25025"), "{msg}");
        let close = format!("{text}medium.masses = 0.25, 0.2500000001\n");
        assert!(parse(&close).unwrap().build().is_ok());
    }

    #[test]
    fn gravity_column_preset_is_inverted() {
        let text = "medium.preset = gravity-column\ngrid.nx = 8\nmedium.phases = 2\ncapillary.c = 1\n\
                    run.tau = 0.05\nrun.horizon = 0.2\n";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.steps, 4);
        let s = cfg.build().unwrap();
        // phase 1 is heavier and starts on top
        assert_eq!(s.medium.potentials[1][7], 2.0 * s.medium.potentials[0][7]);
        let vol = s.grid.cell_volume();
        for c in 0..8 {
            let top = c >= 4;
            assert!((s.initial.masses[1][c] - if top { 0.5 * vol } else { 0.0 }).abs() < 1e-15);
        }
        assert!(s.initial.saturation_drift(&s.grid, &s.medium) < 1e-15);
    }

    #[test]
    fn layers_split_cells_by_volume() {
        let text = "grid.nx = 4\nmedium.phases = 2\nmedium.porosity = 0.4\ninitial.profile = layers\n\
                    initial.fractions = 0.375, 0.625\ninitial.order = 1, 0\nrun.tau = 1\nrun.steps = 0\n";
        let s = parse(text).unwrap().build().unwrap();
        // phase 1 fills 62.5% of the column from the bottom: 2.5 cells
        let rho = s.initial.densities(&s.grid);
        for (a, b) in rho[1].iter().zip([0.4, 0.4, 0.2, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((rho[0][2] - 0.2).abs() < 1e-15 && rho[0][3] == 0.4);
    }
}
