//! Experiment configuration: a TOML file with `model`, `grid`, `sim`, `task`
//! and `output` sections. See `configs/SCHEMA.md` for every key.

use std::path::{Path, PathBuf};

use fwmeta::grid::GridSpec;
use fwmeta::{Field, ModelSpec};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TASKS: [&str; 9] = [
    "simulate",
    "flow",
    "equilibria",
    "mam",
    "quasipotential",
    "exit-mc",
    "exit-shape",
    "validate",
    "report",
];

pub const MODELS: [&str; 3] = ["allen-cahn", "allen-cahn-multiplicative", "coupled-cubic"];

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub sim: SimSection,
    pub task: TaskSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    /// Constant diffusivity `a` (allen-cahn only).
    pub diffusivity: Option<f64>,
    /// Linear coupling (coupled-cubic only).
    pub coupling: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "M")]
    pub points: i64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Defaults to `min(0.1 Δξ², 1e-3)`.
    pub dt: Option<f64>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub n_samples: i64,
    #[serde(default = "default_one")]
    pub observer_stride: i64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: None,
            t_max: default_t_max(),
            epsilon: default_epsilon(),
            seed: 0,
            n_samples: 1,
            observer_stride: 1,
        }
    }
}

fn default_t_max() -> f64 {
    1.0
}

fn default_epsilon() -> Vec<f64> {
    vec![0.1]
}

fn default_one() -> i64 {
    1
}

/// A state: `"zero"`, an equilibrium label such as `"eq1"`, or a sine mode
/// `{ mode = k, amplitude = a }` (the same profile in every component).
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum StateSpec {
    Label(String),
    Sine { mode: u32, amplitude: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    /// Newton seeds; defaults to `0, +sin, −sin`.
    pub seeds: Option<Vec<StateSpec>>,
    /// Initial state for simulate and flow.
    pub initial: Option<StateSpec>,
    pub start: Option<StateSpec>,
    pub end: Option<StateSpec>,
    /// Fixed horizon of the mam task.
    pub horizon: Option<f64>,
    pub horizons: Option<Vec<f64>>,
    pub path_points: Option<i64>,
    pub penalty_weight: Option<f64>,
    pub max_iterations: Option<i64>,
    pub gradient_tolerance: Option<f64>,
    /// `none`, `tilde` or `hat`.
    pub constraint: Option<String>,
    pub rho: Option<Vec<f64>>,
    /// Label of the stable equilibrium whose basin is exited.
    pub attractor: Option<String>,
    pub stop_radius: Option<f64>,
    pub flow_horizon: Option<f64>,
    pub band: Option<f64>,
    pub exit_dt: Option<f64>,
    pub max_steps: Option<i64>,
    pub checkpoint_stride: Option<i64>,
    pub band_stride: Option<i64>,
    pub wall_clock_limit: Option<f64>,
    /// Exit-shape radius around the target saddles.
    pub delta: Option<f64>,
    /// Target saddle labels; by default the minimisers of `V(x*, ·)`.
    pub targets: Option<Vec<String>>,
    /// Output directory of an earlier exit run (report task).
    pub input: Option<PathBuf>,
    pub sample_radius: Option<f64>,
    pub validation_samples: Option<i64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

fn err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(err(field, format!("must be positive and finite, got {v}")))
    }
}

fn at_least(field: &str, v: i64, min: i64) -> Result<usize, CliError> {
    if v >= min {
        Ok(v as usize)
    } else {
        Err(err(field, format!("must be at least {min}, got {v}")))
    }
}

fn opt_positive(field: &str, v: Option<f64>) -> Result<(), CliError> {
    v.map_or(Ok(()), |v| positive(field, v))
}

fn opt_at_least(field: &str, v: Option<i64>, min: i64) -> Result<(), CliError> {
    v.map_or(Ok(()), |v| at_least(field, v, min).map(|_| ()))
}

/// A parsed config together with the SHA-256 of its bytes.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub path: PathBuf,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| err("<file>", format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&text)?;
    Ok(LoadedConfig {
        config,
        hash: sha256_hex(text.as_bytes()),
        path: path.to_path_buf(),
    })
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = e
            .span()
            .map(|s| field_at(text, s.start))
            .unwrap_or_else(|| "<document>".into());
        err(&field, message)
    })?;
    config.validate()?;
    Ok(config)
}

/// Best-effort `section.key` for a byte offset, for parse errors.
fn field_at(text: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (section.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !MODELS.contains(&self.model.name.as_str()) {
            return Err(err("model.name", format!("unknown model `{}`; valid: {}", self.model.name, MODELS.join(", "))));
        }
        opt_positive("model.diffusivity", self.model.diffusivity)?;
        if self.model.diffusivity.is_some() && self.model.name != "allen-cahn" {
            return Err(err("model.diffusivity", "only the allen-cahn model takes a diffusivity"));
        }
        if self.model.coupling.is_some() && self.model.name != "coupled-cubic" {
            return Err(err("model.coupling", "only the coupled-cubic model takes a coupling"));
        }
        if let Some(c) = self.model.coupling {
            if !c.is_finite() {
                return Err(err("model.coupling", "must be finite"));
            }
        }
        positive("grid.L", self.grid.length)?;
        at_least("grid.M", self.grid.points, 1)?;
        opt_positive("sim.dt", self.sim.dt)?;
        positive("sim.t_max", self.sim.t_max)?;
        if let Some(dt) = self.sim.dt {
            if dt >= self.sim.t_max {
                return Err(err("sim.dt", format!("must be below sim.t_max = {}", self.sim.t_max)));
            }
        }
        if self.sim.epsilon.is_empty() {
            return Err(err("sim.epsilon", "needs at least one noise level"));
        }
        for (i, &e) in self.sim.epsilon.iter().enumerate() {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(err(&format!("sim.epsilon[{i}]"), format!("must be nonnegative and finite, got {e}")));
            }
        }
        at_least("sim.n_samples", self.sim.n_samples, 1)?;
        at_least("sim.observer_stride", self.sim.observer_stride, 1)?;
        if !TASKS.contains(&self.task.name.as_str()) {
            return Err(err("task.name", format!("unknown task `{}`; valid: {}", self.task.name, TASKS.join(", "))));
        }
        let t = &self.task;
        opt_positive("task.horizon", t.horizon)?;
        if let Some(h) = &t.horizons {
            if h.is_empty() {
                return Err(err("task.horizons", "needs at least one horizon"));
            }
            for (i, &v) in h.iter().enumerate() {
                positive(&format!("task.horizons[{i}]"), v)?;
            }
        }
        opt_at_least("task.path_points", t.path_points, 8)?;
        opt_positive("task.penalty_weight", t.penalty_weight)?;
        opt_at_least("task.max_iterations", t.max_iterations, 1)?;
        opt_positive("task.gradient_tolerance", t.gradient_tolerance)?;
        if let Some(c) = &t.constraint {
            if !["none", "tilde", "hat"].contains(&c.as_str()) {
                return Err(err("task.constraint", format!("must be none, tilde or hat, got `{c}`")));
            }
        }
        if let Some(r) = &t.rho {
            if r.is_empty() {
                return Err(err("task.rho", "needs at least one radius"));
            }
            for (i, &v) in r.iter().enumerate() {
                positive(&format!("task.rho[{i}]"), v)?;
            }
        }
        opt_positive("task.stop_radius", t.stop_radius)?;
        opt_positive("task.flow_horizon", t.flow_horizon)?;
        opt_positive("task.band", t.band)?;
        opt_positive("task.exit_dt", t.exit_dt)?;
        opt_at_least("task.max_steps", t.max_steps, 1)?;
        opt_at_least("task.checkpoint_stride", t.checkpoint_stride, 1)?;
        opt_at_least("task.band_stride", t.band_stride, 1)?;
        opt_positive("task.wall_clock_limit", t.wall_clock_limit)?;
        opt_positive("task.delta", t.delta)?;
        opt_positive("task.sample_radius", t.sample_radius)?;
        opt_at_least("task.validation_samples", t.validation_samples, 1)?;
        for (name, spec) in [("task.initial", &t.initial), ("task.start", &t.start), ("task.end", &t.end)] {
            if let Some(s) = spec {
                check_state(name, s)?;
            }
        }
        if let Some(seeds) = &t.seeds {
            for (i, s) in seeds.iter().enumerate() {
                let name = format!("task.seeds[{i}]");
                if let StateSpec::Label(l) = s {
                    if l != "zero" {
                        return Err(err(&name, "seeds must be `zero` or sine modes"));
                    }
                }
                check_state(&name, s)?;
            }
        }
        if self.task.name == "report" && t.input.is_none() {
            return Err(err("task.input", "the report task needs the directory of an exit run"));
        }
        for (i, f) in self.output.formats.iter().enumerate() {
            if f != "csv" && f != "json" {
                return Err(err(&format!("output.formats[{i}]"), format!("must be csv or json, got `{f}`")));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let l = self.grid.length;
        match self.model.name.as_str() {
            "allen-cahn" => ModelSpec::allen_cahn_with_diffusivity(l, self.model.diffusivity.unwrap_or(1.0)),
            "allen-cahn-multiplicative" => ModelSpec::allen_cahn_multiplicative(l),
            _ => ModelSpec::coupled_cubic(l, self.model.coupling.unwrap_or(0.3)),
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let model = self.model_spec();
        GridSpec::new(self.grid.length, self.grid.points as usize, model.components).map_err(|e| err("grid", e.to_string()))
    }

    pub fn dt(&self, grid: &GridSpec) -> f64 {
        self.sim.dt.unwrap_or_else(|| fwmeta::SimConfig::default_dt(grid))
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

fn check_state(name: &str, s: &StateSpec) -> Result<(), CliError> {
    match s {
        StateSpec::Label(l) if l == "zero" || l.starts_with("eq") => Ok(()),
        StateSpec::Label(l) => Err(err(name, format!("expected `zero`, an equilibrium label like `eq1`, or a sine mode, got `{l}`"))),
        StateSpec::Sine { mode, amplitude } => {
            if *mode == 0 {
                return Err(err(name, "sine mode must be at least 1"));
            }
            if !amplitude.is_finite() {
                return Err(err(name, "amplitude must be finite"));
            }
            Ok(())
        }
    }
}

/// A state that does not need the equilibrium search.
pub fn explicit_state(spec: &StateSpec, grid: GridSpec) -> Option<Field> {
    match spec {
        StateSpec::Label(l) if l == "zero" => Some(Field::zeros(grid)),
        StateSpec::Label(_) => None,
        StateSpec::Sine { mode, amplitude } => {
            let (k, a, l) = (*mode as f64, *amplitude, grid.length);
            Some(Field::from_fn(grid, move |_, xi| a * (k * std::f64::consts::PI * xi / l).sin()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[model]\nname = \"allen-cahn\"\n\n[grid]\nL = 5.0\nM = 49\n\n[task]\nname = \"validate\"\n";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.grid.points, 49);
        assert_eq!(c.sim.epsilon, vec![0.1]);
        assert_eq!(c.output.directory, PathBuf::from("out"));
        assert!(c.wants("csv") && c.wants("json"));
    }

    #[test]
    fn zero_points_names_the_field() {
        let e = parse(&BASE.replace("M = 49", "M = 0")).unwrap_err();
        match e {
            CliError::Config { field, .. } => assert_eq!(field, "grid.M"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_errors_name_the_field() {
        let e = parse(&BASE.replace("L = 5.0", "L = \"long\"")).unwrap_err();
        match e {
            CliError::Config { field, .. } => assert_eq!(field, "grid.L"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_task_and_model_are_rejected() {
        assert!(parse(&BASE.replace("validate", "dance")).is_err());
        assert!(parse(&BASE.replace("allen-cahn", "heat")).is_err());
        assert!(parse(&format!("{BASE}bogus = 1\n")).is_err());
    }

    #[test]
    fn states_parse() {
        let text = format!("{BASE}initial = {{ mode = 1, amplitude = 0.5 }}\nstart = \"eq1\"\n");
        let c = parse(&text).unwrap();
        assert_eq!(c.task.initial, Some(StateSpec::Sine { mode: 1, amplitude: 0.5 }));
        assert_eq!(c.task.start, Some(StateSpec::Label("eq1".into())));
        assert!(parse(&format!("{BASE}start = \"north\"\n")).is_err());
    }
}
