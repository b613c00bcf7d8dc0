//! Experiment configuration: TOML file, optional preset underneath it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splitree::{GridSpec, LifetimeModel, ModelParams};
use toml::{Table, Value};

use crate::CliError;

pub const PRESETS: &[(&str, &str)] = &[
    (
        "paper-sec7",
        r#"
[model]
b = 1.0
theta = 1.0
[lifetime]
kind = "rice"
[lifetime.params]
shape = 1.0
scale = 1.0
[experiment]
t = 10.0
replicates = 10000
k_list = [1, 2]
"#,
    ),
    (
        "birth-death",
        r#"
[model]
b = 1.0
theta = 1.0
[lifetime]
kind = "exponential"
[lifetime.params]
rate = 0.5
"#,
    ),
    (
        "yule",
        r#"
[model]
b = 1.0
theta = 2.0
[lifetime]
kind = "infinite"
[experiment]
t = 6.0
horizon = 12.0
kind = "limit"
k_list = [1, 2]
"#,
    ),
];

/// Every accepted key, as dotted paths; tables are listed by their own path.
const KNOWN_KEYS: &[&str] = &[
    "preset",
    "seed",
    "model",
    "model.b",
    "model.theta",
    "lifetime",
    "lifetime.kind",
    "lifetime.params",
    "lifetime.params.rate",
    "lifetime.params.shape",
    "lifetime.params.scale",
    "lifetime.params.path",
    "grid",
    "grid.t_max",
    "grid.step",
    "constants",
    "constants.k_max",
    "constants.m_nodes",
    "constants.joint_replicates",
    "constants.a_max",
    "experiment",
    "experiment.kind",
    "experiment.t",
    "experiment.horizon",
    "experiment.k_list",
    "experiment.replicates",
    "experiment.theta_grid",
    "experiment.kde_points",
    "experiment.bandwidth",
    "experiment.diagnostic_times",
    "experiment.population_cap",
    "simulate",
    "simulate.mode",
    "simulate.times",
    "simulate.theta_evals",
    "simulate.replicates",
    "simulate.horizon",
    "simulate.k_max",
    "simulate.population_cap",
    "simulate.condition_on_survival",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelSection,
    pub lifetime: LifetimeSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub constants: ConstantsSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub b: f64,
    #[serde(default = "one")]
    pub theta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LifetimeSection {
    pub kind: String,
    #[serde(default)]
    pub params: LifetimeParams,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LifetimeParams {
    pub rate: Option<f64>,
    pub shape: Option<f64>,
    pub scale: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub t_max: f64,
    pub step: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            t_max: 40.0,
            step: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsSection {
    pub k_max: usize,
    pub m_nodes: usize,
    pub joint_replicates: usize,
    pub a_max: Option<f64>,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        Self {
            k_max: 20,
            m_nodes: 64,
            joint_replicates: 10_000,
            a_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Error,
    Limit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub kind: StatKind,
    pub t: f64,
    pub horizon: Option<f64>,
    pub k_list: Vec<usize>,
    pub replicates: usize,
    pub theta_grid: Vec<f64>,
    pub kde_points: usize,
    pub bandwidth: Option<f64>,
    pub diagnostic_times: Vec<f64>,
    pub population_cap: Option<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: StatKind::Error,
            t: 10.0,
            horizon: None,
            k_list: vec![1],
            replicates: 1000,
            theta_grid: Vec::new(),
            kde_points: 512,
            bandwidth: None,
            diagnostic_times: Vec::new(),
            population_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Cpp,
    Forward,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub mode: SimMode,
    pub times: Vec<f64>,
    pub theta_evals: Vec<f64>,
    pub replicates: usize,
    pub horizon: Option<f64>,
    pub k_max: usize,
    pub population_cap: Option<usize>,
    pub condition_on_survival: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            mode: SimMode::Cpp,
            times: vec![5.0],
            theta_evals: Vec::new(),
            replicates: 100,
            horizon: None,
            k_max: 20,
            population_cap: None,
            condition_on_survival: true,
        }
    }
}

impl Config {
    /// Reads `path` (if any) on top of `preset` (if any); the file's own
    /// `preset` key is honoured when no preset is given on the command line.
    pub fn load(path: Option<&Path>, preset: Option<&str>) -> Result<Self, CliError> {
        let user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config file {}: {e}", p.display()))
                })?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        let preset = preset.map(str::to_owned).or_else(|| {
            user.get("preset")
                .and_then(Value::as_str)
                .map(str::to_owned)
        });
        if path.is_none() && preset.is_none() {
            return Err(CliError::Config(
                "either --config or --preset is required".into(),
            ));
        }
        let mut merged = match &preset {
            Some(name) => preset_table(name)?,
            None => Table::new(),
        };
        let mut unknown = Vec::new();
        unknown_keys(&user, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!(
                "unknown configuration keys: {}",
                unknown.join(", ")
            )));
        }
        merge(&mut merged, user);
        if let Some(name) = preset {
            merged.insert("preset".into(), Value::String(name));
        }
        let config: Config = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.experiment.k_list.is_empty() || self.experiment.k_list.contains(&0) {
            return Err(CliError::Config(
                "experiment.k_list must hold positive integers".into(),
            ));
        }
        if let Some(&k) = self.experiment.k_list.iter().max() {
            if k > self.constants.k_max {
                return Err(CliError::Config(format!(
                    "experiment.k_list entry {k} exceeds constants.k_max = {}",
                    self.constants.k_max
                )));
            }
        }
        if self.simulate.times.is_empty() {
            return Err(CliError::Config("simulate.times must not be empty".into()));
        }
        Ok(())
    }

    pub fn lifetime(&self) -> Result<LifetimeModel, CliError> {
        let p = &self.lifetime.params;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                CliError::Config(format!(
                    "lifetime kind \"{}\" needs lifetime.params.{name}",
                    self.lifetime.kind
                ))
            })
        };
        let model = match self.lifetime.kind.as_str() {
            "exponential" => LifetimeModel::exponential(need(p.rate, "rate")?)?,
            "infinite" => LifetimeModel::Infinite,
            "rice" => LifetimeModel::rice(need(p.shape, "shape")?, need(p.scale, "scale")?)?,
            "numeric" => {
                let path = p.path.as_ref().ok_or_else(|| {
                    CliError::Config("lifetime kind \"numeric\" needs lifetime.params.path".into())
                })?;
                LifetimeModel::Numeric(splitree::lifetimes::NumericDensity::from_csv(path)?)
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown lifetime kind \"{other}\" (expected exponential, infinite, rice or numeric)"
                )))
            }
        };
        Ok(model)
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        Ok(ModelParams::new(
            self.model.b,
            self.model.theta,
            self.lifetime()?,
        )?)
    }

    pub fn grid(&self) -> GridSpec {
        let mut g = GridSpec::with_t_max(self.grid.t_max);
        if let Some(step) = self.grid.step {
            g.step = step;
        }
        g
    }

    pub fn horizon(&self) -> f64 {
        self.experiment.horizon.unwrap_or(2.0 * self.experiment.t)
    }
}

fn preset_table(name: &str) -> Result<Table, CliError> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
        CliError::Config(format!(
            "unknown preset \"{name}\" (available: {})",
            names.join(", ")
        ))
    })?;
    Ok(text.parse::<Table>().expect("built-in presets parse"))
}

fn unknown_keys(table: &Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in table {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        if !KNOWN_KEYS.contains(&path.as_str()) {
            out.push(path);
            continue;
        }
        if let Value::Table(inner) = value {
            unknown_keys(inner, &path, out);
        }
    }
}

fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_loads_and_file_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "preset = \"paper-sec7\"\n[experiment]\nt = 4.0\n").unwrap();
        let cfg = Config::load(Some(&path), None).unwrap();
        assert_eq!(cfg.experiment.t, 4.0);
        assert_eq!(cfg.experiment.k_list, vec![1, 2]);
        assert!(matches!(
            cfg.lifetime().unwrap(),
            LifetimeModel::Rice { .. }
        ));
    }

    #[test]
    fn unknown_keys_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "bogus = 1\n[model]\nb = 1.0\nthetaa = 2\n[lifetime]\nkind = \"infinite\"\n",
        )
        .unwrap();
        let err = Config::load(Some(&path), None).unwrap_err().to_string();
        assert!(
            err.contains("bogus") && err.contains("model.thetaa"),
            "{err}"
        );
    }

    #[test]
    fn missing_lifetime_parameter() {
        let cfg = Config::load(None, Some("birth-death")).unwrap();
        let mut broken = cfg.clone();
        broken.lifetime.params.rate = None;
        let err = broken.lifetime().unwrap_err().to_string();
        assert!(err.contains("lifetime.params.rate"), "{err}");
    }
}
