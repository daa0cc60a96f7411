use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volterra_games::calculus::{Flow, RegressionBasis};
use volterra_games::game::{GameScenario, NashOptions, StepRule};
use volterra_games::scenarios::{builtin, s51, s52};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: Option<f64>,
    pub cells: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub step: StepRule,
    pub tol: f64,
    pub max_iterations: usize,
    /// Constant starting controls of both players.
    pub initial: Option<[f64; 2]>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let o = NashOptions::default();
        Self {
            step: o.step,
            tol: o.tol,
            max_iterations: o.max_iterations,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random probes per check.
    pub probes: usize,
    /// Bound on the projected necessary-condition residual.
    pub residual_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            probes: 8,
            residual_tol: 5e-2,
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in scenario name, or the path of a scenario file.
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub grid: GridConfig,
    pub basis: Option<RegressionBasis>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Model parameters of `scenario-5-1` / `scenario-5-2`.
    pub params: Option<toml::Table>,
}

/// A scenario file: a built-in name plus its parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    params: Option<toml::Table>,
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub grid_n: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone)]
pub enum Model {
    Builtin,
    Delayed(s51::Params),
    Recursive(s52::Params),
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub scenario: String,
    pub model: Model,
    pub seed: u64,
    pub paths: usize,
    pub horizon: Option<f64>,
    pub cells: Option<usize>,
    pub workers: usize,
    pub basis: Option<RegressionBasis>,
    pub optimizer: OptimizerConfig,
    pub out: PathBuf,
    pub format: Format,
    pub verify: VerifyConfig,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => parse(&read(p)?, p),
        None => Ok(RunConfig::default()),
    }
}

fn params<T: for<'de> Deserialize<'de> + Default>(table: Option<toml::Table>) -> Result<T, CliError> {
    match table {
        None => Ok(T::default()),
        Some(t) => t.try_into().map_err(|e| CliError::Config(format!("params: {e}"))),
    }
}

pub fn resolve(cfg: RunConfig, over: Overrides, base: &Path) -> Result<Settings, CliError> {
    let selector = over
        .scenario
        .or(cfg.scenario)
        .ok_or_else(|| CliError::Config("scenario: no scenario given (config key or --scenario)".into()))?;
    let (scenario, table) = if selector.ends_with(".toml") {
        let path = base.join(&selector);
        let file: ScenarioFile = parse(&read(&path)?, &path)?;
        if cfg.params.is_some() && file.params.is_some() {
            return Err(CliError::Config("params: given both in the config and the scenario file".into()));
        }
        (file.name, file.params.or(cfg.params))
    } else {
        (selector, cfg.params)
    };
    let model = match scenario.as_str() {
        "scenario-5-1" => Model::Delayed(params(table)?),
        "scenario-5-2" => Model::Recursive(params(table)?),
        name => {
            if table.is_some() {
                return Err(CliError::Config(format!("params: scenario `{name}` takes no parameters")));
            }
            Model::Builtin
        }
    };
    let settings = Settings {
        scenario,
        model,
        seed: over.seed.or(cfg.seed).unwrap_or(1),
        paths: over.paths.or(cfg.paths).unwrap_or(1000),
        horizon: cfg.grid.horizon,
        cells: over.grid_n.or(cfg.grid.cells),
        workers: over
            .workers
            .or(cfg.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        basis: cfg.basis,
        optimizer: cfg.optimizer,
        out: over.out.or(cfg.output.dir).unwrap_or_else(|| PathBuf::from(".")),
        format: over.format.or(cfg.output.format).unwrap_or_default(),
        verify: cfg.verify,
    };
    settings.validate()?;
    Ok(settings)
}

impl Settings {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Config(format!("{key}: {why}")));
        if self.paths == 0 {
            return bad("paths", "must be positive");
        }
        if self.cells == Some(0) {
            return bad("grid.cells (--grid-n)", "must be positive");
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return bad("grid.horizon", "must be positive and finite");
            }
        }
        if self.workers == 0 {
            return bad("workers", "must be positive");
        }
        if !(self.optimizer.tol > 0.0) {
            return bad("optimizer.tol", "must be positive");
        }
        if self.optimizer.max_iterations == 0 {
            return bad("optimizer.max_iterations", "must be positive");
        }
        if !(self.verify.residual_tol > 0.0) {
            return bad("verify.residual_tol", "must be positive");
        }
        if self.verify.probes == 0 {
            return bad("verify.probes", "must be positive");
        }
        Ok(())
    }

    pub fn nash_options(&self) -> NashOptions {
        NashOptions {
            step: self.optimizer.step,
            max_iterations: self.optimizer.max_iterations,
            tol: self.optimizer.tol,
        }
    }

    /// Scenario with grid and basis overrides applied; model parameters are
    /// updated in place so that oracles see the same grid.
    pub fn build(&mut self) -> Result<GameScenario, CliError> {
        let mut sc = match &mut self.model {
            Model::Delayed(p) => {
                p.cells = self.cells.unwrap_or(p.cells);
                p.horizon = self.horizon.unwrap_or(p.horizon);
                s51::build(p)?
            }
            Model::Recursive(p) => {
                p.cells = self.cells.unwrap_or(p.cells);
                p.horizon = self.horizon.unwrap_or(p.horizon);
                s52::build(p, Flow::F)?
            }
            Model::Builtin => {
                let mut sc = builtin(&self.scenario)?;
                sc.cells = self.cells.unwrap_or(sc.cells);
                sc.horizon = self.horizon.unwrap_or(sc.horizon);
                sc
            }
        };
        if let Some(b) = self.basis {
            sc.options.basis = b;
        }
        Ok(sc)
    }
}
