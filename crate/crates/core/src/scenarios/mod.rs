//! Configured games with independent oracles, and a small fixture corpus.

pub mod fns;
pub mod s51;
pub mod s52;
pub mod toys;

use serde::{Deserialize, Serialize};

use crate::calculus::Flow;
use crate::error::{invalid, Result};
use crate::game::GameScenario;

/// One oracle comparison: `passed` iff every `|observed - reference|` is
/// within `tolerance`. `margin` is `tolerance` minus the worst deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub name: String,
    pub reference: Vec<f64>,
    pub observed: Vec<f64>,
    pub tolerance: f64,
    pub max_error: f64,
    pub margin: f64,
    pub passed: bool,
    pub note: String,
}

impl OracleResult {
    pub fn new(name: &str, reference: Vec<f64>, observed: Vec<f64>, tolerance: f64, note: &str) -> Self {
        let max_error = if reference.len() == observed.len() {
            reference
                .iter()
                .zip(&observed)
                .map(|(r, o)| (o - r).abs())
                .fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
        } else {
            f64::INFINITY
        };
        let margin = tolerance - max_error;
        Self {
            name: name.into(),
            reference,
            observed,
            tolerance,
            max_error,
            margin,
            passed: margin >= 0.0,
            note: note.into(),
        }
    }
}

const BUILTINS: [&str; 7] = [
    "decoupled-quadratic",
    "quadratic-saddle",
    "u-free",
    "martingale",
    "jump-only",
    "scenario-5-1",
    "scenario-5-2",
];

pub fn builtin_names() -> &'static [&'static str] {
    &BUILTINS
}

/// A built-in scenario with default parameters.
pub fn builtin(name: &str) -> Result<GameScenario> {
    match name {
        "decoupled-quadratic" => Ok(toys::decoupled_quadratic()),
        "quadratic-saddle" => Ok(toys::quadratic_saddle()),
        "u-free" => Ok(toys::u_free()),
        "martingale" => Ok(toys::martingale()),
        "jump-only" => Ok(toys::jump_only()),
        "scenario-5-1" => s51::build(&s51::Params::default()),
        "scenario-5-2" => s52::build(&s52::Params::default(), Flow::F),
        _ => Err(invalid(format!(
            "unknown scenario `{name}`; known: {}",
            BUILTINS.join(", ")
        ))),
    }
}

pub use s51::run as run_scenario_5_1;
pub use s52::run as run_scenario_5_2;
pub use toys::toy_corpus;
