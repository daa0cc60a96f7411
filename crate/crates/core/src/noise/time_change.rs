use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::sampling::{Purpose, RandomSeed};
use crate::error::{invalid, Result};

/// Deterministic intensity curve `t -> lambda(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum IntensityFn {
    Constant { value: f64 },
    /// `intercept + slope * t`
    Affine { intercept: f64, slope: f64 },
    /// `level + amplitude * sin(2 pi t / period)`
    Periodic { level: f64, amplitude: f64, period: f64 },
}

impl IntensityFn {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            IntensityFn::Constant { value } => value,
            IntensityFn::Affine { intercept, slope } => intercept + slope * t,
            IntensityFn::Periodic {
                level,
                amplitude,
                period,
            } => level + amplitude * (std::f64::consts::TAU * t / period).sin(),
        }
    }

    fn validate(&self, horizon: f64) -> Result<()> {
        let min = match *self {
            IntensityFn::Constant { value } => value,
            IntensityFn::Affine { intercept, slope } => intercept.min(intercept + slope * horizon),
            IntensityFn::Periodic {
                level,
                amplitude,
                period,
            } => {
                if !(period > 0.0) {
                    return Err(invalid(format!("periodic intensity needs a positive period, got {period}")));
                }
                level - amplitude.abs()
            }
        };
        if !(min >= 0.0) || !min.is_finite() {
            return Err(invalid(format!(
                "deterministic intensity {self:?} becomes negative on [0, {horizon}]"
            )));
        }
        Ok(())
    }
}

/// Law of one intensity component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntensityModel {
    Deterministic(IntensityFn),
    /// `pieces` equal sub-intervals of `[0, T]`, each carrying an independent
    /// level `exp(N(log_mean, log_sd^2))`.
    PiecewiseLognormal {
        pieces: usize,
        log_mean: f64,
        log_sd: f64,
    },
    /// Square-root diffusion `d l = speed (mean - l) dt + vol sqrt(l) dW`,
    /// Euler with full truncation; the cell value is the positive part.
    MeanReverting {
        initial: f64,
        speed: f64,
        mean: f64,
        vol: f64,
    },
}

impl IntensityModel {
    pub fn constant(value: f64) -> Self {
        IntensityModel::Deterministic(IntensityFn::Constant { value })
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, IntensityModel::Deterministic(_))
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        match *self {
            IntensityModel::Deterministic(ref f) => f.validate(horizon),
            IntensityModel::PiecewiseLognormal {
                pieces,
                log_mean,
                log_sd,
            } => {
                if pieces == 0 || !(log_sd >= 0.0) || !log_mean.is_finite() || !log_sd.is_finite() {
                    return Err(invalid(
                        "piecewise lognormal intensity needs pieces >= 1, finite log_mean and log_sd >= 0",
                    ));
                }
                Ok(())
            }
            IntensityModel::MeanReverting {
                initial,
                speed,
                mean,
                vol,
            } => {
                let ok = initial >= 0.0 && speed > 0.0 && mean >= 0.0 && vol >= 0.0;
                if !ok || ![initial, speed, mean, vol].iter().all(|v| v.is_finite()) {
                    return Err(invalid(
                        "mean-reverting intensity needs initial >= 0, speed > 0, mean >= 0, vol >= 0",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Unconditional expected intensity at time `t`, where available in
    /// closed form.
    pub fn expected_level(&self, t: f64) -> f64 {
        match *self {
            IntensityModel::Deterministic(ref f) => f.eval(t),
            IntensityModel::PiecewiseLognormal { log_mean, log_sd, .. } => {
                (log_mean + 0.5 * log_sd * log_sd).exp()
            }
            IntensityModel::MeanReverting {
                initial,
                speed,
                mean,
                ..
            } => mean + (initial - mean) * (-speed * t).exp(),
        }
    }

    /// Long-run mean of the stationary law, for random models.
    pub fn stationary_mean(&self) -> Option<f64> {
        match *self {
            IntensityModel::Deterministic(_) => None,
            IntensityModel::PiecewiseLognormal { log_mean, log_sd, .. } => {
                Some((log_mean + 0.5 * log_sd * log_sd).exp())
            }
            IntensityModel::MeanReverting { mean, .. } => Some(mean),
        }
    }

    fn sample<R: Rng>(&self, grid: &TimeGrid, rng: &mut R) -> Vec<f64> {
        let n = grid.cells();
        match *self {
            IntensityModel::Deterministic(ref f) => {
                (0..n).map(|j| f.eval(grid.node(j)).max(0.0)).collect()
            }
            IntensityModel::PiecewiseLognormal {
                pieces,
                log_mean,
                log_sd,
            } => {
                let levels: Vec<f64> = (0..pieces)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (log_mean + log_sd * z).exp()
                    })
                    .collect();
                let piece_len = grid.horizon() / pieces as f64;
                (0..n)
                    .map(|j| {
                        let idx = ((grid.node(j) / piece_len).floor() as usize).min(pieces - 1);
                        levels[idx]
                    })
                    .collect()
            }
            IntensityModel::MeanReverting {
                initial,
                speed,
                mean,
                vol,
            } => {
                let mut v = initial;
                let mut out = Vec::with_capacity(n);
                for j in 0..n {
                    let vp = v.max(0.0);
                    out.push(vp);
                    let dt = grid.width(j);
                    let z: f64 = rng.sample(StandardNormal);
                    v += speed * (mean - vp) * dt + vol * vp.sqrt() * dt.sqrt() * z;
                }
                out
            }
        }
    }
}

/// Joint law of the Brownian and jump intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeChangeModel {
    pub brownian: IntensityModel,
    pub jump: IntensityModel,
}

impl TimeChangeModel {
    pub fn deterministic(brownian: f64, jump: f64) -> Self {
        Self {
            brownian: IntensityModel::constant(brownian),
            jump: IntensityModel::constant(jump),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.brownian.is_deterministic() && self.jump.is_deterministic()
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        self.brownian.validate(horizon)?;
        self.jump.validate(horizon)
    }
}

/// Per-cell intensities of one path, evaluated at left endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeChangePath {
    pub brownian: Vec<f64>,
    pub jump: Vec<f64>,
}

impl TimeChangePath {
    pub fn new(brownian: Vec<f64>, jump: Vec<f64>) -> Result<Self> {
        if brownian.len() != jump.len() {
            return Err(invalid("intensity components differ in length"));
        }
        if brownian.iter().chain(&jump).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("intensities must be finite and nonnegative"));
        }
        Ok(Self { brownian, jump })
    }

    pub fn cells(&self) -> usize {
        self.brownian.len()
    }
}

/// Sample the intensity pair of path `path` from its dedicated stream.
pub fn sample_time_change(
    model: &TimeChangeModel,
    grid: &TimeGrid,
    seed: RandomSeed,
    path: u64,
) -> Result<TimeChangePath> {
    model.validate(grid.horizon())?;
    let mut rng = seed.stream(path, Purpose::TimeChange);
    let brownian = model.brownian.sample(grid, &mut rng);
    let jump = model.jump.sample(grid, &mut rng);
    Ok(TimeChangePath { brownian, jump })
}
