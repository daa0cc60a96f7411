//! Time grids, time-change intensities and the grid realisation of the
//! noise measure and its compensator.

mod ensemble;
mod grid;
mod sampling;
mod time_change;

pub use ensemble::PathEnsemble;
pub use grid::{build_grid, JumpMark, MarkSet, TimeGrid};
pub use sampling::{lambda_weights, sample_noise, LambdaWeights, NoisePath, Purpose, RandomSeed};
pub use time_change::{sample_time_change, IntensityFn, IntensityModel, TimeChangeModel, TimeChangePath};
