use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grid::{MarkSet, TimeGrid};
use super::time_change::TimeChangePath;
use crate::error::{invalid, Result};

/// Purpose tag separating the random streams of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    TimeChange,
    Noise,
    Probe,
    /// Free tags for callers; must be below 5.
    Custom(u8),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::TimeChange => 0,
            Purpose::Noise => 1,
            Purpose::Probe => 2,
            Purpose::Custom(t) => {
                assert!(t < 5, "custom purpose tags are 0..5");
                3 + t as u64
            }
        }
    }
}

/// Master seed. Every (path, purpose) pair owns a ChaCha stream, so results
/// do not depend on how paths are spread over threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSeed {
    pub master: u64,
}

impl RandomSeed {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn stream(&self, path: u64, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(path.wrapping_mul(8).wrapping_add(purpose.tag()));
        rng
    }
}

/// Lambda masses per cell and mark, cell-major: `w[j * marks + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaWeights {
    cells: usize,
    marks: usize,
    w: Vec<f64>,
}

impl LambdaWeights {
    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.w[j * self.marks + k]
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Number of marks including mark 0.
    pub fn marks(&self) -> usize {
        self.marks
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

pub fn lambda_weights(path: &TimeChangePath, grid: &TimeGrid, marks: &MarkSet) -> Result<LambdaWeights> {
    if path.cells() != grid.cells() {
        return Err(invalid(format!(
            "time-change path has {} cells, grid has {}",
            path.cells(),
            grid.cells()
        )));
    }
    let m = marks.len();
    let mut w = Vec::with_capacity(grid.cells() * m);
    for j in 0..grid.cells() {
        let dt = grid.width(j);
        w.push(path.brownian[j] * dt);
        for k in 1..m {
            w.push(path.jump[j] * marks.mass(k) * dt);
        }
    }
    Ok(LambdaWeights {
        cells: grid.cells(),
        marks: m,
        w,
    })
}

/// Grid realisation of the noise measure for one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    /// Brownian increments per cell.
    pub db: Vec<f64>,
    /// Compensated jump counts, cell-major: `dh[j * jumps + (k - 1)]`.
    pub dh: Vec<f64>,
    jumps: usize,
}

impl NoisePath {
    pub fn new(db: Vec<f64>, dh: Vec<f64>, jumps: usize) -> Result<Self> {
        if dh.len() != db.len() * jumps {
            return Err(invalid("jump table does not match cells x marks"));
        }
        Ok(Self { db, dh, jumps })
    }

    pub fn cells(&self) -> usize {
        self.db.len()
    }

    pub fn jump_marks(&self) -> usize {
        self.jumps
    }

    /// Increment of mark `k` over cell `j`; mark 0 is the Brownian part.
    #[inline]
    pub fn increment(&self, j: usize, k: usize) -> f64 {
        if k == 0 {
            self.db[j]
        } else {
            self.dh[j * self.jumps + k - 1]
        }
    }
}

/// Draw Gaussian and compensated Poisson increments given the intensities.
pub fn sample_noise(
    path: &TimeChangePath,
    grid: &TimeGrid,
    marks: &MarkSet,
    seed: RandomSeed,
    path_index: u64,
) -> Result<NoisePath> {
    let w = lambda_weights(path, grid, marks)?;
    let mut rng = seed.stream(path_index, Purpose::Noise);
    Ok(draw_noise(&w, &mut rng))
}

pub(crate) fn draw_noise<R: Rng>(w: &LambdaWeights, rng: &mut R) -> NoisePath {
    let jumps = w.marks() - 1;
    let mut db = Vec::with_capacity(w.cells());
    let mut dh = Vec::with_capacity(w.cells() * jumps);
    for j in 0..w.cells() {
        let z: f64 = rng.sample(StandardNormal);
        db.push(w.get(j, 0).sqrt() * z);
        for k in 1..=jumps {
            let mean = w.get(j, k);
            let count = if mean > 0.0 {
                Poisson::new(mean).expect("finite positive mean").sample(rng)
            } else {
                0.0
            };
            dh.push(count - mean);
        }
    }
    NoisePath { db, dh, jumps }
}
