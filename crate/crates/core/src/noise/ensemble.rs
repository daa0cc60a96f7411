use rayon::prelude::*;

use super::grid::{MarkSet, TimeGrid};
use super::sampling::{draw_noise, lambda_weights, NoisePath, Purpose, RandomSeed};
use super::time_change::{sample_time_change, TimeChangeModel, TimeChangePath};
use crate::error::{invalid, Result};
use crate::table::PathTable;

/// Seeded Monte Carlo collection of intensity and noise paths, stored
/// column-wise, with running sums used as regression features.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    marks: MarkSet,
    seed: Option<RandomSeed>,
    lambda_b: PathTable,
    lambda_h: PathTable,
    db: PathTable,
    /// One table per jump mark.
    dh: Vec<PathTable>,
    // Running sums over cells `< n`, indexed by node.
    brownian_level: PathTable,
    jump_level: Vec<PathTable>,
    compound_level: PathTable,
    clock_b: PathTable,
    clock_h: PathTable,
}

impl PathEnsemble {
    /// Simulate `paths` paths. Path `p` draws only from its own streams.
    pub fn simulate(
        model: &TimeChangeModel,
        grid: &TimeGrid,
        marks: &MarkSet,
        seed: RandomSeed,
        paths: usize,
    ) -> Result<Self> {
        if paths == 0 {
            return Err(invalid("ensemble needs at least one path"));
        }
        model.validate(grid.horizon())?;
        let sampled: Vec<Result<(TimeChangePath, NoisePath)>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let tc = sample_time_change(model, grid, seed, p as u64)?;
                let w = lambda_weights(&tc, grid, marks)?;
                let mut rng = seed.stream(p as u64, Purpose::Noise);
                let noise = draw_noise(&w, &mut rng);
                Ok((tc, noise))
            })
            .collect();
        let mut tcs = Vec::with_capacity(paths);
        let mut noises = Vec::with_capacity(paths);
        for r in sampled {
            let (tc, n) = r?;
            tcs.push(tc);
            noises.push(n);
        }
        let mut ens = Self::from_paths(grid.clone(), marks.clone(), tcs, noises)?;
        ens.seed = Some(seed);
        Ok(ens)
    }

    /// Assemble an ensemble from explicit paths (used for enumerated toy
    /// measures and tests).
    pub fn from_paths(
        grid: TimeGrid,
        marks: MarkSet,
        time_change: Vec<TimeChangePath>,
        noise: Vec<NoisePath>,
    ) -> Result<Self> {
        let paths = time_change.len();
        if paths == 0 || noise.len() != paths {
            return Err(invalid("need equally many (nonzero) time-change and noise paths"));
        }
        let n = grid.cells();
        let jumps = marks.jump_count();
        for (tc, nz) in time_change.iter().zip(&noise) {
            if tc.cells() != n || nz.cells() != n || nz.jump_marks() != jumps {
                return Err(invalid("path dimensions do not match grid and marks"));
            }
        }
        let lambda_b = PathTable::from_rows(time_change.iter().map(|t| t.brownian.clone()).collect());
        let lambda_h = PathTable::from_rows(time_change.iter().map(|t| t.jump.clone()).collect());
        let db = PathTable::from_rows(noise.iter().map(|z| z.db.clone()).collect());
        let dh: Vec<PathTable> = (1..=jumps)
            .map(|k| {
                PathTable::from_rows(
                    noise
                        .iter()
                        .map(|z| (0..n).map(|j| z.increment(j, k)).collect())
                        .collect(),
                )
            })
            .collect();

        let running = |cell_value: &dyn Fn(usize, usize) -> f64| {
            let mut t = PathTable::zeros(paths, n + 1);
            for p in 0..paths {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += cell_value(p, j);
                    t.set(p, j + 1, acc);
                }
            }
            t
        };
        let brownian_level = running(&|p, j| db.get(p, j));
        let jump_level: Vec<PathTable> = dh.iter().map(|t| running(&|p, j| t.get(p, j))).collect();
        let compound_level = running(&|p, j| {
            (1..=jumps).map(|k| marks.size(k) * dh[k - 1].get(p, j)).sum()
        });
        let clock_b = running(&|p, j| lambda_b.get(p, j) * grid.width(j));
        let clock_h = running(&|p, j| lambda_h.get(p, j) * grid.width(j));

        Ok(Self {
            grid,
            marks,
            seed: None,
            lambda_b,
            lambda_h,
            db,
            dh,
            brownian_level,
            jump_level,
            compound_level,
            clock_b,
            clock_h,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn marks(&self) -> &MarkSet {
        &self.marks
    }

    pub fn seed(&self) -> Option<RandomSeed> {
        self.seed
    }

    pub fn paths(&self) -> usize {
        self.db.paths()
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    #[inline]
    pub fn lambda_b(&self, p: usize, j: usize) -> f64 {
        self.lambda_b.get(p, j)
    }

    #[inline]
    pub fn lambda_h(&self, p: usize, j: usize) -> f64 {
        self.lambda_h.get(p, j)
    }

    /// Intensity pair at cell `j`; the terminal node reuses the last cell.
    #[inline]
    pub fn lambda_at(&self, p: usize, j: usize) -> (f64, f64) {
        let j = j.min(self.cells() - 1);
        (self.lambda_b.get(p, j), self.lambda_h.get(p, j))
    }

    /// Lambda mass of mark `k` over cell `j` on path `p`.
    #[inline]
    pub fn weight(&self, p: usize, j: usize, k: usize) -> f64 {
        let dt = self.grid.width(j);
        if k == 0 {
            self.lambda_b.get(p, j) * dt
        } else {
            self.lambda_h.get(p, j) * self.marks.mass(k) * dt
        }
    }

    #[inline]
    pub fn increment(&self, p: usize, j: usize, k: usize) -> f64 {
        if k == 0 {
            self.db.get(p, j)
        } else {
            self.dh[k - 1].get(p, j)
        }
    }

    /// `B(t_n)`: sum of Brownian increments over cells before node `n`.
    #[inline]
    pub fn brownian_level(&self, p: usize, n: usize) -> f64 {
        self.brownian_level.get(p, n)
    }

    #[inline]
    pub fn jump_level(&self, p: usize, n: usize, k: usize) -> f64 {
        self.jump_level[k - 1].get(p, n)
    }

    /// `sum_k z_k H~(t_n, k)`.
    #[inline]
    pub fn compound_level(&self, p: usize, n: usize) -> f64 {
        self.compound_level.get(p, n)
    }

    /// Elapsed Brownian clock `int_0^{t_n} lambda^B ds`.
    #[inline]
    pub fn clock_b(&self, p: usize, n: usize) -> f64 {
        self.clock_b.get(p, n)
    }

    #[inline]
    pub fn clock_h(&self, p: usize, n: usize) -> f64 {
        self.clock_h.get(p, n)
    }

    pub fn time_change_path(&self, p: usize) -> TimeChangePath {
        TimeChangePath {
            brownian: self.lambda_b.row(p).to_vec(),
            jump: self.lambda_h.row(p).to_vec(),
        }
    }

    pub fn noise_path(&self, p: usize) -> NoisePath {
        let n = self.cells();
        let jumps = self.marks.jump_count();
        let mut dh = Vec::with_capacity(n * jumps);
        for j in 0..n {
            for t in &self.dh {
                dh.push(t.get(p, j));
            }
        }
        NoisePath::new(self.db.row(p).to_vec(), dh, jumps).expect("consistent shapes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::grid::build_grid;

    #[test]
    fn running_levels_match_increments() {
        let g = build_grid(1.0, 5).unwrap();
        let marks = MarkSet::from_pairs(&[(0.5, 1.0), (-1.0, 2.0)]).unwrap();
        let ens = PathEnsemble::simulate(
            &TimeChangeModel::deterministic(1.0, 2.0),
            &g,
            &marks,
            RandomSeed::new(1),
            20,
        )
        .unwrap();
        for p in 0..20 {
            let b: f64 = (0..5).map(|j| ens.increment(p, j, 0)).sum();
            assert!((ens.brownian_level(p, 5) - b).abs() < 1e-14);
            let c: f64 = (0..5)
                .map(|j| 0.5 * ens.increment(p, j, 1) - ens.increment(p, j, 2))
                .sum();
            assert!((ens.compound_level(p, 5) - c).abs() < 1e-12);
            assert!((ens.clock_h(p, 5) - 2.0).abs() < 1e-12);
            assert_eq!(ens.brownian_level(p, 0), 0.0);
        }
    }

    #[test]
    fn ensemble_is_thread_count_independent() {
        let g = build_grid(1.0, 8).unwrap();
        let marks = MarkSet::from_pairs(&[(0.3, 1.5)]).unwrap();
        let model = TimeChangeModel {
            brownian: crate::noise::IntensityModel::MeanReverting {
                initial: 1.0,
                speed: 1.0,
                mean: 1.0,
                vol: 0.3,
            },
            jump: crate::noise::IntensityModel::constant(1.0),
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| PathEnsemble::simulate(&model, &g, &marks, RandomSeed::new(9), 64).unwrap())
        };
        let a = run(1);
        let b = run(4);
        for p in 0..64 {
            assert_eq!(a.noise_path(p), b.noise_path(p));
            assert_eq!(a.time_change_path(p), b.time_change_path(p));
        }
    }
}
