use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{LambdaWeights, NoisePath, PathEnsemble};

/// Predictability class of an integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Adaptedness {
    /// May read noise before the cell and intensities up to the cell.
    FPredictable,
    /// May additionally read the whole intensity path.
    GPredictable,
}

/// Integrand values per (cell, mark), mark 0 being the Brownian part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrandField {
    cells: usize,
    marks: usize,
    values: Vec<f64>,
    pub tag: Adaptedness,
}

/// Read-only view of one path's history handed to integrand builders.
/// Reads beyond what the tag allows are recorded and turned into a
/// contract violation.
pub struct History<'a> {
    ens: &'a PathEnsemble,
    path: usize,
    cell: usize,
    tag: Adaptedness,
    violation: Cell<Option<String>>,
}

impl<'a> History<'a> {
    fn flag(&self, what: String) {
        let old = self.violation.take();
        self.violation.set(old.or(Some(what)));
    }

    /// Noise increment of an earlier cell.
    pub fn increment(&self, j: usize, k: usize) -> f64 {
        if j >= self.cell {
            self.flag(format!("increment of cell {j} read while building cell {}", self.cell));
            return 0.0;
        }
        self.ens.increment(self.path, j, k)
    }

    /// `B(t_n)` for `n <= cell`.
    pub fn brownian_level(&self, n: usize) -> f64 {
        if n > self.cell {
            self.flag(format!("B(t_{n}) read while building cell {}", self.cell));
            return 0.0;
        }
        self.ens.brownian_level(self.path, n)
    }

    /// Intensity pair of cell `j`; F-predictable fields see cells `<= cell`.
    pub fn intensity(&self, j: usize) -> (f64, f64) {
        if self.tag == Adaptedness::FPredictable && j > self.cell {
            self.flag(format!("intensity of cell {j} read while building cell {}", self.cell));
            return (0.0, 0.0);
        }
        (self.ens.lambda_b(self.path, j), self.ens.lambda_h(self.path, j))
    }

    /// Total clocks over `[0, T]`; G-predictable fields only.
    pub fn total_clock(&self) -> (f64, f64) {
        if self.tag == Adaptedness::FPredictable {
            self.flag("total clock read by an F-predictable field".into());
            return (0.0, 0.0);
        }
        let n = self.ens.cells();
        (self.ens.clock_b(self.path, n), self.ens.clock_h(self.path, n))
    }
}

impl IntegrandField {
    pub fn zeros(cells: usize, marks: usize) -> Self {
        Self {
            cells,
            marks,
            values: vec![0.0; cells * marks],
            tag: Adaptedness::FPredictable,
        }
    }

    /// Deterministic integrand.
    pub fn deterministic(cells: usize, marks: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(cells * marks);
        for j in 0..cells {
            for k in 0..marks {
                values.push(f(j, k));
            }
        }
        Self {
            cells,
            marks,
            values,
            tag: Adaptedness::FPredictable,
        }
    }

    /// Build the integrand of path `p` from its history, checking that the
    /// builder respects the adaptedness tag.
    pub fn from_history(
        tag: Adaptedness,
        ens: &PathEnsemble,
        p: usize,
        f: impl Fn(usize, usize, &History) -> f64,
    ) -> Result<Self> {
        let cells = ens.cells();
        let marks = ens.marks().len();
        let mut values = Vec::with_capacity(cells * marks);
        for j in 0..cells {
            let h = History {
                ens,
                path: p,
                cell: j,
                tag,
                violation: Cell::new(None),
            };
            for k in 0..marks {
                values.push(f(j, k, &h));
            }
            if let Some(v) = h.violation.take() {
                return Err(Error::ContractViolation(format!("integrand is not predictable: {v}")));
            }
        }
        Ok(Self {
            cells,
            marks,
            values,
            tag,
        })
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.marks + k]
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn marks(&self) -> usize {
        self.marks
    }
}

/// `sum_j phi(j,0) dB_j + sum_{j,k>=1} phi(j,k) dH~_{j,k}`.
pub fn ito_integral(phi: &IntegrandField, noise: &NoisePath) -> Result<f64> {
    if phi.cells != noise.cells() || phi.marks != noise.jump_marks() + 1 {
        return Err(invalid("integrand and noise dimensions differ"));
    }
    let mut s = 0.0;
    for j in 0..phi.cells {
        for k in 0..phi.marks {
            s += phi.get(j, k) * noise.increment(j, k);
        }
    }
    Ok(s)
}

/// `sum_{j,k} psi(j,k) w_{j,k}`.
pub fn lambda_integral(psi: &IntegrandField, weights: &LambdaWeights) -> Result<f64> {
    if psi.cells != weights.cells() || psi.marks != weights.marks() {
        return Err(invalid("integrand and weight dimensions differ"));
    }
    let mut s = 0.0;
    for j in 0..psi.cells {
        for k in 0..psi.marks {
            s += psi.get(j, k) * weights.get(j, k);
        }
    }
    Ok(s)
}

/// Stochastic integral on path `p` of an ensemble.
pub fn ito_integral_on(phi: &IntegrandField, ens: &PathEnsemble, p: usize) -> Result<f64> {
    if phi.cells != ens.cells() || phi.marks != ens.marks().len() {
        return Err(invalid("integrand and ensemble dimensions differ"));
    }
    let mut s = 0.0;
    for j in 0..phi.cells {
        for k in 0..phi.marks {
            s += phi.get(j, k) * ens.increment(p, j, k);
        }
    }
    Ok(s)
}

/// Lambda integral on path `p` of an ensemble.
pub fn lambda_integral_on(psi: &IntegrandField, ens: &PathEnsemble, p: usize) -> Result<f64> {
    if psi.cells != ens.cells() || psi.marks != ens.marks().len() {
        return Err(invalid("integrand and ensemble dimensions differ"));
    }
    let mut s = 0.0;
    for j in 0..psi.cells {
        for k in 0..psi.marks {
            s += psi.get(j, k) * ens.weight(p, j, k);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{build_grid, lambda_weights, MarkSet, RandomSeed, TimeChangeModel, TimeChangePath};

    #[test]
    fn lambda_integral_total_mass() {
        let g = build_grid(1.0, 4).unwrap();
        let marks = MarkSet::brownian_only();
        let tc = TimeChangePath::new(vec![1.0; 4], vec![0.0; 4]).unwrap();
        let w = lambda_weights(&tc, &g, &marks).unwrap();
        let one = IntegrandField::deterministic(4, 1, |_, _| 1.0);
        assert!((lambda_integral(&one, &w).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lambda_integral(&IntegrandField::zeros(4, 1), &w).unwrap(), 0.0);
    }

    #[test]
    fn jump_second_moment() {
        let g = build_grid(2.0, 5).unwrap();
        let marks = MarkSet::from_pairs(&[(0.5, 1.0), (-2.0, 0.25)]).unwrap();
        let tc = TimeChangePath::new(vec![0.0; 5], vec![3.0; 5]).unwrap();
        let w = lambda_weights(&tc, &g, &marks).unwrap();
        let f = IntegrandField::deterministic(5, 3, |_, k| marks.size(k).powi(2));
        let expect = 3.0 * 2.0 * marks.second_moment();
        assert!((lambda_integral(&f, &w).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn future_reads_are_contract_violations() {
        let g = build_grid(1.0, 4).unwrap();
        let ens = crate::noise::PathEnsemble::simulate(
            &TimeChangeModel::deterministic(1.0, 0.0),
            &g,
            &MarkSet::brownian_only(),
            RandomSeed::new(2),
            3,
        )
        .unwrap();
        let ok = IntegrandField::from_history(Adaptedness::FPredictable, &ens, 0, |j, _, h| {
            if j > 0 {
                h.increment(j - 1, 0)
            } else {
                0.0
            }
        });
        assert!(ok.is_ok());
        let bad = IntegrandField::from_history(Adaptedness::FPredictable, &ens, 0, |j, _, h| h.increment(j, 0));
        assert!(matches!(bad, Err(Error::ContractViolation(_))));
        let bad = IntegrandField::from_history(Adaptedness::FPredictable, &ens, 0, |_, _, h| h.total_clock().0);
        assert!(matches!(bad, Err(Error::ContractViolation(_))));
        let good = IntegrandField::from_history(Adaptedness::GPredictable, &ens, 0, |_, _, h| h.total_clock().0);
        assert!(good.is_ok());
    }
}
