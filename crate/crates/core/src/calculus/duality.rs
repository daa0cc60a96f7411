use serde::{Deserialize, Serialize};

use super::integrals::{ito_integral_on, IntegrandField};
use super::regression::RegressionBasis;
use super::representation::na_derivative;
use crate::error::{invalid, Result};
use crate::noise::PathEnsemble;
use crate::table::{mean, std_error};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// Monte Carlo `E[xi * int phi dmu]`.
    pub lhs: f64,
    /// Monte Carlo `E[int phi D xi dLambda]`.
    pub rhs: f64,
    pub gap: f64,
    /// Standard error of the per-path gap.
    pub std_error: f64,
}

impl DualityReport {
    /// Gap measured in standard errors (0 when both vanish).
    pub fn gap_in_std_errors(&self) -> f64 {
        if self.gap == 0.0 {
            0.0
        } else {
            self.gap.abs() / self.std_error
        }
    }
}

/// Compare both sides of the duality between the stochastic integral and
/// the NA-derivative. `phi` holds one field per path, or a single field
/// shared by all paths.
pub fn duality_check(
    xi: &[f64],
    phi: &[IntegrandField],
    ens: &PathEnsemble,
    basis: &RegressionBasis,
) -> Result<DualityReport> {
    let n = ens.paths();
    if phi.len() != 1 && phi.len() != n {
        return Err(invalid("need one integrand or one per path"));
    }
    let field = |p: usize| if phi.len() == 1 { &phi[0] } else { &phi[p] };
    let d = na_derivative(xi, ens, basis)?;
    let marks = ens.marks().len();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for p in 0..n {
        let f = field(p);
        left.push(xi[p] * ito_integral_on(f, ens, p)?);
        let mut s = 0.0;
        for j in 0..ens.cells() {
            for k in 0..marks {
                s += f.get(j, k) * d.get(p, j, k) * ens.weight(p, j, k);
            }
        }
        right.push(s);
    }
    let diff: Vec<f64> = left.iter().zip(&right).map(|(a, b)| a - b).collect();
    let lhs = mean(&left);
    let rhs = mean(&right);
    Ok(DualityReport {
        lhs,
        rhs,
        gap: lhs - rhs,
        std_error: std_error(&diff),
    })
}
