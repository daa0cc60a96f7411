//! Stochastic integrals on the grid, regression-based conditional
//! expectations, NA-derivative estimation and the duality check.

mod duality;
mod features;
mod integrals;
mod regression;
mod representation;

pub use duality::{duality_check, DualityReport};
pub use features::{Feature, Flow, InformationLevel};
pub use integrals::{
    ito_integral, ito_integral_on, lambda_integral, lambda_integral_on, Adaptedness, History, IntegrandField,
};
pub use regression::{
    conditional_expectation, eval_monomial, least_squares_raw, monomial_exponents, BasisFamily, Design, LsFit,
    Projector, RegressionBasis, RowSource,
};
pub use representation::{na_derivative, na_derivative_with, NaDerivativeField, NaOptions};

pub(crate) use representation::{CellBlock, CellRepresentation};
