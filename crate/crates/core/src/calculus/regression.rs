use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::InformationLevel;
use crate::error::{invalid, Error, Result};
use crate::noise::PathEnsemble;
use crate::table::PathTable;

/// Paths per parallel chunk; fixed so reductions do not depend on threads.
pub(crate) const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BasisFamily {
    /// Monomials of total degree `<= degree` in standardised features.
    Polynomial { degree: usize },
    /// Each feature plus hinges `(x - k)_+` at `knots` interior quantiles.
    PiecewiseLinear { knots: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionBasis {
    pub family: BasisFamily,
    /// Ridge weight on every non-constant coefficient (features standardised).
    pub ridge: f64,
    /// Required paths per basis function.
    pub min_paths_per_term: usize,
    /// Drop exactly collinear columns instead of failing.
    pub drop_collinear: bool,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            family: BasisFamily::Polynomial { degree: 3 },
            ridge: 1e-8,
            min_paths_per_term: 10,
            drop_collinear: true,
        }
    }
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            family: BasisFamily::Polynomial { degree },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(invalid(format!("ridge must be finite and nonnegative, got {}", self.ridge)));
        }
        if self.min_paths_per_term == 0 {
            return Err(invalid("min_paths_per_term must be positive"));
        }
        Ok(())
    }
}

/// Row-wise access to a design matrix without materialising it.
pub trait RowSource: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn row(&self, p: usize, out: &mut [f64]);
}

/// Exponent vectors of all monomials in `d` variables with total degree
/// `<= degree`, constant first, ordered by degree.
pub fn monomial_exponents(d: usize, degree: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; d]];
    for total in 1..=degree {
        let mut cur = vec![0u8; d];
        fill_degree(d, total, 0, &mut cur, &mut out);
    }
    out
}

fn fill_degree(d: usize, left: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if pos == d - 1 {
        cur[pos] = left as u8;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e as u8;
        fill_degree(d, left - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

pub fn eval_monomial(exps: &[u8], x: &[f64]) -> f64 {
    let mut v = 1.0;
    for (e, xi) in exps.iter().zip(x) {
        for _ in 0..*e {
            v *= xi;
        }
    }
    v
}

#[derive(Debug, Clone)]
enum Terms {
    Monomials(Vec<Vec<u8>>),
    /// Per kept feature: knots in standardised units.
    Hinges(Vec<Vec<f64>>),
}

/// Standardised feature matrix plus a basis family.
#[derive(Debug, Clone)]
pub struct Design {
    n: usize,
    d: usize,
    feats: Vec<f64>,
    terms: Terms,
    m: usize,
}

impl Design {
    /// Standardise `features` (row-major `n x dim`), dropping features that
    /// are constant across paths.
    pub fn new(features: &[f64], n: usize, dim: usize, basis: &RegressionBasis, cell: usize) -> Result<Self> {
        if features.len() != n * dim {
            return Err(invalid("feature matrix has the wrong size"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditionedRegression {
                cell,
                detail: "non-finite feature value".into(),
            });
        }
        let mut kept = Vec::new();
        let mut centre = Vec::new();
        let mut scale = Vec::new();
        for f in 0..dim {
            let col = (0..n).map(|p| features[p * dim + f]);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                kept.push(f);
                centre.push(mean);
                scale.push(sd);
            }
        }
        let d = kept.len();
        let mut feats = vec![0.0; n * d];
        for p in 0..n {
            for (i, &f) in kept.iter().enumerate() {
                feats[p * d + i] = (features[p * dim + f] - centre[i]) / scale[i];
            }
        }
        let terms = match basis.family {
            BasisFamily::Polynomial { degree } => {
                if d == 0 {
                    Terms::Monomials(vec![vec![]])
                } else {
                    Terms::Monomials(monomial_exponents(d, degree))
                }
            }
            BasisFamily::PiecewiseLinear { knots } => {
                let mut all = Vec::with_capacity(d);
                for i in 0..d {
                    let mut col: Vec<f64> = (0..n).map(|p| feats[p * d + i]).collect();
                    col.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                    let ks = (1..=knots)
                        .map(|q| col[(q * (n - 1)) / (knots + 1)])
                        .collect();
                    all.push(ks);
                }
                Terms::Hinges(all)
            }
        };
        let m = match &terms {
            Terms::Monomials(e) => e.len(),
            Terms::Hinges(h) => 1 + h.iter().map(|k| 1 + k.len()).sum::<usize>(),
        };
        Ok(Self { n, d, feats, terms, m })
    }

    pub fn from_level(
        level: &InformationLevel,
        ens: &PathEnsemble,
        node: usize,
        state: Option<&PathTable>,
        basis: &RegressionBasis,
    ) -> Result<Self> {
        let raw = level.matrix(ens, node, state)?;
        Self::new(&raw, ens.paths(), level.dim(), basis, node)
    }

    /// Number of standardised features retained.
    pub fn features(&self) -> usize {
        self.d
    }

    pub fn feature_row(&self, p: usize) -> &[f64] {
        &self.feats[p * self.d..(p + 1) * self.d]
    }
}

impl RowSource for Design {
    fn rows(&self) -> usize {
        self.n
    }

    fn cols(&self) -> usize {
        self.m
    }

    fn row(&self, p: usize, out: &mut [f64]) {
        let x = self.feature_row(p);
        match &self.terms {
            Terms::Monomials(exps) => {
                for (o, e) in out.iter_mut().zip(exps) {
                    *o = eval_monomial(e, x);
                }
            }
            Terms::Hinges(knots) => {
                out[0] = 1.0;
                let mut c = 1;
                for (i, ks) in knots.iter().enumerate() {
                    out[c] = x[i];
                    c += 1;
                    for k in ks {
                        out[c] = (x[i] - k).max(0.0);
                        c += 1;
                    }
                }
            }
        }
    }
}

/// Least-squares fit on a kept subset of columns, factorised once and
/// reusable for any right-hand side.
#[derive(Debug, Clone)]
pub struct LsFit {
    m: usize,
    kept: Vec<usize>,
    /// Lower Cholesky factor of the ridged normal matrix on kept columns.
    chol: DMatrix<f64>,
    /// Ridge added to each kept column's diagonal entry.
    ridge_diag: Vec<f64>,
    n: usize,
    empty: bool,
}

fn gram<S: RowSource + ?Sized>(src: &S) -> Vec<f64> {
    let n = src.rows();
    let m = src.cols();
    let partial: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; m * m];
            let mut row = vec![0.0; m];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                src.row(p, &mut row);
                for a in 0..m {
                    let ra = row[a];
                    if ra == 0.0 {
                        continue;
                    }
                    for b in a..m {
                        g[a * m + b] += ra * row[b];
                    }
                }
            }
            g
        })
        .collect();
    let mut g = vec![0.0; m * m];
    for part in partial {
        for (x, y) in g.iter_mut().zip(part) {
            *x += y;
        }
    }
    for a in 0..m {
        for b in 0..a {
            g[a * m + b] = g[b * m + a];
        }
    }
    g
}

impl LsFit {
    /// Factorise the design. Column 0 is treated as the intercept and is
    /// never ridged.
    pub fn fit<S: RowSource + ?Sized>(src: &S, basis: &RegressionBasis, cell: usize, intercept: bool) -> Result<Self> {
        basis.validate()?;
        let n = src.rows();
        let m = src.cols();
        let g = gram(src);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditionedRegression {
                cell,
                detail: "non-finite design entries".into(),
            });
        }
        // Cholesky in column order; a column whose remaining norm is
        // negligible lies in the span of the earlier ones.
        let mut kept: Vec<usize> = Vec::new();
        let mut l: Vec<Vec<f64>> = Vec::new();
        for c in 0..m {
            let gcc = g[c * m + c];
            if gcc <= 1e-300 {
                continue;
            }
            let mut lrow = Vec::with_capacity(kept.len() + 1);
            for (i, &ki) in kept.iter().enumerate() {
                let mut s = g[c * m + ki];
                for t in 0..i {
                    s -= lrow[t] * l[i][t];
                }
                lrow.push(s / l[i][i]);
            }
            let r2 = gcc - lrow.iter().map(|v| v * v).sum::<f64>();
            if r2 <= 1e-11 * gcc {
                if basis.drop_collinear {
                    continue;
                }
                return Err(Error::IllConditionedRegression {
                    cell,
                    detail: format!("design column {c} is collinear with earlier columns"),
                });
            }
            lrow.push(r2.sqrt());
            l.push(lrow);
            kept.push(c);
        }
        if kept.is_empty() {
            return Ok(Self {
                m,
                kept,
                chol: DMatrix::zeros(0, 0),
                ridge_diag: Vec::new(),
                n,
                empty: true,
            });
        }
        let k = kept.len();
        if n < basis.min_paths_per_term * k {
            return Err(invalid(format!(
                "cell {cell}: {n} paths cannot support {k} basis functions (need {} per term)",
                basis.min_paths_per_term
            )));
        }
        let nf = n as f64;
        let ridge_diag: Vec<f64> = kept
            .iter()
            .map(|&c| if intercept && c == 0 { 0.0 } else { basis.ridge })
            .collect();
        let mut a = DMatrix::zeros(k, k);
        for (i, &ci) in kept.iter().enumerate() {
            for (j, &cj) in kept.iter().enumerate() {
                a[(i, j)] = g[ci * m + cj] / nf;
            }
            a[(i, i)] += ridge_diag[i];
        }
        let chol = a.cholesky().ok_or_else(|| Error::IllConditionedRegression {
            cell,
            detail: "normal matrix not positive definite after ridge".into(),
        })?;
        Ok(Self {
            m,
            kept,
            chol: chol.l(),
            ridge_diag,
            n,
            empty: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    /// Coefficients on the kept columns for target `y`.
    pub fn coefficients<S: RowSource + ?Sized>(&self, src: &S, y: &[f64]) -> Vec<f64> {
        if self.empty {
            return Vec::new();
        }
        let rhs = self.cross(src, y);
        self.solve(rhs)
    }

    pub(crate) fn cross<S: RowSource + ?Sized>(&self, src: &S, y: &[f64]) -> Vec<f64> {
        let k = self.kept.len();
        let m = self.m;
        let n = self.n;
        let partial: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; k];
                let mut row = vec![0.0; m];
                for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    if y[p] == 0.0 {
                        continue;
                    }
                    src.row(p, &mut row);
                    for (a, &ci) in self.kept.iter().enumerate() {
                        acc[a] += row[ci] * y[p];
                    }
                }
                acc
            })
            .collect();
        let mut rhs = vec![0.0; k];
        for part in partial {
            for (x, v) in rhs.iter_mut().zip(part) {
                *x += v;
            }
        }
        for v in rhs.iter_mut() {
            *v /= n as f64;
        }
        rhs
    }

    pub(crate) fn ridge_diag(&self) -> &[f64] {
        &self.ridge_diag
    }

    pub(crate) fn solve(&self, rhs: Vec<f64>) -> Vec<f64> {
        if self.empty {
            return Vec::new();
        }
        let b = DVector::from_vec(rhs);
        let z = self
            .chol
            .solve_lower_triangular(&b)
            .expect("nonsingular factor");
        let x = self
            .chol
            .transpose()
            .solve_upper_triangular(&z)
            .expect("nonsingular factor");
        x.iter().copied().collect()
    }

    /// Fitted value of one path given coefficients.
    #[inline]
    pub fn predict_row(&self, row: &[f64], coef: &[f64]) -> f64 {
        let mut v = 0.0;
        for (a, &ci) in self.kept.iter().enumerate() {
            v += row[ci] * coef[a];
        }
        v
    }

    pub fn fitted<S: RowSource + ?Sized>(&self, src: &S, coef: &[f64]) -> Vec<f64> {
        if self.empty {
            return vec![0.0; self.n];
        }
        let m = self.m;
        (0..self.n)
            .into_par_iter()
            .map_init(
                || vec![0.0; m],
                |row, p| {
                    src.row(p, row);
                    self.predict_row(row, coef)
                },
            )
            .collect()
    }

    /// `x^T (A^T A / n)^{-1} x` for a vector on the kept columns.
    pub fn quadratic_form_inverse(&self, x: &[f64]) -> f64 {
        if self.empty {
            return 0.0;
        }
        let b = DVector::from_column_slice(x);
        let z = self
            .chol
            .solve_lower_triangular(&b)
            .expect("nonsingular factor");
        z.norm_squared()
    }

    pub fn kept_columns(&self) -> &[usize] {
        &self.kept
    }
}

/// Regression-based conditional expectation at one node.
#[derive(Debug, Clone)]
pub struct Projector {
    design: Design,
    fit: LsFit,
}

impl Projector {
    pub fn new(design: Design, basis: &RegressionBasis, cell: usize) -> Result<Self> {
        let fit = LsFit::fit(&design, basis, cell, true)?;
        Ok(Self { design, fit })
    }

    pub fn at_level(
        level: &InformationLevel,
        ens: &PathEnsemble,
        node: usize,
        state: Option<&PathTable>,
        basis: &RegressionBasis,
    ) -> Result<Self> {
        Self::new(Design::from_level(level, ens, node, state, basis)?, basis, node)
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn dim(&self) -> usize {
        self.fit.dim()
    }

    /// Projection of `y` on the basis. Constants pass through untouched.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.design.rows() {
            return Err(invalid("target length differs from path count"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup {
                cell: 0,
                detail: "non-finite regression target".into(),
            });
        }
        if y.iter().all(|v| *v == y[0]) {
            return Ok(y.to_vec());
        }
        let coef = self.fit.coefficients(&self.design, y);
        Ok(self.fit.fitted(&self.design, &coef))
    }

    /// Coefficients and fitted values.
    pub fn fit_target(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let coef = self.fit.coefficients(&self.design, y);
        let fitted = self.fit.fitted(&self.design, &coef);
        (coef, fitted)
    }
}

/// `E[xi | level at node]` by least squares on the declared features.
pub fn conditional_expectation(
    xi: &[f64],
    level: &InformationLevel,
    node: usize,
    basis: &RegressionBasis,
    ens: &PathEnsemble,
    state: Option<&PathTable>,
) -> Result<Vec<f64>> {
    level.validate()?;
    Projector::at_level(level, ens, node, state, basis)?.apply(xi)
}

/// Ordinary least squares of `y` on raw (unstandardised) columns; returns
/// the coefficients, with exactly collinear columns given zero weight.
pub fn least_squares_raw<S: RowSource + ?Sized>(src: &S, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let basis = RegressionBasis {
        ridge,
        min_paths_per_term: 1,
        ..RegressionBasis::default()
    };
    let fit = LsFit::fit(src, &basis, 0, true)?;
    let kept_coef = fit.coefficients(src, y);
    let mut coef = vec![0.0; src.cols()];
    for (a, &c) in fit.kept.iter().enumerate() {
        coef[c] = kept_coef[a];
    }
    Ok(coef)
}
