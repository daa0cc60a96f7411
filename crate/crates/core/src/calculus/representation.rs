use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{Feature, Flow, InformationLevel};
use super::regression::{Design, LsFit, RegressionBasis, RowSource};
use crate::error::{invalid, Error, Result};
use crate::noise::PathEnsemble;
use crate::table::PathTable;

/// Design of one cell's martingale increments: columns are the basis
/// functions of the features at the cell's left node times `dX_{j,k}`,
/// stacked over marks.
pub(crate) struct CellBlock<'a> {
    pub design: &'a Design,
    pub ens: &'a PathEnsemble,
    pub cell: usize,
    pub marks: usize,
}

impl RowSource for CellBlock<'_> {
    fn rows(&self) -> usize {
        self.design.rows()
    }

    fn cols(&self) -> usize {
        self.design.cols() * self.marks
    }

    fn row(&self, p: usize, out: &mut [f64]) {
        let m = self.design.cols();
        self.design.row(p, &mut out[..m]);
        for k in (1..self.marks).rev() {
            let dx = self.ens.increment(p, self.cell, k);
            for l in 0..m {
                out[k * m + l] = out[l] * dx;
            }
        }
        let dx = self.ens.increment(p, self.cell, 0);
        for v in out[..m].iter_mut() {
            *v *= dx;
        }
    }
}

/// Factorised regression of a centred target on one cell's increments.
pub(crate) struct CellRepresentation {
    fit: LsFit,
    m: usize,
}

impl CellRepresentation {
    pub fn new(block: &CellBlock, basis: &RegressionBasis) -> Result<Self> {
        let fit = LsFit::fit(block, basis, block.cell, false)?;
        Ok(Self {
            fit,
            m: block.design.cols(),
        })
    }

    /// Coefficients over all stacked columns (dropped columns get 0).
    #[allow(dead_code)]
    pub fn coefficients(&self, block: &CellBlock, target: &[f64]) -> Vec<f64> {
        let kept = self.fit.coefficients(block, target);
        let mut full = vec![0.0; block.cols()];
        for (a, &c) in self.fit.kept_columns().iter().enumerate() {
            full[c] = kept[a];
        }
        full
    }

    /// Integrand value of mark `k` on a path whose basis row is `psi`.
    #[inline]
    pub fn integrand(&self, psi: &[f64], full: &[f64], k: usize) -> f64 {
        let off = k * self.m;
        psi.iter().zip(&full[off..off + self.m]).map(|(a, b)| a * b).sum()
    }

    pub fn params(&self) -> usize {
        self.fit.dim()
    }

    /// Squared standard error factor for the mean integrand of mark `k`.
    fn mean_variance_factor(&self, psi_mean: &[f64], k: usize, cols: usize) -> f64 {
        let mut x = vec![0.0; cols];
        x[k * self.m..(k + 1) * self.m].copy_from_slice(psi_mean);
        let kept: Vec<f64> = self.fit.kept_columns().iter().map(|&c| x[c]).collect();
        self.fit.quadratic_form_inverse(&kept)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaOptions {
    pub basis: RegressionBasis,
    /// Features at each cell's left node; defaults to the running noise
    /// levels plus the total clocks.
    pub level: Option<InformationLevel>,
    pub max_iterations: usize,
    /// Relative residual of the normal equations at which to stop.
    pub tol: f64,
}

impl Default for NaOptions {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default(),
            level: None,
            max_iterations: 500,
            tol: 1e-10,
        }
    }
}

pub(crate) fn default_na_level(ens: &PathEnsemble) -> InformationLevel {
    let mut features = vec![Feature::BrownianLevel];
    if ens.marks().jump_count() > 0 {
        features.push(Feature::CompoundJumpLevel);
    }
    features.extend([Feature::TotalClockB, Feature::TotalClockH]);
    InformationLevel {
        flow: Flow::G,
        features,
    }
}

/// Estimated NA-derivative of a functional, per path, cell and mark.
#[derive(Debug, Clone)]
pub struct NaDerivativeField {
    cells: usize,
    marks: usize,
    values: PathTable,
    /// Fitted `E[xi | intensity path]`.
    pub xi0: Vec<f64>,
    /// Share of the variance of `xi - xi0` explained by the integrals.
    pub r_squared: f64,
    pub iterations: usize,
    means: Vec<f64>,
    std_errors: Vec<f64>,
    xi_scale: f64,
}

impl NaDerivativeField {
    #[inline]
    pub fn get(&self, p: usize, j: usize, k: usize) -> f64 {
        self.values.get(p, j * self.marks + k)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn marks(&self) -> usize {
        self.marks
    }

    pub fn unexplained_fraction(&self) -> f64 {
        1.0 - self.r_squared
    }

    /// Path mean of the estimate at (j, k).
    pub fn mean(&self, j: usize, k: usize) -> f64 {
        self.means[j * self.marks + k]
    }

    /// Standard error of [`Self::mean`].
    pub fn std_error(&self, j: usize, k: usize) -> f64 {
        self.std_errors[j * self.marks + k]
    }

    /// Average of `|mean| / std_error` over cells and marks carrying
    /// weight; about 0.8 for a field that is zero up to noise.
    pub fn zero_score(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        let negligible = 1e-10 * self.xi_scale.max(1e-300);
        for i in 0..self.means.len() {
            let se = self.std_errors[i];
            if self.means[i].abs() <= negligible {
                count += usize::from(se > 0.0);
            } else if se > 0.0 {
                total += self.means[i].abs() / se;
                count += 1;
            } else if self.means[i] != 0.0 {
                return f64::INFINITY;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

/// Normal equations of the joint regression in kept-column coordinates,
/// block 0 being the intensity-path block.
struct JointSystem<'a> {
    d0: &'a Design,
    fit0: &'a LsFit,
    blocks: &'a [CellBlock<'a>],
    reps: &'a [CellRepresentation],
    n: usize,
}

impl JointSystem<'_> {
    fn apply(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let mut out = self.fit0.fitted(self.d0, &x[0]);
        for (j, b) in self.blocks.iter().enumerate() {
            let f = self.reps[j].fit.fitted(b, &x[j + 1]);
            for (o, v) in out.iter_mut().zip(f) {
                *o += v;
            }
        }
        out
    }

    fn adjoint(&self, r: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![self.fit0.cross(self.d0, r)];
        for (j, b) in self.blocks.iter().enumerate() {
            out.push(self.reps[j].fit.cross(b, r));
        }
        out
    }

    fn ridge(&self, i: usize) -> &[f64] {
        if i == 0 {
            self.fit0.ridge_diag()
        } else {
            self.reps[i - 1].fit.ridge_diag()
        }
    }

    fn normal(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = self.adjoint(&self.apply(x));
        for (i, (o, xi)) in out.iter_mut().zip(x).enumerate() {
            for ((a, b), r) in o.iter_mut().zip(xi).zip(self.ridge(i)) {
                *a += r * b;
            }
        }
        out
    }

    fn precondition(&self, r: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = vec![self.fit0.solve(r[0].clone())];
        for (j, rj) in r[1..].iter().enumerate() {
            out.push(self.reps[j].fit.solve(rj.clone()));
        }
        out
    }

    fn solve(&self, xi: &[f64], opts: &NaOptions) -> Result<(Vec<Vec<f64>>, usize)> {
        let b = self.adjoint(xi);
        let b_norm = dot(&b, &b).sqrt();
        let mut x: Vec<Vec<f64>> = b.iter().map(|v| vec![0.0; v.len()]).collect();
        if b_norm == 0.0 {
            return Ok((x, 0));
        }
        // Start from the intensity-path fit alone, which is exact for
        // functionals of the intensity path.
        x[0] = self.fit0.solve(b[0].clone());
        let kx = self.normal(&x);
        let mut r: Vec<Vec<f64>> = b
            .iter()
            .zip(&kx)
            .map(|(u, v)| u.iter().zip(v).map(|(a, c)| a - c).collect())
            .collect();
        if dot(&r, &r).sqrt() <= opts.tol * b_norm {
            return Ok((x, 0));
        }
        let mut z = self.precondition(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        for it in 1..=opts.max_iterations {
            let q = self.normal(&d);
            let alpha = rz / dot(&d, &q);
            axpy(&mut x, alpha, &d);
            axpy(&mut r, -alpha, &q);
            let defect = dot(&r, &r).sqrt() / b_norm;
            if !defect.is_finite() {
                return Err(Error::NumericalBlowup {
                    cell: 0,
                    detail: "NA-derivative solve diverged".into(),
                });
            }
            if defect <= opts.tol {
                return Ok((x, it));
            }
            z = self.precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (di, zi) in d.iter_mut().zip(&z) {
                for (a, b) in di.iter_mut().zip(zi) {
                    *a = b + beta * *a;
                }
            }
        }
        let defect = dot(&r, &r).sqrt() / b_norm;
        Err(Error::NoConvergence {
            iterations: opts.max_iterations,
            defect,
            detail: format!("NA-derivative normal equations over {} paths", self.n),
        })
    }
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

fn axpy(y: &mut [Vec<f64>], a: f64, x: &[Vec<f64>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        for (u, v) in yi.iter_mut().zip(xi) {
            *u += a * v;
        }
    }
}

/// NA-derivative of `xi` with default options.
pub fn na_derivative(xi: &[f64], ens: &PathEnsemble, basis: &RegressionBasis) -> Result<NaDerivativeField> {
    na_derivative_with(
        xi,
        ens,
        &NaOptions {
            basis: *basis,
            ..NaOptions::default()
        },
    )
}

/// Joint least squares of `xi` on the intensity-path features and on every
/// cell's increments, solved by conjugate gradients preconditioned with the
/// per-block factorisations.
pub fn na_derivative_with(xi: &[f64], ens: &PathEnsemble, opts: &NaOptions) -> Result<NaDerivativeField> {
    let n = ens.paths();
    if xi.len() != n {
        return Err(invalid("functional length differs from path count"));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditionedRegression {
            cell: 0,
            detail: "non-finite functional values".into(),
        });
    }
    let level = opts.level.clone().unwrap_or_else(|| default_na_level(ens));
    level.validate()?;
    if level.uses_state() {
        return Err(invalid("NA-derivative features cannot read the state"));
    }
    let cells = ens.cells();
    let marks = ens.marks().len();

    let d0 = Design::from_level(&InformationLevel::intensity_path(), ens, cells, None, &opts.basis)?;
    let fit0 = LsFit::fit(&d0, &opts.basis, 0, true)?;
    let designs: Vec<Design> = (0..cells)
        .map(|j| Design::from_level(&level, ens, j, None, &opts.basis))
        .collect::<Result<_>>()?;
    let reps: Vec<CellRepresentation> = designs
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let block = CellBlock {
                design: d,
                ens,
                cell: j,
                marks,
            };
            CellRepresentation::new(&block, &opts.basis)
        })
        .collect::<Result<_>>()?;

    let blocks: Vec<CellBlock> = designs
        .iter()
        .enumerate()
        .map(|(j, d)| CellBlock {
            design: d,
            ens,
            cell: j,
            marks,
        })
        .collect();
    let system = JointSystem {
        d0: &d0,
        fit0: &fit0,
        blocks: &blocks,
        reps: &reps,
        n,
    };
    let (x, iterations) = system.solve(xi, opts)?;
    let f0 = fit0.fitted(&d0, &x[0]);
    let resid: Vec<f64> = {
        let fitted = system.apply(&x);
        xi.iter().zip(&fitted).map(|(a, b)| a - b).collect()
    };
    let coefs: Vec<Vec<f64>> = (0..cells)
        .map(|j| {
            let mut full = vec![0.0; blocks[j].cols()];
            for (a, &c) in reps[j].fit.kept_columns().iter().enumerate() {
                full[c] = x[j + 1][a];
            }
            full
        })
        .collect();

    let width = cells * marks;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut out = vec![0.0; width];
            for j in 0..cells {
                let m = designs[j].cols();
                let mut psi = vec![0.0; m];
                designs[j].row(p, &mut psi);
                for k in 0..marks {
                    out[j * marks + k] = reps[j].integrand(&psi, &coefs[j], k);
                }
            }
            out
        })
        .collect();
    let values = PathTable::from_rows(rows);

    let ss_res: f64 = resid.iter().map(|v| v * v).sum();
    let ss_tot: f64 = xi.iter().zip(&f0).map(|(a, b)| (a - b) * (a - b)).sum();
    let r_squared = if ss_tot <= 1e-300 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let params: usize = fit0.dim() + reps.iter().map(|r| r.params()).sum::<usize>();
    let dof = (n.saturating_sub(params)).max(1) as f64;
    let sigma2 = ss_res / dof;

    let mut means = vec![0.0; width];
    let mut std_errors = vec![0.0; width];
    for j in 0..cells {
        let m = designs[j].cols();
        let mut psi_mean = vec![0.0; m];
        let mut psi = vec![0.0; m];
        for p in 0..n {
            designs[j].row(p, &mut psi);
            for (a, b) in psi_mean.iter_mut().zip(&psi) {
                *a += b;
            }
        }
        for v in psi_mean.iter_mut() {
            *v /= n as f64;
        }
        for k in 0..marks {
            means[j * marks + k] = values.column_mean(j * marks + k);
            let has_weight = (0..n).any(|p| ens.weight(p, j, k) > 0.0);
            if has_weight {
                let q = reps[j].mean_variance_factor(&psi_mean, k, m * marks);
                std_errors[j * marks + k] = (sigma2 / n as f64 * q).sqrt();
            }
        }
    }

    Ok(NaDerivativeField {
        cells,
        marks,
        values,
        xi0: f0,
        r_squared,
        iterations,
        means,
        std_errors,
        xi_scale: (xi.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt(),
    })
}
