//! Controlled forward Volterra equation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{eval_monomial, monomial_exponents, InformationLevel};
use crate::error::{invalid, Error, Result};
use crate::noise::PathEnsemble;
use crate::table::{mean, std_error, PathTable};

/// Arguments of a two-time kernel evaluated at `(t, s)` with `s <= t` for
/// the forward equation and `s >= t` for backward drivers.
#[derive(Debug, Clone, Copy)]
pub struct KernelArgs<'a> {
    pub t: f64,
    pub s: f64,
    pub t_index: usize,
    pub s_index: usize,
    pub lambda_b: f64,
    pub lambda_h: f64,
    pub u: [f64; 2],
    pub x: f64,
    /// States known when the kernel is called: `X(t_0), .., X(t_{i-1})`
    /// while building `X(t_i)`.
    pub past: &'a [f64],
}

impl KernelArgs<'_> {
    /// `X(t - s)` for delay kernels. The node `t_i - t_0` is not known yet
    /// while `X(t_i)` is being built, so it reads the latest known state.
    pub fn delayed_state(&self) -> f64 {
        let lag = self.t_index.saturating_sub(self.s_index);
        let idx = lag.min(self.past.len().saturating_sub(1));
        self.past.get(idx).copied().unwrap_or(self.x)
    }
}

/// Argument a partial derivative is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    /// First time argument.
    T,
    X,
    U(usize),
}

/// Drift and per-mark diffusion of the forward equation. Derivative
/// callbacks may return `None`, in which case a central difference is used.
pub trait ForwardCoefficients: Send + Sync {
    fn drift(&self, a: &KernelArgs) -> f64;
    /// Mark 0 is the Brownian part and has `z = 0`.
    fn diffusion(&self, a: &KernelArgs, k: usize, z: f64) -> f64;

    fn drift_partial(&self, _a: &KernelArgs, _wrt: Wrt) -> Option<f64> {
        None
    }

    fn diffusion_partial(&self, _a: &KernelArgs, _k: usize, _z: f64, _wrt: Wrt) -> Option<f64> {
        None
    }

    /// Whether the kernels depend on their first time argument.
    fn time_dependent(&self) -> bool {
        true
    }
}

pub(crate) const FD_STEP: f64 = 1e-5;

fn bump<'a>(a: &KernelArgs<'a>, wrt: Wrt, h: f64) -> KernelArgs<'a> {
    let mut b = *a;
    match wrt {
        Wrt::T => b.t += h,
        Wrt::X => b.x += h,
        Wrt::U(i) => b.u[i] += h,
    }
    b
}

fn at(a: &KernelArgs, wrt: Wrt) -> f64 {
    match wrt {
        Wrt::T => a.t,
        Wrt::X => a.x,
        Wrt::U(i) => a.u[i],
    }
}

/// Central difference of `f` in the argument `wrt`.
pub(crate) fn central<F: Fn(&KernelArgs) -> f64>(f: F, a: &KernelArgs, wrt: Wrt) -> f64 {
    central_rel(f, a, wrt, FD_STEP)
}

pub(crate) fn central_rel<F: Fn(&KernelArgs) -> f64>(f: F, a: &KernelArgs, wrt: Wrt, rel: f64) -> f64 {
    let h = rel * at(a, wrt).abs().max(1.0);
    (f(&bump(a, wrt, h)) - f(&bump(a, wrt, -h))) / (2.0 * h)
}

/// Drift derivative, falling back to a central difference.
pub fn drift_derivative(c: &dyn ForwardCoefficients, a: &KernelArgs, wrt: Wrt) -> f64 {
    c.drift_partial(a, wrt)
        .unwrap_or_else(|| central(|b| c.drift(b), a, wrt))
}

/// Diffusion derivative, falling back to a central difference.
pub fn diffusion_derivative(c: &dyn ForwardCoefficients, a: &KernelArgs, k: usize, z: f64, wrt: Wrt) -> f64 {
    c.diffusion_partial(a, k, z, wrt)
        .unwrap_or_else(|| central(|b| c.diffusion(b, k, z), a, wrt))
}

/// Control value of one player at a cell, read inside the forward loop.
pub trait Policy: Send + Sync {
    /// `states` holds `X(t_0), .., X(t_j)`.
    fn value(&self, ens: &PathEnsemble, p: usize, j: usize, states: &[f64]) -> Result<f64>;
}

/// Feedback control given per cell by a polynomial in the player's
/// features, clipped to an admissible interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProcess {
    pub player: usize,
    pub level: InformationLevel,
    pub degree: usize,
    pub lower: f64,
    pub upper: f64,
    cells: usize,
    /// Monomial coefficients, `cells x terms`.
    coef: Vec<f64>,
}

impl ControlProcess {
    pub fn new(
        player: usize,
        level: InformationLevel,
        degree: usize,
        bounds: (f64, f64),
        cells: usize,
        coef: Vec<f64>,
    ) -> Result<Self> {
        level.validate()?;
        let (lower, upper) = bounds;
        if !(lower <= upper) {
            return Err(invalid(format!("empty control box [{lower}, {upper}]")));
        }
        let terms = monomial_exponents(level.dim(), degree).len();
        if coef.len() != cells * terms {
            return Err(invalid(format!(
                "control needs {} coefficients, got {}",
                cells * terms,
                coef.len()
            )));
        }
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite control coefficient"));
        }
        Ok(Self {
            player,
            level,
            degree,
            lower,
            upper,
            cells,
            coef,
        })
    }

    /// Deterministic control equal to `value` on every cell.
    pub fn constant(player: usize, bounds: (f64, f64), cells: usize, value: f64) -> Result<Self> {
        Self::new(
            player,
            InformationLevel::trivial(crate::calculus::Flow::F),
            0,
            bounds,
            cells,
            vec![value; cells],
        )
    }

    /// Deterministic control given by a value per cell.
    pub fn deterministic(player: usize, bounds: (f64, f64), values: Vec<f64>) -> Result<Self> {
        let cells = values.len();
        Self::new(
            player,
            InformationLevel::trivial(crate::calculus::Flow::F),
            0,
            bounds,
            cells,
            values,
        )
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn terms(&self) -> usize {
        self.coef.len() / self.cells.max(1)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn cell_coefficients(&self, j: usize) -> &[f64] {
        let m = self.terms();
        &self.coef[j * m..(j + 1) * m]
    }

    pub fn set_cell_coefficients(&mut self, j: usize, c: &[f64]) {
        let m = self.terms();
        self.coef[j * m..(j + 1) * m].copy_from_slice(c);
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    /// Monomials of the player's features at node `j`.
    pub fn basis_row(&self, ens: &PathEnsemble, p: usize, j: usize, state: f64) -> Result<Vec<f64>> {
        let mut f = vec![0.0; self.level.dim()];
        self.level.row(ens, p, j, Some(state), &mut f)?;
        Ok(monomial_exponents(self.level.dim(), self.degree)
            .iter()
            .map(|e| eval_monomial(e, &f))
            .collect())
    }

    /// Unclipped polynomial value.
    pub fn raw_value(&self, ens: &PathEnsemble, p: usize, j: usize, state: f64) -> Result<f64> {
        if j >= self.cells {
            return Err(invalid(format!("control has {} cells, asked for {j}", self.cells)));
        }
        if self.degree == 0 || self.level.dim() == 0 {
            return Ok(self.coef[j * self.terms()]);
        }
        let row = self.basis_row(ens, p, j, state)?;
        Ok(row.iter().zip(self.cell_coefficients(j)).map(|(a, b)| a * b).sum())
    }
}

impl Policy for ControlProcess {
    fn value(&self, ens: &PathEnsemble, p: usize, j: usize, states: &[f64]) -> Result<f64> {
        Ok(self.clip(self.raw_value(ens, p, j, states[j])?))
    }
}

/// Spike perturbation `u + eps * alpha` on the cells `window`, with `alpha`
/// read from the player's features at the window start.
pub struct Perturbed<'a> {
    pub base: &'a ControlProcess,
    pub eps: f64,
    pub window: std::ops::Range<usize>,
    pub direction: &'a (dyn Fn(&[f64]) -> f64 + Sync),
}

impl Perturbed<'_> {
    /// Direction value on path `p` given the state at the window start.
    pub fn alpha(&self, ens: &PathEnsemble, p: usize, state: f64) -> Result<f64> {
        let mut f = vec![0.0; self.base.level.dim()];
        self.base.level.row(ens, p, self.window.start, Some(state), &mut f)?;
        Ok((self.direction)(&f))
    }
}

impl Policy for Perturbed<'_> {
    fn value(&self, ens: &PathEnsemble, p: usize, j: usize, states: &[f64]) -> Result<f64> {
        let u = self.base.raw_value(ens, p, j, states[j])?;
        if self.window.contains(&j) {
            let a = self.alpha(ens, p, states[self.window.start])?;
            Ok(self.base.clip(u + self.eps * a))
        } else {
            Ok(self.base.clip(u))
        }
    }
}

/// Forward states on nodes `0..=N` and the controls used on each cell.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub x0: f64,
    /// `paths x (N + 1)`.
    pub x: PathTable,
    /// Per player, `paths x N`.
    pub u: [PathTable; 2],
}

impl ForwardSolution {
    pub fn terminal(&self) -> Vec<f64> {
        self.x.column(self.x.cols() - 1)
    }

    pub fn args<'a>(&self, ens: &PathEnsemble, p: usize, i: usize, j: usize, past: &'a [f64]) -> KernelArgs<'a> {
        let g = ens.grid();
        KernelArgs {
            t: g.node(i),
            s: g.node(j),
            t_index: i,
            s_index: j,
            lambda_b: ens.lambda_b(p, j),
            lambda_h: ens.lambda_h(p, j),
            u: [self.u[0].get(p, j), self.u[1].get(p, j)],
            x: self.x.get(p, j),
            past,
        }
    }
}

/// Left-point Volterra-Euler solve, path-parallel.
pub fn solve_fsvie(
    coeffs: &dyn ForwardCoefficients,
    policies: [&dyn Policy; 2],
    ens: &PathEnsemble,
    x0: f64,
) -> Result<ForwardSolution> {
    if !x0.is_finite() {
        return Err(invalid("initial state must be finite"));
    }
    let n = ens.cells();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..ens.paths())
        .into_par_iter()
        .map(|p| solve_path(coeffs, &policies, ens, x0, p))
        .collect::<Result<_>>()?;
    let mut x = PathTable::zeros(ens.paths(), n + 1);
    let mut u0 = PathTable::zeros(ens.paths(), n);
    let mut u1 = PathTable::zeros(ens.paths(), n);
    for (p, (xs, a, b)) in rows.into_iter().enumerate() {
        x.row_mut(p).copy_from_slice(&xs);
        u0.row_mut(p).copy_from_slice(&a);
        u1.row_mut(p).copy_from_slice(&b);
    }
    Ok(ForwardSolution { x0, x, u: [u0, u1] })
}

fn solve_path(
    coeffs: &dyn ForwardCoefficients,
    policies: &[&dyn Policy; 2],
    ens: &PathEnsemble,
    x0: f64,
    p: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = ens.grid();
    let n = ens.cells();
    let marks = ens.marks();
    let mut xs = Vec::with_capacity(n + 1);
    let mut u = [Vec::with_capacity(n), Vec::with_capacity(n)];
    xs.push(x0);
    for i in 1..=n {
        let j = i - 1;
        for (pl, pol) in policies.iter().enumerate() {
            let v = pol.value(ens, p, j, &xs)?;
            if !v.is_finite() {
                return Err(Error::NumericalBlowup {
                    cell: j,
                    detail: format!("control of player {} is not finite", pl + 1),
                });
            }
            u[pl].push(v);
        }
        let mut acc = x0;
        for j in 0..i {
            let a = KernelArgs {
                t: g.node(i),
                s: g.node(j),
                t_index: i,
                s_index: j,
                lambda_b: ens.lambda_b(p, j),
                lambda_h: ens.lambda_h(p, j),
                u: [u[0][j], u[1][j]],
                x: xs[j],
                past: &xs,
            };
            acc += coeffs.drift(&a) * g.width(j);
            for k in 0..marks.len() {
                let dx = ens.increment(p, j, k);
                if dx != 0.0 {
                    acc += coeffs.diffusion(&a, k, marks.size(k)) * dx;
                }
            }
        }
        if !acc.is_finite() {
            return Err(Error::NumericalBlowup {
                cell: i,
                detail: format!("forward state is not finite on path {p}"),
            });
        }
        xs.push(acc);
    }
    let [a, b] = u;
    Ok((xs, a, b))
}

/// Monte Carlo mean of the state against the deterministic Volterra
/// equation for the mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanTestReport {
    pub monte_carlo: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub mean_equation: Vec<f64>,
    /// Largest `|mc - mean| / se` over nodes with positive standard error.
    pub max_deviation: f64,
}

/// Compare `E[X(t_i)]` with the mean equation. The drift must be affine in
/// `x`; intensities and controls enter through their path means, so they
/// should be deterministic.
pub fn forward_mean_test(
    coeffs: &dyn ForwardCoefficients,
    policies: [&dyn Policy; 2],
    ens: &PathEnsemble,
    x0: f64,
) -> Result<MeanTestReport> {
    let sol = solve_fsvie(coeffs, policies, ens, x0)?;
    let g = ens.grid();
    let n = ens.cells();
    let lb: Vec<f64> = (0..n).map(|j| (0..ens.paths()).map(|p| ens.lambda_b(p, j)).sum::<f64>() / ens.paths() as f64).collect();
    let lh: Vec<f64> = (0..n).map(|j| (0..ens.paths()).map(|p| ens.lambda_h(p, j)).sum::<f64>() / ens.paths() as f64).collect();
    let um: [Vec<f64>; 2] = [
        (0..n).map(|j| sol.u[0].column_mean(j)).collect(),
        (0..n).map(|j| sol.u[1].column_mean(j)).collect(),
    ];
    let mut m = vec![x0];
    for i in 1..=n {
        let mut acc = x0;
        for j in 0..i {
            let base = KernelArgs {
                t: g.node(i),
                s: g.node(j),
                t_index: i,
                s_index: j,
                lambda_b: lb[j],
                lambda_h: lh[j],
                u: [um[0][j], um[1][j]],
                x: m[j],
                past: &m,
            };
            let at = |x: f64| coeffs.drift(&KernelArgs { x, ..base });
            let (d0, d1, d2) = (at(0.0), at(1.0), at(2.0));
            if ((d2 - d1) - (d1 - d0)).abs() > 1e-9 * (1.0 + d0.abs() + d1.abs() + d2.abs()) {
                return Err(invalid("mean test needs a drift affine in the state"));
            }
            acc += at(m[j]) * g.width(j);
        }
        m.push(acc);
    }
    let mut mc = Vec::with_capacity(n + 1);
    let mut se = Vec::with_capacity(n + 1);
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let col = sol.x.column(i);
        let (a, s) = (mean(&col), std_error(&col));
        if s > 0.0 {
            worst = worst.max((a - m[i]).abs() / s);
        } else if (a - m[i]).abs() > 1e-12 * (1.0 + m[i].abs()) {
            worst = f64::INFINITY;
        }
        mc.push(a);
        se.push(s);
    }
    Ok(MeanTestReport {
        monte_carlo: mc,
        std_errors: se,
        mean_equation: m,
        max_deviation: worst,
    })
}
