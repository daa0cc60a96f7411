use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{hamiltonian, path_values, performance, solve_system, solve_system_with, GameScenario, Performance, System};
use crate::calculus::{least_squares_raw, RowSource};
use crate::error::{invalid, Error, Result};
use crate::forward::{ControlProcess, Perturbed, Policy};
use crate::hamiltonian::{HWrt, Terms};
use crate::noise::PathEnsemble;
use crate::table::{mean, PathTable};

struct DenseRows {
    cols: usize,
    data: Vec<f64>,
}

impl RowSource for DenseRows {
    fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn row(&self, p: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[p * self.cols..(p + 1) * self.cols]);
    }
}

/// Least-squares coefficients of `y` on the control basis at cell `j`.
fn fit_on_basis(control: &ControlProcess, ens: &PathEnsemble, fwd_x: &PathTable, j: usize, y: &[f64]) -> Result<Vec<f64>> {
    let terms = control.terms();
    if terms == 1 {
        return Ok(vec![mean(y)]);
    }
    let rows: Vec<Vec<f64>> = (0..ens.paths())
        .into_par_iter()
        .map(|p| control.basis_row(ens, p, j, fwd_x.get(p, j)))
        .collect::<Result<_>>()?;
    let src = DenseRows {
        cols: terms,
        data: rows.concat(),
    };
    least_squares_raw(&src, y, 0.0)
}

fn eval_on_basis(control: &ControlProcess, ens: &PathEnsemble, fwd_x: &PathTable, j: usize, coef: &[f64]) -> Result<Vec<f64>> {
    if coef.len() == 1 {
        return Ok(vec![coef[0]; ens.paths()]);
    }
    (0..ens.paths())
        .into_par_iter()
        .map(|p| {
            let r = control.basis_row(ens, p, j, fwd_x.get(p, j))?;
            Ok(r.iter().zip(coef).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Necessary-condition residual of one player: `dH_i/du_i` per path and its
/// regression on the player's control basis per cell.
#[derive(Debug, Clone)]
pub struct Residual {
    pub player: usize,
    /// `paths x N`.
    pub raw: PathTable,
    /// `paths x N`.
    pub fitted: PathTable,
    pub cell_means: Vec<f64>,
    /// Largest `|cell mean|`.
    pub norm: f64,
    /// Largest `|cell mean of clip(u + R) - u|`.
    pub projected_norm: f64,
}

pub fn necessary_residual(
    sc: &GameScenario,
    sys: &System,
    ens: &PathEnsemble,
    controls: &[ControlProcess; 2],
    i: usize,
) -> Result<Residual> {
    let n = ens.cells();
    let paths = ens.paths();
    if !sc.players[i].active {
        return Ok(Residual {
            player: i,
            raw: PathTable::zeros(paths, n),
            fitted: PathTable::zeros(paths, n),
            cell_means: vec![0.0; n],
            norm: 0.0,
            projected_norm: 0.0,
        });
    }
    if sys.players[i].adjoint.is_none() {
        return Err(Error::ContractViolation(format!(
            "residual of player {} needs its adjoint system",
            i + 1
        )));
    }
    let h = hamiltonian(sc, sys, ens, i);
    let rows: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            (0..n)
                .map(|j| h.partial(p, j, &h.point(p, j)?, HWrt::U(i), Terms::ALL))
                .collect()
        })
        .collect::<Result<_>>()?;
    let raw = PathTable::from_rows(rows);
    let mut fitted = PathTable::zeros(paths, n);
    let mut cell_means = Vec::with_capacity(n);
    let mut projected: f64 = 0.0;
    let u = &sys.fwd.u[i];
    for j in 0..n {
        let col = raw.column(j);
        let coef = fit_on_basis(&controls[i], ens, &sys.fwd.x, j, &col)?;
        let f = eval_on_basis(&controls[i], ens, &sys.fwd.x, j, &coef)?;
        let pr: Vec<f64> = (0..paths)
            .map(|p| controls[i].clip(u.get(p, j) + f[p]) - u.get(p, j))
            .collect();
        projected = projected.max(mean(&pr).abs());
        cell_means.push(mean(&f));
        fitted.set_column(j, &f);
    }
    let norm = cell_means.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    Ok(Residual {
        player: i,
        raw,
        fitted,
        cell_means,
        norm,
        projected_norm: projected,
    })
}

/// Step size of the residual ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum StepRule {
    Fixed { step: f64 },
    /// Per cell secant on the cell means, starting from `initial`.
    Secant { initial: f64, max_step: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashOptions {
    pub step: StepRule,
    pub max_iterations: usize,
    pub tol: f64,
}

impl Default for NashOptions {
    fn default() -> Self {
        Self {
            step: StepRule::Fixed { step: 0.25 },
            max_iterations: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Projected residual norms before the updates of this iteration.
    pub norms: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashCandidate {
    pub scenario: String,
    pub controls: [ControlProcess; 2],
    /// Residual cell means at the returned controls.
    pub residuals: [Vec<f64>; 2],
    pub residual_norms: [f64; 2],
    pub performance: Performance,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sufficient: Option<super::SufficientReport>,
}

fn updated(
    control: &ControlProcess,
    res: &Residual,
    steps: &[f64],
    ens: &PathEnsemble,
    sys: &System,
) -> Result<ControlProcess> {
    let mut next = control.clone();
    let u = &sys.fwd.u[control.player];
    for (j, &s) in steps.iter().enumerate() {
        let target: Vec<f64> = (0..ens.paths())
            .map(|p| control.clip(u.get(p, j) + s * res.fitted.get(p, j)))
            .collect();
        let coef = fit_on_basis(control, ens, &sys.fwd.x, j, &target)?;
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::NumericalBlowup {
                cell: j,
                detail: "control update is not finite".into(),
            });
        }
        next.set_cell_coefficients(j, &coef);
    }
    Ok(next)
}

struct SecantState {
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

impl SecantState {
    fn steps(&mut self, rule: StepRule, u_means: Vec<f64>, r_means: &[f64]) -> Vec<f64> {
        let steps = match rule {
            StepRule::Fixed { step } => vec![step; r_means.len()],
            StepRule::Secant { initial, max_step } => (0..r_means.len())
                .map(|j| match &self.prev {
                    Some((pu, pr)) => {
                        let du = u_means[j] - pu[j];
                        let dr = r_means[j] - pr[j];
                        let s = -du / dr;
                        if dr != 0.0 && s.is_finite() && s > 0.0 {
                            s.min(max_step)
                        } else {
                            initial
                        }
                    }
                    None => initial,
                })
                .collect(),
        };
        self.prev = Some((u_means, r_means.to_vec()));
        steps
    }
}

fn adjoints_for(i: usize) -> [bool; 2] {
    let mut a = [false; 2];
    a[i] = true;
    a
}

/// Alternating projected residual ascent. Returns the best iterate seen,
/// with `converged` false when the tolerance was not reached.
pub fn find_nash(
    sc: &GameScenario,
    initial: &[ControlProcess; 2],
    ens: &PathEnsemble,
    opts: &NashOptions,
) -> Result<NashCandidate> {
    match opts.step {
        StepRule::Fixed { step } if !(step > 0.0) => return Err(invalid("step must be positive")),
        StepRule::Secant { initial, max_step } if !(initial > 0.0 && max_step > 0.0) => {
            return Err(invalid("secant steps must be positive"))
        }
        _ => {}
    }
    let mut controls = initial.clone();
    let mut trace = Vec::new();
    let mut secant = [SecantState { prev: None }, SecantState { prev: None }];
    let mut best: Option<(f64, [ControlProcess; 2])> = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iterations.max(1) {
        let start = controls.clone();
        let mut norms = [0.0; 2];
        for i in 0..2 {
            if !sc.players[i].active {
                continue;
            }
            let sys = solve_system(sc, &controls, ens, adjoints_for(i))?;
            let r = necessary_residual(sc, &sys, ens, &controls, i)?;
            norms[i] = r.projected_norm;
            if norms[i] > opts.tol {
                let u_means = (0..ens.cells()).map(|j| sys.fwd.u[i].column_mean(j)).collect();
                let steps = secant[i].steps(opts.step, u_means, &r.cell_means);
                controls[i] = updated(&controls[i], &r, &steps, ens, &sys)?;
            }
        }
        let worst = norms[0].max(norms[1]);
        trace.push(TraceEntry { iteration: it, norms });
        if best.as_ref().map_or(true, |(b, _)| worst < *b) {
            best = Some((worst, start.clone()));
        }
        if worst <= opts.tol {
            converged = true;
            controls = start;
            break;
        }
        iterations = it + 1;
    }
    if !converged {
        if let Some((_, b)) = best {
            controls = b;
        }
    }
    let active = [sc.players[0].active, sc.players[1].active];
    let sys = solve_system(sc, &controls, ens, active)?;
    let r0 = necessary_residual(sc, &sys, ens, &controls, 0)?;
    let r1 = necessary_residual(sc, &sys, ens, &controls, 1)?;
    let perf = performance(sc, &sys, ens)?;
    Ok(NashCandidate {
        scenario: sc.name.clone(),
        controls,
        residual_norms: [r0.projected_norm, r1.projected_norm],
        residuals: [r0.cell_means, r1.cell_means],
        performance: perf,
        trace,
        iterations,
        converged,
        sufficient: None,
    })
}

/// Spike perturbation `alpha 1_window` of one player's control, with
/// `alpha = clamp(a_0 + sum_l a_l f_l, -bound, bound)` on the player's
/// features `f` at the window start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub player: usize,
    pub window: Range<usize>,
    pub alpha: Vec<f64>,
    pub bound: f64,
    /// Defaults to `1e-4` times the box width.
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    /// Central difference of the player's functional, common random numbers.
    pub derivative: f64,
    /// `E[sum_window dH/du * alpha * dt]`.
    pub prediction: f64,
    pub eps: f64,
}

pub fn perturbation_derivative(
    sc: &GameScenario,
    controls: &[ControlProcess; 2],
    spec: &PerturbationSpec,
    ens: &PathEnsemble,
) -> Result<PerturbationResult> {
    let i = spec.player;
    if i > 1 {
        return Err(invalid("player index must be 0 or 1"));
    }
    let n = ens.cells();
    if spec.window.start >= spec.window.end || spec.window.end > n {
        return Err(invalid(format!("window {:?} is not inside 0..{n}", spec.window)));
    }
    let dim = controls[i].level.dim();
    if spec.alpha.len() != dim + 1 {
        return Err(invalid(format!("direction needs {} coefficients", dim + 1)));
    }
    if !(spec.bound > 0.0) {
        return Err(invalid("direction bound must be positive"));
    }
    let eps = spec.eps.unwrap_or(1e-4 * sc.players[i].box_width());
    let alpha = spec.alpha.clone();
    let bound = spec.bound;
    let direction = move |f: &[f64]| {
        let v = alpha[0] + f.iter().zip(&alpha[1..]).map(|(a, b)| a * b).sum::<f64>();
        v.clamp(-bound, bound)
    };
    let value = |e: f64| -> Result<Vec<f64>> {
        let pert = Perturbed {
            base: &controls[i],
            eps: e,
            window: spec.window.clone(),
            direction: &direction,
        };
        let mut pol: [&dyn Policy; 2] = [&controls[0], &controls[1]];
        pol[i] = &pert;
        let sys = solve_system_with(sc, pol, ens, [false, false])?;
        path_values(sc, &sys, ens, i)
    };
    let up = value(eps)?;
    let dn = value(-eps)?;
    let diff: Vec<f64> = up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    let derivative = mean(&diff);

    let sys = solve_system(sc, controls, ens, adjoints_for(i))?;
    let prediction = if sc.players[i].active {
        let h = hamiltonian(sc, &sys, ens, i);
        let pert = Perturbed {
            base: &controls[i],
            eps: 0.0,
            window: spec.window.clone(),
            direction: &direction,
        };
        let g = ens.grid();
        let per_path: Vec<f64> = (0..ens.paths())
            .into_par_iter()
            .map(|p| {
                let a = pert.alpha(ens, p, sys.fwd.x.get(p, spec.window.start))?;
                let mut acc = 0.0;
                for j in spec.window.clone() {
                    let d = h.partial(p, j, &h.point(p, j)?, HWrt::U(i), Terms::ALL)?;
                    acc += d * a * g.width(j);
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        mean(&per_path)
    } else {
        0.0
    };
    Ok(PerturbationResult {
        derivative,
        prediction,
        eps,
    })
}
