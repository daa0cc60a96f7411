//! Two-player games on a controlled Volterra system: performance
//! estimates, necessary-condition residuals, Nash search and the
//! sufficient and saddle checks.

mod checks;
mod nash;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{
    self, solve_adjoint_p, solve_bsvie, solve_z, AdjointDriver, AdjointIterate, AdjointSolution, BackwardCoefficients,
    BackwardOptions, BsvieSolution, DriverConvention, Regressors, TerminalPreset, ZProcess,
};
use crate::calculus::InformationLevel;
use crate::error::{invalid, Error, Result};
use crate::forward::{solve_fsvie, ControlProcess, ForwardCoefficients, ForwardSolution, Policy};
use crate::hamiltonian::{self, Hamiltonian, HamiltonianDriver, Objective, PartialScheme, PlayerTables, ProfitArgs};
use crate::noise::{build_grid, MarkSet, PathEnsemble, RandomSeed, TimeChangeModel};
use crate::table::{mean, std_error};

pub use checks::{
    saddle_check, sufficient_check, zero_sum_build, ConcavityProbe, ControlSpec, Negated, ProbeSummary, SaddleReport,
    SufficientReport, ZeroSumSpec,
};
pub use nash::{
    find_nash, necessary_residual, perturbation_derivative, NashCandidate, NashOptions, PerturbationResult,
    PerturbationSpec, Residual, StepRule, TraceEntry,
};

/// Replacement for the Hamiltonian adjoint drift, for models whose adjoint
/// equation is given directly.
pub trait AdjointOverride: Send + Sync {
    fn driver(&self, view: &SystemView, it: &AdjointIterate, path: usize, cell: usize) -> Result<f64>;

    fn needs_na(&self) -> bool {
        false
    }
}

/// Read-only view handed to adjoint overrides.
pub struct SystemView<'a> {
    pub ens: &'a PathEnsemble,
    pub fwd: &'a ForwardSolution,
    pub bsvie: &'a BsvieSolution,
    pub z: &'a ZProcess,
}

#[derive(Clone)]
pub struct PlayerSpec {
    pub backward: Arc<dyn BackwardCoefficients>,
    pub objective: Arc<dyn Objective>,
    pub convention: DriverConvention,
    pub terminal: TerminalPreset,
    /// Features the player's control may read.
    pub level: InformationLevel,
    pub degree: usize,
    pub bounds: (f64, f64),
    /// Players without a control skip adjoint solves and have residual 0.
    pub active: bool,
    pub adjoint: Option<Arc<dyn AdjointOverride>>,
}

impl PlayerSpec {
    pub fn new(backward: Arc<dyn BackwardCoefficients>, objective: Arc<dyn Objective>) -> Self {
        Self {
            backward,
            objective,
            convention: DriverConvention::default(),
            terminal: TerminalPreset::default(),
            level: InformationLevel::trivial(crate::calculus::Flow::F),
            degree: 0,
            bounds: (f64::NEG_INFINITY, f64::INFINITY),
            active: true,
            adjoint: None,
        }
    }

    pub fn box_width(&self) -> f64 {
        let w = self.bounds.1 - self.bounds.0;
        if w.is_finite() && w > 0.0 {
            w
        } else {
            1.0
        }
    }
}

#[derive(Clone)]
pub struct GameScenario {
    pub name: String,
    pub horizon: f64,
    pub cells: usize,
    pub marks: MarkSet,
    pub time_change: TimeChangeModel,
    pub forward: Arc<dyn ForwardCoefficients>,
    pub x0: f64,
    pub players: [PlayerSpec; 2],
    pub options: BackwardOptions,
    pub scheme: PartialScheme,
}

impl GameScenario {
    pub fn ensemble(&self, seed: u64, paths: usize) -> Result<PathEnsemble> {
        let grid = build_grid(self.horizon, self.cells)?;
        PathEnsemble::simulate(&self.time_change, &grid, &self.marks, RandomSeed::new(seed), paths)
    }

    /// Controls of degree `players[i].degree` that start at a constant.
    pub fn constant_controls(&self, values: [f64; 2]) -> Result<[ControlProcess; 2]> {
        let make = |i: usize| -> Result<ControlProcess> {
            let sp = &self.players[i];
            let terms = crate::calculus::monomial_exponents(sp.level.dim(), sp.degree).len();
            let mut coef = vec![0.0; self.cells * terms];
            for j in 0..self.cells {
                coef[j * terms] = values[i];
            }
            ControlProcess::new(i, sp.level.clone(), sp.degree, sp.bounds, self.cells, coef)
        };
        Ok([make(0)?, make(1)?])
    }

    pub fn check_controls(&self, controls: &[ControlProcess; 2]) -> Result<()> {
        for (i, c) in controls.iter().enumerate() {
            if c.cells() != self.cells {
                return Err(invalid(format!(
                    "control of player {} has {} cells, the grid has {}",
                    i + 1,
                    c.cells(),
                    self.cells
                )));
            }
        }
        Ok(())
    }
}

/// Backward solutions of one player.
pub struct PlayerSystem {
    pub bsvie: BsvieSolution,
    pub z: Option<ZProcess>,
    pub adjoint: Option<AdjointSolution>,
}

/// Forward, backward and adjoint solutions for one control pair.
pub struct System {
    pub fwd: ForwardSolution,
    pub reg: Regressors,
    pub players: [PlayerSystem; 2],
}

struct OverrideDriver<'a> {
    inner: &'a dyn AdjointOverride,
    view: SystemView<'a>,
}

impl AdjointDriver for OverrideDriver<'_> {
    fn driver(&self, it: &AdjointIterate, path: usize, cell: usize) -> Result<f64> {
        self.inner.driver(&self.view, it, path, cell)
    }

    fn needs_na(&self) -> bool {
        self.inner.needs_na()
    }
}

/// Hamiltonian of player `i` on a solved system.
pub fn hamiltonian<'a>(sc: &'a GameScenario, sys: &'a System, ens: &'a PathEnsemble, i: usize) -> Hamiltonian<'a> {
    let ps = &sys.players[i];
    let sp = &sc.players[i];
    Hamiltonian {
        forward: sc.forward.as_ref(),
        backward: sp.backward.as_ref(),
        objective: sp.objective.as_ref(),
        ens,
        fwd: &sys.fwd,
        tables: PlayerTables {
            y: Some(&ps.bsvie.y),
            theta: ps.bsvie.theta.as_ref(),
            z: ps.z.as_ref().map(|z| &z.z),
            p: ps.adjoint.as_ref().map(|a| &a.p),
            q: ps.adjoint.as_ref().map(|a| &a.q),
            na: ps.adjoint.as_ref().and_then(|a| a.na.as_ref()),
        },
        scheme: sc.scheme,
    }
}

fn solve_player(
    sc: &GameScenario,
    i: usize,
    ens: &PathEnsemble,
    fwd: &ForwardSolution,
    reg: &Regressors,
    with_adjoint: bool,
) -> Result<PlayerSystem> {
    let sp = &sc.players[i];
    let bsvie = solve_bsvie(sp.backward.as_ref(), fwd, ens, reg, sp.convention, &sc.options)?;
    if !with_adjoint || !sp.active {
        return Ok(PlayerSystem {
            bsvie,
            z: None,
            adjoint: None,
        });
    }
    let sg = sp.convention.sign();
    let h = Hamiltonian {
        forward: sc.forward.as_ref(),
        backward: sp.backward.as_ref(),
        objective: sp.objective.as_ref(),
        ens,
        fwd,
        tables: PlayerTables {
            y: Some(&bsvie.y),
            theta: bsvie.theta.as_ref(),
            ..Default::default()
        },
        scheme: sc.scheme,
    };
    let z0: Vec<f64> = (0..ens.paths())
        .map(|p| sg * hamiltonian::initial_risk_derivative(sp.objective.as_ref(), bsvie.y.get(p, 0)))
        .collect();
    let z = solve_z(
        &|zt, cell| {
            let mut h = h;
            h.tables.z = Some(zt);
            h.z_partials(cell)
        },
        &z0,
        ens,
        sp.convention,
    )?;
    let n = ens.cells();
    let terminal: Vec<f64> = (0..ens.paths())
        .map(|p| {
            let x = fwd.x.get(p, n);
            sp.terminal.value(
                hamiltonian::terminal_reward_derivative(sp.objective.as_ref(), x),
                sp.backward.terminal(x),
                backward::terminal_derivative(sp.backward.as_ref(), x),
                z.z.get(p, n),
                sp.convention,
            )
        })
        .collect();
    let adjoint = match &sp.adjoint {
        Some(o) => {
            let d = OverrideDriver {
                inner: o.as_ref(),
                view: SystemView {
                    ens,
                    fwd,
                    bsvie: &bsvie,
                    z: &z,
                },
            };
            solve_adjoint_p(&d, &terminal, ens, reg, &sc.options)?
        }
        None => {
            let mut h = h;
            h.tables.z = Some(&z.z);
            solve_adjoint_p(&HamiltonianDriver { h }, &terminal, ens, reg, &sc.options)?
        }
    };
    Ok(PlayerSystem {
        bsvie,
        z: Some(z),
        adjoint: Some(adjoint),
    })
}

/// Solve the forward equation under `policies`, both backward equations
/// and the adjoint systems of the players flagged in `adjoints`.
pub fn solve_system_with(
    sc: &GameScenario,
    policies: [&dyn Policy; 2],
    ens: &PathEnsemble,
    adjoints: [bool; 2],
) -> Result<System> {
    if ens.cells() != sc.cells {
        return Err(invalid("ensemble grid differs from the scenario grid"));
    }
    let fwd = solve_fsvie(sc.forward.as_ref(), policies, ens, sc.x0)?;
    let reg = Regressors::new(ens, &fwd, &sc.options)?;
    let p0 = solve_player(sc, 0, ens, &fwd, &reg, adjoints[0])?;
    let p1 = solve_player(sc, 1, ens, &fwd, &reg, adjoints[1])?;
    Ok(System {
        fwd,
        reg,
        players: [p0, p1],
    })
}

pub fn solve_system(
    sc: &GameScenario,
    controls: &[ControlProcess; 2],
    ens: &PathEnsemble,
    adjoints: [bool; 2],
) -> Result<System> {
    sc.check_controls(controls)?;
    solve_system_with(sc, [&controls[0], &controls[1]], ens, adjoints)
}

/// Monte Carlo estimates of both functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub j: [f64; 2],
    pub std_error: [f64; 2],
    /// Paths on which `psi(Y(0))` is negative, per player.
    pub negative_initial_risk: [usize; 2],
}

/// Per path functional values of player `i`.
pub fn path_values(sc: &GameScenario, sys: &System, ens: &PathEnsemble, i: usize) -> Result<Vec<f64>> {
    let sp = &sc.players[i];
    let o = sp.objective.as_ref();
    let g = ens.grid();
    let n = ens.cells();
    let y = &sys.players[i].bsvie.y;
    let vals: Vec<f64> = (0..ens.paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            for j in 0..n {
                let a = ProfitArgs {
                    t: g.node(j),
                    index: j,
                    lambda_b: ens.lambda_b(p, j),
                    lambda_h: ens.lambda_h(p, j),
                    u: [sys.fwd.u[0].get(p, j), sys.fwd.u[1].get(p, j)],
                    x: sys.fwd.x.get(p, j),
                    y: y.get(p, j),
                };
                acc += o.profit(&a) * g.width(j);
            }
            acc + o.terminal_reward(sys.fwd.x.get(p, n)) + o.initial_risk(y.get(p, 0))
        })
        .collect();
    if let Some(p) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            cell: n,
            detail: format!("functional of player {} is not finite on path {p}", i + 1),
        });
    }
    Ok(vals)
}

pub fn performance(sc: &GameScenario, sys: &System, ens: &PathEnsemble) -> Result<Performance> {
    let mut out = Performance {
        j: [0.0; 2],
        std_error: [0.0; 2],
        negative_initial_risk: [0; 2],
    };
    for i in 0..2 {
        let v = path_values(sc, sys, ens, i)?;
        out.j[i] = mean(&v);
        out.std_error[i] = std_error(&v);
        let o = sc.players[i].objective.as_ref();
        out.negative_initial_risk[i] = (0..ens.paths())
            .filter(|&p| o.initial_risk(sys.players[i].bsvie.y.get(p, 0)) < 0.0)
            .count();
    }
    Ok(out)
}

/// `J_1, J_2` for a control pair.
pub fn estimate_performance(sc: &GameScenario, controls: &[ControlProcess; 2], ens: &PathEnsemble) -> Result<Performance> {
    let sys = solve_system(sc, controls, ens, [false, false])?;
    performance(sc, &sys, ens)
}
