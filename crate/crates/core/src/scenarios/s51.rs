//! Consumption with delayed wealth: `X(t) = x0 + int X(t-s) alpha(s) - c(s) ds
//! + int X(t-s) gamma(s, z) mu(ds dz)`, played as a zero-sum game in `c`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fns::{BackwardFns, ForwardFns, ObjectiveFns};
use super::OracleResult;
use crate::backward::{AdjointIterate, BackwardOptions, DriverConvention, DriverWrt, TerminalPreset};
use crate::calculus::{Flow, InformationLevel};
use crate::error::{invalid, Error, Result};
use crate::forward::ControlProcess;
use crate::game::{
    necessary_residual, solve_system, zero_sum_build, AdjointOverride, ControlSpec, GameScenario, SystemView,
    ZeroSumSpec,
};
use crate::hamiltonian::{PartialScheme, ProfitWrt};
use crate::noise::{build_grid, MarkSet, TimeChangeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub horizon: f64,
    pub cells: usize,
    pub x0: f64,
    /// `alpha(t) = alpha0 + alpha1 t`.
    pub alpha0: f64,
    pub alpha1: f64,
    /// Per mark, Brownian first.
    pub gamma: Vec<f64>,
    /// `(size, mass)` of each jump mark.
    pub jumps: Vec<(f64, f64)>,
    pub lambda_b: f64,
    pub lambda_h: f64,
    pub eta: f64,
    /// `V'(x) = -K`.
    pub k: f64,
    /// `F(t, c) = rho ln c`.
    pub rho: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            cells: 64,
            x0: 1.0,
            alpha0: 0.5,
            alpha1: 0.0,
            gamma: vec![0.2],
            jumps: Vec::new(),
            lambda_b: 1.0,
            lambda_h: 0.0,
            eta: 0.1,
            k: 1.0,
            rho: 1.0,
            c_min: 1e-6,
            c_max: 10.0,
        }
    }
}

impl Params {
    pub fn alpha(&self, t: f64) -> f64 {
        self.alpha0 + self.alpha1 * t
    }

    pub fn alpha_prime(&self, _t: f64) -> f64 {
        self.alpha1
    }

    fn validate(&self) -> Result<()> {
        if self.gamma.len() != self.jumps.len() + 1 {
            return Err(invalid("gamma needs one entry per mark, Brownian first"));
        }
        if !(self.rho > 0.0) || !(self.c_min > 0.0) || !(self.c_max > self.c_min) {
            return Err(invalid("need rho > 0 and 0 < c_min < c_max"));
        }
        Ok(())
    }
}

/// The adjoint equation as printed for this model:
/// `dp(t) = [alpha p + gamma_0 q_0 lambda_B + sum_k gamma_k q_k lambda_H nu_k
/// + int_t^T alpha'(s) p(s) ds] dt + q dmu`, `p(T) = K`.
struct PrintedAdjoint {
    params: Params,
}

impl AdjointOverride for PrintedAdjoint {
    fn driver(&self, view: &SystemView, it: &AdjointIterate, path: usize, i: usize) -> Result<f64> {
        let ens = view.ens;
        let g = ens.grid();
        let marks = ens.marks();
        let m = marks.len();
        let mut a = self.params.alpha(g.node(i)) * it.p.get(path, i);
        a += self.params.gamma[0] * it.q.get(path, i * m) * ens.lambda_b(path, i);
        for k in 1..m {
            a += self.params.gamma[k] * it.q.get(path, i * m + k) * ens.lambda_h(path, i) * marks.mass(k);
        }
        if self.params.alpha1 != 0.0 {
            for j in i..ens.cells() {
                a += self.params.alpha_prime(g.node(j)) * it.p.get(path, j) * g.width(j);
            }
        }
        Ok(-a)
    }
}

pub fn build(params: &Params) -> Result<GameScenario> {
    params.validate()?;
    let pf = params.clone();
    let gamma = params.gamma.clone();
    let forward = ForwardFns::new(
        move |a| a.delayed_state() * pf.alpha(a.s) - a.u[0],
        move |a, k, _| a.delayed_state() * gamma[k],
    );
    let eta = params.eta;
    let mut backward = BackwardFns::new(move |a| eta * a.y, |_| 0.0);
    backward.driver_partial = Some(Arc::new(move |_, w| {
        Some(match w {
            DriverWrt::Y => eta,
            _ => 0.0,
        })
    }));
    let (rho, k) = (params.rho, params.k);
    let mut objective = ObjectiveFns::new(move |a| rho * a.u[0].ln(), move |x| -k * x, |_| 0.0);
    objective.profit_partial = Some(Arc::new(move |a, w| {
        Some(match w {
            ProfitWrt::U(0) => rho / a.u[0],
            _ => 0.0,
        })
    }));
    objective.terminal_reward_prime = Some(Arc::new(move |_| -k));
    objective.initial_risk_prime = Some(Arc::new(|_| 0.0));
    let marks = MarkSet::from_pairs(&params.jumps)?;
    let level = InformationLevel::trivial(Flow::F);
    Ok(zero_sum_build(ZeroSumSpec {
        name: "scenario-5-1".into(),
        horizon: params.horizon,
        cells: params.cells,
        marks,
        time_change: TimeChangeModel::deterministic(params.lambda_b, params.lambda_h),
        forward: Arc::new(forward),
        x0: params.x0,
        backward: Arc::new(backward),
        objective: Arc::new(objective),
        convention: DriverConvention::AsPrinted,
        terminal: TerminalPreset::AsPrinted,
        controls: [
            ControlSpec {
                level: level.clone(),
                degree: 0,
                bounds: (params.c_min, params.c_max),
                active: true,
            },
            ControlSpec {
                level,
                degree: 0,
                bounds: (0.0, 0.0),
                active: false,
            },
        ],
        options: BackwardOptions::default(),
        scheme: PartialScheme::Callback,
        adjoint: Some(Arc::new(PrintedAdjoint { params: params.clone() })),
    }))
}

/// Trapezoid solve of `p(t) = K - int_t^T abar(u, t) p(u) du` with
/// `abar(u, t) = alpha(u) + (u - t) alpha'(u)` on `fine` cells, returned on
/// the nodes of the `cells` grid.
pub fn dense_adjoint_oracle(params: &Params, fine: usize) -> Result<Vec<f64>> {
    let n = params.cells;
    if fine % n != 0 {
        return Err(Error::OracleError("fine grid must refine the solver grid".into()));
    }
    let t_end = params.horizon;
    let h = t_end / fine as f64;
    let abar = |u: f64, t: f64| params.alpha(u) + (u - t) * params.alpha_prime(u);
    let mut p = vec![0.0; fine + 1];
    p[fine] = params.k;
    for m in (0..fine).rev() {
        let t = m as f64 * h;
        let mut rhs = params.k;
        for l in m + 1..=fine {
            let w = if l == fine { 0.5 * h } else { h };
            rhs -= w * abar(l as f64 * h, t) * p[l];
        }
        let diag = 1.0 + 0.5 * h * abar(t, t);
        if diag.abs() < 1e-14 {
            return Err(Error::OracleError("singular trapezoid step".into()));
        }
        p[m] = rhs / diag;
    }
    let stride = fine / n;
    Ok((0..=n).map(|i| p[i * stride]).collect())
}

/// First-order-condition control `c = rho / p` with `p` from the oracle.
pub fn oracle_control(params: &Params, p: &[f64]) -> Result<[ControlProcess; 2]> {
    let values: Vec<f64> = (0..params.cells)
        .map(|j| (params.rho / p[j]).clamp(params.c_min, params.c_max))
        .collect();
    Ok([
        ControlProcess::deterministic(0, (params.c_min, params.c_max), values)?,
        ControlProcess::constant(1, (0.0, 0.0), params.cells, 0.0)?,
    ])
}

/// Euler error bound `C / N` for the adjoint against the dense oracle.
pub fn adjoint_tolerance(params: &Params) -> f64 {
    let t = params.horizon;
    let a = params.alpha0.abs().max(params.alpha(t).abs()) + params.alpha1.abs() * t;
    params.k.abs() * a * (a + 1.0) * t * (2.0 * a * t).exp() / params.cells as f64 + 1e-12
}

pub fn run(params: &Params, paths: usize, seed: u64) -> Result<Vec<OracleResult>> {
    let sc = build(params)?;
    let ens = sc.ensemble(seed, paths)?;
    let oracle = dense_adjoint_oracle(params, params.cells * 64)?;
    let controls = oracle_control(params, &oracle)?;
    let sys = solve_system(&sc, &controls, &ens, [true, false])?;
    let adj = sys.players[0].adjoint.as_ref().expect("player 1 is active");
    let n = params.cells;
    let grid = build_grid(params.horizon, n)?;

    let mut var: f64 = 0.0;
    for i in 0..=n {
        var = var.max(crate::table::variance(&adj.p.column(i)));
    }
    let mut qmax: f64 = 0.0;
    for c in 0..adj.q.cols() {
        var = var.max(crate::table::variance(&adj.q.column(c)));
        qmax = qmax.max(adj.q.column(c).iter().fold(0.0_f64, |a, b| a.max(b.abs())));
    }
    let mut out = vec![OracleResult::new(
        "adjoint-deterministic",
        vec![0.0],
        vec![var.max(qmax)],
        1e-10,
        "path variance of p and q, and sup |q|",
    )];

    let observed: Vec<f64> = (0..=n).map(|i| adj.p.column_mean(i)).collect();
    out.push(OracleResult::new(
        "adjoint-dense-volterra",
        oracle.clone(),
        observed,
        adjoint_tolerance(params),
        "max |p - p_oracle| against a trapezoid solve of the printed integral equation",
    ));

    if params.alpha1 == 0.0 {
        let closed: Vec<f64> = (0..=n)
            .map(|i| params.k * (-params.alpha0 * (params.horizon - grid.node(i))).exp())
            .collect();
        out.push(OracleResult::new(
            "adjoint-exponential",
            closed,
            oracle,
            1e-6,
            "dense oracle against K exp(-alpha (T - t)) for constant alpha",
        ));
    }

    let r = necessary_residual(&sc, &sys, &ens, &controls, 0)?;
    out.push(OracleResult::new(
        "necessary-residual",
        vec![0.0; n],
        r.cell_means,
        5e-2,
        "residual rho / c - p at c = rho / p_oracle",
    ));
    Ok(out)
}
