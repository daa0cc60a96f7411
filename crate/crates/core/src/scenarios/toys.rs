//! Small games with known answers, used as test fixtures.

use std::sync::Arc;

use super::fns::{BackwardFns, ForwardFns, ObjectiveFns};
use crate::backward::{BackwardOptions, TerminalPreset};
use crate::calculus::{Flow, InformationLevel};
use crate::game::{zero_sum_build, ControlSpec, GameScenario, PlayerSpec, ZeroSumSpec};
use crate::hamiltonian::{PartialScheme, ProfitWrt};
use crate::noise::{MarkSet, TimeChangeModel};

pub const TOY_CELLS: usize = 32;

/// Player 1 optimum in the decoupled quadratic game.
pub fn decoupled_target(player: usize, t: f64) -> f64 {
    if player == 0 {
        0.5 + 0.5 * t
    } else {
        -0.3 + 0.2 * t
    }
}

fn idle_player() -> PlayerSpec {
    let mut p = PlayerSpec::new(Arc::new(BackwardFns::zero()), Arc::new(ObjectiveFns::zero()));
    p.active = false;
    p.bounds = (0.0, 0.0);
    p
}

fn base(name: &str, forward: ForwardFns, players: [PlayerSpec; 2]) -> GameScenario {
    GameScenario {
        name: name.into(),
        horizon: 1.0,
        cells: TOY_CELLS,
        marks: MarkSet::brownian_only(),
        time_change: TimeChangeModel::deterministic(1.0, 0.0),
        forward: Arc::new(forward),
        x0: 1.0,
        players,
        options: BackwardOptions::default(),
        scheme: PartialScheme::Callback,
    }
}

/// `F_i = -(u_i - u_i*(t))^2`, no other dependence on the controls'
/// payoffs, so each player's optimum is `u_i*`.
pub fn decoupled_quadratic() -> GameScenario {
    let forward = ForwardFns::new(|a| 0.1 * a.x + a.u[0] - a.u[1], |_, k, _| if k == 0 { 0.3 } else { 0.0 });
    let player = |i: usize| {
        let mut o = ObjectiveFns::new(
            move |a| -(a.u[i] - decoupled_target(i, a.t)).powi(2),
            |_| 0.0,
            |_| 0.0,
        );
        o.profit_partial = Some(Arc::new(move |a, w| match w {
            ProfitWrt::U(j) if j == i => Some(-2.0 * (a.u[i] - decoupled_target(i, a.t))),
            _ => Some(0.0),
        }));
        let mut p = PlayerSpec::new(Arc::new(BackwardFns::zero()), Arc::new(o));
        p.bounds = (-2.0, 2.0);
        p
    };
    base("decoupled-quadratic", forward, [player(0), player(1)])
}

/// Saddle weights and centres of `J = -a (u_1 - c_1)^2 + b (u_2 - c_2)^2`.
pub const SADDLE: (f64, f64, f64, f64) = (1.0, 2.0, 0.4, -0.2);

/// Zero-sum game with the saddle point `(c_1, c_2)`.
pub fn quadratic_saddle() -> GameScenario {
    let (a, b, c1, c2) = SADDLE;
    let ctl = ControlSpec {
        level: InformationLevel::trivial(Flow::F),
        degree: 0,
        bounds: (-2.0, 2.0),
        active: true,
    };
    zero_sum_build(ZeroSumSpec {
        name: "quadratic-saddle".into(),
        horizon: 1.0,
        cells: TOY_CELLS,
        marks: MarkSet::brownian_only(),
        time_change: TimeChangeModel::deterministic(1.0, 0.0),
        forward: Arc::new(ForwardFns::new(
            |a| 0.1 * (a.u[0] - a.u[1]),
            |_, k, _| if k == 0 { 0.3 } else { 0.0 },
        )),
        x0: 1.0,
        backward: Arc::new(BackwardFns::zero()),
        objective: Arc::new(ObjectiveFns::new(
            move |p| -a * (p.u[0] - c1).powi(2) + b * (p.u[1] - c2).powi(2),
            |_| 0.0,
            |_| 0.0,
        )),
        convention: Default::default(),
        terminal: TerminalPreset::AsPrinted,
        controls: [ctl.clone(), ctl],
        options: BackwardOptions::default(),
        scheme: PartialScheme::Callback,
        adjoint: None,
    })
}

/// Neither player has a control.
pub fn u_free() -> GameScenario {
    let forward = ForwardFns::new(|a| -0.5 * a.x, |_, k, _| if k == 0 { 0.2 } else { 0.0 });
    let mut p = PlayerSpec::new(
        Arc::new(BackwardFns::new(|_| 0.0, |x| x)),
        Arc::new(ObjectiveFns::new(|a| -0.5 * a.x * a.x, |x| x, |y| y)),
    );
    p.active = false;
    p.bounds = (0.0, 0.0);
    base("u-free", forward, [p, idle_player()])
}

/// `dX = u dt + dB`, so `X` is a martingale under `u = 0`; `Y` has no
/// driver and `h(x) = x`. Player 1 maximises `E[-int u^2/2 dt] + Y(0)`,
/// optimum `u = 1`.
pub fn martingale() -> GameScenario {
    let forward = ForwardFns::new(|a| a.u[0], |_, k, _| if k == 0 { 1.0 } else { 0.0 });
    let mut p = PlayerSpec::new(
        Arc::new(BackwardFns::new(|_| 0.0, |x| x)),
        Arc::new(ObjectiveFns::new(|a| -0.5 * a.u[0] * a.u[0], |_| 0.0, |y| y)),
    );
    p.terminal = TerminalPreset::GradientForm;
    p.bounds = (-3.0, 3.0);
    base("martingale", forward, [p, idle_player()])
}

/// Pure jump noise (`lambda_B = 0`) with `dX = (0.3 X + u) dt + 0.5 z X dH~`.
pub fn jump_only() -> GameScenario {
    let forward = ForwardFns::new(|a| 0.3 * a.x + a.u[0], |a, k, z| if k == 0 { 0.0 } else { 0.5 * z * a.x });
    let mut p = PlayerSpec::new(
        Arc::new(BackwardFns::zero()),
        Arc::new(ObjectiveFns::new(|a| -0.5 * a.u[0] * a.u[0], |x| x, |_| 0.0)),
    );
    p.terminal = TerminalPreset::GradientForm;
    p.bounds = (-3.0, 3.0);
    let mut sc = base("jump-only", forward, [p, idle_player()]);
    sc.marks = MarkSet::from_pairs(&[(0.5, 1.0), (-0.4, 0.5)]).expect("valid marks");
    sc.time_change = TimeChangeModel::deterministic(0.0, 1.0);
    sc
}

pub fn toy_corpus() -> Vec<GameScenario> {
    vec![decoupled_quadratic(), quadratic_saddle(), u_free(), martingale(), jump_only()]
}
