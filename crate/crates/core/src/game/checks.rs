use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    hamiltonian, path_values, solve_system, AdjointOverride, GameScenario, PlayerSpec, System,
};
use crate::backward::{BackwardCoefficients, BackwardOptions, DriverConvention, TerminalPreset};
use crate::calculus::InformationLevel;
use crate::error::{invalid, Result};
use crate::forward::{ControlProcess, ForwardCoefficients};
use crate::hamiltonian::{Hamiltonian, Objective, PartialScheme, Point, ProfitArgs, ProfitWrt};
use crate::noise::{MarkSet, PathEnsemble, TimeChangeModel};
use crate::table::{mean, std_error};

/// Objective with every term negated.
pub struct Negated(pub Arc<dyn Objective>);

impl Objective for Negated {
    fn profit(&self, a: &ProfitArgs) -> f64 {
        -self.0.profit(a)
    }

    fn terminal_reward(&self, x: f64) -> f64 {
        -self.0.terminal_reward(x)
    }

    fn initial_risk(&self, y: f64) -> f64 {
        -self.0.initial_risk(y)
    }

    fn profit_partial(&self, a: &ProfitArgs, wrt: ProfitWrt) -> Option<f64> {
        self.0.profit_partial(a, wrt).map(|v| -v)
    }

    fn terminal_reward_derivative(&self, x: f64) -> Option<f64> {
        self.0.terminal_reward_derivative(x).map(|v| -v)
    }

    fn initial_risk_derivative(&self, y: f64) -> Option<f64> {
        self.0.initial_risk_derivative(y).map(|v| -v)
    }
}

/// Control settings of one zero-sum player.
#[derive(Debug, Clone)]
pub struct ControlSpec {
    pub level: InformationLevel,
    pub degree: usize,
    pub bounds: (f64, f64),
    pub active: bool,
}

/// A single coefficient set from which both zero-sum players are built.
#[derive(Clone)]
pub struct ZeroSumSpec {
    pub name: String,
    pub horizon: f64,
    pub cells: usize,
    pub marks: MarkSet,
    pub time_change: TimeChangeModel,
    pub forward: Arc<dyn ForwardCoefficients>,
    pub x0: f64,
    pub backward: Arc<dyn BackwardCoefficients>,
    pub objective: Arc<dyn Objective>,
    pub convention: DriverConvention,
    pub terminal: TerminalPreset,
    pub controls: [ControlSpec; 2],
    pub options: BackwardOptions,
    pub scheme: PartialScheme,
    pub adjoint: Option<Arc<dyn AdjointOverride>>,
}

/// Player 1 maximises `J`, player 2 maximises `-J`: both share `g` and `h`,
/// player 2 gets `-F`, `-phi` and `-psi`.
pub fn zero_sum_build(spec: ZeroSumSpec) -> GameScenario {
    let player = |i: usize, objective: Arc<dyn Objective>| {
        let c = &spec.controls[i];
        PlayerSpec {
            backward: spec.backward.clone(),
            objective,
            convention: spec.convention,
            terminal: spec.terminal,
            level: c.level.clone(),
            degree: c.degree,
            bounds: c.bounds,
            active: c.active,
            adjoint: spec.adjoint.clone(),
        }
    };
    GameScenario {
        name: spec.name.clone(),
        horizon: spec.horizon,
        cells: spec.cells,
        marks: spec.marks.clone(),
        time_change: spec.time_change.clone(),
        forward: spec.forward.clone(),
        x0: spec.x0,
        players: [
            player(0, spec.objective.clone()),
            player(1, Arc::new(Negated(spec.objective.clone()))),
        ],
        options: spec.options.clone(),
        scheme: spec.scheme,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub probes: usize,
    pub violations: usize,
    /// Largest violation margin seen; non-positive when nothing was flagged.
    pub worst_margin: f64,
}

impl ProbeSummary {
    fn record(&mut self, margin: f64, tol: f64) {
        if self.probes == 0 || margin > self.worst_margin {
            self.worst_margin = margin;
        }
        self.probes += 1;
        if margin > tol {
            self.violations += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityProbe {
    pub player: usize,
    pub function: String,
    pub summary: ProbeSummary,
}

/// Falsification report for the sufficient conditions; passing it is not a
/// proof of optimality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientReport {
    pub conditional_maximum: [ProbeSummary; 2],
    pub arrow: [ProbeSummary; 2],
    pub concavity: Vec<ConcavityProbe>,
}

impl SufficientReport {
    pub fn violations(&self) -> usize {
        self.conditional_maximum.iter().map(|s| s.violations).sum::<usize>()
            + self.arrow.iter().map(|s| s.violations).sum::<usize>()
            + self.concavity.iter().map(|c| c.summary.violations).sum::<usize>()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

/// Interval random probes are drawn from: the box, or `centre +- 1` where
/// the box is unbounded.
fn probe_range(bounds: (f64, f64), centre: f64, half: f64) -> (f64, f64) {
    let lo = if bounds.0.is_finite() { bounds.0 } else { centre - half };
    let hi = if bounds.1.is_finite() { bounds.1 } else { centre + half };
    (lo, hi.max(lo))
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// `sup_v H` over the player's admissible values: grid search refined by
/// golden sections around the best node.
fn sup_h(h: &Hamiltonian, path: usize, cell: usize, pt: &Point, i: usize, range: (f64, f64)) -> Result<f64> {
    let (lo, hi) = range;
    let eval = |v: f64| -> Result<f64> {
        let mut q = pt.clone();
        q.u[i] = v;
        h.eval_h(path, cell, &q)
    };
    if hi <= lo {
        return eval(lo);
    }
    let m = 40;
    let step = (hi - lo) / m as f64;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..=m {
        let v = lo + step * k as f64;
        let f = eval(v)?;
        if f > best.0 {
            best = (f, v);
        }
    }
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if eval(c)? >= eval(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best.0.max(eval(0.5 * (a + b))?))
}

fn concavity(
    rng: &mut ChaCha8Rng,
    f: &dyn Fn(f64) -> f64,
    range: (f64, f64),
    probes: usize,
) -> ProbeSummary {
    let mut s = ProbeSummary::default();
    for _ in 0..probes {
        let a = uniform(rng, range);
        let b = uniform(rng, range);
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
            continue;
        }
        let margin = 0.5 * (fa + fb) - fm;
        s.record(margin, 1e-9 * (1.0 + fa.abs().max(fb.abs())));
    }
    s
}

fn sample_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-9 * (1.0 + lo.abs()) {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Probe the conditional maximum principle, the arrow condition and the
/// concavity of `h`, `phi` and `psi`.
pub fn sufficient_check(
    sc: &GameScenario,
    controls: &[ControlProcess; 2],
    ens: &PathEnsemble,
    probes: usize,
    seed: u64,
) -> Result<SufficientReport> {
    let active = [sc.players[0].active, sc.players[1].active];
    let sys = solve_system(sc, controls, ens, active)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SufficientReport {
        conditional_maximum: Default::default(),
        arrow: Default::default(),
        concavity: Vec::new(),
    };
    let n = ens.cells();
    for i in 0..2 {
        let sp = &sc.players[i];
        if sp.active {
            let h = hamiltonian(sc, &sys, ens, i);
            report.conditional_maximum[i] = conditional_maximum(&h, &sys, ens, sp, i, probes, &mut rng)?;
            report.arrow[i] = arrow(&h, &sys, ens, sp, i, probes, &mut rng)?;
        }
        let o = sp.objective.clone();
        let b = sp.backward.clone();
        let xr = sample_range((0..ens.paths()).map(|p| sys.fwd.x.get(p, n)));
        let yr = sample_range((0..ens.paths()).map(|p| sys.players[i].bsvie.y.get(p, 0)));
        let fs: [(&str, Box<dyn Fn(f64) -> f64>, (f64, f64)); 3] = [
            ("h", Box::new(move |x| b.terminal(x)), xr),
            ("phi", Box::new(move |x| o.terminal_reward(x)), xr),
            ("psi", Box::new(|y| sp.objective.initial_risk(y)), yr),
        ];
        for (name, f, range) in fs.iter() {
            report.concavity.push(ConcavityProbe {
                player: i,
                function: name.to_string(),
                summary: concavity(&mut rng, f.as_ref(), *range, probes),
            });
        }
    }
    Ok(report)
}

fn conditional_maximum(
    h: &Hamiltonian,
    sys: &System,
    ens: &PathEnsemble,
    sp: &PlayerSpec,
    i: usize,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeSummary> {
    let n = ens.cells();
    let mut s = ProbeSummary::default();
    let base: Vec<Vec<(Point, f64)>> = (0..n)
        .map(|j| {
            (0..ens.paths())
                .map(|p| {
                    let pt = h.point(p, j)?;
                    let v = h.eval_h(p, j, &pt)?;
                    Ok((pt, v))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    for _ in 0..probes {
        for (j, cell) in base.iter().enumerate() {
            let range = probe_range(sp.bounds, sys.fwd.u[i].column_mean(j), 1.0);
            let v = uniform(rng, range);
            let d: Vec<f64> = cell
                .iter()
                .enumerate()
                .map(|(p, (pt, hv))| {
                    let mut q = pt.clone();
                    q.u[i] = v;
                    Ok(h.eval_h(p, j, &q)? - hv)
                })
                .collect::<Result<_>>()?;
            let scale = cell.iter().map(|(_, hv)| hv.abs()).sum::<f64>() / cell.len() as f64;
            s.record(mean(&d) - 2.0 * std_error(&d), 1e-10 * (1.0 + scale));
        }
    }
    Ok(s)
}

fn arrow(
    h: &Hamiltonian,
    sys: &System,
    ens: &PathEnsemble,
    sp: &PlayerSpec,
    i: usize,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeSummary> {
    let n = ens.cells();
    let mut s = ProbeSummary::default();
    for _ in 0..probes {
        let p = rng.random_range(0..ens.paths());
        let j = rng.random_range(0..n);
        let pt = h.point(p, j)?;
        let mut shift = |pt: &Point| -> Point {
            let mut q = pt.clone();
            q.x *= (0.3 * rng.random_range(-1.0..1.0_f64)).exp();
            q.y += 0.3 * (1.0 + pt.y.abs()) * rng.random_range(-1.0..1.0);
            for t in q.theta.iter_mut() {
                *t += 0.3 * (1.0 + t.abs()) * rng.random_range(-1.0..1.0);
            }
            q
        };
        let a = shift(&pt);
        let b = shift(&pt);
        let mid = Point {
            x: 0.5 * (a.x + b.x),
            y: 0.5 * (a.y + b.y),
            theta: a.theta.iter().zip(&b.theta).map(|(u, v)| 0.5 * (u + v)).collect(),
            u: pt.u,
        };
        let range = probe_range(sp.bounds, sys.fwd.u[i].column_mean(j), 5.0);
        let (ha, hb, hm) = (
            sup_h(h, p, j, &a, i, range)?,
            sup_h(h, p, j, &b, i, range)?,
            sup_h(h, p, j, &mid, i, range)?,
        );
        if !(ha.is_finite() && hb.is_finite() && hm.is_finite()) {
            continue;
        }
        s.record(0.5 * (ha + hb) - hm, 1e-7 * (1.0 + ha.abs().max(hb.abs())));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub value: f64,
    pub std_error: f64,
    /// Player 1 deviations: `J(u_1, u_2^) - J(u^) - 2 se`.
    pub player1: ProbeSummary,
    /// Player 2 deviations: `J(u^) - J(u_1^, u_2) - 2 se`.
    pub player2: ProbeSummary,
    pub sup_inf: f64,
    pub inf_sup: f64,
    pub minimax_gap_in_std_errors: f64,
    pub minimax_consistent: bool,
}

impl SaddleReport {
    pub fn passed(&self) -> bool {
        self.player1.violations == 0 && self.player2.violations == 0 && self.minimax_consistent
    }
}

fn deviation(base: &ControlProcess, values: &[f64]) -> Result<ControlProcess> {
    let terms = base.terms();
    let mut coef = vec![0.0; base.cells() * terms];
    for (j, v) in values.iter().enumerate() {
        coef[j * terms] = *v;
    }
    ControlProcess::new(
        base.player,
        base.level.clone(),
        base.degree,
        (base.lower, base.upper),
        base.cells(),
        coef,
    )
}

/// Saddle point probe of a zero-sum candidate on `J = J_1`.
pub fn saddle_check(
    sc: &GameScenario,
    candidate: &[ControlProcess; 2],
    ens: &PathEnsemble,
    probes: usize,
    seed: u64,
) -> Result<SaddleReport> {
    if probes == 0 {
        return Err(invalid("saddle check needs at least one probe"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j_of = |c: &[ControlProcess; 2]| -> Result<Vec<f64>> {
        let sys = solve_system(sc, c, ens, [false, false])?;
        path_values(sc, &sys, ens, 0)
    };
    let base_sys = solve_system(sc, candidate, ens, [false, false])?;
    let base = path_values(sc, &base_sys, ens, 0)?;
    let value = mean(&base);
    let tol = 1e-12 * (1.0 + value.abs());
    let n = ens.cells();
    let mut alts: [Vec<ControlProcess>; 2] = [Vec::new(), Vec::new()];
    for (i, alt) in alts.iter_mut().enumerate() {
        for _ in 0..probes {
            let values: Vec<f64> = (0..n)
                .map(|j| uniform(&mut rng, probe_range(sc.players[i].bounds, base_sys.fwd.u[i].column_mean(j), 1.0)))
                .collect();
            alt.push(deviation(&candidate[i], &values)?);
        }
    }
    let mut player1 = ProbeSummary::default();
    let mut player2 = ProbeSummary::default();
    for (i, alt) in alts.iter().enumerate() {
        for c in alt {
            let mut pair = candidate.clone();
            pair[i] = c.clone();
            let v = j_of(&pair)?;
            let d: Vec<f64> = v.iter().zip(&base).map(|(a, b)| a - b).collect();
            let (m, se) = (mean(&d), std_error(&d));
            if i == 0 {
                player1.record(m - 2.0 * se, tol);
            } else {
                player2.record(-m - 2.0 * se, tol);
            }
        }
    }
    // Minimax over the candidate plus a few probes per player.
    let k = probes.min(4);
    let set1: Vec<ControlProcess> = std::iter::once(candidate[0].clone()).chain(alts[0][..k].iter().cloned()).collect();
    let set2: Vec<ControlProcess> = std::iter::once(candidate[1].clone()).chain(alts[1][..k].iter().cloned()).collect();
    let mut m = vec![vec![(0.0, 0.0); set2.len()]; set1.len()];
    for (a, u1) in set1.iter().enumerate() {
        for (b, u2) in set2.iter().enumerate() {
            let v = j_of(&[u1.clone(), u2.clone()])?;
            m[a][b] = (mean(&v), std_error(&v));
        }
    }
    let sup_inf = m
        .iter()
        .map(|row| *row.iter().min_by(|x, y| x.0.total_cmp(&y.0)).expect("nonempty"))
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .expect("nonempty");
    let inf_sup = (0..set2.len())
        .map(|b| *m.iter().map(|row| &row[b]).max_by(|x, y| x.0.total_cmp(&y.0)).expect("nonempty"))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("nonempty");
    let se = (sup_inf.1.powi(2) + inf_sup.1.powi(2)).sqrt();
    let gap = (inf_sup.0 - sup_inf.0).abs();
    let in_se = if se > 0.0 {
        gap / se
    } else if gap <= tol {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SaddleReport {
        value,
        std_error: std_error(&base),
        player1,
        player2,
        sup_inf: sup_inf.0,
        inf_sup: inf_sup.0,
        minimax_gap_in_std_errors: in_se,
        minimax_consistent: in_se <= 3.0,
    })
}
