use std::sync::Arc;

use volterra_games::calculus::{Feature, Flow, InformationLevel};
use volterra_games::forward::ControlProcess;
use volterra_games::game::*;
use volterra_games::hamiltonian::{HWrt, Terms};
use volterra_games::scenarios::fns::{ForwardFns, ObjectiveFns};
use volterra_games::scenarios::{s51, toys};

fn with_objective(mut sc: GameScenario, o: ObjectiveFns) -> GameScenario {
    sc.players[0].objective = Arc::new(o);
    sc
}

#[test]
fn performance_of_constant_functionals() {
    let sc = with_objective(toys::u_free(), ObjectiveFns::new(|_| 0.0, |_| 0.0, |_| 2.5));
    let ens = sc.ensemble(1, 300).unwrap();
    let c = sc.constant_controls([0.0, 0.0]).unwrap();
    let perf = estimate_performance(&sc, &c, &ens).unwrap();
    assert_eq!(perf.j[0], 2.5);
    assert_eq!(perf.std_error[0], 0.0);

    let sc = with_objective(toys::u_free(), ObjectiveFns::new(|_| 1.0, |_| 0.0, |_| 0.0));
    let perf = estimate_performance(&sc, &c, &ens).unwrap();
    assert!((perf.j[0] - sc.horizon).abs() < 1e-14);
}

/// Noise off: `J_1` is a deterministic left-point sum along the Euler path.
#[test]
fn linear_quadratic_performance_matches_quadrature() {
    let mut sc = toys::decoupled_quadratic();
    sc.forward = Arc::new(ForwardFns::new(|a| 0.1 * a.x + a.u[0] - a.u[1], |_, _, _| 0.0));
    let o = ObjectiveFns::new(|a| -(a.u[0] - 0.5).powi(2) - 0.3 * a.x * a.x, |x| -x * x, |_| 0.0);
    let sc = with_objective(sc, o);
    let ens = sc.ensemble(2, 50).unwrap();
    let u0: Vec<f64> = (0..sc.cells).map(|j| 0.2 + 0.01 * j as f64).collect();
    let c = [
        ControlProcess::deterministic(0, (-2.0, 2.0), u0.clone()).unwrap(),
        ControlProcess::constant(1, (-2.0, 2.0), sc.cells, 0.1).unwrap(),
    ];
    let perf = estimate_performance(&sc, &c, &ens).unwrap();
    let dt = 1.0 / sc.cells as f64;
    let mut xs = vec![sc.x0];
    for i in 1..=sc.cells {
        let x = sc.x0 + (0..i).map(|j| (0.1 * xs[j] + u0[j] - 0.1) * dt).sum::<f64>();
        xs.push(x);
    }
    let mut j = 0.0;
    for n in 0..sc.cells {
        j += (-(u0[n] - 0.5).powi(2) - 0.3 * xs[n] * xs[n]) * dt;
    }
    j -= xs[sc.cells].powi(2);
    assert!((perf.j[0] - j).abs() <= 1e-10, "{} vs {j}", perf.j[0]);
}

#[test]
fn residuals_of_simple_games() {
    let sc = toys::u_free();
    let ens = sc.ensemble(3, 300).unwrap();
    let c = sc.constant_controls([0.0, 0.0]).unwrap();
    let sys = solve_system(&sc, &c, &ens, [true, false]).unwrap();
    let r = necessary_residual(&sc, &sys, &ens, &c, 0).unwrap();
    assert!(r.cell_means.iter().all(|&v| v == 0.0));
    assert_eq!(r.norm, 0.0);

    let sc = toys::decoupled_quadratic();
    let c = sc.constant_controls([0.3, 0.1]).unwrap();
    let sys = solve_system(&sc, &c, &ens, [true, true]).unwrap();
    for i in 0..2 {
        let r = necessary_residual(&sc, &sys, &ens, &c, i).unwrap();
        for (j, m) in r.cell_means.iter().enumerate() {
            let u = if i == 0 { 0.3 } else { 0.1 };
            let exact = -2.0 * (u - toys::decoupled_target(i, ens.grid().node(j)));
            assert!((m - exact).abs() < 1e-12, "player {i} cell {j}");
        }
    }
}

#[test]
fn perturbation_derivative_basics() {
    let sc = toys::decoupled_quadratic();
    let ens = sc.ensemble(4, 500).unwrap();
    let g = ens.grid();
    let at_optimum = [
        ControlProcess::deterministic(0, (-2.0, 2.0), (0..32).map(|j| toys::decoupled_target(0, g.node(j))).collect()).unwrap(),
        ControlProcess::deterministic(1, (-2.0, 2.0), (0..32).map(|j| toys::decoupled_target(1, g.node(j))).collect()).unwrap(),
    ];
    let spec = PerturbationSpec {
        player: 0,
        window: 4..12,
        alpha: vec![1.0],
        bound: 5.0,
        eps: None,
    };
    let r = perturbation_derivative(&sc, &at_optimum, &spec, &ens).unwrap();
    assert!(r.derivative.abs() <= 1e-6, "{}", r.derivative);
    let zero = PerturbationSpec { alpha: vec![0.0], ..spec.clone() };
    assert_eq!(perturbation_derivative(&sc, &at_optimum, &zero, &ens).unwrap().derivative, 0.0);

    let sc = toys::martingale();
    let ens = sc.ensemble(5, 2000).unwrap();
    let c = sc.constant_controls([0.2, 0.0]).unwrap();
    let r = perturbation_derivative(&sc, &c, &spec, &ens).unwrap();
    assert!((r.derivative - r.prediction).abs() <= 0.05 * r.prediction.abs());
    assert!((r.derivative - 0.8 * 8.0 / 32.0).abs() < 1e-8);
}

#[test]
fn nash_search_on_decoupled_quadratic() {
    let sc = toys::decoupled_quadratic();
    let ens = sc.ensemble(6, 500).unwrap();
    let init = sc.constant_controls([0.0, 0.0]).unwrap();
    let cand = find_nash(&sc, &init, &ens, &NashOptions::default()).unwrap();
    assert!(cand.converged);
    assert!(cand.iterations <= 100);
    for i in 0..2 {
        for j in 0..sc.cells {
            let err = (cand.controls[i].cell_coefficients(j)[0] - toys::decoupled_target(i, ens.grid().node(j))).abs();
            assert!(err <= 1e-3);
        }
    }
    let last = cand.trace.last().unwrap();
    assert!(last.norms[0].max(last.norms[1]) <= 1e-6);
    let json = serde_json::to_string(&cand).unwrap();
    let back: NashCandidate = serde_json::from_str(&json).unwrap();
    assert_eq!(back.controls[0].coefficients(), cand.controls[0].coefficients());
}

#[test]
fn secant_steps_also_converge() {
    let sc = toys::decoupled_quadratic();
    let ens = sc.ensemble(7, 300).unwrap();
    let init = sc.constant_controls([1.0, -1.0]).unwrap();
    let opts = NashOptions {
        step: StepRule::Secant { initial: 0.1, max_step: 2.0 },
        ..Default::default()
    };
    let cand = find_nash(&sc, &init, &ens, &opts).unwrap();
    assert!(cand.converged);
    assert!(cand.iterations < 20, "{}", cand.iterations);
}

#[test]
fn nash_search_leaves_u_free_game_alone() {
    let sc = toys::u_free();
    let ens = sc.ensemble(8, 300).unwrap();
    let init = sc.constant_controls([0.0, 0.0]).unwrap();
    let cand = find_nash(&sc, &init, &ens, &NashOptions::default()).unwrap();
    assert!(cand.converged);
    assert_eq!(cand.iterations, 0);
    assert_eq!(cand.controls[0].coefficients(), init[0].coefficients());
}

fn assert_negated(a: &volterra_games::table::PathTable, b: &volterra_games::table::PathTable) {
    assert_eq!(a.cols(), b.cols());
    for (ra, rb) in a.rows().zip(b.rows()) {
        for (x, y) in ra.iter().zip(rb) {
            assert_eq!(*x, -*y);
        }
    }
}

#[test]
fn zero_sum_identities_are_exact() {
    let sc = toys::quadratic_saddle();
    let ens = sc.ensemble(9, 400).unwrap();
    let c = sc.constant_controls([0.7, 0.1]).unwrap();
    let sys = solve_system(&sc, &c, &ens, [true, true]).unwrap();
    let perf = performance(&sc, &sys, &ens).unwrap();
    assert_eq!(perf.j[0] + perf.j[1], 0.0);
    let (a, b) = (&sys.players[0], &sys.players[1]);
    assert_negated(&a.z.as_ref().unwrap().z, &b.z.as_ref().unwrap().z);
    assert_negated(&a.adjoint.as_ref().unwrap().p, &b.adjoint.as_ref().unwrap().p);
    assert_negated(&a.adjoint.as_ref().unwrap().q, &b.adjoint.as_ref().unwrap().q);
    let h1 = hamiltonian(&sc, &sys, &ens, 0);
    let h2 = hamiltonian(&sc, &sys, &ens, 1);
    for p in [0, 100, 399] {
        for n in 0..sc.cells {
            let pt = h1.point(p, n).unwrap();
            assert_eq!(h1.eval_h(p, n, &pt).unwrap(), -h2.eval_h(p, n, &pt).unwrap());
            for w in [HWrt::U(0), HWrt::U(1), HWrt::X] {
                assert_eq!(
                    h1.partial(p, n, &pt, w, Terms::ALL).unwrap(),
                    -h2.partial(p, n, &pt, w, Terms::ALL).unwrap()
                );
            }
        }
    }

    let sc = s51::build(&s51::Params { cells: 16, ..Default::default() }).unwrap();
    let ens = sc.ensemble(9, 300).unwrap();
    let c = sc.constant_controls([0.7, 0.0]).unwrap();
    let perf = estimate_performance(&sc, &c, &ens).unwrap();
    assert_eq!(perf.j[0] + perf.j[1], 0.0);
}

#[test]
fn analytic_saddle_passes_the_saddle_check() {
    let sc = toys::quadratic_saddle();
    let ens = sc.ensemble(10, 1000).unwrap();
    let (_, _, c1, c2) = toys::SADDLE;
    let cand = sc.constant_controls([c1, c2]).unwrap();
    let r = saddle_check(&sc, &cand, &ens, 6, 1).unwrap();
    assert!(r.passed(), "{r:?}");
    assert_eq!(r.player1.violations + r.player2.violations, 0);
    assert!(r.minimax_consistent);

    let off = sc.constant_controls([c1 + 1.5, c2]).unwrap();
    let r = saddle_check(&sc, &off, &ens, 6, 1).unwrap();
    assert!(r.player1.violations > 0);
}

#[test]
fn saddle_check_of_u_free_game_has_zero_margins() {
    let sc = toys::u_free();
    let ens = sc.ensemble(11, 300).unwrap();
    let c = sc.constant_controls([0.0, 0.0]).unwrap();
    let r = saddle_check(&sc, &c, &ens, 3, 2).unwrap();
    assert!(r.passed());
    assert_eq!(r.player1.worst_margin, 0.0);
    assert_eq!(r.player2.worst_margin, 0.0);
}

#[test]
fn sufficient_check_accepts_concave_and_flags_convex() {
    let sc = toys::martingale();
    let ens = sc.ensemble(12, 1000).unwrap();
    let c = sc.constant_controls([1.0, 0.0]).unwrap();
    let r = sufficient_check(&sc, &c, &ens, 6, 3).unwrap();
    assert!(r.passed(), "{r:?}");

    let mut convex = sc.clone();
    let o = ObjectiveFns::new(|a| -0.5 * a.u[0] * a.u[0], |x| x * x, |y| y);
    convex.players[0].objective = Arc::new(o);
    let r = sufficient_check(&convex, &c, &ens, 6, 3).unwrap();
    let phi = r.concavity.iter().find(|p| p.player == 0 && p.function == "phi").unwrap();
    assert!(phi.summary.violations > 0);
    assert!(!r.passed());
}

#[test]
fn first_order_consumption_passes_the_conditional_maximum_probe() {
    let params = s51::Params { cells: 32, ..Default::default() };
    let sc = s51::build(&params).unwrap();
    let ens = sc.ensemble(13, 1000).unwrap();
    let p = s51::dense_adjoint_oracle(&params, 32 * 64).unwrap();
    let c = s51::oracle_control(&params, &p).unwrap();
    let r = sufficient_check(&sc, &c, &ens, 6, 4).unwrap();
    assert_eq!(r.conditional_maximum[0].violations, 0, "{r:?}");
}

#[test]
fn more_information_does_not_hurt_a_best_response() {
    let sc = toys::martingale();
    let ens = sc.ensemble(14, 2000).unwrap();
    let init = sc.constant_controls([0.0, 0.0]).unwrap();
    let base = find_nash(&sc, &init, &ens, &NashOptions::default()).unwrap();
    let mut rich = sc.clone();
    rich.players[0].level = InformationLevel::new(Flow::F, vec![Feature::BrownianLevel]).unwrap();
    rich.players[0].degree = 1;
    let init = rich.constant_controls([0.0, 0.0]).unwrap();
    let better = find_nash(&rich, &init, &ens, &NashOptions::default()).unwrap();
    let se = base.performance.std_error[0].hypot(better.performance.std_error[0]);
    assert!(
        better.performance.j[0] >= base.performance.j[0] - 2.0 * se - 1e-12 * base.performance.j[0].abs(),
        "{:?} {:?} {} {}",
        base.performance,
        better.performance,
        better.converged,
        better.iterations
    );
}
