use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use volterra_games::forward::{solve_fsvie, ControlProcess};
use volterra_games::game::{
    find_nash, necessary_residual, saddle_check, solve_system, sufficient_check, GameScenario, NashCandidate,
};
use volterra_games::io::{ensemble_table, residual_table, trace_table, write_csv, write_json, Metadata, Table};
use volterra_games::noise::PathEnsemble;
use volterra_games::scenarios::{run_scenario_5_1, run_scenario_5_2, s51, s52, toys, builtin_names, OracleResult};

use crate::config::{Format, Model, Settings};
use crate::error::CliError;

const ZERO_SUM: [&str; 2] = ["quadratic-saddle", "scenario-5-1"];

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(s: &Settings, stem: &str, meta: &Metadata, table: &Table) -> Result<PathBuf, CliError> {
    let name = format!("{stem}.{}", s.format.extension());
    let mut w = create(&s.out, &name)?;
    match s.format {
        Format::Csv => write_csv(&mut w, meta, table)?,
        Format::Json => write_json(&mut w, meta, table)?,
    }
    w.flush()?;
    Ok(s.out.join(name))
}

fn emit_json<T: Serialize>(s: &Settings, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut w = create(&s.out, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    w.flush()?;
    Ok(s.out.join(name))
}

fn metadata(s: &Settings, sc: &GameScenario) -> Metadata {
    Metadata::new(&s.scenario, s.seed, sc.horizon, sc.cells, s.paths)
}

/// Constant starting controls: the configured values, else 0 for the toy
/// games and 1 for the consumption models, clipped to each player's box.
fn initial_controls(s: &Settings, sc: &GameScenario) -> Result<[ControlProcess; 2], CliError> {
    let default = match s.model {
        Model::Builtin => 0.0,
        Model::Delayed(_) | Model::Recursive(_) => 1.0,
    };
    let v = s.optimizer.initial.unwrap_or([default; 2]);
    let clip = |i: usize| {
        let (lo, hi) = sc.players[i].bounds;
        v[i].clamp(lo, hi)
    };
    Ok(sc.constant_controls([clip(0), clip(1)])?)
}

fn setup(s: &mut Settings) -> Result<(GameScenario, PathEnsemble), CliError> {
    let sc = s.build()?;
    let ens = sc.ensemble(s.seed, s.paths)?;
    Ok((sc, ens))
}

pub fn simulate(mut s: Settings) -> Result<(), CliError> {
    let (sc, ens) = setup(&mut s)?;
    let c = initial_controls(&s, &sc)?;
    let fwd = solve_fsvie(sc.forward.as_ref(), [&c[0], &c[1]], &ens, sc.x0)?;
    let path = emit(&s, "ensemble", &metadata(&s, &sc), &ensemble_table(&ens, Some(&fwd)))?;
    println!("wrote {} ({} paths x {} nodes)", path.display(), ens.paths(), ens.cells() + 1);
    Ok(())
}

pub fn solve(mut s: Settings) -> Result<(), CliError> {
    let (sc, ens) = setup(&mut s)?;
    let init = initial_controls(&s, &sc)?;
    let cand = find_nash(&sc, &init, &ens, &s.nash_options())?;
    let meta = metadata(&s, &sc);
    let p = emit_json(&s, "candidate.json", &cand)?;
    emit(&s, "trace", &meta, &trace_table(&cand))?;
    emit(&s, "residuals", &meta, &residual_table(&cand, sc.horizon))?;
    println!(
        "{}: {} after {} iterations, residual norms {:.3e} / {:.3e}, J = {:.6} / {:.6}; wrote {}",
        sc.name,
        if cand.converged { "converged" } else { "not converged" },
        cand.iterations,
        cand.residual_norms[0],
        cand.residual_norms[1],
        cand.performance.j[0],
        cand.performance.j[1],
        p.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Tolerance minus the observed error; negative on failure.
    pub margin: f64,
    pub detail: String,
}

impl From<OracleResult> for Check {
    fn from(r: OracleResult) -> Self {
        Check {
            name: format!("oracle:{}", r.name),
            passed: r.passed,
            margin: r.margin,
            detail: format!("max error {:.3e}, tolerance {:.3e}; {}", r.max_error, r.tolerance, r.note),
        }
    }
}

#[derive(Debug, Serialize)]
struct Report {
    metadata: Metadata,
    passed: bool,
    checks: Vec<Check>,
}

pub fn read_candidate(path: &Path) -> Result<NashCandidate, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Candidate(format!("{}: {e}", path.display())))
}

/// Largest relative gap between the candidate's player 1 control and
/// `reference` over cells with `t <= 0.9 T`.
fn control_gap(sc: &GameScenario, cand: &NashCandidate, reference: &ControlProcess) -> f64 {
    let mut gap: f64 = 0.0;
    for j in 0..sc.cells {
        if j as f64 / sc.cells as f64 > 0.9 + 1e-12 {
            break;
        }
        let r = reference.cell_coefficients(j)[0];
        let c = cand.controls[0].cell_coefficients(j)[0];
        gap = gap.max((c / r - 1.0).abs());
    }
    gap
}

fn oracle_checks(s: &Settings, sc: &GameScenario, cand: &NashCandidate) -> Result<Vec<Check>, CliError> {
    let mut out = Vec::new();
    match &s.model {
        Model::Delayed(p) => {
            let oracle = s51::dense_adjoint_oracle(p, p.cells * 64)?;
            let c = s51::oracle_control(p, &oracle)?;
            let gap = control_gap(sc, cand, &c[0]);
            out.push(Check {
                name: "oracle:control".into(),
                passed: gap <= 0.05,
                margin: 0.05 - gap,
                detail: format!("relative gap {gap:.3e} to c = rho / p for t <= 0.9 T"),
            });
            out.extend(run_scenario_5_1(p, s.paths, s.seed)?.into_iter().map(Check::from));
        }
        Model::Recursive(p) => {
            let c = s52::oracle_control(p)?;
            let gap = control_gap(sc, cand, &c[0]);
            out.push(Check {
                name: "oracle:control".into(),
                passed: gap <= 0.05,
                margin: 0.05 - gap,
                detail: format!("relative gap {gap:.3e} to the closed-form consumption for t <= 0.9 T"),
            });
            out.extend(run_scenario_5_2(p, s.paths, s.seed)?.into_iter().map(Check::from));
        }
        Model::Builtin if s.scenario == "decoupled-quadratic" => {
            let mut err: f64 = 0.0;
            for i in 0..2 {
                for j in 0..sc.cells {
                    let t = sc.horizon * j as f64 / sc.cells as f64;
                    err = err.max((cand.controls[i].cell_coefficients(j)[0] - toys::decoupled_target(i, t)).abs());
                }
            }
            out.push(Check {
                name: "oracle:control".into(),
                passed: err <= 1e-3,
                margin: 1e-3 - err,
                detail: format!("max control error {err:.3e} against the analytic optimum"),
            });
        }
        Model::Builtin => {}
    }
    Ok(out)
}

pub fn verify(mut s: Settings, candidate: &Path) -> Result<bool, CliError> {
    let cand = read_candidate(candidate)?;
    let (sc, ens) = setup(&mut s)?;
    if cand.scenario != sc.name {
        return Err(CliError::Candidate(format!(
            "candidate belongs to `{}`, config selects `{}`",
            cand.scenario, sc.name
        )));
    }
    sc.check_controls(&cand.controls).map_err(|e| CliError::Candidate(e.to_string()))?;

    let mut checks = Vec::new();
    let active = [sc.players[0].active, sc.players[1].active];
    let sys = solve_system(&sc, &cand.controls, &ens, active)?;
    for i in (0..2).filter(|&i| active[i]) {
        let r = necessary_residual(&sc, &sys, &ens, &cand.controls, i)?;
        let tol = s.verify.residual_tol;
        checks.push(Check {
            name: format!("residual:player-{}", i + 1),
            passed: r.projected_norm <= tol,
            margin: tol - r.projected_norm,
            detail: format!("projected residual norm {:.3e}, tolerance {tol:.1e}", r.projected_norm),
        });
    }
    let suff = sufficient_check(&sc, &cand.controls, &ens, s.verify.probes, s.seed)?;
    let worst = suff
        .conditional_maximum
        .iter()
        .chain(&suff.arrow)
        .map(|p| p.worst_margin)
        .chain(suff.concavity.iter().map(|c| c.summary.worst_margin))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "sufficient".into(),
        passed: suff.passed(),
        margin: -worst,
        detail: format!("{} violations (conditional maximum, Arrow concavity)", suff.violations()),
    });
    if ZERO_SUM.contains(&sc.name.as_str()) {
        let r = saddle_check(&sc, &cand.controls, &ens, s.verify.probes, s.seed)?;
        checks.push(Check {
            name: "saddle".into(),
            passed: r.passed(),
            margin: -r.player1.worst_margin.max(r.player2.worst_margin),
            detail: format!(
                "{} + {} violations beyond 2 SE, minimax gap {:.2} SE",
                r.player1.violations, r.player2.violations, r.minimax_gap_in_std_errors
            ),
        });
    }
    checks.extend(oracle_checks(&s, &sc, &cand)?);

    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let report = Report {
        metadata: metadata(&s, &sc),
        passed,
        checks,
    };
    let p = emit_json(&s, "report.json", &report)?;
    println!("wrote {}", p.display());
    Ok(passed)
}

pub fn list_scenarios() {
    for name in builtin_names() {
        println!("{name}");
    }
}
