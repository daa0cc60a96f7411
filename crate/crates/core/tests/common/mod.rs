#![allow(dead_code)]

use volterra_games::forward::ControlProcess;
use volterra_games::noise::*;

pub fn brownian(cells: usize, paths: usize, seed: u64) -> PathEnsemble {
    let g = build_grid(1.0, cells).unwrap();
    PathEnsemble::simulate(
        &TimeChangeModel::deterministic(1.0, 0.0),
        &g,
        &MarkSet::brownian_only(),
        RandomSeed::new(seed),
        paths,
    )
    .unwrap()
}

pub fn jumps(cells: usize, paths: usize, seed: u64) -> PathEnsemble {
    let g = build_grid(1.0, cells).unwrap();
    let marks = MarkSet::from_pairs(&[(0.5, 1.0), (-0.4, 0.5)]).unwrap();
    PathEnsemble::simulate(
        &TimeChangeModel::deterministic(0.0, 1.0),
        &g,
        &marks,
        RandomSeed::new(seed),
        paths,
    )
    .unwrap()
}

pub fn idle(cells: usize) -> [ControlProcess; 2] {
    [
        ControlProcess::constant(0, (0.0, 0.0), cells, 0.0).unwrap(),
        ControlProcess::constant(1, (0.0, 0.0), cells, 0.0).unwrap(),
    ]
}

/// Least-squares slope of `ln e` against `ln n`.
pub fn loglog_slope(n: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
