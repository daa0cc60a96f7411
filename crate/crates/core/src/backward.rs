//! Backward Volterra equation, adjoint equation and the `z` process.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{
    CellBlock, CellRepresentation, Design, Feature, Flow, InformationLevel, Projector, RegressionBasis, RowSource,
};
use crate::error::{invalid, Error, Result};
use crate::forward::{ForwardSolution, FD_STEP};
use crate::noise::PathEnsemble;
use crate::table::PathTable;

/// Sign convention of the backward driver.
///
/// `AsPrinted` reads `Y(t) = h - int g ds + int theta dmu`; `Standard` reads
/// `Y(t) = h + int g ds - int theta dmu`, the form of a recursive utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverConvention {
    #[default]
    AsPrinted,
    Standard,
}

impl DriverConvention {
    pub fn sign(self) -> f64 {
        match self {
            DriverConvention::AsPrinted => -1.0,
            DriverConvention::Standard => 1.0,
        }
    }
}

/// Arguments of the driver `g(t, s, lambda, u, x, y, theta)`.
#[derive(Debug, Clone, Copy)]
pub struct DriverArgs<'a> {
    pub t: f64,
    pub s: f64,
    pub t_index: usize,
    pub s_index: usize,
    pub lambda_b: f64,
    pub lambda_h: f64,
    pub u: [f64; 2],
    pub x: f64,
    pub y: f64,
    /// Per mark, Brownian first.
    pub theta: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverWrt {
    /// First time argument.
    T,
    X,
    Y,
    Theta(usize),
    U(usize),
}

pub trait BackwardCoefficients: Send + Sync {
    fn driver(&self, a: &DriverArgs) -> f64;
    /// Terminal map `h`.
    fn terminal(&self, x: f64) -> f64;

    fn driver_partial(&self, _a: &DriverArgs, _wrt: DriverWrt) -> Option<f64> {
        None
    }

    fn terminal_derivative(&self, _x: f64) -> Option<f64> {
        None
    }

    /// Whether the driver reads `theta`. When false the theta table is not
    /// estimated unless requested.
    fn uses_theta(&self) -> bool {
        false
    }

    /// Whether the driver depends on its first time argument.
    fn time_dependent(&self) -> bool {
        true
    }
}

fn at_driver(a: &DriverArgs, wrt: DriverWrt) -> f64 {
    match wrt {
        DriverWrt::T => a.t,
        DriverWrt::X => a.x,
        DriverWrt::Y => a.y,
        DriverWrt::Theta(k) => a.theta[k],
        DriverWrt::U(i) => a.u[i],
    }
}

/// Central difference of `f` in `wrt` with step `rel * max(1, |a|)`.
pub(crate) fn driver_central<F: Fn(&DriverArgs) -> f64>(f: F, a: &DriverArgs, wrt: DriverWrt, rel: f64) -> f64 {
    let h = rel * at_driver(a, wrt).abs().max(1.0);
    let mut th;
    let (mut up, mut dn) = (*a, *a);
    match wrt {
        DriverWrt::T => {
            up.t += h;
            dn.t -= h;
        }
        DriverWrt::X => {
            up.x += h;
            dn.x -= h;
        }
        DriverWrt::Y => {
            up.y += h;
            dn.y -= h;
        }
        DriverWrt::U(i) => {
            up.u[i] += h;
            dn.u[i] -= h;
        }
        DriverWrt::Theta(k) => {
            th = a.theta.to_vec();
            th[k] += h;
            let fu = f(&DriverArgs { theta: &th, ..*a });
            th[k] -= 2.0 * h;
            let fd = f(&DriverArgs { theta: &th, ..*a });
            return (fu - fd) / (2.0 * h);
        }
    }
    (f(&up) - f(&dn)) / (2.0 * h)
}

/// Driver derivative, falling back to a central difference.
pub fn driver_derivative(c: &dyn BackwardCoefficients, a: &DriverArgs, wrt: DriverWrt) -> f64 {
    c.driver_partial(a, wrt)
        .unwrap_or_else(|| driver_central(|b| c.driver(b), a, wrt, FD_STEP))
}

pub fn terminal_derivative(c: &dyn BackwardCoefficients, x: f64) -> f64 {
    c.terminal_derivative(x).unwrap_or_else(|| {
        let h = FD_STEP * x.abs().max(1.0);
        (c.terminal(x + h) - c.terminal(x - h)) / (2.0 * h)
    })
}

/// Regression features used by the backward solvers: running noise levels,
/// the elapsed clocks when they are random, and the state.
pub fn default_solver_level(ens: &PathEnsemble, flow: Flow) -> InformationLevel {
    let mut features = vec![Feature::BrownianLevel];
    if ens.marks().jump_count() > 0 {
        features.push(Feature::CompoundJumpLevel);
    }
    let n = ens.cells();
    let random_clock = (1..ens.paths()).any(|p| {
        ens.clock_b(p, n) != ens.clock_b(0, n) || ens.clock_h(p, n) != ens.clock_h(0, n)
    });
    if random_clock {
        features.extend([Feature::ElapsedClockB, Feature::ElapsedClockH]);
    }
    features.push(Feature::State);
    if flow == Flow::G && random_clock {
        features.extend([Feature::TotalClockB, Feature::TotalClockH]);
    }
    InformationLevel { flow, features }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackwardOptions {
    pub basis: RegressionBasis,
    pub flow: Flow,
    /// Regression features; defaults to [`default_solver_level`].
    pub level: Option<InformationLevel>,
    /// Estimate theta even when the driver does not read it.
    pub theta: bool,
    pub max_iterations: usize,
    pub tol: f64,
    pub adjoint_max_iterations: usize,
    pub adjoint_tol: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default(),
            flow: Flow::F,
            level: None,
            theta: false,
            max_iterations: 50,
            tol: 1e-8,
            adjoint_max_iterations: 50,
            adjoint_tol: 1e-6,
        }
    }
}

/// Node projectors and cell representations on one forward solution,
/// shared by every backward solve on it.
pub struct Regressors {
    pub level: InformationLevel,
    projectors: Vec<Projector>,
    reps: std::sync::OnceLock<Result<Vec<CellRepresentation>>>,
    basis: RegressionBasis,
    marks: usize,
}

impl Regressors {
    pub fn new(ens: &PathEnsemble, fwd: &ForwardSolution, opts: &BackwardOptions) -> Result<Self> {
        let level = opts
            .level
            .clone()
            .unwrap_or_else(|| default_solver_level(ens, opts.flow));
        level.validate()?;
        let projectors = (0..=ens.cells())
            .into_par_iter()
            .map(|i| Projector::at_level(&level, ens, i, Some(&fwd.x), &opts.basis))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            level,
            projectors,
            reps: std::sync::OnceLock::new(),
            basis: opts.basis,
            marks: ens.marks().len(),
        })
    }

    pub fn projector(&self, node: usize) -> &Projector {
        &self.projectors[node]
    }

    pub fn design(&self, cell: usize) -> &Design {
        self.projectors[cell].design()
    }

    fn block<'a>(&'a self, ens: &'a PathEnsemble, cell: usize) -> CellBlock<'a> {
        CellBlock {
            design: self.design(cell),
            ens,
            cell,
            marks: self.marks,
        }
    }

    fn reps(&self, ens: &PathEnsemble) -> Result<&[CellRepresentation]> {
        let r = self.reps.get_or_init(|| {
            (0..ens.cells())
                .into_par_iter()
                .map(|j| CellRepresentation::new(&self.block(ens, j), &self.basis))
                .collect()
        });
        match r {
            Ok(v) => Ok(v),
            Err(e) => Err(e.clone()),
        }
    }

    /// Stacked representation coefficients of `target` on cell `j`.
    pub(crate) fn represent(&self, ens: &PathEnsemble, j: usize, target: &[f64]) -> Result<Vec<f64>> {
        let reps = self.reps(ens)?;
        Ok(reps[j].coefficients(&self.block(ens, j), target))
    }

    /// Per path integrands on cell `j` from stacked coefficients, `paths x marks`.
    pub(crate) fn integrands(&self, j: usize, coef: &[f64]) -> Vec<Vec<f64>> {
        let d = self.design(j);
        let m = d.cols();
        (0..d.rows())
            .into_par_iter()
            .map_init(
                || vec![0.0; m],
                |psi, p| {
                    d.row(p, psi);
                    (0..self.marks)
                        .map(|k| psi.iter().zip(&coef[k * m..(k + 1) * m]).map(|(a, b)| a * b).sum())
                        .collect()
                },
            )
            .collect()
    }
}

/// Two-time field `f(a, b, k)` on pairs `a <= b`, stored as representation
/// coefficients on the designs of one of the two cells.
#[derive(Clone)]
pub struct TriangularField {
    cells: usize,
    marks: usize,
    designs: Arc<Vec<Design>>,
    /// The design of cell `b` is used when true, of cell `a` otherwise.
    on_second: bool,
    coefs: Vec<Option<Vec<f64>>>,
}

impl std::fmt::Debug for TriangularField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriangularField")
            .field("cells", &self.cells)
            .field("marks", &self.marks)
            .finish()
    }
}

impl TriangularField {
    fn new(cells: usize, marks: usize, designs: Arc<Vec<Design>>, on_second: bool) -> Self {
        Self {
            cells,
            marks,
            designs,
            on_second,
            coefs: vec![None; cells * (cells + 1) / 2],
        }
    }

    #[inline]
    fn slot(&self, a: usize, b: usize) -> usize {
        a * self.cells - a * a.saturating_sub(1) / 2 + (b - a)
    }

    fn set(&mut self, a: usize, b: usize, coef: Vec<f64>) {
        let s = self.slot(a, b);
        self.coefs[s] = Some(coef);
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn marks(&self) -> usize {
        self.marks
    }

    /// Value on path `p`; zero where nothing was estimated.
    pub fn get(&self, p: usize, a: usize, b: usize, k: usize) -> f64 {
        debug_assert!(a <= b && b < self.cells);
        let Some(c) = &self.coefs[self.slot(a, b)] else {
            return 0.0;
        };
        let d = &self.designs[if self.on_second { b } else { a }];
        let m = d.cols();
        let mut psi = vec![0.0; m];
        d.row(p, &mut psi);
        psi.iter().zip(&c[k * m..(k + 1) * m]).map(|(x, y)| x * y).sum()
    }

    /// All marks at once.
    pub fn get_marks(&self, p: usize, a: usize, b: usize, out: &mut [f64]) {
        let Some(c) = &self.coefs[self.slot(a, b)] else {
            out.fill(0.0);
            return;
        };
        let d = &self.designs[if self.on_second { b } else { a }];
        let m = d.cols();
        let mut psi = vec![0.0; m];
        d.row(p, &mut psi);
        for (k, o) in out.iter_mut().enumerate() {
            *o = psi.iter().zip(&c[k * m..(k + 1) * m]).map(|(x, y)| x * y).sum();
        }
    }

    /// Forward difference in the first time argument, `a < b`.
    pub fn d_first(&self, p: usize, a: usize, b: usize, k: usize, grid: &crate::noise::TimeGrid) -> f64 {
        debug_assert!(a < b);
        (self.get(p, a + 1, b, k) - self.get(p, a, b, k)) / grid.width(a)
    }
}

#[derive(Debug, Clone)]
pub struct BsvieSolution {
    /// `paths x (N + 1)`.
    pub y: PathTable,
    /// `theta(t_i, t_j, k)` for `j >= i`, when estimated.
    pub theta: Option<TriangularField>,
    /// Slice Picard iterations, per slice.
    pub iterations: Vec<usize>,
}

impl BsvieSolution {
    /// `theta(t_n, t_n, .)` on path `p`; zeros when theta was not estimated.
    pub fn theta_diagonal(&self, p: usize, n: usize, out: &mut [f64]) {
        match &self.theta {
            Some(t) => t.get_marks(p, n, n, out),
            None => out.fill(0.0),
        }
    }
}

fn driver_args<'a>(
    ens: &PathEnsemble,
    fwd: &ForwardSolution,
    y: &PathTable,
    p: usize,
    i: usize,
    j: usize,
    theta: &'a [f64],
) -> DriverArgs<'a> {
    let g = ens.grid();
    DriverArgs {
        t: g.node(i),
        s: g.node(j),
        t_index: i,
        s_index: j,
        lambda_b: ens.lambda_b(p, j),
        lambda_h: ens.lambda_h(p, j),
        u: [fwd.u[0].get(p, j), fwd.u[1].get(p, j)],
        x: fwd.x.get(p, j),
        y: y.get(p, j),
        theta,
    }
}

fn finite_or(cell: usize, v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup {
            cell,
            detail: format!("{what} is not finite"),
        })
    }
}

/// Backward induction over time slices.
pub fn solve_bsvie(
    coeffs: &dyn BackwardCoefficients,
    fwd: &ForwardSolution,
    ens: &PathEnsemble,
    reg: &Regressors,
    convention: DriverConvention,
    opts: &BackwardOptions,
) -> Result<BsvieSolution> {
    let n = ens.cells();
    let paths = ens.paths();
    let marks = ens.marks().len();
    let sg = convention.sign();
    let g = ens.grid();
    let mut y = PathTable::zeros(paths, n + 1);
    let terminal: Vec<f64> = (0..paths).map(|p| coeffs.terminal(fwd.x.get(p, n))).collect();
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(invalid("terminal map returned a non-finite value"));
    }
    y.set_column(n, &terminal);
    let want_theta = coeffs.uses_theta() || opts.theta;
    let mut theta = want_theta.then(|| {
        let designs: Vec<Design> = (0..n).map(|j| reg.design(j).clone()).collect();
        TriangularField::new(n, marks, Arc::new(designs), true)
    });
    let mut iterations = vec![0; n];

    for i in (0..n).rev() {
        // Target of slice i with the current theta row.
        let target = |y: &PathTable, th: Option<&TriangularField>| -> Vec<f64> {
            (0..paths)
                .into_par_iter()
                .map_init(
                    || vec![0.0; marks],
                    |buf, p| {
                        let mut acc = 0.0;
                        for j in i + 1..n {
                            match th {
                                Some(t) => t.get_marks(p, i, j, buf),
                                None => buf.fill(0.0),
                            }
                            acc += coeffs.driver(&driver_args(ens, fwd, y, p, i, j, buf)) * g.width(j);
                        }
                        terminal[p] + sg * acc
                    },
                )
                .collect()
        };
        let mut xi = target(&y, theta.as_ref());
        finite_or(i, &xi, "backward slice target")?;
        let mut a = reg.projector(i).apply(&xi)?;
        if let Some(th) = theta.as_mut() {
            let mut prev: Option<Vec<Vec<f64>>> = None;
            let mut last_defect = f64::INFINITY;
            let mut rises = 0;
            let mut it = 0;
            loop {
                it += 1;
                let centred: Vec<f64> = xi.iter().zip(&a).map(|(x, m)| x - m).collect();
                let rows: Vec<Vec<f64>> = (i..n)
                    .map(|j| {
                        reg.represent(ens, j, &centred)
                            .map(|c| c.into_iter().map(|v| sg * v).collect())
                    })
                    .collect::<Result<_>>()?;
                for (j, c) in (i..n).zip(rows.iter()) {
                    th.set(i, j, c.clone());
                }
                if !coeffs.uses_theta() {
                    break;
                }
                let defect = match &prev {
                    None => f64::INFINITY,
                    Some(pr) => {
                        let mut num: f64 = 0.0;
                        let mut den: f64 = 0.0;
                        for (u, v) in rows.iter().zip(pr) {
                            for (x, z) in u.iter().zip(v) {
                                num = num.max((x - z).abs());
                                den = den.max(z.abs());
                            }
                        }
                        num / den.max(1e-300)
                    }
                };
                if defect <= opts.tol || (defect == 0.0) {
                    break;
                }
                if defect > last_defect {
                    rises += 1;
                    if rises >= 3 {
                        return Err(Error::NoConvergence {
                            iterations: it,
                            defect,
                            detail: format!("theta Picard on slice {i} is not contracting"),
                        });
                    }
                } else {
                    rises = 0;
                }
                if it >= opts.max_iterations {
                    return Err(Error::NoConvergence {
                        iterations: it,
                        defect,
                        detail: format!("theta Picard on slice {i}"),
                    });
                }
                last_defect = if defect.is_finite() { defect } else { last_defect };
                prev = Some(rows);
                xi = target(&y, Some(th));
                finite_or(i, &xi, "backward slice target")?;
                a = reg.projector(i).apply(&xi)?;
            }
            iterations[i] = it;
        }
        // Implicit diagonal term, a scalar fixed point per path.
        let th_ref = theta.as_ref();
        let yi: Vec<f64> = (0..paths)
            .into_par_iter()
            .map_init(
                || vec![0.0; marks],
                |buf, p| -> Result<f64> {
                    match th_ref {
                        Some(t) => t.get_marks(p, i, i, buf),
                        None => buf.fill(0.0),
                    }
                    let mut v = a[p];
                    for _ in 0..opts.max_iterations {
                        let mut args = driver_args(ens, fwd, &y, p, i, i, buf);
                        args.y = v;
                        let next = a[p] + sg * coeffs.driver(&args) * g.width(i);
                        if !next.is_finite() {
                            return Err(Error::NumericalBlowup {
                                cell: i,
                                detail: format!("backward state is not finite on path {p}"),
                            });
                        }
                        if (next - v).abs() <= 1e-13 * next.abs().max(1.0) {
                            return Ok(next);
                        }
                        v = next;
                    }
                    Err(Error::NoConvergence {
                        iterations: opts.max_iterations,
                        defect: f64::NAN,
                        detail: format!("implicit driver step on slice {i}, path {p}"),
                    })
                },
            )
            .collect::<Result<_>>()?;
        y.set_column(i, &yi);
    }
    Ok(BsvieSolution { y, theta, iterations })
}

/// Terminal condition of the adjoint equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalPreset {
    /// `-phi'(X(T)) + h(X(T)) z(T)`.
    #[default]
    AsPrinted,
    /// `phi'(X(T)) + s h'(X(T)) z(T)` with `s` the driver sign.
    GradientForm,
}

impl TerminalPreset {
    pub fn value(self, phi_prime: f64, h: f64, h_prime: f64, z_t: f64, convention: DriverConvention) -> f64 {
        match self {
            TerminalPreset::AsPrinted => -phi_prime + h * z_t,
            TerminalPreset::GradientForm => phi_prime + convention.sign() * h_prime * z_t,
        }
    }
}

/// Current iterate of the adjoint Picard scheme.
pub struct AdjointIterate<'a> {
    /// `paths x (N + 1)`.
    pub p: &'a PathTable,
    /// `paths x (N * marks)`.
    pub q: &'a PathTable,
    /// `D_{t_i, k} p(t_j)` for `j > i`.
    pub na: Option<&'a TriangularField>,
}

/// Drift of the adjoint equation `dp = -D dt + q dmu`.
pub trait AdjointDriver: Sync {
    fn driver(&self, it: &AdjointIterate, path: usize, cell: usize) -> Result<f64>;

    /// Whether the driver reads NA-derivatives of `p`.
    fn needs_na(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub p: PathTable,
    pub q: PathTable,
    pub na: Option<TriangularField>,
    pub iterations: usize,
    pub defect: f64,
    /// Defect after each outer iteration.
    pub defects: Vec<f64>,
}

impl AdjointSolution {
    #[inline]
    pub fn q_at(&self, p: usize, j: usize, k: usize, marks: usize) -> f64 {
        self.q.get(p, j * marks + k)
    }
}

/// Backward sweeps of the regression recursion `p_i = E_i[p_{i+1} + D_i dt]`.
///
/// The driver at cell `i` reads `q` on cell `i`, `p` on nodes after `i` and
/// the NA table `D_{t_i, k} p(t_j)`, all from the current sweep; `p(t_i)`
/// itself is read as `E_i[p(t_{i+1})]`. Sweeps repeat until two successive
/// ones agree, so drivers that read anything else still converge to a
/// fixed point.
pub fn solve_adjoint_p(
    driver: &dyn AdjointDriver,
    terminal: &[f64],
    ens: &PathEnsemble,
    reg: &Regressors,
    opts: &BackwardOptions,
) -> Result<AdjointSolution> {
    let n = ens.cells();
    let paths = ens.paths();
    let marks = ens.marks().len();
    let g = ens.grid();
    if terminal.len() != paths {
        return Err(invalid("terminal condition length differs from path count"));
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(invalid("adjoint terminal condition is not finite"));
    }
    let designs: Arc<Vec<Design>> = Arc::new((0..n).map(|j| reg.design(j).clone()).collect());
    let mut p = PathTable::zeros(paths, n + 1);
    for i in 0..=n {
        p.set_column(i, terminal);
    }
    let mut q = PathTable::zeros(paths, n * marks);
    let mut na = driver
        .needs_na()
        .then(|| TriangularField::new(n, marks, designs.clone(), false));
    let mut defects = Vec::new();
    let mut rises = 0;
    for it in 1..=opts.adjoint_max_iterations {
        let previous = p.clone();
        for i in (0..n).rev() {
            let next = p.column(i + 1);
            let m = crate::table::mean(&next);
            let centred: Vec<f64> = next.iter().map(|v| v - m).collect();
            if centred.iter().any(|v| *v != 0.0) {
                let coef = reg.represent(ens, i, &centred)?;
                let ints = reg.integrands(i, &coef);
                for (path, row) in ints.iter().enumerate() {
                    for k in 0..marks {
                        q.set(path, i * marks + k, row[k]);
                    }
                }
            } else {
                for path in 0..paths {
                    for k in 0..marks {
                        q.set(path, i * marks + k, 0.0);
                    }
                }
            }
            if let Some(t) = na.as_mut() {
                for j in i + 1..n {
                    let col = p.column(j);
                    let m = crate::table::mean(&col);
                    let centred: Vec<f64> = col.iter().map(|v| v - m).collect();
                    t.set(i, j, reg.represent(ens, i, &centred)?);
                }
            }
            let guess = reg.projector(i).apply(&next)?;
            p.set_column(i, &guess);
            let iterate = AdjointIterate {
                p: &p,
                q: &q,
                na: na.as_ref(),
            };
            let target: Vec<f64> = (0..paths)
                .into_par_iter()
                .map(|path| Ok(next[path] + driver.driver(&iterate, path, i)? * g.width(i)))
                .collect::<Result<_>>()?;
            finite_or(i, &target, "adjoint target")?;
            let pi = reg.projector(i).apply(&target)?;
            p.set_column(i, &pi);
        }
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for (a, b) in p.rows().zip(previous.rows()) {
            for (x, y) in a.iter().zip(b) {
                num = num.max((x - y).abs());
                den = den.max(y.abs());
            }
        }
        let defect = num / den.max(1.0);
        if let Some(&last) = defects.last() {
            if defect > last {
                rises += 1;
            } else {
                rises = 0;
            }
        }
        defects.push(defect);
        if defect <= opts.adjoint_tol {
            return Ok(AdjointSolution {
                p,
                q,
                na,
                iterations: it,
                defect,
                defects,
            });
        }
        if rises >= 3 {
            return Err(Error::NoConvergence {
                iterations: it,
                defect,
                detail: "adjoint sweeps are not contracting".into(),
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.adjoint_max_iterations,
        defect: *defects.last().unwrap_or(&f64::NAN),
        detail: "adjoint sweeps".into(),
    })
}

/// Partials of the Hamiltonian driving `z` on one path and cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ZDriver {
    pub dy: f64,
    pub dtheta0: f64,
    /// Gradients in `theta_k` for marks `k >= 1`, before the density.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ZProcess {
    /// `paths x (N + 1)`.
    pub z: PathTable,
    /// Paths on which `z` turns negative.
    pub negative_paths: usize,
}

/// Forward Euler for `z`. `partials(z, i)` returns the Hamiltonian partials
/// on cell `i` for every path, given `z` filled on nodes `0..=i`.
pub fn solve_z(
    partials: &dyn Fn(&PathTable, usize) -> Result<Vec<ZDriver>>,
    z0: &[f64],
    ens: &PathEnsemble,
    convention: DriverConvention,
) -> Result<ZProcess> {
    let n = ens.cells();
    let paths = ens.paths();
    let marks = ens.marks();
    let g = ens.grid();
    let sg = convention.sign();
    if z0.len() != paths {
        return Err(invalid("initial z length differs from path count"));
    }
    let mut z = PathTable::zeros(paths, n + 1);
    z.set_column(0, z0);
    for i in 0..n {
        let d = partials(&z, i)?;
        let mut next = vec![0.0; paths];
        for (path, dp) in d.iter().enumerate() {
            let mut v = z.get(path, i) + sg * (dp.dy * g.width(i) + dp.dtheta0 * ens.increment(path, i, 0));
            for (k1, gr) in dp.grad.iter().enumerate() {
                let k = k1 + 1;
                if *gr == 0.0 {
                    continue;
                }
                let nu = marks.mass(k);
                if nu == 0.0 {
                    return Err(invalid(format!("mark {k} has zero mass but a nonzero theta gradient")));
                }
                v += sg * gr / nu * ens.increment(path, i, k);
            }
            next[path] = v;
        }
        finite_or(i + 1, &next, "z")?;
        z.set_column(i + 1, &next);
    }
    let negative_paths = (0..paths).filter(|&p| z.row(p).iter().any(|v| *v < 0.0)).count();
    Ok(ZProcess { z, negative_paths })
}
