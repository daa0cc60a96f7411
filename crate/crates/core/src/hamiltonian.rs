//! Hamiltonians `H = H0 + H1`, their conditional versions and partials.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{
    driver_central, AdjointDriver, AdjointIterate, BackwardCoefficients, DriverArgs, DriverWrt, TriangularField,
    ZDriver,
};
use crate::calculus::{InformationLevel, Projector, RegressionBasis};
use crate::error::{invalid, Error, Result};
use crate::forward::{central, central_rel, ForwardCoefficients, ForwardSolution, KernelArgs, Wrt, FD_STEP};
use crate::noise::PathEnsemble;
use crate::table::PathTable;

/// Arguments of the profit rate `F(t, u, x, y)`.
#[derive(Debug, Clone, Copy)]
pub struct ProfitArgs {
    pub t: f64,
    pub index: usize,
    pub lambda_b: f64,
    pub lambda_h: f64,
    pub u: [f64; 2],
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfitWrt {
    X,
    Y,
    U(usize),
}

/// Profit rate, terminal reward `phi` and initial risk `psi` of one player.
pub trait Objective: Send + Sync {
    fn profit(&self, a: &ProfitArgs) -> f64;
    fn terminal_reward(&self, x: f64) -> f64;
    fn initial_risk(&self, y: f64) -> f64;

    fn profit_partial(&self, _a: &ProfitArgs, _wrt: ProfitWrt) -> Option<f64> {
        None
    }

    fn terminal_reward_derivative(&self, _x: f64) -> Option<f64> {
        None
    }

    fn initial_risk_derivative(&self, _y: f64) -> Option<f64> {
        None
    }
}

fn scalar_central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = FD_STEP * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn profit_derivative(o: &dyn Objective, a: &ProfitArgs, wrt: ProfitWrt) -> f64 {
    if let Some(v) = o.profit_partial(a, wrt) {
        return v;
    }
    match wrt {
        ProfitWrt::X => scalar_central(|x| o.profit(&ProfitArgs { x, ..*a }), a.x),
        ProfitWrt::Y => scalar_central(|y| o.profit(&ProfitArgs { y, ..*a }), a.y),
        ProfitWrt::U(i) => scalar_central(
            |v| {
                let mut b = *a;
                b.u[i] = v;
                o.profit(&b)
            },
            a.u[i],
        ),
    }
}

pub fn terminal_reward_derivative(o: &dyn Objective, x: f64) -> f64 {
    o.terminal_reward_derivative(x)
        .unwrap_or_else(|| scalar_central(|v| o.terminal_reward(v), x))
}

pub fn initial_risk_derivative(o: &dyn Objective, y: f64) -> f64 {
    o.initial_risk_derivative(y)
        .unwrap_or_else(|| scalar_central(|v| o.initial_risk(v), y))
}

/// Per player solution tables read by the Hamiltonian. Terms whose table is
/// missing raise a contract violation when requested.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlayerTables<'a> {
    /// `paths x (N + 1)`.
    pub y: Option<&'a PathTable>,
    pub theta: Option<&'a TriangularField>,
    /// `paths x (N + 1)`.
    pub z: Option<&'a PathTable>,
    /// `paths x (N + 1)`.
    pub p: Option<&'a PathTable>,
    /// `paths x (N * marks)`.
    pub q: Option<&'a PathTable>,
    pub na: Option<&'a TriangularField>,
}

/// Which groups of terms to evaluate: the profit rate, the forward
/// coefficients paired with `(p, q)`, and the driver paired with `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub profit: bool,
    pub forward: bool,
    pub driver: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        profit: true,
        forward: true,
        driver: true,
    };
    /// Everything `z` depends on.
    pub const Z: Terms = Terms {
        profit: true,
        forward: false,
        driver: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PartialScheme {
    /// Coefficient callbacks, each with its own difference fallback.
    #[default]
    Callback,
    /// Central difference of the whole Hamiltonian.
    CentralDifference { rel: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HWrt {
    X,
    Y,
    Theta(usize),
    U(usize),
}

impl HWrt {
    fn forward(self) -> Option<Wrt> {
        match self {
            HWrt::X => Some(Wrt::X),
            HWrt::U(i) => Some(Wrt::U(i)),
            _ => None,
        }
    }

    fn driver(self) -> DriverWrt {
        match self {
            HWrt::X => DriverWrt::X,
            HWrt::Y => DriverWrt::Y,
            HWrt::Theta(k) => DriverWrt::Theta(k),
            HWrt::U(i) => DriverWrt::U(i),
        }
    }

    fn profit(self) -> Option<ProfitWrt> {
        match self {
            HWrt::X => Some(ProfitWrt::X),
            HWrt::Y => Some(ProfitWrt::Y),
            HWrt::U(i) => Some(ProfitWrt::U(i)),
            HWrt::Theta(_) => None,
        }
    }
}

/// Variable arguments of the Hamiltonian at one path and cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Per mark, Brownian first.
    pub theta: Vec<f64>,
    pub u: [f64; 2],
}

impl Point {
    fn coord(&self, w: HWrt) -> f64 {
        match w {
            HWrt::X => self.x,
            HWrt::Y => self.y,
            HWrt::Theta(k) => self.theta[k],
            HWrt::U(i) => self.u[i],
        }
    }

    fn coord_mut(&mut self, w: HWrt) -> &mut f64 {
        match w {
            HWrt::X => &mut self.x,
            HWrt::Y => &mut self.y,
            HWrt::Theta(k) => &mut self.theta[k],
            HWrt::U(i) => &mut self.u[i],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Value,
    Partial(HWrt),
}

/// Partials at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPartials {
    pub x: f64,
    pub y: f64,
    pub theta: Vec<f64>,
    pub u: [f64; 2],
}

/// Partials on every path and cell.
#[derive(Debug, Clone)]
pub struct PartialSet {
    /// Each `paths x N`.
    pub x: PathTable,
    pub y: PathTable,
    /// `paths x (N * marks)`.
    pub theta: PathTable,
    /// Theta gradient divided by the mark mass, mark 0 unchanged.
    pub theta_density: PathTable,
    pub u: [PathTable; 2],
}

/// Hamiltonian of one player on a solved system.
#[derive(Clone, Copy)]
pub struct Hamiltonian<'a> {
    pub forward: &'a dyn ForwardCoefficients,
    pub backward: &'a dyn BackwardCoefficients,
    pub objective: &'a dyn Objective,
    pub ens: &'a PathEnsemble,
    pub fwd: &'a ForwardSolution,
    pub tables: PlayerTables<'a>,
    pub scheme: PartialScheme,
}

fn missing(what: &str, n: usize) -> Error {
    Error::ContractViolation(format!("Hamiltonian at cell {n} needs the {what} table"))
}

impl<'a> Hamiltonian<'a> {
    /// Point read from the tables: `theta` is `theta(t_n, t_n, .)`.
    pub fn point(&self, path: usize, n: usize) -> Result<Point> {
        let y = self.tables.y.ok_or_else(|| missing("backward state", n))?;
        let marks = self.ens.marks().len();
        let mut theta = vec![0.0; marks];
        if let Some(t) = self.tables.theta {
            t.get_marks(path, n, n, &mut theta);
        }
        Ok(Point {
            x: self.fwd.x.get(path, n),
            y: y.get(path, n),
            theta,
            u: [self.fwd.u[0].get(path, n), self.fwd.u[1].get(path, n)],
        })
    }

    fn kernel(&self, path: usize, i: usize, n: usize, pt: &Point) -> KernelArgs<'a> {
        let g = self.ens.grid();
        KernelArgs {
            t: g.node(i),
            s: g.node(n),
            t_index: i,
            s_index: n,
            lambda_b: self.ens.lambda_b(path, n),
            lambda_h: self.ens.lambda_h(path, n),
            u: pt.u,
            x: pt.x,
            past: self.fwd.x.row(path),
        }
    }

    fn driver_args<'b>(&self, path: usize, i: usize, n: usize, pt: &Point, theta: &'b [f64]) -> DriverArgs<'b> {
        let g = self.ens.grid();
        DriverArgs {
            t: g.node(i),
            s: g.node(n),
            t_index: i,
            s_index: n,
            lambda_b: self.ens.lambda_b(path, n),
            lambda_h: self.ens.lambda_h(path, n),
            u: pt.u,
            x: pt.x,
            y: pt.y,
            theta,
        }
    }

    fn drift(&self, a: &KernelArgs, mode: Mode) -> f64 {
        match mode {
            Mode::Value => self.forward.drift(a),
            Mode::Partial(w) => match w.forward() {
                Some(w) => crate::forward::drift_derivative(self.forward, a, w),
                None => 0.0,
            },
        }
    }

    fn diffusion(&self, a: &KernelArgs, k: usize, mode: Mode) -> f64 {
        let z = self.ens.marks().size(k);
        match mode {
            Mode::Value => self.forward.diffusion(a, k, z),
            Mode::Partial(w) => match w.forward() {
                Some(w) => crate::forward::diffusion_derivative(self.forward, a, k, z, w),
                None => 0.0,
            },
        }
    }

    /// `d/dt` of the drift, or its partial in `mode`.
    fn drift_t(&self, a: &KernelArgs, mode: Mode) -> f64 {
        let f = self.forward;
        let dt = |b: &KernelArgs| f.drift_partial(b, Wrt::T).unwrap_or_else(|| central(|c| f.drift(c), b, Wrt::T));
        match mode {
            Mode::Value => dt(a),
            Mode::Partial(w) => match w.forward() {
                Some(w) => {
                    let rel = if f.drift_partial(a, Wrt::T).is_some() { FD_STEP } else { 1e-4 };
                    central_rel(dt, a, w, rel)
                }
                None => 0.0,
            },
        }
    }

    fn diffusion_t(&self, a: &KernelArgs, k: usize, mode: Mode) -> f64 {
        let f = self.forward;
        let z = self.ens.marks().size(k);
        let dt = |b: &KernelArgs| {
            f.diffusion_partial(b, k, z, Wrt::T)
                .unwrap_or_else(|| central(|c| f.diffusion(c, k, z), b, Wrt::T))
        };
        match mode {
            Mode::Value => dt(a),
            Mode::Partial(w) => match w.forward() {
                Some(w) => {
                    let rel = if f.diffusion_partial(a, k, z, Wrt::T).is_some() { FD_STEP } else { 1e-4 };
                    central_rel(dt, a, w, rel)
                }
                None => 0.0,
            },
        }
    }

    fn driver(&self, a: &DriverArgs, mode: Mode) -> f64 {
        match mode {
            Mode::Value => self.backward.driver(a),
            Mode::Partial(HWrt::Theta(_)) if !self.backward.uses_theta() => 0.0,
            Mode::Partial(w) => crate::backward::driver_derivative(self.backward, a, w.driver()),
        }
    }

    /// Derivative of the driver in `inner`, or the mixed partial in `mode`.
    fn driver_d(&self, a: &DriverArgs, inner: DriverWrt, mode: Mode) -> f64 {
        let b = self.backward;
        let d = |c: &DriverArgs| {
            b.driver_partial(c, inner)
                .unwrap_or_else(|| driver_central(|e| b.driver(e), c, inner, FD_STEP))
        };
        match mode {
            Mode::Value => d(a),
            Mode::Partial(HWrt::Theta(_)) if !b.uses_theta() => 0.0,
            Mode::Partial(w) => {
                let rel = if b.driver_partial(a, inner).is_some() { FD_STEP } else { 1e-4 };
                driver_central(d, a, w.driver(), rel)
            }
        }
    }

    fn profit(&self, path: usize, n: usize, pt: &Point, mode: Mode) -> f64 {
        let a = ProfitArgs {
            t: self.ens.grid().node(n),
            index: n,
            lambda_b: self.ens.lambda_b(path, n),
            lambda_h: self.ens.lambda_h(path, n),
            u: pt.u,
            x: pt.x,
            y: pt.y,
        };
        match mode {
            Mode::Value => self.objective.profit(&a),
            Mode::Partial(w) => match w.profit() {
                Some(w) => profit_derivative(self.objective, &a, w),
                None => 0.0,
            },
        }
    }

    /// `(H0, H1)` or their partials, from one code path.
    fn parts(&self, path: usize, n: usize, pt: &Point, mode: Mode, terms: Terms) -> Result<(f64, f64)> {
        let ens = self.ens;
        let cells = ens.cells();
        let marks = ens.marks();
        let grid = ens.grid();
        if n >= cells {
            return Err(invalid(format!("Hamiltonian cell {n} outside the grid of {cells} cells")));
        }
        let mut h0 = 0.0;
        let mut h1 = 0.0;
        if terms.profit {
            h0 += self.profit(path, n, pt, mode);
        }
        if terms.forward {
            let p = self.tables.p.ok_or_else(|| missing("adjoint p", n))?;
            let q = self.tables.q.ok_or_else(|| missing("adjoint q", n))?;
            let a = self.kernel(path, n, n, pt);
            h0 += self.drift(&a, mode) * p.get(path, n);
            for k in 0..marks.len() {
                let w = if k == 0 {
                    ens.lambda_b(path, n)
                } else {
                    ens.lambda_h(path, n) * marks.mass(k)
                };
                h0 += self.diffusion(&a, k, mode) * q.get(path, n * marks.len() + k) * w;
            }
            if self.forward.time_dependent() {
                for j in n..cells {
                    let a = self.kernel(path, j, n, pt);
                    h1 += self.drift_t(&a, mode) * p.get(path, j) * grid.width(j);
                }
                for j in n + 1..cells {
                    let a = self.kernel(path, j, n, pt);
                    for k in 0..marks.len() {
                        let d = self.diffusion_t(&a, k, mode);
                        if d == 0.0 {
                            continue;
                        }
                        let na = self.tables.na.ok_or_else(|| missing("NA-derivative of p", n))?;
                        h1 += d * na.get(path, n, j, k) * ens.weight(path, j, k);
                    }
                }
            }
        }
        if terms.driver {
            let z = self.tables.z.ok_or_else(|| missing("z", n))?;
            let a = self.driver_args(path, n, n, pt, &pt.theta);
            h0 += self.driver(&a, mode) * z.get(path, n);
            let td = self.backward.time_dependent();
            let th = self.tables.theta.filter(|_| self.backward.uses_theta());
            if td || th.is_some() {
                let mut buf = vec![0.0; marks.len()];
                for j in 0..n {
                    if let Some(t) = self.tables.theta {
                        t.get_marks(path, j, n, &mut buf);
                    }
                    let a = self.driver_args(path, j, n, pt, &buf);
                    let zw = z.get(path, j) * grid.width(j);
                    if td {
                        h1 += self.driver_d(&a, DriverWrt::T, mode) * zw;
                    }
                    if let Some(t) = th {
                        for k in 0..marks.len() {
                            let dth = t.d_first(path, j, n, k, grid);
                            if dth != 0.0 {
                                h1 += self.driver_d(&a, DriverWrt::Theta(k), mode) * dth * zw;
                            }
                        }
                    }
                }
            }
        }
        Ok((h0, h1))
    }

    pub fn eval_h0(&self, path: usize, n: usize, pt: &Point) -> Result<f64> {
        Ok(self.parts(path, n, pt, Mode::Value, Terms::ALL)?.0)
    }

    pub fn eval_h1(&self, path: usize, n: usize, pt: &Point) -> Result<f64> {
        Ok(self.parts(path, n, pt, Mode::Value, Terms::ALL)?.1)
    }

    pub fn eval_h(&self, path: usize, n: usize, pt: &Point) -> Result<f64> {
        self.eval_terms(path, n, pt, Terms::ALL)
    }

    pub fn eval_terms(&self, path: usize, n: usize, pt: &Point, terms: Terms) -> Result<f64> {
        let (a, b) = self.parts(path, n, pt, Mode::Value, terms)?;
        Ok(a + b)
    }

    /// Partial of the selected terms in `wrt` under the configured scheme.
    pub fn partial(&self, path: usize, n: usize, pt: &Point, wrt: HWrt, terms: Terms) -> Result<f64> {
        if let HWrt::Theta(k) = wrt {
            if k >= pt.theta.len() {
                return Err(invalid(format!("mark {k} out of range")));
            }
            if !self.backward.uses_theta() {
                return Ok(0.0);
            }
        }
        match self.scheme {
            PartialScheme::Callback => {
                let (a, b) = self.parts(path, n, pt, Mode::Partial(wrt), terms)?;
                Ok(a + b)
            }
            PartialScheme::CentralDifference { rel } => {
                if !(rel > 0.0) {
                    return Err(invalid("difference step must be positive"));
                }
                let c = pt.coord(wrt);
                let h = rel * c.abs().max(1.0);
                if h == 0.0 || c + h == c || !h.is_finite() {
                    return Err(invalid(format!("difference step {h:e} underflows at {c:e}")));
                }
                let mut up = pt.clone();
                *up.coord_mut(wrt) += h;
                let mut dn = pt.clone();
                *dn.coord_mut(wrt) -= h;
                Ok((self.eval_terms(path, n, &up, terms)? - self.eval_terms(path, n, &dn, terms)?) / (2.0 * h))
            }
        }
    }

    pub fn partials_at(&self, path: usize, n: usize, pt: &Point, terms: Terms) -> Result<PointPartials> {
        let theta = (0..pt.theta.len())
            .map(|k| self.partial(path, n, pt, HWrt::Theta(k), terms))
            .collect::<Result<_>>()?;
        Ok(PointPartials {
            x: self.partial(path, n, pt, HWrt::X, terms)?,
            y: self.partial(path, n, pt, HWrt::Y, terms)?,
            theta,
            u: [
                self.partial(path, n, pt, HWrt::U(0), terms)?,
                self.partial(path, n, pt, HWrt::U(1), terms)?,
            ],
        })
    }

    /// Partials on every path and cell at the points read from the tables.
    pub fn partial_set(&self) -> Result<PartialSet> {
        let paths = self.ens.paths();
        let cells = self.ens.cells();
        let marks = self.ens.marks();
        let m = marks.len();
        let rows: Vec<Vec<PointPartials>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                (0..cells)
                    .map(|n| self.partials_at(p, n, &self.point(p, n)?, Terms::ALL))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut out = PartialSet {
            x: PathTable::zeros(paths, cells),
            y: PathTable::zeros(paths, cells),
            theta: PathTable::zeros(paths, cells * m),
            theta_density: PathTable::zeros(paths, cells * m),
            u: [PathTable::zeros(paths, cells), PathTable::zeros(paths, cells)],
        };
        for (p, row) in rows.iter().enumerate() {
            for (n, d) in row.iter().enumerate() {
                out.x.set(p, n, d.x);
                out.y.set(p, n, d.y);
                out.u[0].set(p, n, d.u[0]);
                out.u[1].set(p, n, d.u[1]);
                for k in 0..m {
                    out.theta.set(p, n * m + k, d.theta[k]);
                    out.theta_density.set(p, n * m + k, density(d.theta[k], k, marks)?);
                }
            }
        }
        Ok(out)
    }

    /// Partials driving `z` on cell `i` for every path; `z` must be filled on
    /// nodes `0..=i`.
    pub fn z_partials(&self, i: usize) -> Result<Vec<ZDriver>> {
        let m = self.ens.marks().len();
        (0..self.ens.paths())
            .into_par_iter()
            .map(|p| {
                let pt = self.point(p, i)?;
                let dtheta0 = self.partial(p, i, &pt, HWrt::Theta(0), Terms::Z)?;
                let grad = (1..m)
                    .map(|k| self.partial(p, i, &pt, HWrt::Theta(k), Terms::Z))
                    .collect::<Result<_>>()?;
                Ok(ZDriver {
                    dy: self.partial(p, i, &pt, HWrt::Y, Terms::Z)?,
                    dtheta0,
                    grad,
                })
            })
            .collect()
    }

    /// `E[H | level at t_n]` per path: `p`, `q` and `z` are replaced by
    /// their projections on the level's features at `t_n`.
    pub fn eval_hf(&self, n: usize, level: &InformationLevel, basis: &RegressionBasis) -> Result<Vec<f64>> {
        level.validate()?;
        let cells = self.ens.cells();
        let m = self.ens.marks().len();
        let proj = Projector::at_level(level, self.ens, n, Some(&self.fwd.x), basis)?;
        let project = |t: &PathTable, cols: std::ops::Range<usize>| -> Result<PathTable> {
            let mut out = t.clone();
            for c in cols {
                out.set_column(c, &proj.apply(&t.column(c))?);
            }
            Ok(out)
        };
        let p = self.tables.p.map(|t| project(t, n..cells + 1)).transpose()?;
        let q = self.tables.q.map(|t| project(t, n * m..(n + 1) * m)).transpose()?;
        let z = self.tables.z.map(|t| project(t, 0..n + 1)).transpose()?;
        let mut h = *self;
        h.tables.p = p.as_ref();
        h.tables.q = q.as_ref();
        h.tables.z = z.as_ref();
        (0..self.ens.paths())
            .into_par_iter()
            .map(|path| h.eval_h(path, n, &h.point(path, n)?))
            .collect()
    }
}

/// Theta gradient as a density against the mark measure.
pub fn density(grad: f64, k: usize, marks: &crate::noise::MarkSet) -> Result<f64> {
    if k == 0 {
        return Ok(grad);
    }
    let nu = marks.mass(k);
    if nu == 0.0 {
        if grad == 0.0 {
            return Ok(0.0);
        }
        return Err(invalid(format!("mark {k} has zero mass but a nonzero theta gradient")));
    }
    Ok(grad / nu)
}

/// Adjoint drift `dH/dx` with `p`, `q` and the NA table taken from the
/// iterate.
pub struct HamiltonianDriver<'a> {
    pub h: Hamiltonian<'a>,
}

impl AdjointDriver for HamiltonianDriver<'_> {
    fn driver(&self, it: &AdjointIterate, path: usize, cell: usize) -> Result<f64> {
        let mut h = self.h;
        h.tables.p = Some(it.p);
        h.tables.q = Some(it.q);
        h.tables.na = it.na;
        let pt = h.point(path, cell)?;
        h.partial(path, cell, &pt, HWrt::X, Terms::ALL)
    }

    fn needs_na(&self) -> bool {
        self.h.forward.time_dependent() && self.h.ens.marks().len() > 0
    }
}
