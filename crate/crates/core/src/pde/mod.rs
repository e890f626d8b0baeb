//! Conservative implicit finite-volume solver for radial solutions of
//! `ρ(r) u_t = r^{1-N} (r^{N-1} (u^m)')'`, with `u^m := |u|^{m-1} u`.
//!
//! Cells are geometric in `r`. Each cell carries its weighted measure
//! `∫ ρ r^{N-1} dr` (the `ω_{N-1}` sphere factor is left out everywhere in
//! this module), and neighbouring cells exchange the two-point flux
//! `T (φ_{i+1} - φ_i)` with `T = r_{i+1/2}^{N-1} / (r_{i+1} - r_i)`.
//! Time stepping is backward Euler; the nonlinear system is solved by a
//! damped Newton iteration on a tridiagonal Jacobian.

mod output;
mod weight;

use std::fmt;
use std::sync::Arc;

use log::debug;
use thiserror::Error;

pub use output::{fmt_f64, write_trajectory, Manifest};
pub use weight::{LogTable, WeightKind, WeightSpec};

use crate::geometry::sphere_area;
use crate::params::ProblemParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("bad grid range: {0}")]
    BadRange(String),
    #[error("Newton iteration diverged at t = {t} after {bisections} step bisections")]
    NewtonDiverged { t: f64, bisections: u32 },
    #[error("bad energy window: {0}")]
    BadWindow(String),
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Derivative floor for `m |u|^{m-1}` at degenerate points.
pub const DERIVATIVE_FLOOR: f64 = 1e-30;
/// Newton stops once every cell residual is below this fraction of the
/// terms it balances and the last update is small, or the update reaches roundoff.
pub const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 60;
/// Fraction of `‖u‖_∞` below which a cell's own size stops tightening its residual test.
const RESIDUAL_FLOOR: f64 = 1e-4;
const MAX_BISECTIONS: u32 = 16;
const LINE_SEARCH_HALVINGS: usize = 40;

#[derive(Debug, Clone)]
pub struct RadialGrid {
    dim: u32,
    edges: Vec<f64>,
    centers: Vec<f64>,
    volumes: Vec<f64>,
    measures: Vec<f64>,
    trans: Vec<f64>,
    trans_inner: f64,
    trans_outer: f64,
    weight: WeightSpec,
}

/// Geometric grid of `cells` cells on `[r_min, r_max]`.
pub fn build_grid(
    r_min: f64,
    r_max: f64,
    cells: usize,
    weight: WeightSpec,
    n: u32,
) -> Result<RadialGrid, PdeError> {
    if !(r_min > 0.0 && r_max > r_min && r_max.is_finite()) {
        return Err(PdeError::BadRange(format!("need 0 < r_min < r_max, got [{r_min}, {r_max}]")));
    }
    if cells == 0 {
        return Err(PdeError::BadRange("need at least one cell".into()));
    }
    if n < 1 {
        return Err(PdeError::BadRange("dimension must be positive".into()));
    }
    let q = (r_max / r_min).ln() / cells as f64;
    let mut edges: Vec<f64> = (0..=cells).map(|i| r_min * (q * i as f64).exp()).collect();
    edges[0] = r_min;
    edges[cells] = r_max;
    let centers: Vec<f64> = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    let nf = n as f64;
    let volumes = edges.windows(2).map(|w| (w[1].powf(nf) - w[0].powf(nf)) / nf).collect();
    let measures: Vec<f64> = edges.windows(2).map(|w| weight.cell_measure(n, w[0], w[1])).collect();
    if measures.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(PdeError::BadRange("weighted cell measure not positive and finite".into()));
    }
    let area = |r: f64| r.powf(nf - 1.0);
    let trans = (0..cells - 1)
        .map(|i| area(edges[i + 1]) / (centers[i + 1] - centers[i]))
        .collect();
    let trans_inner = area(edges[0]) / (centers[0] - edges[0]);
    let trans_outer = area(edges[cells]) / (edges[cells] - centers[cells - 1]);
    Ok(RadialGrid {
        dim: n,
        edges,
        centers,
        volumes,
        measures,
        trans,
        trans_inner,
        trans_outer,
        weight,
    })
}

impl RadialGrid {
    pub fn dim(&self) -> u32 {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.centers.len()
    }
    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }
    /// `∫ r^{N-1} dr` per cell.
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }
    /// `∫ ρ r^{N-1} dr` per cell.
    pub fn measures(&self) -> &[f64] {
        &self.measures
    }
    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }
    pub fn r_min(&self) -> f64 {
        self.edges[0]
    }
    pub fn r_max(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }
    /// `ω_{N-1}`, the factor turning radial integrals into integrals over `R^N`.
    pub fn sphere_factor(&self) -> f64 {
        sphere_area(self.dim)
    }
    /// Index of the cell containing `r`, if any.
    pub fn locate(&self, r: f64) -> Option<usize> {
        if !(r >= self.r_min() && r <= self.r_max()) {
            return None;
        }
        let i = self.edges.partition_point(|e| *e <= r);
        Some(i.saturating_sub(1).min(self.len() - 1))
    }
}

/// Cell values of `u` at time `t`.
#[derive(Debug, Clone)]
pub struct RadialField {
    pub grid: Arc<RadialGrid>,
    pub u: Vec<f64>,
    pub t: f64,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, u: Vec<f64>, t: f64) -> Result<Self, PdeError> {
        if u.len() != grid.len() {
            return Err(PdeError::BadInput(format!("{} values for {} cells", u.len(), grid.len())));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(PdeError::BadInput(format!("non-finite value in cell {i}")));
        }
        Ok(RadialField { grid, u, t })
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64, t: f64) -> Result<Self, PdeError> {
        let u = grid.centers().iter().map(|&r| f(r)).collect();
        Self::new(grid, u, t)
    }

    /// `Σ M_i u_i`, the radial weighted integral.
    pub fn mass(&self) -> f64 {
        self.u.iter().zip(self.grid.measures()).map(|(u, m)| u * m).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `Σ M_i |u_i - v_i|`.
    pub fn weighted_l1_distance(&self, other: &RadialField) -> f64 {
        self.u
            .iter()
            .zip(&other.u)
            .zip(self.grid.measures())
            .map(|((a, b), m)| (a - b).abs() * m)
            .sum()
    }

    pub fn negated(&self) -> RadialField {
        RadialField {
            grid: self.grid.clone(),
            u: self.u.iter().map(|v| -v).collect(),
            t: self.t,
        }
    }
}

/// Time-dependent boundary value.
#[derive(Clone)]
pub struct BoundaryFn(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl BoundaryFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        BoundaryFn(Arc::new(f))
    }
    pub fn constant(v: f64) -> Self {
        Self::new(move |_| v)
    }
    pub fn at(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

impl fmt::Debug for BoundaryFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BoundaryFn(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inner {
    NoFlux,
    Dirichlet(f64),
}

#[derive(Debug, Clone)]
pub enum Outer {
    NoFlux,
    Dirichlet(BoundaryFn),
}

#[derive(Debug, Clone)]
pub struct Boundary {
    pub inner: Inner,
    pub outer: Outer,
}

impl Boundary {
    pub fn no_flux() -> Self {
        Boundary {
            inner: Inner::NoFlux,
            outer: Outer::NoFlux,
        }
    }

    pub fn outer_dirichlet(f: BoundaryFn) -> Self {
        Boundary {
            inner: Inner::NoFlux,
            outer: Outer::Dirichlet(f),
        }
    }
}

#[inline]
pub fn signed_pow(u: f64, m: f64) -> f64 {
    u.abs().powf(m) * u.signum()
}

/// Outcome of one accepted backward-Euler step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub bisections: u32,
    /// `Σ M_i (u_i' - u_i) - dt (F_out - F_in)` summed over substeps.
    pub mass_defect: f64,
    /// Net inflow `dt (F_out - F_in)` through both boundaries.
    pub boundary_inflow: f64,
}

/// Reusable workspace for backward-Euler steps with exponent `m`.
pub struct Stepper {
    grid: Arc<RadialGrid>,
    m: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    res: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    delta: Vec<f64>,
    trial: Vec<f64>,
    scratch: Vec<f64>,
}

struct Bc {
    inner: Option<f64>,
    outer: Option<f64>,
}

impl Stepper {
    pub fn new(grid: Arc<RadialGrid>, m: f64) -> Self {
        let n = grid.len();
        Stepper {
            grid,
            m,
            phi: vec![0.0; n],
            dphi: vec![0.0; n],
            res: vec![0.0; n],
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
            delta: vec![0.0; n],
            trial: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// Advances `u` from `t` to `t + dt`, halving the step on Newton failure.
    pub fn step(&mut self, u: &mut [f64], t: f64, dt: f64, boundary: &Boundary) -> Result<StepStats, PdeError> {
        let mut stats = StepStats::default();
        self.step_rec(u, t, dt, boundary, 0, &mut stats)?;
        Ok(stats)
    }

    fn step_rec(
        &mut self,
        u: &mut [f64],
        t: f64,
        dt: f64,
        boundary: &Boundary,
        depth: u32,
        stats: &mut StepStats,
    ) -> Result<(), PdeError> {
        let bc = Bc {
            inner: match boundary.inner {
                Inner::NoFlux => None,
                Inner::Dirichlet(v) => Some(signed_pow(v, self.m)),
            },
            outer: match &boundary.outer {
                Outer::NoFlux => None,
                Outer::Dirichlet(f) => Some(signed_pow(f.at(t + dt), self.m)),
            },
        };
        let bc_scale = match (&boundary.inner, &boundary.outer) {
            (Inner::Dirichlet(v), _) => v.abs(),
            _ => 0.0,
        }
        .max(match &boundary.outer {
            Outer::Dirichlet(f) => f.at(t + dt).abs(),
            Outer::NoFlux => 0.0,
        });
        let old = u.to_vec();
        match self.newton(u, &old, dt, &bc, bc_scale) {
            Some(iters) => {
                stats.newton_iterations += iters;
                let (defect, inflow) = self.ledger(u, &old, dt, &bc);
                stats.mass_defect += defect;
                stats.boundary_inflow += inflow;
                Ok(())
            }
            None => {
                u.copy_from_slice(&old);
                if depth >= MAX_BISECTIONS {
                    return Err(PdeError::NewtonDiverged { t, bisections: depth });
                }
                debug!("Newton failed at t={t:e}, dt={dt:e}; bisecting");
                stats.bisections += 1;
                let h = 0.5 * dt;
                self.step_rec(u, t, h, boundary, depth + 1, stats)?;
                self.step_rec(u, t + h, h, boundary, depth + 1, stats)
            }
        }
    }

    fn boundary_fluxes(&self, phi: &[f64], bc: &Bc) -> (f64, f64) {
        let g = &self.grid;
        let n = phi.len();
        let f_in = bc.inner.map_or(0.0, |v| g.trans_inner * (phi[0] - v));
        let f_out = bc.outer.map_or(0.0, |v| g.trans_outer * (v - phi[n - 1]));
        (f_in, f_out)
    }

    /// Residual `M (u - u_old)/dt - (F_{i+1/2} - F_{i-1/2})` into `res`
    /// (or `scratch` for trial points). Returns the largest ratio of `|R_i|`
    /// to the magnitude of the terms it is built from, so the roundoff floor
    /// of flux differences in small cells does not block convergence, and
    /// the line-search merit `Σ (dt R_i / M_i)^2`.
    fn residual(&mut self, u: &[f64], old: &[f64], dt: f64, bc: &Bc, scale: f64, use_trial: bool) -> (f64, f64) {
        let g = self.grid.clone();
        let m = self.m;
        let n = u.len();
        for i in 0..n {
            self.phi[i] = signed_pow(u[i], m);
        }
        let (f_in, f_out) = self.boundary_fluxes(&self.phi, bc);
        let out = if use_trial { &mut self.scratch } else { &mut self.res };
        let meas = g.measures();
        let mut left = f_in;
        let mut worst: f64 = 0.0;
        let mut merit = 0.0;
        for i in 0..n {
            let right = if i + 1 < n { g.trans[i] * (self.phi[i + 1] - self.phi[i]) } else { f_out };
            let r = meas[i] * (u[i] - old[i]) / dt - (right - left);
            out[i] = r;
            let size = meas[i] * (u[i].abs() + old[i].abs() + RESIDUAL_FLOOR * scale) / dt
                + right.abs()
                + left.abs();
            worst = worst.max(r.abs() / size);
            merit += (r * dt / meas[i]).powi(2);
            left = right;
        }
        (worst, merit)
    }

    fn jacobian(&mut self, u: &[f64], dt: f64, bc: &Bc) {
        let g = &self.grid;
        let m = self.m;
        let n = u.len();
        for i in 0..n {
            self.dphi[i] = (m * u[i].abs().powf(m - 1.0)).max(DERIVATIVE_FLOOR);
        }
        let meas = g.measures();
        for i in 0..n {
            let tl = if i > 0 {
                g.trans[i - 1]
            } else if bc.inner.is_some() {
                g.trans_inner
            } else {
                0.0
            };
            let tr = if i + 1 < n {
                g.trans[i]
            } else if bc.outer.is_some() {
                g.trans_outer
            } else {
                0.0
            };
            self.diag[i] = meas[i] / dt + (tl + tr) * self.dphi[i];
            self.lower[i] = if i > 0 { -g.trans[i - 1] * self.dphi[i - 1] } else { 0.0 };
            self.upper[i] = if i + 1 < n { -g.trans[i] * self.dphi[i + 1] } else { 0.0 };
        }
    }

    /// Newton with an Armijo line search on the merit; returns the iteration
    /// count, or `None` on failure.
    fn newton(&mut self, u: &mut [f64], old: &[f64], dt: f64, bc: &Bc, bc_scale: f64) -> Option<usize> {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let scale = sup(old).max(bc_scale).max(f64::MIN_POSITIVE);
        let (mut res, mut merit) = self.residual(u, old, dt, bc, scale, false);
        let mut last_update = f64::INFINITY;
        for iter in 0..NEWTON_MAX_ITER {
            if !res.is_finite() {
                return None;
            }
            let roundoff = 8.0 * f64::EPSILON * scale.max(sup(u));
            if (res <= NEWTON_TOL && last_update <= 1e-2 * NEWTON_TOL * scale) || last_update <= roundoff {
                return Some(iter);
            }
            self.jacobian(u, dt, bc);
            for i in 0..u.len() {
                self.delta[i] = -self.res[i];
            }
            thomas(&self.lower, &self.diag, &self.upper, &mut self.delta, &mut self.trial);
            let mut step = 1.0;
            let mut accepted = false;
            let mut trial = std::mem::take(&mut self.trial);
            for _ in 0..LINE_SEARCH_HALVINGS {
                for i in 0..u.len() {
                    trial[i] = u[i] + step * self.delta[i];
                }
                let (r, q) = self.residual(&trial, old, dt, bc, scale, true);
                // at the roundoff floor the merit no longer decreases; accept
                let tiny = step * sup(&self.delta) <= 1e-10 * scale;
                if r.is_finite() && (q <= (1.0 - 1e-4 * step) * merit || r <= NEWTON_TOL || tiny) {
                    res = r;
                    merit = q;
                    std::mem::swap(&mut self.res, &mut self.scratch);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                self.trial = trial;
                return None;
            }
            last_update = step * sup(&self.delta);
            u.copy_from_slice(&trial);
            self.trial = trial;
        }
        None
    }

    /// Mass defect and boundary inflow of a completed step.
    fn ledger(&mut self, u: &[f64], old: &[f64], dt: f64, bc: &Bc) -> (f64, f64) {
        for i in 0..u.len() {
            self.phi[i] = signed_pow(u[i], self.m);
        }
        let (f_in, f_out) = self.boundary_fluxes(&self.phi, bc);
        let meas = self.grid.measures();
        let change: f64 = (0..u.len()).map(|i| meas[i] * (u[i] - old[i])).sum();
        let inflow = dt * (f_out - f_in);
        (change - inflow, inflow)
    }
}

/// Solves a tridiagonal system in place (`rhs` becomes the solution).
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], work: &mut [f64]) {
    let n = diag.len();
    work[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let d = diag[i] - lower[i] * work[i - 1];
        work[i] = upper[i] / d;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= work[i] * rhs[i + 1];
    }
}

/// One backward-Euler step of size `dt`.
pub fn step_implicit(field: &RadialField, m: f64, dt: f64, boundary: &Boundary) -> Result<RadialField, PdeError> {
    if !(dt > 0.0) {
        return Err(PdeError::BadInput(format!("dt must be positive, got {dt}")));
    }
    let mut stepper = Stepper::new(field.grid.clone(), m);
    let mut u = field.u.clone();
    stepper.step(&mut u, field.t, dt, boundary)?;
    RadialField::new(field.grid.clone(), u, field.t + dt)
}

/// Adaptive step-size control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub dt_init: f64,
    pub dt_max: f64,
    /// Target for `max |Δu| / ‖u‖_∞` per step.
    pub target_change: f64,
    /// Upper bound on `dt / t`.
    pub max_dt_over_t: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_init: 1e-4,
            dt_max: f64::INFINITY,
            target_change: 0.01,
            max_dt_over_t: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStepping {
    /// Uniform steps, shortened to land on output times.
    Fixed(f64),
    Adaptive(StepControl),
}

impl Default for TimeStepping {
    fn default() -> Self {
        TimeStepping::Adaptive(StepControl::default())
    }
}

/// Passed to the observer after every accepted step.
pub struct StepEvent<'a> {
    pub t_old: f64,
    pub t_new: f64,
    pub u_old: &'a [f64],
    pub u_new: &'a [f64],
    pub stats: StepStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub t: f64,
    pub mass: f64,
    /// Cumulative boundary inflow since the datum.
    pub inflow: f64,
    pub sup: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SolverDiagnostics {
    pub steps: usize,
    pub newton_iterations: usize,
    pub bisections: u32,
    /// Entries at the datum time and at every output time.
    pub ledger: Vec<LedgerEntry>,
    /// Largest per-step `|mass defect| / max(|mass|, Σ M_i |u_i|)`.
    pub max_mass_defect: f64,
    /// Largest per-step relative increase of `‖u‖_∞` (zero when it never grows).
    pub max_sup_increase: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: RadialField,
    pub fields: Vec<RadialField>,
    pub diagnostics: SolverDiagnostics,
}

impl Trajectory {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.initial.grid
    }

    pub fn times(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.t).collect()
    }

    /// Output field at time `t` (exact match up to 1e-12 relative).
    pub fn at(&self, t: f64) -> Option<&RadialField> {
        self.fields.iter().find(|f| (f.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Datum followed by all outputs.
    pub fn all_fields(&self) -> impl Iterator<Item = &RadialField> {
        std::iter::once(&self.initial).chain(self.fields.iter())
    }
}

pub fn solve(
    datum: &RadialField,
    m: f64,
    boundary: &Boundary,
    output_times: &[f64],
    stepping: TimeStepping,
) -> Result<Trajectory, PdeError> {
    solve_observed(datum, m, boundary, output_times, stepping, |_| {})
}

/// Like [`solve`], calling `observer` after every accepted step.
pub fn solve_observed(
    datum: &RadialField,
    m: f64,
    boundary: &Boundary,
    output_times: &[f64],
    stepping: TimeStepping,
    mut observer: impl FnMut(&StepEvent),
) -> Result<Trajectory, PdeError> {
    if output_times.is_empty() {
        return Err(PdeError::BadInput("no output times".into()));
    }
    if !(output_times[0] > datum.t) || output_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PdeError::BadInput("output times must increase and start after the datum".into()));
    }
    let grid = datum.grid.clone();
    let mut stepper = Stepper::new(grid.clone(), m);
    let mut u = datum.u.clone();
    let mut old = u.clone();
    let mut t = datum.t;
    let mut diag = SolverDiagnostics::default();
    let mut inflow = 0.0;
    let mass_scale = |u: &[f64]| -> f64 {
        let abs: f64 = u.iter().zip(grid.measures()).map(|(a, m)| a.abs() * m).sum();
        abs.max(f64::MIN_POSITIVE)
    };
    let sup = |u: &[f64]| u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    diag.ledger.push(LedgerEntry {
        t,
        mass: datum.mass(),
        inflow: 0.0,
        sup: sup(&u),
    });
    let mut fields = Vec::with_capacity(output_times.len());
    let mut dt = match stepping {
        TimeStepping::Fixed(h) => h,
        TimeStepping::Adaptive(c) => c.dt_init,
    };
    if !(dt > 0.0) {
        return Err(PdeError::BadInput("time step must be positive".into()));
    }
    for &t_out in output_times {
        let mut n_fixed = 0usize;
        let mut k = 0usize;
        let mut h_fixed = 0.0;
        if let TimeStepping::Fixed(h) = stepping {
            n_fixed = ((t_out - t) / h).round().max(1.0) as usize;
            h_fixed = (t_out - t) / n_fixed as f64;
        }
        while t < t_out {
            let mut landing = false;
            let h = match stepping {
                TimeStepping::Fixed(_) => h_fixed,
                TimeStepping::Adaptive(c) => {
                    let cap = (c.max_dt_over_t * t.abs()).max(c.dt_init).min(c.dt_max);
                    let h = dt.min(cap);
                    // avoid leaving a sliver before the output time
                    if t + 1.5 * h >= t_out {
                        landing = t_out - t < h;
                        t_out - t
                    } else {
                        h
                    }
                }
            };
            old.copy_from_slice(&u);
            let stats = stepper.step(&mut u, t, h, boundary)?;
            let t_new = match stepping {
                TimeStepping::Fixed(_) => {
                    k += 1;
                    if k == n_fixed { t_out } else { t + h }
                }
                TimeStepping::Adaptive(_) => if t + h >= t_out { t_out } else { t + h },
            };
            diag.steps += 1;
            diag.newton_iterations += stats.newton_iterations;
            diag.bisections += stats.bisections;
            inflow += stats.boundary_inflow;
            let defect = stats.mass_defect.abs() / mass_scale(&u).max(mass_scale(&old));
            diag.max_mass_defect = diag.max_mass_defect.max(defect);
            let (s_old, s_new) = (sup(&old), sup(&u));
            if s_old > 0.0 {
                diag.max_sup_increase = diag.max_sup_increase.max((s_new - s_old) / s_old);
            }
            observer(&StepEvent {
                t_old: t,
                t_new,
                u_old: &old,
                u_new: &u,
                stats,
            });
            if let TimeStepping::Adaptive(c) = stepping {
                let change = u.iter().zip(&old).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                let rel = change / s_old.max(s_new).max(f64::MIN_POSITIVE);
                let factor = if rel > 0.0 { (c.target_change / rel).clamp(0.5, 1.5) } else { 1.5 };
                // a step shortened to hit an output time says little about dt
                let base = if landing { dt } else { h };
                dt = (base * factor).min(c.dt_max);
                if stats.bisections > 0 {
                    dt = dt.min(h * 0.5);
                }
            }
            t = t_new;
        }
        let field = RadialField::new(grid.clone(), u.clone(), t_out)?;
        diag.ledger.push(LedgerEntry {
            t: t_out,
            mass: field.mass(),
            inflow,
            sup: field.sup_norm(),
        });
        fields.push(field);
    }
    Ok(Trajectory {
        initial: datum.clone(),
        fields,
        diagnostics: diag,
    })
}

/// A radial annulus `[r0, r1]` over the time interval `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub r0: f64,
    pub r1: f64,
    pub t0: f64,
    pub t1: f64,
}

impl Window {
    fn contains(&self, other: &Window) -> bool {
        self.r0 <= other.r0 && other.r1 <= self.r1 && self.t0 <= other.t0 && other.t1 <= self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// Discrete `∫∫_{Q'} |∇u^m|^2 dx dt`.
    pub lhs: f64,
    /// `‖u‖_{L∞(Q)}^{m+1} + ‖u‖_{L∞(Q)}^{2m}`.
    pub sup_term: f64,
    /// Smallest `C` with `lhs ≤ C sup_term` (zero when both vanish).
    pub constant: f64,
}

impl EnergyReport {
    pub fn rhs(&self) -> f64 {
        self.constant * self.sup_term
    }
}

/// Energy of `u^m` on `inner` against the sup of `u` on `outer`.
/// Time integrals use the trapezoid rule over the stored fields.
pub fn discrete_energy(traj: &Trajectory, m: f64, inner: Window, outer: Window) -> Result<EnergyReport, PdeError> {
    let g = traj.grid();
    if !(inner.r0 < inner.r1 && inner.t0 < inner.t1) || !outer.contains(&inner) {
        return Err(PdeError::BadWindow("need Q' ⊂ Q with positive extent".into()));
    }
    if !(outer.r0 > g.r_min() && outer.r1 <= g.r_max()) {
        return Err(PdeError::BadWindow("Q must stay inside the grid and away from r = 0".into()));
    }
    let fields: Vec<&RadialField> = traj.all_fields().collect();
    let (t_first, t_last) = (fields[0].t, fields[fields.len() - 1].t);
    if !(outer.t0 >= t_first && outer.t1 <= t_last) {
        return Err(PdeError::BadWindow("Q must lie within the trajectory time range".into()));
    }
    let omega = g.sphere_factor();
    let c = g.centers();
    let e = g.edges();
    let energy_at = |f: &RadialField| -> f64 {
        let phi: Vec<f64> = f.u.iter().map(|v| signed_pow(*v, m)).collect();
        (0..phi.len() - 1)
            .filter(|&i| e[i + 1] >= inner.r0 && e[i + 1] <= inner.r1)
            .map(|i| g.trans[i] * (phi[i + 1] - phi[i]).powi(2))
            .sum::<f64>()
            * omega
    };
    let in_time: Vec<&RadialField> = fields
        .iter()
        .copied()
        .filter(|f| f.t >= inner.t0 && f.t <= inner.t1)
        .collect();
    if in_time.len() < 2 {
        return Err(PdeError::BadWindow("fewer than two stored times inside Q'".into()));
    }
    let mut lhs = 0.0;
    for w in in_time.windows(2) {
        lhs += 0.5 * (w[1].t - w[0].t) * (energy_at(w[0]) + energy_at(w[1]));
    }
    let sup = fields
        .iter()
        .filter(|f| f.t >= outer.t0 && f.t <= outer.t1)
        .flat_map(|f| f.u.iter().zip(c).filter(|(_, r)| **r >= outer.r0 && **r <= outer.r1))
        .fold(0.0f64, |a, (v, _)| a.max(v.abs()));
    let sup_term = sup.powf(m + 1.0) + sup.powf(2.0 * m);
    if !lhs.is_finite() {
        return Err(PdeError::BadWindow("energy is not finite".into()));
    }
    let constant = if sup_term > 0.0 { lhs / sup_term } else { 0.0 };
    Ok(EnergyReport {
        lhs,
        sup_term,
        constant,
    })
}

/// The constant `k2` making `t^-λ (k1 - k2 t^{-θλ} r^{2-γ})_+^{1/(m-1)}`
/// an exact solution of `c r^-γ u_t = Δ(u^m)`.
pub fn barenblatt_k2(p: &ProblemParams) -> f64 {
    let e = p.exponents();
    let n = p.dim();
    p.c * (p.m - 1.0) * e.lambda / (p.m * (2.0 - p.gamma) * (n - p.gamma))
}

/// Integrable source-type solution with free constant `k1`.
pub fn barenblatt_integrable(k1: f64, p: &ProblemParams, r: f64, t: f64) -> f64 {
    let e = p.exponents();
    let k2 = barenblatt_k2(p);
    let base = k1 - k2 * t.powf(-e.theta * e.lambda) * r.powf(2.0 - p.gamma);
    if base <= 0.0 {
        return 0.0;
    }
    t.powf(-e.lambda) * base.powf(1.0 / (p.m - 1.0))
}

/// Free-boundary radius of [`barenblatt_integrable`] at time `t`.
pub fn barenblatt_support(k1: f64, p: &ProblemParams, t: f64) -> f64 {
    let e = p.exponents();
    (k1 / barenblatt_k2(p) * t.powf(e.theta * e.lambda)).powf(1.0 / (2.0 - p.gamma))
}

#[cfg(test)]
mod tests;
