use std::io::{self, Write};
use std::sync::Arc;

use crate::norms::{self, AdmissibleWeight, Radial, TailLaw};
use crate::params::ProblemParams;
use crate::pde::{
    self, build_grid, fmt_f64, Boundary, BoundaryFn, Inner, Outer, RadialField, RadialGrid, StepControl, Stepper, TimeStepping,
    Trajectory, WeightSpec,
};
use crate::profile::{Profile, ProfileOptions, SelfSimilarEval};

use super::{convergence_lp, convergence_uniform, ConvergenceCurve, HarnessError, LpConvergence, Result};

/// Initial data built around the tail `b r^-α`.
#[derive(Debug, Clone, PartialEq)]
pub enum DatumSpec {
    /// `b r^-α`.
    PurePower,
    /// `b r^-α` plus a bump of the given height on `[lo, hi]`.
    Perturbed { amplitude: f64, lo: f64, hi: f64 },
    /// `b r^-α (1 + amplitude e^-r)`.
    Modulated { amplitude: f64 },
    /// A bump alone; integrable.
    Compact { amplitude: f64, lo: f64, hi: f64 },
    /// The self-similar solution at time `t0`.
    SelfSimilar { t0: f64 },
    /// Linear interpolation of a table, zero outside it.
    Table { r: Vec<f64>, u: Vec<f64> },
}

/// `(1 - z²)²` on `z ∈ [-1, 1]` mapped to `[lo, hi]`; C¹ with unit height.
pub fn bump(r: f64, lo: f64, hi: f64) -> f64 {
    if r <= lo || r >= hi {
        return 0.0;
    }
    let z = (2.0 * r - lo - hi) / (hi - lo);
    let w = 1.0 - z * z;
    w * w
}

impl DatumSpec {
    pub fn radial(&self, p: &ProblemParams, eval: Option<&SelfSimilarEval>) -> Result<Radial> {
        let (b, a) = (p.b, p.alpha);
        Ok(match self {
            DatumSpec::PurePower => Radial::power(b, a),
            &DatumSpec::Perturbed { amplitude, lo, hi } => {
                check_interval(lo, hi)?;
                Radial::new(move |r| b * r.powf(-a) + amplitude * bump(r, lo, hi))
                    .with_tail(TailLaw { order: a, amplitude: b, from: hi })
                    .with_breaks(vec![lo, hi])
            }
            &DatumSpec::Modulated { amplitude } => {
                // e^-r falls below 1e-17 of the tail beyond r = 40
                Radial::new(move |r| b * r.powf(-a) * (1.0 + amplitude * (-r).exp())).with_tail(TailLaw {
                    order: a,
                    amplitude: b,
                    from: 40.0,
                })
            }
            &DatumSpec::Compact { amplitude, lo, hi } => {
                check_interval(lo, hi)?;
                Radial::new(move |r| amplitude * bump(r, lo, hi))
                    .with_support(lo, hi)
            }
            &DatumSpec::SelfSimilar { t0 } => {
                let e = eval
                    .ok_or_else(|| HarnessError::BadInput("self-similar datum needs a profile".into()))?
                    .clone();
                if !(t0 > 0.0) {
                    return Err(HarnessError::BadInput(format!("t0 must be positive, got {t0}")));
                }
                Radial::new(move |r| e.eval(r, t0))
            }
            DatumSpec::Table { r, u } => {
                if r.len() < 2 || r.len() != u.len() || r.windows(2).any(|w| !(w[1] > w[0])) || r[0] < 0.0 {
                    return Err(HarnessError::BadInput("datum table needs ≥2 increasing radii and matching values".into()));
                }
                Radial::from_table(r.clone(), u.clone())
            }
        })
    }

    pub fn needs_profile(&self) -> bool {
        matches!(self, DatumSpec::SelfSimilar { .. })
    }
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(HarnessError::BadInput(format!("bump interval [{lo}, {hi}] is empty")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn build(&self, weight: &WeightSpec, n: u32) -> Result<Arc<RadialGrid>> {
        Ok(Arc::new(build_grid(self.r_min, self.r_max, self.cells, weight.clone(), n)?))
    }

    pub fn with_cells(&self, cells: usize) -> Self {
        GridSpec { cells, ..*self }
    }
}

/// Outer boundary condition of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterCondition {
    NoFlux,
    /// The datum value at `r_max`, held fixed in time.
    Frozen,
    /// `𝒰_α(r_max, t)`.
    SelfSimilar,
}

/// Boundary data for `outer`; the self-similar condition needs `eval`.
pub fn boundary_for(
    outer: OuterCondition,
    datum: &Radial,
    grid: &RadialGrid,
    eval: Option<&SelfSimilarEval>,
) -> Result<Boundary> {
    let r = grid.r_max();
    Ok(match outer {
        OuterCondition::NoFlux => Boundary::no_flux(),
        OuterCondition::Frozen => Boundary::outer_dirichlet(BoundaryFn::constant(datum.eval(r))),
        OuterCondition::SelfSimilar => {
            let e = eval
                .ok_or_else(|| HarnessError::BadInput("self-similar boundary needs a profile".into()))?
                .clone();
            Boundary::outer_dirichlet(BoundaryFn::new(move |t| e.eval(r, t)))
        }
    })
}

/// Profile with default options for `p`.
pub fn self_similar(p: &ProblemParams) -> Result<SelfSimilarEval> {
    Ok(SelfSimilarEval::new(Profile::compute(p, &ProfileOptions::default())?))
}

/// `t = t0 · 2^j` up to and including `horizon`.
pub fn geometric_times(t0: f64, horizon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = t0;
    while t < horizon * (1.0 - 1e-12) {
        out.push(t);
        t *= 2.0;
    }
    out.push(horizon);
    out
}

/// The long-time convergence experiment.
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    /// Exponents, tail and the limit weight constant `c`.
    pub params: ProblemParams,
    pub weight: WeightSpec,
    pub datum: DatumSpec,
    pub grid: GridSpec,
    pub outer: OuterCondition,
    /// Start time of the run.
    pub t_start: f64,
    /// Times at which the curves are evaluated.
    pub times: Vec<f64>,
    pub exponents_p: Vec<f64>,
    pub stepping: TimeStepping,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub lp: Vec<(f64, LpConvergence)>,
    pub uniform: ConvergenceCurve,
    pub trajectory: Trajectory,
}

pub fn run_convergence(setup: &ConvergenceSetup, eval: &SelfSimilarEval) -> Result<ConvergenceReport> {
    let p = &setup.params;
    let grid = setup.grid.build(&setup.weight, p.n)?;
    let u0 = setup.datum.radial(p, Some(eval))?;
    let datum = RadialField::from_fn(grid.clone(), |r| u0.eval(r), setup.t_start)?;
    let boundary = boundary_for(setup.outer, &u0, &grid, Some(eval))?;
    let trajectory = pde::solve(&datum, p.m, &boundary, &setup.times, setup.stepping)?;
    let phi = AdmissibleWeight::new(p);
    let lp = setup
        .exponents_p
        .iter()
        .map(|&q| Ok((q, convergence_lp(&trajectory, eval, &phi, q, &setup.times)?)))
        .collect::<Result<Vec<_>>>()?;
    let uniform = convergence_uniform(&trajectory, eval, &setup.weight, &setup.times)?;
    Ok(ConvergenceReport { lp, uniform, trajectory })
}

/// Smoothing-effect and stability check on an integrable or general datum.
#[derive(Debug, Clone)]
pub struct SmoothingSetup {
    pub params: ProblemParams,
    pub weight: WeightSpec,
    pub datum: DatumSpec,
    pub grid: GridSpec,
    /// One run per entry; each is a cell count for `grid`.
    pub cells: Vec<usize>,
    pub times: Vec<f64>,
    pub outer: OuterCondition,
    /// Upper end of the `R` scan of the ball norm.
    pub zero_norm_r_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingLevel {
    pub cells: usize,
    /// `(t, ‖u(t)‖_∞)`.
    pub sup: Vec<(f64, f64)>,
    /// `(t, ‖u(t)‖_{0,ρ})`.
    pub ball_norm: Vec<(f64, f64)>,
    /// Smallest `C₂` with `‖u(t)‖_∞ ≤ C₂ (t^-λ ‖u0‖^{θλ} + ‖u0‖)` at every output.
    pub c2: f64,
    /// Smallest `C₁` with `‖u(t)‖_{0,ρ} ≤ C₁ ‖u0‖_{0,ρ}`.
    pub c1: f64,
    /// Least-squares slope of `ln ‖u‖_∞` against `ln t` over the first half of the outputs.
    pub small_t_slope: f64,
    /// Most negative slope between consecutive outputs.
    pub min_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingReport {
    pub datum_norm: f64,
    pub lambda: f64,
    pub levels: Vec<SmoothingLevel>,
}

impl SmoothingReport {
    /// `max/min − 1` of `C₂` across levels.
    pub fn c2_spread(&self) -> f64 {
        spread(self.levels.iter().map(|l| l.c2))
    }

    pub fn c1_spread(&self) -> f64 {
        spread(self.levels.iter().map(|l| l.c1))
    }

    /// Columns `cells,t,sup,ball_norm,bound`.
    pub fn write_csv(&self, w: &mut dyn Write, theta_lambda: f64) -> io::Result<()> {
        writeln!(w, "cells,t,sup,ball_norm,bound")?;
        for l in &self.levels {
            for ((t, s), (_, z)) in l.sup.iter().zip(&l.ball_norm) {
                let bound = t.powf(-self.lambda) * self.datum_norm.powf(theta_lambda) + self.datum_norm;
                writeln!(w, "{},{},{},{},{}", l.cells, fmt_f64(*t), fmt_f64(*s), fmt_f64(*z), fmt_f64(bound))?;
            }
        }
        Ok(())
    }
}

fn spread(v: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = v.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    if lo > 0.0 { hi / lo - 1.0 } else { f64::INFINITY }
}

fn slope_fit(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|(t, v)| (t.ln(), v.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn smoothing_check(setup: &SmoothingSetup) -> Result<SmoothingReport> {
    let p = &setup.params;
    let e = p.exponents();
    let u0 = setup.datum.radial(p, None)?;
    let datum_norm = ball_norm(&u0, &setup.weight, p.n, setup.zero_norm_r_max)?;
    if !(datum_norm > 0.0) {
        return Err(HarnessError::BadInput("datum has zero ball norm".into()));
    }
    let levels = setup
        .cells
        .iter()
        .map(|&cells| {
            let grid = setup.grid.with_cells(cells).build(&setup.weight, p.n)?;
            let datum = RadialField::from_fn(grid.clone(), |r| u0.eval(r), 0.0)?;
            let boundary = boundary_for(setup.outer, &u0, &grid, None)?;
            let traj = pde::solve(&datum, p.m, &boundary, &setup.times, TimeStepping::default())?;
            let mut sup = Vec::new();
            let mut balls = Vec::new();
            let mut c2 = 0.0f64;
            let mut c1 = 0.0f64;
            for f in &traj.fields {
                let s = f.sup_norm();
                let z = ball_norm(&super::field_radial(f), &setup.weight, p.n, setup.zero_norm_r_max)?;
                let bound = f.t.powf(-e.lambda) * datum_norm.powf(e.theta * e.lambda) + datum_norm;
                c2 = c2.max(s / bound);
                c1 = c1.max(z / datum_norm);
                sup.push((f.t, s));
                balls.push((f.t, z));
            }
            let half = (sup.len() / 2).max(2).min(sup.len());
            let small_t_slope = slope_fit(&sup[..half]);
            let min_slope = sup
                .windows(2)
                .filter(|w| w[0].1 > 0.0 && w[1].1 > 0.0)
                .map(|w| (w[1].1 / w[0].1).ln() / (w[1].0 / w[0].0).ln())
                .fold(f64::INFINITY, f64::min);
            Ok(SmoothingLevel {
                cells,
                sup,
                ball_norm: balls,
                c2,
                c1,
                small_t_slope,
                min_slope,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmoothingReport {
        datum_norm,
        lambda: e.lambda,
        levels,
    })
}

/// `‖f‖_{0,ρ}`, keeping the partial supremum when the scan is cut short.
fn ball_norm(f: &Radial, weight: &WeightSpec, n: u32, r_max: f64) -> Result<f64> {
    match norms::zero_norm(f, weight, n, r_max) {
        Ok(r) => Ok(r.value),
        Err(norms::NormError::TailGrowth { partial, .. }) => Ok(partial.value),
        Err(e) => Err(e.into()),
    }
}

/// Two solutions stepped together with identical time steps.
#[derive(Debug, Clone)]
pub struct ContractionSetup {
    pub params: ProblemParams,
    pub weight: WeightSpec,
    pub u0: DatumSpec,
    pub v0: DatumSpec,
    pub grid: GridSpec,
    pub outer: OuterCondition,
    pub times: Vec<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `(t, ‖u − v‖_{L¹(Φρ)})` with the datum distance first at `t = 0`.
    pub phi_distance: Vec<(f64, f64)>,
    /// `(t, Σ M_i |u_i − v_i|)` at every step.
    pub l1_distance: Vec<(f64, f64)>,
    /// Smallest `K ≥ 0` with `d(t) ≤ exp(K (t^{θλ} + t)) d(0)`.
    pub fitted_rate: f64,
    /// Largest relative growth of the discrete `L¹(ρ)` distance over one step.
    pub max_step_increase: f64,
    /// `(t, mass(u) − mass(v))` at the outputs.
    pub mass_gap: Vec<(f64, f64)>,
}

impl ContractionReport {
    /// Columns `t,distance`.
    pub fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "t,distance")?;
        for (t, d) in &self.phi_distance {
            writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*d))?;
        }
        Ok(())
    }
}

fn phi_l1(a: &[f64], b: &[f64], grid: &RadialGrid, phi: &AdmissibleWeight) -> f64 {
    a.iter()
        .zip(b)
        .zip(grid.measures())
        .zip(grid.centers())
        .map(|(((x, y), m), r)| (x - y).abs() * m * phi.eval(*r))
        .sum::<f64>()
        * grid.sphere_factor()
}

pub fn contraction_check(setup: &ContractionSetup) -> Result<ContractionReport> {
    let p = &setup.params;
    let e = p.exponents();
    if !(setup.dt > 0.0) {
        return Err(HarnessError::BadInput("time step must be positive".into()));
    }
    let grid = setup.grid.build(&setup.weight, p.n)?;
    let fu = setup.u0.radial(p, None)?;
    let fv = setup.v0.radial(p, None)?;
    let mut u: Vec<f64> = grid.centers().iter().map(|&r| fu.eval(r)).collect();
    let mut v: Vec<f64> = grid.centers().iter().map(|&r| fv.eval(r)).collect();
    let bu = boundary_for(setup.outer, &fu, &grid, None)?;
    let bv = boundary_for(setup.outer, &fv, &grid, None)?;
    let phi = AdmissibleWeight::new(p);
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(grid.measures()).map(|((x, y), m)| (x - y).abs() * m).sum::<f64>();
    let mass = |a: &[f64]| a.iter().zip(grid.measures()).map(|(x, m)| x * m).sum::<f64>();
    let d0 = phi_l1(&u, &v, &grid, &phi);
    let mut phi_distance = vec![(0.0, d0)];
    let mut l1_distance = vec![(0.0, l1(&u, &v))];
    let mut mass_gap = Vec::new();
    let mut su = Stepper::new(grid.clone(), p.m);
    let mut sv = Stepper::new(grid.clone(), p.m);
    let mut t = 0.0;
    let mut max_step_increase = 0.0f64;
    for &t_out in &setup.times {
        let n = ((t_out - t) / setup.dt).round().max(1.0) as usize;
        let h = (t_out - t) / n as f64;
        for k in 0..n {
            su.step(&mut u, t, h, &bu)?;
            sv.step(&mut v, t, h, &bv)?;
            t = if k + 1 == n { t_out } else { t + h };
            let d = l1(&u, &v);
            let prev = l1_distance.last().unwrap().1;
            if prev > 0.0 {
                max_step_increase = max_step_increase.max((d - prev) / prev);
            } else if d > 0.0 {
                max_step_increase = f64::INFINITY;
            }
            l1_distance.push((t, d));
        }
        phi_distance.push((t, phi_l1(&u, &v, &grid, &phi)));
        mass_gap.push((t, mass(&u) - mass(&v)));
    }
    let tl = e.theta * e.lambda;
    let fitted_rate = phi_distance
        .iter()
        .skip(1)
        .filter(|(_, d)| *d > 0.0)
        .map(|(t, d)| if d0 > 0.0 { (d / d0).ln() / (t.powf(tl) + t) } else { f64::INFINITY })
        .fold(0.0f64, f64::max);
    Ok(ContractionReport {
        phi_distance,
        l1_distance,
        fitted_rate,
        max_step_increase,
        mass_gap,
    })
}

/// Relaxation of `ρ̄ |x|^-γ v_t = Δ(v^m)` on the unit ball towards the boundary value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSetup {
    pub n: u32,
    pub m: f64,
    pub gamma: f64,
    /// Weight constant `ρ̄`.
    pub c_bar: f64,
    /// Boundary value `C`.
    pub boundary_value: f64,
    /// Initial value `ℓ`.
    pub initial_value: f64,
    pub cells: usize,
    pub r_min: f64,
    pub t_end: f64,
    pub outputs: usize,
}

impl BarrierSetup {
    pub fn new(n: u32, m: f64, gamma: f64, boundary_value: f64, initial_value: f64) -> Self {
        BarrierSetup {
            n,
            m,
            gamma,
            c_bar: 1.0,
            boundary_value,
            initial_value,
            cells: 128,
            r_min: 1e-3,
            t_end: 20.0,
            outputs: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierReport {
    /// Cell updates whose sign opposes `C − ℓ` beyond roundoff.
    pub sign_violations: usize,
    /// Largest such update relative to `C`.
    pub worst_wrong_sign: f64,
    /// `(t, ‖v(t) − C‖_∞)` after every step.
    pub sup_error: Vec<(f64, f64)>,
    /// `‖v(T) − C‖_∞ / C`.
    pub final_relative_error: f64,
    /// The sup error never grew from one step to the next.
    pub monotone: bool,
}

impl BarrierReport {
    /// Columns `t,error,norm_kind` as a curve.
    pub fn curve(&self) -> ConvergenceCurve {
        ConvergenceCurve {
            norm_kind: "Linf".into(),
            points: self.sup_error.clone(),
            flags: Vec::new(),
        }
    }
}

/// Sign tolerance on a cell update, relative to `C`.
const SIGN_ROUNDOFF: f64 = 1e-12;

pub fn barrier_experiment(setup: &BarrierSetup) -> Result<BarrierReport> {
    let c = setup.boundary_value;
    if !(c > 0.0) {
        return Err(HarnessError::BadInput(format!("boundary value must be positive, got {c}")));
    }
    if !(setup.initial_value >= 0.0) {
        return Err(HarnessError::BadInput("initial value must be non-negative".into()));
    }
    let weight = WeightSpec::pure_power(setup.c_bar, setup.gamma);
    let grid = Arc::new(build_grid(setup.r_min, 1.0, setup.cells, weight, setup.n)?);
    let datum = RadialField::from_fn(grid.clone(), |_| setup.initial_value, 0.0)?;
    let boundary = Boundary {
        inner: Inner::NoFlux,
        outer: Outer::Dirichlet(BoundaryFn::constant(c)),
    };
    let times: Vec<f64> = (1..=setup.outputs)
        .map(|k| setup.t_end * (k as f64 / setup.outputs as f64))
        .collect();
    let dir = (c - setup.initial_value).signum() * if c == setup.initial_value { 0.0 } else { 1.0 };
    let tol = SIGN_ROUNDOFF * c;
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    let err0 = (setup.initial_value - c).abs();
    let mut sup_error = vec![(0.0, err0)];
    let mut monotone = true;
    pde::solve_observed(&datum, setup.m, &boundary, &times, TimeStepping::default(), |ev| {
        for (a, b) in ev.u_new.iter().zip(ev.u_old) {
            let d = a - b;
            let wrong = if dir == 0.0 { d.abs() } else { -dir * d };
            if wrong > tol {
                violations += 1;
                worst = worst.max(wrong / c);
            }
        }
        let e = ev.u_new.iter().fold(0.0f64, |acc, v| acc.max((v - c).abs()));
        if e > sup_error.last().unwrap().1 + tol {
            monotone = false;
        }
        sup_error.push((ev.t_new, e));
    })?;
    let final_relative_error = sup_error.last().unwrap().1 / c;
    Ok(BarrierReport {
        sign_violations: violations,
        worst_wrong_sign: worst,
        sup_error,
        final_relative_error,
        monotone,
    })
}

/// PDE run from `g_α` at `t = 1` against the self-similar solution.
#[derive(Debug, Clone)]
pub struct CrossValidationSetup {
    pub params: ProblemParams,
    pub cells: Vec<usize>,
    pub r_min: f64,
    pub r_max: f64,
    pub horizon: f64,
    pub outputs: usize,
    pub stepping: TimeStepping,
}

impl CrossValidationSetup {
    pub fn new(params: ProblemParams, cells: Vec<usize>, horizon: f64) -> Self {
        CrossValidationSetup {
            params,
            cells,
            r_min: 1e-3,
            r_max: 100.0,
            horizon,
            outputs: 8,
            // small steps keep the time error below the spatial error on 512 cells
            stepping: TimeStepping::Adaptive(StepControl {
                target_change: 5e-4,
                max_dt_over_t: 5e-4,
                ..StepControl::default()
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossLevel {
    pub cells: usize,
    /// `max_t max_i |u_i − 𝒰_α(r_i, t)| / max_i |𝒰_α(r_i, t)|`.
    pub linf: f64,
    /// `max_t Σ M_i |u_i − 𝒰_α| / Σ M_i |𝒰_α|` with `ρ = |x|^-γ`.
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidationReport {
    pub levels: Vec<CrossLevel>,
}

impl CrossValidationReport {
    pub fn decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].linf < w[0].linf && w[1].l1 < w[0].l1)
    }

    /// Columns `cells,linf,l1`.
    pub fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "cells,linf,l1")?;
        for l in &self.levels {
            writeln!(w, "{},{},{}", l.cells, fmt_f64(l.linf), fmt_f64(l.l1))?;
        }
        Ok(())
    }
}

pub fn cross_validate(setup: &CrossValidationSetup, eval: &SelfSimilarEval) -> Result<CrossValidationReport> {
    let p = &setup.params;
    if !(setup.horizon > 1.0) || setup.outputs == 0 {
        return Err(HarnessError::BadInput("need horizon > 1 and at least one output".into()));
    }
    let times: Vec<f64> = (1..=setup.outputs)
        .map(|k| 1.0 + (setup.horizon - 1.0) * k as f64 / setup.outputs as f64)
        .collect();
    let levels = setup
        .cells
        .iter()
        .map(|&cells| {
            let weight = WeightSpec::pure_power(p.c, p.gamma);
            let grid = Arc::new(build_grid(setup.r_min, setup.r_max, cells, weight, p.n)?);
            let datum = RadialField::from_fn(grid.clone(), |r| eval.eval(r, 1.0), 1.0)?;
            let e = eval.clone();
            let r_max = setup.r_max;
            let boundary = Boundary::outer_dirichlet(BoundaryFn::new(move |t| e.eval(r_max, t)));
            let traj = pde::solve(&datum, p.m, &boundary, &times, setup.stepping)?;
            // L¹ against |x|^-γ: rescale the c-weighted measures
            let unit = 1.0 / p.c;
            let mut linf = 0.0f64;
            let mut l1 = 0.0f64;
            for f in &traj.fields {
                let exact: Vec<f64> = grid.centers().iter().map(|&r| eval.eval(r, f.t)).collect();
                let sup = exact.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let dev = f.u.iter().zip(&exact).fold(0.0f64, |a, (u, x)| a.max((u - x).abs()));
                linf = linf.max(dev / sup);
                let num: f64 = f.u.iter().zip(&exact).zip(grid.measures()).map(|((u, x), m)| (u - x).abs() * m * unit).sum();
                let den: f64 = exact.iter().zip(grid.measures()).map(|(x, m)| x.abs() * m * unit).sum();
                l1 = l1.max(num / den);
            }
            Ok(CrossLevel { cells, linf, l1 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossValidationReport { levels })
}
