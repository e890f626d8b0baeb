//! Self-similar profiles with a non-integrable power tail.
//!
//! The radial profile problem is first mapped to an unweighted one for
//! `G(ρ)` with `G(0) = 1`, `G'(0) = 0`:
//!
//! ```text
//! (G^m)'' + (Ñ-1)/ρ (G^m)' + λ (ρ G'/α̃ + G) = 0
//! ```
//!
//! which is integrated in the variables `Θ = ρ^α̃ G` and
//! `K = ρ^(α̃-Ñ) ∫₀^ρ s^(Ñ-1) G ds` against `s = ln ρ`. In those variables the
//! problem is first order and stays well scaled all the way out, while the
//! equation for `Θ` becomes stiff at large radius. The profile of the weighted
//! problem is then `g_α(r) = σ G(σ^(-(m-1)/2) r^((2-γ)/2))`.

mod radau;

pub use radau::{Radau5, RadauFailure, StepStats, StiffSystem};

use std::f64::consts::LN_10;
use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::interp::Pchip;
use crate::params::{Branch, ProblemParams, TildeParams, THRESHOLD_TOL};
use crate::quad::GaussLegendre;

/// Largest `p·ln ρ` allowed; keeps `ρ^p` comfortably inside f64 range.
const MAX_STIFF_EXPONENT: f64 = 650.0;
/// Relative size of the first neglected series term accepted at `r0`.
const SERIES_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("start radius {r0} is outside the series validity radius (truncation estimate {estimate:e})")]
    RadiusTooLarge { r0: f64, estimate: f64 },
    #[error("profile lost positivity at r = {r}")]
    PositivityLoss { r: f64 },
    #[error("profile stopped decreasing at r = {r}")]
    MonotonicityLoss { r: f64 },
    #[error("tail limit not converged at r_max = {r_max:e} (relative error {error:e})")]
    NotConverged { r_max: f64, error: f64 },
    #[error("analytic branch {analytic:?} disagrees with the numerically detected {numeric:?}")]
    ClassificationMismatch { analytic: Branch, numeric: Branch },
    #[error("a pure power needs alpha = (N-2)/m = {critical}, got {alpha}")]
    WrongAlpha { alpha: f64, critical: f64 },
    #[error("stiff integrator failed at r = {r:e}")]
    Integration { r: f64 },
}

/// Coefficients of the unweighted profile equation. `lambda` already
/// includes the weight amplitude `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOde {
    pub n: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub m: f64,
}

impl ProfileOde {
    pub fn new(tilde: &TildeParams, c: f64) -> Self {
        ProfileOde {
            n: tilde.n,
            alpha: tilde.alpha,
            lambda: c * tilde.lambda,
            m: tilde.m,
        }
    }

    pub fn from_params(p: &ProblemParams) -> Self {
        Self::new(&p.tilde(), p.c)
    }

    /// Exponent `p` with `ρ G'/G` driven by `ρ^p` at large radius.
    pub fn stiff_exponent(&self) -> f64 {
        2.0 + self.alpha * (self.m - 1.0)
    }

    /// Expected algebraic rate of `Θ → L`: the slower of the two tail modes.
    pub fn tail_rate(&self) -> f64 {
        self.stiff_exponent().min(self.n - self.alpha)
    }

    /// Residual of the unweighted equation for given `G, G', (G^m)', (G^m)''`.
    pub fn residual(&self, rho: f64, g: f64, dg: f64, dw: f64, d2w: f64) -> f64 {
        d2w + (self.n - 1.0) / rho * dw + self.lambda * (rho * dg / self.alpha + g)
    }

    fn series_coeffs(&self) -> (f64, f64) {
        let a2 = -self.lambda / (2.0 * self.n);
        let a4 = -self.lambda * a2 * (2.0 + self.alpha) / (self.m * self.alpha * (4.0 * self.n + 8.0));
        (a2, a4)
    }
}

impl From<TildeParams> for ProfileOde {
    fn from(t: TildeParams) -> Self {
        ProfileOde::new(&t, 1.0)
    }
}

/// Value and slope of `G` near the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub g: f64,
    pub dg: f64,
}

/// Truncated even series `G^m = 1 + a2 ρ² + a4 ρ⁴` at `r0`.
pub fn series_start(ode: &ProfileOde, r0: f64) -> Result<SeriesValue, ProfileError> {
    let (_, a4) = ode.series_coeffs();
    // size of the first neglected term, ~ a4 λ ρ⁶
    let estimate = a4.abs() * (1.0 + ode.lambda) * r0.powi(6);
    if !(r0 > 0.0) || !(estimate <= SERIES_TOL) || series_w(ode, r0).0 <= 0.5 {
        return Err(ProfileError::RadiusTooLarge { r0, estimate });
    }
    Ok(series_value(ode, r0))
}

fn series_w(ode: &ProfileOde, r: f64) -> (f64, f64, f64) {
    let (a2, a4) = ode.series_coeffs();
    let r2 = r * r;
    (
        1.0 + a2 * r2 + a4 * r2 * r2,
        2.0 * a2 * r + 4.0 * a4 * r2 * r,
        2.0 * a2 + 12.0 * a4 * r2,
    )
}

fn series_value(ode: &ProfileOde, r: f64) -> SeriesValue {
    let (w, dw, _) = series_w(ode, r);
    let g = w.powf(1.0 / ode.m);
    SeriesValue {
        g,
        dg: g / w * dw / ode.m,
    }
}

/// Residual of the profile equation evaluated on the truncated series.
pub fn series_residual(ode: &ProfileOde, r: f64) -> f64 {
    let (w, dw, d2w) = series_w(ode, r);
    let v = series_value(ode, r);
    debug_assert!(w > 0.0);
    ode.residual(r, v.g, v.dg, dw, d2w)
}

/// `K(r0)` from the series for `G`.
fn series_k(ode: &ProfileOde, r: f64) -> f64 {
    let (a2, a4) = ode.series_coeffs();
    let m = ode.m;
    let g2 = a2 / m;
    let g4 = a4 / m + 0.5 * (1.0 / m) * (1.0 / m - 1.0) * a2 * a2;
    let r2 = r * r;
    r.powf(ode.alpha) * (1.0 / ode.n + g2 * r2 / (ode.n + 2.0) + g4 * r2 * r2 / (ode.n + 4.0))
}

/// First-order system for `(ln Θ, ln K)` against `s = ln ρ`.
struct LogSystem {
    alpha: f64,
    gap: f64,
    p: f64,
    m: f64,
    coef: f64,
}

impl LogSystem {
    fn new(ode: &ProfileOde) -> Self {
        LogSystem {
            alpha: ode.alpha,
            gap: ode.n - ode.alpha,
            p: ode.stiff_exponent(),
            m: ode.m,
            coef: ode.lambda / (ode.alpha * ode.m),
        }
    }

    /// Returns the two pieces of `ρ G'/G = e1 - e0`.
    fn drift(&self, s: f64, y: [f64; 2]) -> (f64, f64) {
        let base = self.p * s - self.m * y[0];
        let e0 = self.coef * (base + y[0]).exp();
        let e1 = self.coef * self.gap * (base + y[1]).exp();
        (e0, e1)
    }
}

impl StiffSystem for LogSystem {
    fn rhs(&self, s: f64, y: [f64; 2]) -> [f64; 2] {
        let (e0, e1) = self.drift(s, y);
        [self.alpha + e1 - e0, (y[0] - y[1]).exp() - self.gap]
    }

    fn jacobian(&self, s: f64, y: [f64; 2]) -> [[f64; 2]; 2] {
        let (e0, e1) = self.drift(s, y);
        let q = (y[0] - y[1]).exp();
        [
            [-self.m * (e1 - e0) - e0, e1],
            [q, -q],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptions {
    /// Start radius of the unweighted integration.
    pub r0: f64,
    /// Initial outer radius; extended by decades when the tail is unresolved.
    pub r_max: f64,
    /// Hard cap for the adaptive extension.
    pub r_cap: f64,
    pub nodes_per_decade: usize,
    /// Local error tolerance of the integrator.
    pub tol: f64,
    /// Relative accuracy demanded of the limit `L`.
    pub tail_tol: f64,
    /// Relative drop of `Θ` below its maximum that counts as a decrease.
    pub drop_tol: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            r0: 1e-4,
            r_max: 1e4,
            r_cap: 1e12,
            nodes_per_decade: 128,
            tol: 1e-11,
            tail_tol: 1e-7,
            drop_tol: 1e-9,
        }
    }
}

/// Tabulated solution of the unweighted problem on a geometric grid.
#[derive(Debug, Clone)]
pub struct UnweightedProfile {
    pub ode: ProfileOde,
    /// `ln ρ` at the nodes, uniformly spaced.
    pub s: Vec<f64>,
    pub log_theta: Vec<f64>,
    pub log_k: Vec<f64>,
    /// `ρ G'/G` at the nodes.
    pub log_slope: Vec<f64>,
    pub stats: StepStats,
    ds: f64,
    tol: f64,
    h: f64,
}

pub fn integrate_profile(ode: &ProfileOde, opts: &ProfileOptions) -> Result<UnweightedProfile, ProfileError> {
    series_start(ode, opts.r0)?;
    let ds = LN_10 / opts.nodes_per_decade as f64;
    let s0 = opts.r0.ln();
    let g0 = series_value(ode, opts.r0).g;
    let y0 = [ode.alpha * s0 + g0.ln(), series_k(ode, opts.r0).ln()];
    let sys = LogSystem::new(ode);
    let f = sys.rhs(s0, y0);
    let mut prof = UnweightedProfile {
        ode: *ode,
        s: vec![s0],
        log_theta: vec![y0[0]],
        log_k: vec![y0[1]],
        log_slope: vec![f[0] - ode.alpha],
        stats: StepStats::default(),
        ds,
        tol: opts.tol,
        h: 0.1 * ds,
    };
    let r_max = opts.r_max.min(prof.r_limit());
    let steps = ((r_max.ln() - s0) / ds).ceil().max(4.0) as usize;
    prof.advance(steps)?;
    Ok(prof)
}

impl UnweightedProfile {
    fn r_limit(&self) -> f64 {
        (MAX_STIFF_EXPONENT / self.ode.stiff_exponent()).exp()
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn nodes_per_decade(&self) -> usize {
        (LN_10 / self.ds).round() as usize
    }

    pub fn r_max(&self) -> f64 {
        self.s.last().unwrap().exp()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.s.iter().map(|s| s.exp()).collect()
    }

    pub fn g(&self) -> Vec<f64> {
        self.s
            .iter()
            .zip(&self.log_theta)
            .map(|(s, lt)| (lt - self.ode.alpha * s).exp())
            .collect()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.log_theta.iter().map(|v| v.exp()).collect()
    }

    /// Integrates `steps` further grid intervals.
    pub fn advance(&mut self, steps: usize) -> Result<(), ProfileError> {
        let sys = LogSystem::new(&self.ode);
        let radau = Radau5 {
            rtol: self.tol,
            atol: self.tol,
            ..Radau5::default()
        };
        let mut y = [*self.log_theta.last().unwrap(), *self.log_k.last().unwrap()];
        let s_first = self.s[0];
        for _ in 0..steps {
            let k = self.s.len();
            let s_prev = s_first + (k - 1) as f64 * self.ds;
            let s_next = s_first + k as f64 * self.ds;
            self.h = self.h.min(self.ds);
            y = radau
                .integrate(&sys, s_prev, y, s_next, &mut self.h, &mut self.stats)
                .map_err(|_| ProfileError::Integration { r: s_prev.exp() })?;
            let r = s_next.exp();
            if !(y[0] - self.ode.alpha * s_next).exp().is_normal() {
                return Err(ProfileError::PositivityLoss { r });
            }
            // sign of G' is the sign of (Ñ-α̃)K - Θ
            let rel = (self.ode.n - self.ode.alpha) * (y[1] - y[0]).exp() - 1.0;
            if rel > 1e3 * self.tol {
                return Err(ProfileError::MonotonicityLoss { r });
            }
            let f = sys.rhs(s_next, y);
            self.s.push(s_next);
            self.log_theta.push(y[0]);
            self.log_k.push(y[1]);
            self.log_slope.push(f[0] - self.ode.alpha);
        }
        Ok(())
    }

    /// Extends the table by whole decades, never past the overflow limit.
    pub fn extend_decades(&mut self, decades: usize) -> Result<(), ProfileError> {
        let room = ((self.r_limit().ln() - self.s.last().unwrap()) / self.ds).floor().max(0.0) as usize;
        let steps = (decades * self.nodes_per_decade()).min(room);
        self.advance(steps)
    }

    /// Relative residual of the integral identity
    /// `ρ^(Ñ-1)(G^m)' + (λ/α̃)ρ^Ñ G - (Ñ/α̃-1)λ ∫₀^ρ s^(Ñ-1) G ds = 0`
    /// at every node. The integral is an independent adaptive Gauss–Legendre
    /// quadrature of `G`, whose values at the quadrature points come from
    /// continuing the `Θ` integration between nodes, while `(G^m)'` uses the
    /// integrated `K`.
    pub fn identity_residuals(&self) -> Vec<f64> {
        let n = self.len();
        let gap = self.ode.n - self.ode.alpha;
        let ds = self.ds;
        let mut dense = DenseTheta {
            sys: LogSystem::new(&self.ode),
            radau: Radau5 {
                rtol: self.tol,
                atol: self.tol,
                ..Radau5::default()
            },
            gl: GaussLegendre::new(8),
            stats: StepStats::default(),
            h: 0.1 * ds,
            gap,
            failed: false,
        };
        let mut q = self.log_k[0].exp();
        let mut out = vec![0.0; n];
        for i in 0..n - 1 {
            let (a, b) = (self.s[i], self.s[i + 1]);
            let y = [self.log_theta[i], self.log_k[i]];
            let carried = q * (-gap * ds).exp();
            let (coarse, _) = dense.panel(a, y, b, b);
            let tol = 1e-13 * carried.max(coarse.abs());
            q = carried + dense.adaptive(a, y, b, b, coarse, tol, 0).0;
            let k = self.log_k[i + 1].exp();
            let theta = self.log_theta[i + 1].exp();
            // all three terms share the factor (λ/α̃) ρ^(Ñ-α̃)
            let t1 = gap * k - theta;
            let t2 = theta;
            let t3 = -gap * q;
            let scale = t1.abs().max(t2.abs()).max(t3.abs());
            out[i + 1] = if dense.failed {
                f64::INFINITY
            } else {
                (t1 + t2 + t3).abs() / scale
            };
        }
        out
    }

    /// Interior maximum of `Θ` with a relative drop above `drop_tol`, refined
    /// by a parabola through the three nodes around the discrete maximum.
    pub fn theta_peak(&self, drop_tol: f64) -> Option<f64> {
        let n = self.len();
        let (imax, &lmax) = self
            .log_theta
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
        if imax == 0 || imax + 1 >= n {
            return None;
        }
        let drop = 1.0 - (self.log_theta[n - 1] - lmax).exp();
        if drop <= drop_tol {
            return None;
        }
        let (ym, y0, yp) = (self.log_theta[imax - 1], lmax, self.log_theta[imax + 1]);
        let curv = yp - 2.0 * y0 + ym;
        let shift = if curv < 0.0 { 0.5 * (ym - yp) / curv } else { 0.0 };
        Some((self.s[imax] + shift.clamp(-0.5, 0.5) * self.ds).exp())
    }
}

/// Values of `Θ` between grid nodes, obtained by continuing the integration.
struct DenseTheta {
    sys: LogSystem,
    radau: Radau5,
    gl: GaussLegendre,
    stats: StepStats,
    h: f64,
    gap: f64,
    failed: bool,
}

impl DenseTheta {
    fn advance(&mut self, from: f64, y: [f64; 2], to: f64) -> [f64; 2] {
        if to <= from || self.failed {
            return y;
        }
        self.h = self.h.min(to - from).max(1e-9 * (to - from));
        match self.radau.integrate(&self.sys, from, y, to, &mut self.h, &mut self.stats) {
            Ok(yn) => yn,
            Err(_) => {
                self.failed = true;
                y
            }
        }
    }

    /// Gauss–Legendre sum of `e^(gap (σ - sref)) Θ(σ)` over `[a, b]`, and the state at `b`.
    fn panel(&mut self, a: f64, ya: [f64; 2], b: f64, sref: f64) -> (f64, [f64; 2]) {
        let half = 0.5 * (b - a);
        let mut at = a;
        let mut y = ya;
        let mut sum = 0.0;
        for k in 0..self.gl.nodes().len() {
            let sig = a + half * (self.gl.nodes()[k] + 1.0);
            y = self.advance(at, y, sig);
            at = sig;
            sum += self.gl.weights()[k] * (self.gap * (sig - sref) + y[0]).exp();
        }
        (half * sum, self.advance(at, y, b))
    }

    #[allow(clippy::too_many_arguments)]
    fn adaptive(&mut self, a: f64, ya: [f64; 2], b: f64, sref: f64, whole: f64, tol: f64, depth: usize) -> (f64, [f64; 2]) {
        let mid = 0.5 * (a + b);
        let (l, ym) = self.panel(a, ya, mid, sref);
        let (r, yb) = self.panel(mid, ym, b, sref);
        if (l + r - whole).abs() <= tol || depth >= 16 || self.failed {
            return (l + r, yb);
        }
        let (l, ym) = self.adaptive(a, ya, mid, sref, l, 0.5 * tol, depth + 1);
        let (r, yb) = self.adaptive(mid, ym, b, sref, r, 0.5 * tol, depth + 1);
        (l + r, yb)
    }
}

/// Limit of `Θ` with its tail law `Θ ≈ L + a ρ^(-p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub l: f64,
    /// Absolute error estimate of `l`.
    pub error: f64,
    pub exponent: f64,
    pub amplitude: f64,
    /// False when the exponent could not be resolved and the analytic rate was used.
    pub exponent_fitted: bool,
}

/// Extracts `L = lim Θ` from the last decades of the table.
///
/// A tail flat to `tail_tol` is read off directly. Otherwise Aitken's
/// extrapolation on quarter-decade spaced triples removes the leading
/// algebraic term; two consecutive triples give the error estimate.
pub fn limit_l(profile: &UnweightedProfile, tail_tol: f64) -> Result<TailFit, ProfileError> {
    let theta = profile.theta();
    let n = theta.len();
    let npd = profile.nodes_per_decade();
    let j = (npd / 4).max(1);
    let last = n - 1;
    let floor = 16.0 * profile.tol * theta[last];
    let window = &theta[last.saturating_sub(npd)..];
    let hi = window.iter().cloned().fold(f64::MIN, f64::max);
    let lo = window.iter().cloned().fold(f64::MAX, f64::min);
    let spread = hi - lo;
    let r_max = profile.r_max();
    let step = j as f64 * profile.ds;

    let aitken = |k: usize| -> Option<(f64, f64)> {
        let (x0, x1, x2) = (theta[k - 2 * j], theta[k - j], theta[k]);
        let (d1, d2) = (x1 - x0, x2 - x1);
        if d1 * d2 <= 0.0 || d2.abs() >= d1.abs() {
            return None;
        }
        Some((x2 - d2 * d2 / (d2 - d1), (d1 / d2).ln() / step))
    };

    let (l, error, fitted) = if spread <= (tail_tol * theta[last]).max(floor) {
        (theta[last], spread + floor, None)
    } else {
        if last < 3 * j {
            return Err(ProfileError::NotConverged { r_max, error: f64::INFINITY });
        }
        match (aitken(last), aitken(last - j)) {
            (Some((l1, p1)), Some((l0, _))) => (l1, (l1 - l0).abs() + floor, Some(p1)),
            _ => return Err(ProfileError::NotConverged { r_max, error: spread / theta[last] }),
        }
    };
    if !(l > 0.0) || error > tail_tol * l {
        return Err(ProfileError::NotConverged { r_max, error: error / l.abs() });
    }
    let fitted = fitted.or_else(|| {
        // search inwards for the last resolvable stretch of the approach
        let resolvable = 1e3 * floor;
        (3 * j..=last).rev().find_map(|k| {
            let d2 = theta[k] - theta[k - j];
            if d2.abs() > resolvable {
                aitken(k).map(|(_, p)| p)
            } else {
                None
            }
        })
    });
    let (exponent, exponent_fitted) = match fitted {
        Some(p) if p.is_finite() && p > 0.0 => (p, true),
        _ => (profile.ode.tail_rate(), false),
    };
    let amplitude = (theta[last] - l) * r_max.powf(exponent);
    Ok(TailFit {
        l,
        error,
        exponent,
        amplitude,
        exponent_fitted,
    })
}

/// Scale `σ` for which `σ G(σ^(-(m-1)/2) ρ)` has tail `b ρ^(-α̃)`.
pub fn match_b(l: f64, b: f64, tilde: &TildeParams) -> f64 {
    (b / l).powf(2.0 / (2.0 + (tilde.m - 1.0) * tilde.alpha))
}

/// Outcome of the transition dichotomy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dichotomy {
    EverywhereDecreasing,
    /// The self-similar solution increases in time inside `|x| < r_star t^(λ_α/α)`.
    Transition { r_star: f64 },
}

impl Dichotomy {
    pub fn branch(&self) -> Branch {
        match self {
            Dichotomy::EverywhereDecreasing => Branch::EverywhereDecreasing,
            Dichotomy::Transition { .. } => Branch::Transition,
        }
    }
}

/// Complete profile of the weighted problem for one parameter tuple.
#[derive(Debug, Clone)]
pub struct Profile {
    pub params: ProblemParams,
    pub tilde: TildeParams,
    pub table: UnweightedProfile,
    pub tail: TailFit,
    pub l: f64,
    pub sigma: f64,
    /// Maximum point of `Θ` in the unweighted radius, when `Θ` has one.
    pub rho_star: Option<f64>,
    /// Maximum point of `r^α g_α(r)`, when it has one.
    pub r_star: Option<f64>,
    pub residual_10p: f64,
    /// Range of `g_α(r)(b^((m-1)λ_α) + r^α)/b` over the grid.
    pub c1: f64,
    pub c2: f64,
    log_g: Pchip,
}

impl Profile {
    /// Integrates, extends the table until the tail limit is resolved and,
    /// when the analytic branch predicts a maximum of `Θ`, until it is seen.
    pub fn compute(params: &ProblemParams, opts: &ProfileOptions) -> Result<Profile, ProfileError> {
        let tilde = params.tilde();
        let ode = ProfileOde::new(&tilde, params.c);
        let mut table = integrate_profile(&ode, opts)?;
        let cap = opts.r_cap.min(table.r_limit());
        let expect_peak = params.branch() == Branch::Transition;
        let tail = loop {
            let fit = limit_l(&table, opts.tail_tol);
            let peak_missing = expect_peak && table.theta_peak(opts.drop_tol).is_none();
            let can_extend = table.r_max() * 10.0 <= cap * (1.0 + 1e-9);
            match fit {
                Ok(t) if !peak_missing || !can_extend => break t,
                Err(e) if !can_extend => return Err(e),
                _ => {
                    log::debug!("extending profile table beyond r = {:e}", table.r_max());
                    table.extend_decades(1)?;
                }
            }
        };
        let residual_10p = table.identity_residuals().into_iter().fold(0.0, f64::max);
        let sigma = match_b(tail.l, params.b, &tilde);
        let rho_star = table.theta_peak(opts.drop_tol);
        let half = 0.5 * (params.m - 1.0);
        let to_r = |rho: f64| (sigma.powf(half) * rho).powf(2.0 / (2.0 - params.gamma));
        let log_g = Pchip::new(
            table.s.clone(),
            table.s.iter().zip(&table.log_theta).map(|(s, lt)| lt - tilde.alpha * s).collect(),
        );
        let mut prof = Profile {
            params: *params,
            tilde,
            tail,
            l: tail.l,
            sigma,
            rho_star,
            r_star: rho_star.map(to_r),
            residual_10p,
            c1: 0.0,
            c2: 0.0,
            log_g,
            table,
        };
        let (c1, c2) = prof.two_sided_range();
        prof.c1 = c1;
        prof.c2 = c2;
        Ok(prof)
    }

    pub fn dichotomy(&self) -> Dichotomy {
        match self.r_star {
            Some(r_star) => Dichotomy::Transition { r_star },
            None => Dichotomy::EverywhereDecreasing,
        }
    }

    /// Radius of the weighted problem that maps to unweighted radius `rho`.
    pub fn r_of_rho(&self, rho: f64) -> f64 {
        let half = 0.5 * (self.params.m - 1.0);
        (self.sigma.powf(half) * rho).powf(2.0 / (2.0 - self.params.gamma))
    }

    pub fn rho_of_r(&self, r: f64) -> f64 {
        let half = 0.5 * (self.params.m - 1.0);
        self.sigma.powf(-half) * r.powf(0.5 * (2.0 - self.params.gamma))
    }

    /// `G(ρ)`: series below the grid, monotone interpolation on it, fitted tail beyond.
    pub fn g_unweighted(&self, rho: f64) -> f64 {
        let ode = &self.table.ode;
        let s = rho.ln();
        if rho <= 0.0 {
            1.0
        } else if s < self.table.s[0] {
            series_value(ode, rho).g
        } else if s <= *self.table.s.last().unwrap() {
            self.log_g.eval(s).exp()
        } else {
            let rho_last = self.table.r_max();
            let theta_last = self.table.log_theta.last().unwrap().exp();
            let corr = (theta_last - self.l) * (rho / rho_last).powf(-self.tail.exponent);
            (self.l + corr) * rho.powf(-ode.alpha)
        }
    }

    /// `G'(ρ)` consistent with [`Profile::g_unweighted`].
    pub fn dg_unweighted(&self, rho: f64) -> f64 {
        let ode = &self.table.ode;
        let s = rho.ln();
        if rho <= 0.0 {
            0.0
        } else if s < self.table.s[0] {
            series_value(ode, rho).dg
        } else if s <= *self.table.s.last().unwrap() {
            self.log_g.eval(s).exp() * self.log_g.derivative(s) / rho
        } else {
            let rho_last = self.table.r_max();
            let theta_last = self.table.log_theta.last().unwrap().exp();
            let p = self.tail.exponent;
            let corr = (theta_last - self.l) * (rho / rho_last).powf(-p);
            let theta = self.l + corr;
            (-p * corr - ode.alpha * theta) * rho.powf(-ode.alpha - 1.0)
        }
    }

    /// `g_α(r) = σ G(σ^(-(m-1)/2) r^((2-γ)/2))`.
    pub fn g_alpha(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return self.sigma;
        }
        self.sigma * self.g_unweighted(self.rho_of_r(r))
    }

    /// `g_α'(r)`.
    pub fn dg_alpha(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let rho = self.rho_of_r(r);
        let drho = 0.5 * (2.0 - self.params.gamma) * rho / r;
        self.sigma * self.dg_unweighted(rho) * drho
    }

    fn two_sided_range(&self) -> (f64, f64) {
        let p = &self.params;
        let floor = p.b.powf((p.m - 1.0) * p.exponents().lambda_alpha);
        let mut lo = self.sigma * floor / p.b;
        let mut hi = lo;
        for (rho, g) in self.table.radii().into_iter().zip(self.table.g()) {
            let r = self.r_of_rho(rho);
            let v = self.sigma * g * (floor + r.powf(p.alpha)) / p.b;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Writes the table as CSV: metadata as `# key=value` lines, then
    /// columns `r,G,Theta,r_alpha,g_alpha` where `r` is the unweighted radius
    /// and `r_alpha` the matching radius of `g_α`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let p = &self.params;
        let e = p.exponents();
        writeln!(w, "# N={}", p.n)?;
        writeln!(w, "# m={:.16e}", p.m)?;
        writeln!(w, "# gamma={:.16e}", p.gamma)?;
        writeln!(w, "# alpha={:.16e}", p.alpha)?;
        writeln!(w, "# b={:.16e}", p.b)?;
        writeln!(w, "# c={:.16e}", p.c)?;
        writeln!(w, "# lambda={:.16e}", e.lambda)?;
        writeln!(w, "# theta={:.16e}", e.theta)?;
        writeln!(w, "# lambda_alpha={:.16e}", e.lambda_alpha)?;
        writeln!(w, "# L={:.16e}", self.l)?;
        writeln!(w, "# L_error={:.16e}", self.tail.error)?;
        writeln!(w, "# tail_exponent={:.16e}", self.tail.exponent)?;
        writeln!(w, "# sigma={:.16e}", self.sigma)?;
        match self.r_star {
            Some(r) => writeln!(w, "# r_star={r:.16e}")?,
            None => writeln!(w, "# r_star=none")?,
        }
        writeln!(w, "# dichotomy={:?}", self.dichotomy().branch())?;
        writeln!(w, "# residual_10p={:.16e}", self.residual_10p)?;
        writeln!(w, "# c1={:.16e}", self.c1)?;
        writeln!(w, "# c2={:.16e}", self.c2)?;
        writeln!(w, "r,G,Theta,r_alpha,g_alpha")?;
        for ((rho, g), theta) in self.table.radii().into_iter().zip(self.table.g()).zip(self.table.theta()) {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                rho,
                g,
                theta,
                self.r_of_rho(rho),
                self.sigma * g
            )?;
        }
        Ok(())
    }
}

pub fn eval_g_alpha(profile: &Profile, r: f64) -> f64 {
    profile.g_alpha(r)
}

/// Evaluator for `𝒰_α(x, t) = t^(-λ_α) g_α(t^(-λ_α/α)|x|)`.
#[derive(Debug, Clone)]
pub struct SelfSimilarEval {
    profile: Arc<Profile>,
    lambda_alpha: f64,
}

impl SelfSimilarEval {
    pub fn new(profile: Profile) -> Self {
        Self::from_arc(Arc::new(profile))
    }

    pub fn from_arc(profile: Arc<Profile>) -> Self {
        let lambda_alpha = profile.params.exponents().lambda_alpha;
        SelfSimilarEval { profile, lambda_alpha }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn params(&self) -> &ProblemParams {
        &self.profile.params
    }

    pub fn eval(&self, r: f64, t: f64) -> f64 {
        let la = self.lambda_alpha;
        t.powf(-la) * self.profile.g_alpha(t.powf(-la / self.profile.params.alpha) * r)
    }

    /// `∂_t 𝒰_α(r, t) = -(λ_α/t) t^(-λ_α) [g_α(ξ) + ξ g_α'(ξ)/α]`, `ξ = t^(-λ_α/α) r`.
    pub fn time_derivative(&self, r: f64, t: f64) -> f64 {
        let la = self.lambda_alpha;
        let alpha = self.profile.params.alpha;
        let xi = t.powf(-la / alpha) * r;
        -la / t * t.powf(-la) * (self.profile.g_alpha(xi) + xi * self.profile.dg_alpha(xi) / alpha)
    }
}

pub fn eval_u_alpha(eval: &SelfSimilarEval, r: f64, t: f64) -> f64 {
    eval.eval(r, t)
}

/// Compares the analytic branch with the shape of the computed `Θ`.
pub fn classify_dichotomy(p: &ProblemParams, profile: &Profile) -> Result<Dichotomy, ProfileError> {
    let analytic = p.branch();
    let numeric = profile.dichotomy();
    if numeric.branch() != analytic {
        return Err(ProfileError::ClassificationMismatch {
            analytic,
            numeric: numeric.branch(),
        });
    }
    Ok(numeric)
}

/// Residual of the weighted profile equation
/// `(g^m)'' + (N-1)/r (g^m)' + c r^(-γ) λ_α (r g'/α + g)` for given derivatives.
pub fn weighted_residual(p: &ProblemParams, r: f64, g: f64, dg: f64, dgm: f64, d2gm: f64) -> f64 {
    let la = p.exponents().lambda_alpha;
    d2gm + (p.dim() - 1.0) / r * dgm + p.c * r.powf(-p.gamma) * la * (r * dg / p.alpha + g)
}

/// Largest residual of `g = b r^(-α)` on the given radii, for any `α`.
pub fn power_law_residual(p: &ProblemParams, radii: &[f64]) -> f64 {
    let (a, m, b) = (p.alpha, p.m, p.b);
    radii
        .iter()
        .map(|&r| {
            let g = b * r.powf(-a);
            let dg = -a * b * r.powf(-a - 1.0);
            let bm = b.powf(m);
            let dgm = -a * m * bm * r.powf(-a * m - 1.0);
            let d2gm = a * m * (a * m + 1.0) * bm * r.powf(-a * m - 2.0);
            weighted_residual(p, r, g, dg, dgm, d2gm).abs()
        })
        .fold(0.0, f64::max)
}

/// Residual of the exact power solution at the critical decay rate.
pub fn pure_power_residual(p: &ProblemParams, radii: &[f64]) -> Result<f64, ProfileError> {
    let critical = p.critical_alpha();
    if (p.alpha - critical).abs() > THRESHOLD_TOL {
        return Err(ProfileError::WrongAlpha {
            alpha: p.alpha,
            critical,
        });
    }
    Ok(power_law_residual(p, radii))
}
