//! Norms of radial functions on `R^N`: weighted `L^p` (optionally with an
//! admissible weight `Φ`), the ball-supremum norm `‖·‖_{0,ρ}`, and checks of
//! the structural assumptions on weights and data.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::{ball_volume, sphere_area};
use crate::params::ProblemParams;
use crate::pde::WeightSpec;
use crate::quad;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormError {
    #[error("integral diverges: tail decay exponent {exponent} is not positive")]
    Divergent { exponent: f64 },
    #[error("ball integrals still grow at R_max = {r_max} (relative growth {growth} over the last decade)")]
    TailGrowth { r_max: f64, growth: f64, partial: NormReport },
    #[error("bad input: {0}")]
    BadInput(String),
}

/// `f(r) = amplitude · r^-order` exactly for `r ≥ from`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailLaw {
    pub order: f64,
    pub amplitude: f64,
    pub from: f64,
}

/// A radial function with its support, tail and kinks.
#[derive(Clone)]
pub struct Radial {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    support: (f64, f64),
    tail: Option<TailLaw>,
    breaks: Vec<f64>,
}

impl fmt::Debug for Radial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Radial")
            .field("support", &self.support)
            .field("tail", &self.tail)
            .finish_non_exhaustive()
    }
}

impl Radial {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Radial {
            f: Arc::new(f),
            support: (0.0, f64::INFINITY),
            tail: None,
            breaks: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0).with_support(0.0, 1.0)
    }

    /// `b r^-α` on all of `(0, ∞)`.
    pub fn power(b: f64, alpha: f64) -> Self {
        Self::new(move |r| b * r.powf(-alpha)).with_tail(TailLaw {
            order: alpha,
            amplitude: b,
            from: 0.0,
        })
    }

    /// Piecewise-linear interpolation of `(r_k, v_k)`, zero outside `[r_0, r_last]`.
    pub fn from_table(r: Vec<f64>, v: Vec<f64>) -> Self {
        assert!(r.len() >= 2 && r.len() == v.len());
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        let (lo, hi) = (r[0], r[r.len() - 1]);
        let breaks = r.clone();
        Self::new(move |x| linear(&r, &v, x)).with_support(lo, hi).with_breaks(breaks)
    }

    /// `f` vanishes outside `[lo, hi]`.
    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        assert!(lo >= 0.0 && hi > lo);
        self.support = (lo, hi);
        self
    }

    pub fn with_tail(mut self, tail: TailLaw) -> Self {
        self.tail = Some(tail);
        self
    }

    pub fn with_breaks(mut self, mut breaks: Vec<f64>) -> Self {
        breaks.retain(|b| b.is_finite() && *b > 0.0);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        self.breaks = breaks;
        self
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r < self.support.0 || r > self.support.1 {
            0.0
        } else {
            (self.f)(r)
        }
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn tail(&self) -> Option<TailLaw> {
        self.tail
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// `f - g`. A tail survives only when both tails share the same order.
    pub fn minus(&self, g: &Radial) -> Radial {
        let (a, b) = (self.clone(), g.clone());
        let lo = self.support.0.min(g.support.0);
        let hi = self.support.1.max(g.support.1);
        let tail = match (self.tail_or_compact(), g.tail_or_compact()) {
            (Edge::Compact(x), Edge::Compact(y)) => Edge::Compact(x.max(y)),
            (Edge::Tail(t), Edge::Compact(y)) => Edge::Tail(TailLaw { from: t.from.max(y), ..t }),
            (Edge::Compact(y), Edge::Tail(t)) => Edge::Tail(TailLaw {
                from: t.from.max(y),
                amplitude: -t.amplitude,
                ..t
            }),
            (Edge::Tail(s), Edge::Tail(t)) => {
                let from = s.from.max(t.from);
                if (s.order - t.order).abs() <= 1e-14 * s.order.abs().max(1.0) {
                    let amp = s.amplitude - t.amplitude;
                    if amp.abs() <= 1e-14 * s.amplitude.abs().max(t.amplitude.abs()) {
                        Edge::Compact(from)
                    } else {
                        Edge::Tail(TailLaw {
                            amplitude: amp,
                            from,
                            ..s
                        })
                    }
                } else {
                    // keep the slower term; start the law where the faster one is below 1e-12 of it
                    let (slow, fast, sign) = if s.order < t.order { (s, t, 1.0) } else { (t, s, -1.0) };
                    let ratio = fast.amplitude.abs() / (1e-12 * slow.amplitude.abs());
                    Edge::Tail(TailLaw {
                        from: from.max(ratio.powf(1.0 / (fast.order - slow.order))),
                        amplitude: sign * slow.amplitude,
                        ..slow
                    })
                }
            }
        };
        let mut breaks: Vec<f64> = self.breaks.iter().chain(&g.breaks).copied().collect();
        breaks.extend([self.support.0, self.support.1, g.support.0, g.support.1]);
        let mut out = Radial::new(move |r| a.eval(r) - b.eval(r)).with_breaks(breaks);
        match tail {
            Edge::Compact(end) => out.support = (lo, end.min(hi)),
            Edge::Tail(t) => {
                out.support = (lo, hi);
                out.tail = Some(t);
            }
        }
        out
    }

    fn tail_or_compact(&self) -> Edge {
        match (self.tail, self.support.1.is_finite()) {
            (_, true) => Edge::Compact(self.support.1),
            (Some(t), false) => Edge::Tail(t),
            (None, false) => Edge::Compact(f64::INFINITY),
        }
    }
}

enum Edge {
    Compact(f64),
    Tail(TailLaw),
}

fn linear(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let i = x.partition_point(|v| *v <= t) - 1;
    let w = (t - x[i]) / (x[i + 1] - x[i]);
    y[i] + w * (y[i + 1] - y[i])
}

/// `Φ(x) = (1+|x|^2)^{-(N+ε-α-γ)/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibleWeight {
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub n: u32,
    /// Constant of the gradient and Laplacian bounds.
    pub k: f64,
}

impl AdmissibleWeight {
    /// Uses `ε = min(1/2, α - N(2-γ)/2)` when that is positive, else `1/2`.
    pub fn new(p: &ProblemParams) -> Self {
        let e = p.alpha - p.dim() * (2.0 - p.gamma) / 2.0;
        let eps = if e > 0.0 { e.min(0.5) } else { 0.5 };
        Self::with_epsilon(p, eps).expect("default epsilon is positive")
    }

    pub fn with_epsilon(p: &ProblemParams, epsilon: f64) -> Result<Self, NormError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(NormError::BadInput(format!("epsilon must be positive, got {epsilon}")));
        }
        let mut w = AdmissibleWeight {
            epsilon,
            alpha: p.alpha,
            gamma: p.gamma,
            n: p.n,
            k: 0.0,
        };
        w.k = w.bound_constant();
        Ok(w)
    }

    pub fn exponent(&self) -> f64 {
        self.n as f64 + self.epsilon - self.alpha - self.gamma
    }

    pub fn eval(&self, r: f64) -> f64 {
        (1.0 + r * r).powf(-0.5 * self.exponent())
    }

    /// Radial derivative `Φ'(r)`.
    pub fn gradient(&self, r: f64) -> f64 {
        let b = self.exponent();
        -b * r * (1.0 + r * r).powf(-0.5 * b - 1.0)
    }

    pub fn laplacian(&self, r: f64) -> f64 {
        let b = self.exponent();
        let n = self.n as f64;
        let q = 1.0 + r * r;
        b * self.eval(r) * ((b + 2.0 - n) * r * r - n) / (q * q)
    }

    fn bound_ratios(&self, r: f64) -> (f64, f64) {
        let g = self.gamma;
        let grad = self.gradient(r).abs() * (1.0 + r).powf(g - 1.0);
        let lap = self.laplacian(r).abs() * (1.0 + r).powf(g) / self.eval(r);
        (grad, lap)
    }

    /// Smallest `K` with `|∇Φ| ≤ K (1+|x|)^{1-γ}` and `|ΔΦ| ≤ K Φ (1+|x|)^-γ`,
    /// from a log scan refined by golden sections.
    fn bound_constant(&self) -> f64 {
        let grad = |r: f64| self.bound_ratios(r).0;
        let lap = |r: f64| self.bound_ratios(r).1;
        let k = scan_max(&grad, 1e-6, 1e8, 64)
            .max(scan_max(&lap, 1e-6, 1e8, 64))
            .max(lap(0.0))
            .max(grad(0.0));
        k * (1.0 + 1e-9)
    }

    /// `∫ Φ |x|^{-α-γ} dx`, finite for every `ε > 0`.
    pub fn decay_integral(&self) -> f64 {
        let n = self.n as f64;
        let e = n - 1.0 - self.alpha - self.gamma;
        let f = |r: f64| self.eval(r) * r.powf(e);
        let near = quad::adaptive(&f, 0.0, 1.0, 1e-13).value;
        let far = quad::adaptive_to_infinity(&f, 1.0, 1e-13).value;
        sphere_area(self.n) * (near + far)
    }
}

/// Maximum of a smooth positive function over `[lo, hi]` from a log scan
/// with `per_decade` nodes and golden-section refinement at the best node.
fn scan_max(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, per_decade: usize) -> f64 {
    let nodes = log_nodes(lo, hi, per_decade);
    let (best, _) = nodes
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, r)| {
            let v = f(*r);
            if v > acc.1 { (i, v) } else { acc }
        });
    let a = nodes[best.saturating_sub(1)];
    let b = nodes[(best + 1).min(nodes.len() - 1)];
    let (_, v) = golden_max(f, a, b);
    v.max(f(nodes[best]))
}

fn log_nodes(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    (0..=n).map(|k| lo * (hi / lo).powf(k as f64 / n as f64)).collect()
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() <= 1e-12 * b.abs() {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc > fd { (c, fc) } else { (d, fd) }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    Lp { p: f64, with_phi: bool },
    Linf,
    ZeroNorm,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::Lp { p, with_phi: true } => write!(f, "L{p}_phi"),
            NormKind::Lp { p, with_phi: false } => write!(f, "L{p}"),
            NormKind::Linf => f.write_str("Linf"),
            NormKind::ZeroNorm => f.write_str("zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    pub value: f64,
    pub kind: NormKind,
    /// Quadrature error estimate on `value`.
    pub error: f64,
    /// Maximising radius, for the zero norm.
    pub argmax: Option<f64>,
}

/// Relative accuracy requested of weighted `L^p` integrals.
pub const LP_REL_TOL: f64 = 1e-10;

/// Radius beyond which tails are integrated in closed form.
const TAIL_START: f64 = 1e6;

/// Integral of `g` over `[a, b]` on geometric panels through `breaks`.
fn panel_integral(g: &dyn Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], rel: f64) -> quad::Estimate {
    let mut pts = vec![a];
    let start = if a > 0.0 { a } else { breaks.iter().copied().find(|x| *x > 0.0).unwrap_or(b).min(b).min(1.0) };
    if a == 0.0 && start < b {
        pts.push(start);
    }
    let mut x = start;
    while x * 2.0 < b {
        x *= 2.0;
        pts.push(x);
    }
    pts.extend(breaks.iter().copied().filter(|v| *v > a && *v < b));
    pts.push(b);
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    pts.dedup_by(|p, q| (*p - *q).abs() <= 1e-15 * q.abs());
    sum_panels(g, &pts, rel)
}

/// Sums adaptive integrals over consecutive `pts`. Each panel is held to
/// `rel` times its own size plus an equal share of the total, so that
/// negligible panels do not drive the refinement.
fn sum_panels(g: &dyn Fn(f64) -> f64, pts: &[f64], rel: f64) -> quad::Estimate {
    let gl = quad::GaussLegendre::new(8);
    let rough: Vec<f64> = pts.windows(2).map(|w| gl.integrate(g, w[0], w[1]).abs()).collect();
    let share = rough.iter().sum::<f64>() / rough.len().max(1) as f64;
    let mut total = quad::Estimate { value: 0.0, error: 0.0 };
    for (w, r) in pts.windows(2).zip(&rough) {
        let est = quad::adaptive(&g, w[0], w[1], (rel * (r + share)).max(1e-300));
        total.value += est.value;
        total.error += est.error;
    }
    total
}

/// `(∫ |f|^p Φ ρ dx)^{1/p}` over `R^N`.
pub fn weighted_lp(
    f: &Radial,
    p: f64,
    phi: Option<&AdmissibleWeight>,
    weight: &WeightSpec,
    n: u32,
) -> Result<NormReport, NormError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(NormError::BadInput(format!("p must lie in [1, ∞), got {p}")));
    }
    let nf = n as f64;
    let phi_at = |r: f64| phi.map_or(1.0, |w| w.eval(r));
    let g = |r: f64| {
        let v = f.eval(r);
        if v == 0.0 {
            return 0.0;
        }
        v.abs().powf(p) * phi_at(r) * weight.eval(r) * r.powf(nf - 1.0)
    };
    let (lo, hi) = f.support();
    let mut upper = hi;
    let mut tail_value = 0.0;
    let mut tail_error = 0.0;
    if !hi.is_finite() {
        let t = f
            .tail()
            .ok_or_else(|| NormError::BadInput("unbounded support needs a tail law".into()))?;
        let phi_decay = phi.map_or(0.0, |w| w.exponent());
        let k = p * t.order + phi_decay + weight.gamma - nf;
        if k <= 1e-12 {
            return Err(NormError::Divergent { exponent: k });
        }
        upper = t.from.max(TAIL_START).max(lo * 2.0);
        // integrand ≈ g(R)(r/R)^{-k-1} beyond R
        tail_value = g(upper) * upper / k;
        tail_error = tail_value.abs() * (phi_decay + weight.gamma + 1.0) / upper;
    }
    let body = if upper > lo {
        panel_integral(&g, lo, upper, f.breaks(), LP_REL_TOL)
    } else {
        quad::Estimate { value: 0.0, error: 0.0 }
    };
    let omega = sphere_area(n);
    let integral = omega * (body.value + tail_value);
    let err = omega * (body.error + tail_error);
    let value = integral.max(0.0).powf(1.0 / p);
    let error = if integral > 0.0 { value / (p * integral) * err } else { err.powf(1.0 / p) };
    Ok(NormReport {
        value,
        kind: NormKind::Lp {
            p,
            with_phi: phi.is_some(),
        },
        error,
        argmax: None,
    })
}

/// `max |f|` over the given radii.
pub fn sup_norm(f: &Radial, radii: &[f64]) -> NormReport {
    let value = radii.iter().fold(0.0f64, |a, r| a.max(f.eval(*r).abs()));
    NormReport {
        value,
        kind: NormKind::Linf,
        error: 0.0,
        argmax: None,
    }
}

/// `∫_0^θ sin^k φ dφ` by the standard reduction formula.
fn sine_power_integral(k: u32, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut lo = theta;
    let mut hi = 1.0 - c;
    if k == 0 {
        return lo;
    }
    for j in 2..=k {
        let jf = j as f64;
        let next = -s.powi(j as i32 - 1) * c / jf + (jf - 1.0) / jf * lo;
        lo = hi;
        hi = next;
    }
    hi
}

/// Area of `{|y| = s} ∩ B(z, h)` for `|z| = big_r`.
pub fn cap_area(n: u32, s: f64, big_r: f64, h: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s + big_r <= h {
        return sphere_area(n) * s.powi(n as i32 - 1);
    }
    let cos = (s * s + big_r * big_r - h * h) / (2.0 * s * big_r);
    if cos >= 1.0 {
        return 0.0;
    }
    let theta = cos.max(-1.0).acos();
    sphere_area(n - 1) * s.powi(n as i32 - 1) * sine_power_integral(n - 2, theta)
}

/// `∫_{B(z, h)} |f| ρ dx` with `|z| = big_r`, reduced to a radial integral.
pub fn ball_integral(f: &Radial, weight: &WeightSpec, n: u32, big_r: f64, h: f64) -> quad::Estimate {
    let a = (big_r - h).max(0.0);
    let b = big_r + h;
    let g = |s: f64| {
        let v = f.eval(s);
        if v == 0.0 {
            return 0.0;
        }
        v.abs() * weight.eval(s) * cap_area(n, s, big_r, h)
    };
    let mut breaks = f.breaks().to_vec();
    breaks.extend([f.support().0, f.support().1, (h - big_r).abs()]);
    let mut pts = vec![a];
    pts.extend(breaks.into_iter().filter(|v| *v > a && *v < b));
    pts.push(b);
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    pts.dedup();
    sum_panels(&g, &pts, 1e-12)
}

/// Monte Carlo estimate of [`ball_integral`] from uniform samples in the ball.
pub fn ball_integral_monte_carlo(
    f: &Radial,
    weight: &WeightSpec,
    n: u32,
    big_r: f64,
    h: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let d = n as usize;
    let mut x = vec![0.0f64; d];
    let mut sum = 0.0;
    for _ in 0..samples {
        let mut norm2 = 0.0f64;
        for v in x.iter_mut() {
            *v = StandardNormal.sample(rng);
            norm2 += *v * *v;
        }
        let rad = h * rng.random::<f64>().powf(1.0 / n as f64) / norm2.sqrt();
        let mut s2 = 0.0;
        for (i, v) in x.iter().enumerate() {
            let c = if i == 0 { big_r } else { 0.0 };
            let y = c + rad * v;
            s2 += y * y;
        }
        let s = s2.sqrt();
        if s > 0.0 {
            sum += f.eval(s).abs() * weight.eval(s);
        }
    }
    ball_volume(n, h) * sum / samples as f64
}

/// Nodes per decade of the `R` scan.
pub const ZERO_NORM_NODES_PER_DECADE: usize = 64;
/// Relative growth over the last decade that counts as an unresolved supremum.
pub const TAIL_GROWTH_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroNormScan {
    pub report: NormReport,
    /// `(R, R^{-γ(N-2)/2} ∫_{B(z_R, R^{γ/2})} |f| ρ)` at every scan node.
    pub scan: Vec<(f64, f64)>,
}

impl ZeroNormScan {
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "R,partial_value")?;
        for (r, v) in &self.scan {
            writeln!(w, "{r:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// `sup_{1 ≤ R ≤ R_max} R^{-γ(N-2)/2} ∫_{B(z_R, R^{γ/2})} |f| ρ dx`, with
/// `γ` taken from `weight`.
pub fn zero_norm_scan(f: &Radial, weight: &WeightSpec, n: u32, r_max: f64) -> Result<ZeroNormScan, NormError> {
    if !(r_max >= 1.0) {
        return Err(NormError::BadInput(format!("R_max must be at least 1, got {r_max}")));
    }
    let gamma = weight.gamma;
    let nf = n as f64;
    let partial = |big_r: f64| -> (f64, f64) {
        let h = big_r.powf(0.5 * gamma);
        let e = ball_integral(f, weight, n, big_r, h);
        let s = big_r.powf(-0.5 * gamma * (nf - 2.0));
        (s * e.value, s * e.error)
    };
    let nodes = if r_max > 1.0 { log_nodes(1.0, r_max, ZERO_NORM_NODES_PER_DECADE) } else { vec![1.0] };
    let scan: Vec<(f64, f64)> = nodes.iter().map(|r| (*r, partial(*r).0)).collect();
    let (best, _) = scan
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, (_, v))| if *v > acc.1 { (i, *v) } else { acc });
    let (mut arg, mut value) = scan[best];
    if scan.len() > 2 {
        let a = scan[best.saturating_sub(1)].0;
        let b = scan[(best + 1).min(scan.len() - 1)].0;
        let (x, v) = golden_max(&|r| partial(r).0, a, b);
        if v > value {
            arg = x;
            value = v;
        }
    }
    let error = partial(arg).1;
    let report = NormReport {
        value,
        kind: NormKind::ZeroNorm,
        error,
        argmax: Some(arg),
    };
    if r_max >= 10.0 && best == scan.len() - 1 {
        let last = scan[scan.len() - 1].1;
        let decade_ago = partial(r_max / 10.0).0;
        let growth = if decade_ago > 0.0 { last / decade_ago - 1.0 } else { f64::INFINITY };
        if growth > TAIL_GROWTH_TOL {
            return Err(NormError::TailGrowth {
                r_max,
                growth,
                partial: report,
            });
        }
    }
    Ok(ZeroNormScan { report, scan })
}

pub fn zero_norm(f: &Radial, weight: &WeightSpec, n: u32, r_max: f64) -> Result<NormReport, NormError> {
    zero_norm_scan(f, weight, n, r_max).map(|s| s.report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    /// `sup |r^γ ρ(r) - c|` over the last sampled decade.
    pub deviation: f64,
    /// `max - min` of `r^γ ρ(r)` over the last decade; a limit forces this to zero.
    pub oscillation: f64,
    pub passes: bool,
    /// Two-sided bound held at every sample.
    pub bounds_ok: bool,
    /// Finite-difference estimate of `sup |ρ'| r^{γ+1}` when the weight is flagged C¹.
    pub gradient_constant: Option<f64>,
    pub samples: Vec<(f64, f64)>,
}

/// Samples `r^γ ρ(r)` on `[1, r_far]` at 16 points per decade.
pub fn check_weight_conditions(weight: &WeightSpec, c: f64, r_far: f64, tol: f64) -> WeightReport {
    let g = weight.gamma;
    let radii = log_nodes(1e-3, r_far, 16);
    let samples: Vec<(f64, f64)> = radii.iter().map(|r| (*r, r.powf(g) * weight.eval(*r))).collect();
    let last: Vec<f64> = samples.iter().filter(|(r, _)| *r >= r_far / 10.0).map(|(_, v)| *v).collect();
    let deviation = last.iter().fold(0.0f64, |a, v| a.max((v - c).abs()));
    let (mn, mx) = last.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let bounds_ok = radii.iter().all(|r| weight.within_bounds(*r));
    let gradient_constant = weight.lipschitz_ok.then(|| {
        radii
            .iter()
            .map(|&r| {
                let h = 1e-6 * r;
                let d = (weight.eval(r + h) - weight.eval(r - h)) / (2.0 * h);
                d.abs() * r.powf(g + 1.0)
            })
            .fold(0.0f64, f64::max)
    });
    WeightReport {
        deviation,
        oscillation: mx - mn,
        passes: deviation <= tol * c && bounds_ok,
        bounds_ok,
        gradient_constant,
        samples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatumRow {
    pub xi: f64,
    /// `∫ |ξ^α u0(ξx) - b|x|^-α| Φ ρ_ξ dx`.
    pub metric_b: f64,
    /// `‖ξ^α u0(ξ·) - b|x|^-α‖_{0,ρ_ξ}`.
    pub metric_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatumReport {
    /// `sup |r^α u0(r) - b|` over the last decade before `r_far`.
    pub tail_deviation: f64,
    pub rows: Vec<DatumRow>,
}

impl DatumReport {
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "xi,metric_b,metric_c")?;
        for r in &self.rows {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", r.xi, r.metric_b, r.metric_c)?;
        }
        Ok(())
    }

    /// Both metrics are non-increasing along the ladder (to `slack` relative).
    pub fn decreasing(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].metric_b <= w[0].metric_b * (1.0 + slack) + 1e-300
                && w[1].metric_c <= w[0].metric_c * (1.0 + slack) + 1e-300
        })
    }
}

/// `ξ^α u0(ξ r)`.
pub fn rescale_radial(u0: &Radial, alpha: f64, xi: f64) -> Radial {
    let inner = u0.clone();
    let scale = xi.powf(alpha);
    let (lo, hi) = u0.support();
    let mut out = Radial::new(move |r| scale * inner.eval(xi * r))
        .with_support(lo / xi, hi / xi)
        .with_breaks(u0.breaks().iter().map(|b| b / xi).collect());
    if let Some(t) = u0.tail() {
        out = out.with_tail(TailLaw {
            order: t.order,
            amplitude: t.amplitude * scale * xi.powf(-t.order),
            from: t.from / xi,
        });
    }
    out
}

/// Checks the datum against `b|x|^-α`: pointwise tail and, along `xis`,
/// the `Φ`-weighted `L^1` distance and the zero norm of the rescaled gap.
pub fn check_datum_conditions(
    u0: &Radial,
    p: &ProblemParams,
    phi: &AdmissibleWeight,
    weight: &WeightSpec,
    xis: &[f64],
    r_far: f64,
    zero_norm_r_max: f64,
) -> Result<DatumReport, NormError> {
    let tail_deviation = log_nodes(r_far / 10.0, r_far, 64)
        .iter()
        .map(|r| (r.powf(p.alpha) * u0.eval(*r) - p.b).abs())
        .fold(0.0f64, f64::max);
    let target = Radial::power(p.b, p.alpha);
    let mut rows = Vec::with_capacity(xis.len());
    for &xi in xis {
        let gap = rescale_radial(u0, p.alpha, xi).minus(&target);
        let w = weight.rescaled(xi);
        let metric_b = weighted_lp(&gap, 1.0, Some(phi), &w, p.n)?.value;
        let metric_c = match zero_norm(&gap, &w, p.n, zero_norm_r_max) {
            Ok(r) => r.value,
            Err(NormError::TailGrowth { partial, .. }) => partial.value,
            Err(e) => return Err(e),
        };
        rows.push(DatumRow { xi, metric_b, metric_c });
    }
    Ok(DatumReport { tail_deviation, rows })
}
