//! Radial density weights `ρ(r)` and their cell integrals.

use std::sync::Arc;

use log::warn;

use crate::interp::Pchip;
use crate::quad;

#[derive(Debug, Clone)]
pub enum WeightKind {
    /// `c r^-γ`.
    PurePower { c: f64 },
    /// `c (a + r)^-γ`; `a = 1` is the bounded model weight, other shifts
    /// arise from rescaling it.
    Bounded { c: f64, shift: f64 },
    /// Monotone cubic interpolation of `ln ρ` against `ln r`, extended
    /// linearly in log-log coordinates outside the table.
    Custom(Arc<LogTable>),
}

#[derive(Debug, Clone)]
pub struct LogTable {
    interp: Pchip,
    slope_lo: f64,
    slope_hi: f64,
}

impl LogTable {
    fn eval_log(&self, s: f64) -> f64 {
        let x = self.interp.nodes();
        let y = self.interp.values();
        let n = x.len();
        if s < x[0] {
            y[0] + self.slope_lo * (s - x[0])
        } else if s > x[n - 1] {
            y[n - 1] + self.slope_hi * (s - x[n - 1])
        } else {
            self.interp.eval(s)
        }
    }

    fn slope_log(&self, s: f64) -> f64 {
        let x = self.interp.nodes();
        if s < x[0] {
            self.slope_lo
        } else if s > x[x.len() - 1] {
            self.slope_hi
        } else {
            self.interp.derivative(s)
        }
    }
}

/// A density satisfying `c_lower (1+r)^-γ ≤ ρ ≤ c_upper r^-γ`.
#[derive(Debug, Clone)]
pub struct WeightSpec {
    pub kind: WeightKind,
    pub gamma: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    /// `ρ` is C¹ away from the origin with `|ρ'| ≤ Ĉ r^{-γ-1}`.
    pub lipschitz_ok: bool,
    /// Set when sampling found the two-sided bound violated.
    pub bounds_violated: bool,
}

impl WeightSpec {
    pub fn pure_power(c: f64, gamma: f64) -> Self {
        WeightSpec {
            kind: WeightKind::PurePower { c },
            gamma,
            c_lower: c,
            c_upper: c,
            lipschitz_ok: true,
            bounds_violated: false,
        }
    }

    /// `c (1+r)^-γ`.
    pub fn bounded(c: f64, gamma: f64) -> Self {
        Self::shifted(c, gamma, 1.0)
    }

    fn shifted(c: f64, gamma: f64, shift: f64) -> Self {
        // (a+r)^-γ ≥ (1+r)^-γ needs a ≤ 1; for a > 1 use (a+r) ≤ a(1+r)
        let c_lower = if shift <= 1.0 { c } else { c * shift.powf(-gamma) };
        WeightSpec {
            kind: WeightKind::Bounded { c, shift },
            gamma,
            c_lower,
            c_upper: c,
            lipschitz_ok: true,
            bounds_violated: false,
        }
    }

    /// Tabulated weight with bounds checked on the table and between nodes.
    /// `lipschitz_ok` is cleared when the log-log slope jumps between
    /// neighbouring intervals by more than a bounded second derivative allows.
    pub fn custom(gamma: f64, r: &[f64], rho: &[f64], c_lower: f64, c_upper: f64) -> Self {
        assert!(r.len() >= 3 && r.len() == rho.len(), "custom weight needs ≥3 nodes");
        assert!(r.windows(2).all(|w| w[0] > 0.0 && w[1] > w[0]));
        assert!(rho.iter().all(|v| *v > 0.0 && v.is_finite()));
        let s: Vec<f64> = r.iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = rho.iter().map(|v| v.ln()).collect();
        let n = s.len();
        let slopes: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (s[i + 1] - s[i])).collect();
        let smooth = (1..n - 1).all(|i| {
            (slopes[i] - slopes[i - 1]).abs() <= KINK_CURVATURE * (s[i + 1] - s[i - 1])
        });
        let table = LogTable {
            interp: Pchip::new(s, y),
            slope_lo: slopes[0],
            slope_hi: slopes[n - 2],
        };
        let mut w = WeightSpec {
            kind: WeightKind::Custom(Arc::new(table)),
            gamma,
            c_lower,
            c_upper,
            lipschitz_ok: smooth,
            bounds_violated: false,
        };
        let lo = r[0];
        let hi = r[n - 1];
        let samples = 64 * n;
        let violated = (0..=samples).any(|k| {
            let x = lo * (hi / lo).powf(k as f64 / samples as f64);
            !w.within_bounds(x)
        });
        if violated {
            warn!("tabulated weight violates c_lower(1+r)^-γ ≤ ρ ≤ c_upper r^-γ");
        }
        w.bounds_violated = violated;
        w
    }

    pub fn within_bounds(&self, r: f64) -> bool {
        let v = self.eval(r);
        let slack = 1e-12;
        v >= self.c_lower * (1.0 + r).powf(-self.gamma) * (1.0 - slack)
            && v <= self.c_upper * r.powf(-self.gamma) * (1.0 + slack)
    }

    pub fn eval(&self, r: f64) -> f64 {
        match &self.kind {
            WeightKind::PurePower { c } => c * r.powf(-self.gamma),
            WeightKind::Bounded { c, shift } => c * (shift + r).powf(-self.gamma),
            WeightKind::Custom(t) => t.eval_log(r.ln()).exp(),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let g = self.gamma;
        match &self.kind {
            WeightKind::PurePower { c } => -g * c * r.powf(-g - 1.0),
            WeightKind::Bounded { c, shift } => -g * c * (shift + r).powf(-g - 1.0),
            WeightKind::Custom(t) => {
                let s = r.ln();
                t.eval_log(s).exp() * t.slope_log(s) / r
            }
        }
    }

    /// `ξ^γ ρ(ξ r)`.
    pub fn rescaled(&self, xi: f64) -> Self {
        let g = self.gamma;
        let mut out = match &self.kind {
            WeightKind::PurePower { .. } => self.clone(),
            WeightKind::Bounded { c, shift } => Self::shifted(*c, g, shift / xi),
            WeightKind::Custom(t) => {
                let s: Vec<f64> = t.interp.nodes().iter().map(|v| v - xi.ln()).collect();
                let y: Vec<f64> = t.interp.values().iter().map(|v| v + g * xi.ln()).collect();
                let table = LogTable {
                    interp: Pchip::new(s, y),
                    slope_lo: t.slope_lo,
                    slope_hi: t.slope_hi,
                };
                WeightSpec {
                    kind: WeightKind::Custom(Arc::new(table)),
                    ..self.clone()
                }
            }
        };
        if let WeightKind::Custom(_) = out.kind {
            // ξ^γ(1+ξr)^-γ ≥ (1+r)^-γ for ξ ≥ 1, so the lower constant survives
            if xi < 1.0 {
                out.c_lower = self.c_lower * xi.powf(g);
            }
        }
        out
    }

    /// `∫_a^b ρ(r) r^{n-1} dr`, closed form for the pure power.
    pub fn cell_measure(&self, n: u32, a: f64, b: f64) -> f64 {
        let nf = n as f64;
        match &self.kind {
            WeightKind::PurePower { c } => {
                let e = nf - self.gamma;
                c * (b.powf(e) - a.powf(e)) / e
            }
            _ => {
                let f = |r: f64| self.eval(r) * r.powf(nf - 1.0);
                let scale = f(a).abs().max(f(b).abs()) * (b - a);
                quad::adaptive(&f, a, b, 1e-14 * scale).value
            }
        }
    }
}

/// Largest log-log curvature a tabulated weight may show and still count as C¹;
/// `(1+r)^-γ` stays below `γ/4`.
const KINK_CURVATURE: f64 = 2.0;
