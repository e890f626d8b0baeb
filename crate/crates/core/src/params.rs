//! Problem parameters and the exponents derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when comparing `alpha` with the critical value `(N-2)/m`.
/// Ties resolve to the closed (everywhere decreasing) side.
pub const THRESHOLD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} must satisfy {bound}")]
    OutOfRange { field: &'static str, bound: String },
}

/// Unvalidated parameter tuple, as read from a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    #[serde(rename = "N")]
    pub n: f64,
    pub m: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub b: f64,
    pub c: f64,
}

/// Validated parameters of `c |x|^-gamma u_t = Δ(u^m)` with datum tail `b |x|^-alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: u32,
    pub m: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    /// Decay rate of integrable (Barenblatt-type) solutions.
    pub lambda: f64,
    /// Spread rate paired with `lambda`.
    pub theta: f64,
    /// Decay rate of the non-integrable self-similar solution.
    pub lambda_alpha: f64,
}

/// Parameters of the equivalent unweighted profile problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeParams {
    pub n: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub m: f64,
}

/// Which branch of the transition dichotomy a parameter tuple falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    EverywhereDecreasing,
    Transition,
}

fn out_of_range(field: &'static str, bound: impl Into<String>) -> ParamError {
    ParamError::OutOfRange {
        field,
        bound: bound.into(),
    }
}

impl RawParams {
    pub fn validate(&self) -> Result<ProblemParams, ParamError> {
        ProblemParams::validate(self)
    }
}

impl From<ProblemParams> for RawParams {
    fn from(p: ProblemParams) -> Self {
        RawParams {
            n: p.n as f64,
            m: p.m,
            gamma: p.gamma,
            alpha: p.alpha,
            b: p.b,
            c: p.c,
        }
    }
}

impl ProblemParams {
    /// Checks every standing assumption and returns the first violated bound.
    pub fn validate(raw: &RawParams) -> Result<Self, ParamError> {
        let RawParams {
            n,
            m,
            gamma,
            alpha,
            b,
            c,
        } = *raw;
        if !n.is_finite() || n.fract() != 0.0 || n < 3.0 {
            return Err(out_of_range("N", "N >= 3 (integer)"));
        }
        if !(m > 1.0) || !m.is_finite() {
            return Err(out_of_range("m", "m > 1"));
        }
        if !(0.0..2.0).contains(&gamma) {
            return Err(out_of_range("gamma", "0 <= gamma < 2"));
        }
        if !(alpha > 0.0) {
            return Err(out_of_range("alpha", "alpha > 0"));
        }
        if !(alpha < n - gamma) {
            return Err(out_of_range(
                "alpha",
                format!("alpha < N − gamma = {}", n - gamma),
            ));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(out_of_range("b", "b > 0"));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(out_of_range("c", "c > 0"));
        }
        Ok(ProblemParams {
            n: n as u32,
            m,
            gamma,
            alpha,
            b,
            c,
        })
    }

    pub fn new(n: u32, m: f64, gamma: f64, alpha: f64, b: f64, c: f64) -> Result<Self, ParamError> {
        Self::validate(&RawParams {
            n: n as f64,
            m,
            gamma,
            alpha,
            b,
            c,
        })
    }

    pub fn dim(&self) -> f64 {
        self.n as f64
    }

    pub fn exponents(&self) -> Exponents {
        derive_exponents(self)
    }

    pub fn tilde(&self) -> TildeParams {
        to_unweighted(self)
    }

    /// `(N-2)/m`, the weight-independent dichotomy threshold.
    pub fn critical_alpha(&self) -> f64 {
        (self.dim() - 2.0) / self.m
    }

    /// Branch predicted by comparing `alpha` with `(N-2)/m`.
    pub fn branch(&self) -> Branch {
        let crit = self.critical_alpha();
        if self.alpha <= crit + THRESHOLD_TOL * crit.max(1.0) {
            Branch::EverywhereDecreasing
        } else {
            Branch::Transition
        }
    }

    pub fn is_critical(&self) -> bool {
        (self.alpha - self.critical_alpha()).abs() <= THRESHOLD_TOL
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self, ParamError> {
        Self::new(self.n, self.m, self.gamma, alpha, self.b, self.c)
    }
}

pub fn derive_exponents(p: &ProblemParams) -> Exponents {
    let n = p.dim();
    let g = p.gamma;
    let lambda = (n - g) / ((n - g) * (p.m - 1.0) + 2.0 - g);
    let theta = (2.0 - g) / (n - g);
    let lambda_alpha = p.alpha / (p.alpha * (p.m - 1.0) + 2.0 - g);
    Exponents {
        lambda,
        theta,
        lambda_alpha,
    }
}

pub fn to_unweighted(p: &ProblemParams) -> TildeParams {
    let g = p.gamma;
    let la = derive_exponents(p).lambda_alpha;
    let alpha = 2.0 * p.alpha / (2.0 - g);
    TildeParams {
        n: 2.0 * (p.dim() - g) / (2.0 - g),
        alpha,
        lambda: 2.0 * alpha * la / ((2.0 - g) * p.alpha),
        m: p.m,
    }
}

impl TildeParams {
    /// `alpha~ m - N~ + 2`; its sign decides the shape of `Theta`.
    pub fn dichotomy_indicator(&self) -> f64 {
        self.alpha * self.m - self.n + 2.0
    }

    pub fn branch(&self) -> Branch {
        // the indicator is 2(alpha m - (N-2))/(2-gamma); scale the tie tolerance accordingly
        if self.dichotomy_indicator() <= THRESHOLD_TOL * self.m * 2.0 * self.alpha.max(1.0) {
            Branch::EverywhereDecreasing
        } else {
            Branch::Transition
        }
    }
}
