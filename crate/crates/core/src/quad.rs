//! Quadrature helpers: fixed Gauss–Legendre panels and an adaptive wrapper
//! around double-exponential integration.

use std::f64::consts::PI;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Nodes on `[-1, 1]`, ascending.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let c = 0.5 * (b - a);
        let d = 0.5 * (b + a);
        let mut sum = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            sum += w * f(c * x + d);
        }
        sum * c
    }

    /// Sums the rule over consecutive panels `[p_i, p_{i+1}]`.
    pub fn integrate_panels(&self, f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
        breaks.windows(2).map(|w| self.integrate(&f, w[0], w[1])).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const MAX_DEPTH: usize = 40;

/// Integrates `f` over `[a, b]` to absolute error `tol`, bisecting wherever
/// the double-exponential rule cannot certify its estimate. Bisection stops
/// early once halving no longer lowers the error estimate, which happens
/// when the request is below roundoff.
pub fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Estimate {
    if a == b {
        return Estimate { value: 0.0, error: 0.0 };
    }
    let whole = panel(f, a, b, tol);
    recurse(f, a, b, tol, 0, whole)
}

fn panel(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Estimate {
    let out = quadrature::double_exponential::integrate(f, a, b, tol);
    Estimate {
        value: out.integral,
        error: out.error_estimate,
    }
}

fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize, here: Estimate) -> Estimate {
    if here.error <= tol || depth >= MAX_DEPTH {
        return here;
    }
    let mid = 0.5 * (a + b);
    let l = panel(f, a, mid, 0.5 * tol);
    let r = panel(f, mid, b, 0.5 * tol);
    if l.error + r.error >= here.error {
        return here;
    }
    let l = recurse(f, a, mid, 0.5 * tol, depth + 1, l);
    let r = recurse(f, mid, b, 0.5 * tol, depth + 1, r);
    Estimate {
        value: l.value + r.value,
        error: l.error + r.error,
    }
}

/// Integrates `f` over `[a, ∞)` through the map `x = a + t / (1 - t)`.
pub fn adaptive_to_infinity(f: &impl Fn(f64) -> f64, a: f64, tol: f64) -> Estimate {
    let g = |t: f64| {
        let one = 1.0 - t;
        if one <= 0.0 {
            return 0.0;
        }
        f(a + t / one) / (one * one)
    };
    adaptive(&g, 0.0, 1.0, tol)
}
