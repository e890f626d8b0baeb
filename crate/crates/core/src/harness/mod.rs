//! Long-time experiments: rescaling, convergence curves, smoothing,
//! contraction and barrier runs, and profile/PDE cross-validation.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::norms::{self, AdmissibleWeight, NormError, Radial};
use crate::params::ProblemParams;
use crate::pde::{fmt_f64, Manifest, PdeError, RadialField, Trajectory, WeightSpec};
use crate::profile::{ProfileError, SelfSimilarEval};

mod experiments;

pub use experiments::*;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("radius {radius} maps outside the stored grid (r_max = {r_max})")]
    OutOfDomain { radius: f64, r_max: f64 },
    #[error("time {0} is not stored in the trajectory")]
    MissingTime(f64),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad input: {0}")]
    BadInput(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Scale factor `ξ` with its time factor `ξ^{α/λ_α}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleFrame {
    pub xi: f64,
    pub time_factor: f64,
    pub alpha: f64,
}

impl RescaleFrame {
    pub fn new(xi: f64, p: &ProblemParams) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(HarnessError::BadInput(format!("scale factor must be positive, got {xi}")));
        }
        let la = p.exponents().lambda_alpha;
        Ok(RescaleFrame {
            xi,
            time_factor: xi.powf(p.alpha / la),
            alpha: p.alpha,
        })
    }

    /// Geometric ladder `ξ = 2^j`, `j = 0..count`.
    pub fn ladder(p: &ProblemParams, count: usize) -> Result<Vec<Self>> {
        (0..count).map(|j| Self::new(2f64.powi(j as i32), p)).collect()
    }
}

/// Linear interpolation of the cell values, supported on the span of the centers.
pub fn field_radial(field: &RadialField) -> Radial {
    Radial::from_table(field.grid.centers().to_vec(), field.u.clone())
}

/// `ξ^α u(ξ r)` at the given radii.
pub fn rescale_values(field: &RadialField, frame: &RescaleFrame, radii: &[f64]) -> Result<Vec<f64>> {
    let c = field.grid.centers();
    let (lo, hi) = (c[0], c[c.len() - 1]);
    let f = field_radial(field);
    let scale = frame.xi.powf(frame.alpha);
    radii
        .iter()
        .map(|&r| {
            let y = frame.xi * r;
            if y > hi * (1.0 + 1e-12) || y < lo * (1.0 - 1e-12) {
                return Err(HarnessError::OutOfDomain {
                    radius: y,
                    r_max: field.grid.r_max(),
                });
            }
            Ok(scale * f.eval(y.clamp(lo, hi)))
        })
        .collect()
}

/// `u_k(·, t) = ξ^α u(ξ ·, ξ^{α/λ_α} t)` as a radial function on the mapped grid.
pub fn rescale(traj: &Trajectory, frame: &RescaleFrame, t: f64) -> Result<Radial> {
    let target = frame.time_factor * t;
    let field = if (traj.initial.t - target).abs() <= 1e-12 * target.abs().max(1.0) {
        &traj.initial
    } else {
        traj.at(target).ok_or(HarnessError::MissingTime(target))?
    };
    Ok(norms::rescale_radial(&field_radial(field), frame.alpha, frame.xi))
}

/// `ρ_k(x) = ξ^γ ρ(ξ x)`.
pub fn rescale_weight(weight: &WeightSpec, frame: &RescaleFrame) -> WeightSpec {
    weight.rescaled(frame.xi)
}

/// `u_{0k}(x) = ξ^α u_0(ξ x)`.
pub fn rescale_datum(u0: &Radial, frame: &RescaleFrame) -> Radial {
    norms::rescale_radial(u0, frame.alpha, frame.xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveFlag {
    /// The weight is not known to satisfy the gradient bound the uniform
    /// statement assumes; the curve is still computed.
    WeightNotC1,
}

/// Error values against time (or against a `ξ` ladder).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurve {
    pub norm_kind: String,
    pub points: Vec<(f64, f64)>,
    pub flags: Vec<CurveFlag>,
}

impl ConvergenceCurve {
    pub fn new(norm_kind: impl Into<String>) -> Self {
        ConvergenceCurve {
            norm_kind: norm_kind.into(),
            points: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    /// Every value at most `(1 + slack)` times its predecessor.
    pub fn is_decreasing(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + slack))
    }

    pub fn final_over_initial(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) if a.1 > 0.0 => b.1 / a.1,
            (Some(_), Some(b)) if b.1 == 0.0 => 0.0,
            _ => f64::INFINITY,
        }
    }

    /// Last value below half of the largest value.
    pub fn eventually_decreasing(&self) -> bool {
        let max = self.errors().fold(0.0f64, f64::max);
        self.points.last().is_some_and(|p| p.1 < 0.5 * max)
    }

    pub fn max_error(&self) -> f64 {
        self.errors().fold(0.0f64, f64::max)
    }

    /// Columns `t,error,norm_kind`.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "t,error,norm_kind")?;
        for (t, e) in &self.points {
            writeln!(w, "{},{},{}", fmt_f64(*t), fmt_f64(*e), self.norm_kind)?;
        }
        Ok(())
    }
}

/// Both forms of the weighted `L^p` convergence quantity along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LpConvergence {
    /// `‖t^{λ_α}u(t^{λ_α/α}·, t) − g_α‖_{L^p(Φ|x|^-γ)}`.
    pub curve: ConvergenceCurve,
    /// The same quantity from `‖u(t) − 𝒰_α(t)‖` in the original variables.
    pub original_variables: ConvergenceCurve,
    /// Largest relative gap between the two forms.
    pub max_form_gap: f64,
}

fn field_at(traj: &Trajectory, t: f64) -> Result<&RadialField> {
    if (traj.initial.t - t).abs() <= 1e-12 * t.abs().max(1.0) {
        return Ok(&traj.initial);
    }
    traj.at(t).ok_or(HarnessError::MissingTime(t))
}

/// Evaluates the weighted `L^p` distance to the profile over the rescaled
/// computational domain at each of `times`.
pub fn convergence_lp(
    traj: &Trajectory,
    eval: &SelfSimilarEval,
    phi: &AdmissibleWeight,
    p: f64,
    times: &[f64],
) -> Result<LpConvergence> {
    let params = *eval.params();
    let la = params.exponents().lambda_alpha;
    let (n, gamma, alpha) = (params.n, params.gamma, params.alpha);
    let unit = WeightSpec::pure_power(1.0, gamma);
    let kind = norms::NormKind::Lp { p, with_phi: true }.to_string();
    let mut curve = ConvergenceCurve::new(kind.clone());
    let mut original = ConvergenceCurve::new(format!("{kind}_original"));
    let mut gap = 0.0f64;
    for &t in times {
        let field = field_at(traj, t)?;
        let centers = field.grid.centers();
        let (lo, hi) = (centers[0], centers[centers.len() - 1]);
        let s = t.powf(la / alpha);
        let interp = field_radial(field);

        let rescaled = norms::rescale_radial(&interp, alpha, s);
        let prof = eval.clone();
        let x_form = Radial::new(move |x| rescaled.eval(x) - prof.profile().g_alpha(x))
            .with_support(lo / s, hi / s)
            .with_breaks(centers.iter().map(|c| c / s).collect());
        let a = norms::weighted_lp(&x_form, p, Some(phi), &unit, n)?.value;

        let prof = eval.clone();
        let phi_c = *phi;
        let y_form = Radial::new(move |y| (interp.eval(y) - prof.eval(y, t)).abs() * phi_c.eval(y / s).powf(1.0 / p))
            .with_support(lo, hi)
            .with_breaks(centers.to_vec());
        let b = norms::weighted_lp(&y_form, p, None, &unit, n)?.value * t.powf(la) * s.powf((gamma - n as f64) / p);

        let scale = a.abs().max(b.abs());
        if scale > 0.0 {
            gap = gap.max((a - b).abs() / scale);
        }
        curve.points.push((t, a));
        original.points.push((t, b));
    }
    Ok(LpConvergence {
        curve,
        original_variables: original,
        max_form_gap: gap,
    })
}

/// `max_i |t^{λ_α} u_i(t) − g_α(r_i / t^{λ_α/α})|` over the cells.
pub fn convergence_uniform(
    traj: &Trajectory,
    eval: &SelfSimilarEval,
    weight: &WeightSpec,
    times: &[f64],
) -> Result<ConvergenceCurve> {
    let params = eval.params();
    let la = params.exponents().lambda_alpha;
    let mut curve = ConvergenceCurve::new(norms::NormKind::Linf.to_string());
    if !weight.lipschitz_ok {
        log::warn!("uniform convergence curve computed for a weight without the gradient bound");
        curve.flags.push(CurveFlag::WeightNotC1);
    }
    for &t in times {
        let field = field_at(traj, t)?;
        let s = t.powf(la / params.alpha);
        let tl = t.powf(la);
        let err = field
            .grid
            .centers()
            .iter()
            .zip(&field.u)
            .map(|(r, u)| (tl * u - eval.profile().g_alpha(r / s)).abs())
            .fold(0.0f64, f64::max);
        curve.points.push((t, err));
    }
    Ok(curve)
}

/// Runs `f` over `items` on a pool of `workers` threads, keeping input order.
pub fn run_parallel<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::BadInput(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Outcome of one named assertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Name of the marker file left in a run directory with a failed assertion
/// or an aborted run.
pub const FAILED_MARKER: &str = "FAILED";

/// Output directory of one experiment:
///
/// ```text
/// manifest.txt        key = value lines
/// summary.txt         one PASS/FAIL line per assertion
/// curves/<name>.csv   t,error,norm_kind
/// <other>.csv         experiment tables
/// trajectory/...      u_NNNN.csv files (r,u)
/// FAILED              present when an assertion failed or the run aborted
/// ```
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    pub manifest: Manifest,
    assertions: Vec<Assertion>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let marker = root.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(marker)?;
        }
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest: Manifest::new(),
            assertions: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn record(&mut self, name: &str, passed: bool, detail: impl Into<String>) -> &Assertion {
        self.manifest.set(format!("assert.{name}"), if passed { "PASS" } else { "FAIL" });
        self.assertions.push(Assertion {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
        self.assertions.last().unwrap()
    }

    pub fn assertions(&self) -> &[Assertion] {
        &self.assertions
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn write_curve(&mut self, name: &str, curve: &ConvergenceCurve) -> Result<PathBuf> {
        let dir = self.root.join("curves");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{name}.csv"));
        let mut w = io::BufWriter::new(fs::File::create(&path)?);
        curve.write_csv(&mut w)?;
        w.flush()?;
        let key = "files.curves";
        let mut list: Vec<String> = self
            .manifest
            .get(key)
            .map(|s| s.split(',').map(str::to_string).collect())
            .unwrap_or_default();
        list.push(format!("curves/{name}.csv"));
        self.manifest.set(key, list.join(","));
        Ok(path)
    }

    /// Writes a table through `fill` to `<name>` under the run root.
    pub fn write_table(&mut self, name: &str, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = io::BufWriter::new(fs::File::create(&path)?);
        fill(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Writes the manifest and the summary and returns the summary lines.
    /// Leaves the failure marker when any assertion failed.
    pub fn finish(&mut self) -> Result<Vec<String>> {
        let lines: Vec<String> = self.assertions.iter().map(|a| a.to_string()).collect();
        self.manifest.set("status", if self.all_passed() { "PASS" } else { "FAIL" });
        self.manifest.write(&self.root.join("manifest.txt"))?;
        fs::write(self.root.join("summary.txt"), lines.join("\n") + "\n")?;
        if !self.all_passed() {
            self.mark_failed("assertion failed")?;
        }
        Ok(lines)
    }

    pub fn mark_failed(&self, reason: &str) -> Result<()> {
        fs::write(self.root.join(FAILED_MARKER), format!("{reason}\n"))?;
        Ok(())
    }
}

/// Records the parameter block and derived exponents under `params.*` and
/// `exponents.*`.
pub fn record_params(manifest: &mut Manifest, p: &ProblemParams) {
    let e = p.exponents();
    manifest
        .set("params.N", p.n.to_string())
        .set_f64("params.m", p.m)
        .set_f64("params.gamma", p.gamma)
        .set_f64("params.alpha", p.alpha)
        .set_f64("params.b", p.b)
        .set_f64("params.c", p.c)
        .set_f64("exponents.lambda", e.lambda)
        .set_f64("exponents.theta", e.theta)
        .set_f64("exponents.lambda_alpha", e.lambda_alpha);
}
