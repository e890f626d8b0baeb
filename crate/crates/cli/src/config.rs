//! Run configuration read from a TOML file.
//!
//! Every block except `[params]` has defaults; unknown keys are rejected.
//!
//! ```toml
//! [params]
//! N = 3
//! m = 2.0
//! gamma = 0.5
//! alpha = 1.0
//! b = 1.0
//! c = 1.0
//!
//! [weight]
//! kind = "bounded"        # pure-power | bounded | custom-table
//!
//! [datum]
//! kind = "perturbed"      # pure-power | perturbed | modulated | compact | self-similar | custom-table
//! amplitude = 4.0
//! lo = 1.0
//! hi = 2.0
//!
//! [grid]
//! r_min = 1e-3
//! r_max = 1e3
//! cells = 512
//!
//! [time]
//! start = 0.0
//! t0 = 1.0
//! horizon = 100.0
//! ladder = "geometric"    # geometric | uniform | list
//!
//! [experiment]
//! kind = "convergence"
//!
//! [output]
//! dir = "runs/converge"
//! ```

use std::path::PathBuf;

use pme_selfsim::harness::{DatumSpec, GridSpec, OuterCondition};
use pme_selfsim::pde::{StepControl, TimeStepping, WeightSpec};
use pme_selfsim::{ProblemParams, RawParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: RawParams,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub datum: DatumConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Density `ρ`. The decay exponent is always `params.gamma`; a missing `c`
/// defaults to `params.c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightConfig {
    PurePower {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
    },
    Bounded {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
    },
    CustomTable {
        r: Vec<f64>,
        rho: Vec<f64>,
        c_lower: f64,
        c_upper: f64,
    },
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig::PurePower { c: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatumConfig {
    #[default]
    PurePower,
    Perturbed { amplitude: f64, lo: f64, hi: f64 },
    Modulated { amplitude: f64 },
    Compact { amplitude: f64, lo: f64, hi: f64 },
    SelfSimilar { t0: f64 },
    CustomTable { r: Vec<f64>, u: Vec<f64> },
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub cells: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            r_min: 1e-3,
            r_max: 1e3,
            cells: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ladder {
    /// `t0 · 2^k`, closed by `horizon`.
    Geometric,
    /// `outputs` equal steps from `t0` to `horizon`.
    Uniform,
    /// The explicit `times` list.
    List,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    /// Time attached to the datum.
    pub start: f64,
    /// First output time.
    pub t0: f64,
    pub horizon: f64,
    pub ladder: Ladder,
    pub outputs: usize,
    pub times: Vec<f64>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            start: 0.0,
            t0: 1.0,
            horizon: 100.0,
            ladder: Ladder::Geometric,
            outputs: 8,
            times: Vec::new(),
        }
    }
}

impl TimeConfig {
    pub fn output_times(&self) -> Result<Vec<f64>, CliError> {
        let times = match self.ladder {
            Ladder::Geometric => {
                if !(self.t0 > 0.0 && self.horizon >= self.t0) {
                    return Err(CliError::Config("time: need 0 < t0 <= horizon".into()));
                }
                pme_selfsim::harness::geometric_times(self.t0, self.horizon)
            }
            Ladder::Uniform => {
                if self.outputs == 0 || !(self.horizon > self.t0) {
                    return Err(CliError::Config("time: need outputs >= 1 and horizon > t0".into()));
                }
                let k = self.outputs.max(2) - 1;
                (0..=k).map(|j| self.t0 + (self.horizon - self.t0) * j as f64 / k as f64).collect()
            }
            Ladder::List => self.times.clone(),
        };
        if times.is_empty() || times[0] <= self.start || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::Config(
                "time: output times must be increasing and later than start".into(),
            ));
        }
        Ok(times)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Plain PDE run with the structural checks (`simulate`).
    Run,
    /// Small-time sup-norm decay over several refinements (`simulate`).
    Smoothing,
    /// Rescaled distance to the self-similar solution (`converge`).
    Convergence,
    /// PDE from the profile against the self-similar solution (`converge`).
    CrossValidation,
    Barrier,
    Norms,
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterConfig {
    NoFlux,
    Frozen,
    SelfSimilar,
}

impl From<OuterConfig> for OuterCondition {
    fn from(o: OuterConfig) -> Self {
        match o {
            OuterConfig::NoFlux => OuterCondition::NoFlux,
            OuterConfig::Frozen => OuterCondition::Frozen,
            OuterConfig::SelfSimilar => OuterCondition::SelfSimilar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Defaults to the natural experiment of the command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub outer: OuterConfig,
    /// Lebesgue exponents of the convergence curves and datum norms.
    pub p: Vec<f64>,
    /// Fixed time step; adaptive stepping when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Adaptive step targets; each experiment has its own default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_change: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_dt_over_t: Option<f64>,
    /// Cell counts of the refinement studies.
    pub cells: Vec<usize>,
    /// Scale factors of the datum checks.
    pub xi: Vec<f64>,
    pub zero_norm_r_max: f64,
    /// Far end of the weight and datum tail checks.
    pub r_far: f64,
    pub monte_carlo_samples: usize,
    pub seed: u64,
    pub workers: usize,
    /// Boundary value `C` of the barrier run.
    pub barrier_value: f64,
    /// Initial value `ℓ` of the barrier run.
    pub barrier_initial: f64,
    pub barrier_t_end: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: None,
            outer: OuterConfig::Frozen,
            p: vec![1.0, 2.0],
            dt: None,
            target_change: None,
            max_dt_over_t: None,
            cells: vec![128, 256, 512],
            xi: vec![1.0, 4.0, 16.0, 64.0],
            zero_norm_r_max: 100.0,
            r_far: 1e8,
            monte_carlo_samples: 1_000_000,
            seed: 0,
            workers: 1,
            barrier_value: 1.0,
            barrier_initial: 0.0,
            barrier_t_end: 20.0,
        }
    }
}

impl ExperimentConfig {
    /// Fixed steps when `dt` is set, otherwise `base` with any configured targets.
    pub fn stepping(&self, base: StepControl) -> Result<TimeStepping, CliError> {
        match self.dt {
            Some(dt) if dt > 0.0 => Ok(TimeStepping::Fixed(dt)),
            Some(dt) => Err(CliError::Config(format!("experiment.dt must be positive, got {dt}"))),
            None => {
                let control = StepControl {
                    target_change: self.target_change.unwrap_or(base.target_change),
                    max_dt_over_t: self.max_dt_over_t.unwrap_or(base.max_dt_over_t),
                    ..base
                };
                if !(control.target_change > 0.0 && control.max_dt_over_t > 0.0) {
                    return Err(CliError::Config("step control targets must be positive".into()));
                }
                Ok(TimeStepping::Adaptive(control))
            }
        }
    }
}

/// Pass thresholds of the assertions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest final/initial ratio of the `L^p` curves.
    pub lp_ratio: f64,
    /// Largest final/initial ratio of the uniform curve.
    pub uniform_ratio: f64,
    /// Relative decrease allowed to count as monotone.
    pub monotone_slack: f64,
    /// Largest curve error, relative to the profile size, for an exact datum.
    pub floor: f64,
    pub cross_validation: f64,
    pub mass_drift: f64,
    pub sup_increase: f64,
    pub smoothing_slope_slack: f64,
    pub smoothing_c2_spread: f64,
    pub barrier: f64,
    pub identity: f64,
    pub monte_carlo: f64,
    pub weight: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            lp_ratio: 0.2,
            uniform_ratio: 0.3,
            monotone_slack: 0.0,
            floor: 0.01,
            cross_validation: 0.03,
            mass_drift: 1e-6,
            sup_increase: 1e-12,
            smoothing_slope_slack: 0.1,
            smoothing_c2_spread: 0.3,
            barrier: 0.01,
            identity: 1e-7,
            monte_carlo: 0.01,
            weight: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("pme-run"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.problem()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("a run configuration always serializes")
    }

    pub fn problem(&self) -> Result<ProblemParams, CliError> {
        self.params.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn weight_spec(&self) -> Result<WeightSpec, CliError> {
        let p = self.problem()?;
        Ok(match &self.weight {
            WeightConfig::PurePower { c } => WeightSpec::pure_power(positive("weight.c", c.unwrap_or(p.c))?, p.gamma),
            WeightConfig::Bounded { c } => WeightSpec::bounded(positive("weight.c", c.unwrap_or(p.c))?, p.gamma),
            WeightConfig::CustomTable { r, rho, c_lower, c_upper } => {
                let ok = r.len() >= 3
                    && r.len() == rho.len()
                    && r.windows(2).all(|w| w[0] > 0.0 && w[1] > w[0])
                    && rho.iter().all(|v| *v > 0.0 && v.is_finite());
                if !ok {
                    return Err(CliError::Config(
                        "weight table needs >= 3 increasing positive radii and positive values".into(),
                    ));
                }
                positive("weight.c_lower", *c_lower)?;
                positive("weight.c_upper", *c_upper)?;
                WeightSpec::custom(p.gamma, r, rho, *c_lower, *c_upper)
            }
        })
    }

    pub fn datum_spec(&self) -> DatumSpec {
        match self.datum.clone() {
            DatumConfig::PurePower => DatumSpec::PurePower,
            DatumConfig::Perturbed { amplitude, lo, hi } => DatumSpec::Perturbed { amplitude, lo, hi },
            DatumConfig::Modulated { amplitude } => DatumSpec::Modulated { amplitude },
            DatumConfig::Compact { amplitude, lo, hi } => DatumSpec::Compact { amplitude, lo, hi },
            DatumConfig::SelfSimilar { t0 } => DatumSpec::SelfSimilar { t0 },
            DatumConfig::CustomTable { r, u } => DatumSpec::Table { r, u },
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let g = self.grid;
        if !(g.r_min > 0.0 && g.r_max > g.r_min && g.r_max.is_finite()) || g.cells < 2 {
            return Err(CliError::Config("grid: need 0 < r_min < r_max and cells >= 2".into()));
        }
        Ok(GridSpec {
            r_min: g.r_min,
            r_max: g.r_max,
            cells: g.cells,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}
