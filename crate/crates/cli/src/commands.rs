//! The five commands. Each validates the configuration, creates the run
//! directory, echoes the effective configuration into it and records one
//! assertion per checked property.

use std::fs;
use std::path::PathBuf;

use pme_selfsim::harness::{
    self, barrier_experiment, boundary_for, cross_validate, record_params, run_convergence,
    run_parallel, self_similar, smoothing_check, BarrierSetup, ConvergenceCurve, ConvergenceSetup, CrossValidationReport,
    CrossValidationSetup, OuterCondition, RunDir, SmoothingReport, SmoothingSetup,
};
use pme_selfsim::norms::{self, AdmissibleWeight, NormError, Radial};
use pme_selfsim::pde::{self, fmt_f64, write_trajectory, RadialField, StepControl, TimeStepping, WeightSpec};
use pme_selfsim::profile::{Profile, ProfileOptions};
use pme_selfsim::ProblemParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DatumConfig, ExperimentKind, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Profile,
    Simulate,
    Converge,
    Barrier,
    Norms,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::Barrier => "barrier",
            Command::Norms => "norms",
        }
    }

    fn default_kind(self) -> ExperimentKind {
        match self {
            Command::Profile => ExperimentKind::Profile,
            Command::Simulate => ExperimentKind::Run,
            Command::Converge => ExperimentKind::Convergence,
            Command::Barrier => ExperimentKind::Barrier,
            Command::Norms => ExperimentKind::Norms,
        }
    }

    fn accepts(self, kind: ExperimentKind) -> bool {
        use ExperimentKind as K;
        matches!(
            (self, kind),
            (Command::Profile, K::Profile)
                | (Command::Simulate, K::Run | K::Smoothing)
                | (Command::Converge, K::Convergence | K::CrossValidation)
                | (Command::Barrier, K::Barrier)
                | (Command::Norms, K::Norms)
        )
    }
}

/// Command-line values that replace configuration entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.experiment.workers = workers;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub dir: PathBuf,
    /// One `PASS name: detail` or `FAIL name: detail` line per assertion.
    pub lines: Vec<String>,
    pub passed: bool,
}

/// File name of the configuration echo inside a run directory.
pub const CONFIG_ECHO: &str = "config.toml";

pub fn execute(command: Command, mut cfg: RunConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    overrides.apply(&mut cfg);
    let kind = cfg.experiment.kind.unwrap_or(command.default_kind());
    if !command.accepts(kind) {
        return Err(CliError::Config(format!(
            "experiment kind {kind:?} cannot run under the {} command",
            command.name()
        )));
    }
    if cfg.experiment.workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    let params = cfg.problem()?;
    cfg.weight_spec()?;
    cfg.grid_spec()?;

    let dir = cfg.output.dir.clone();
    let mut run = RunDir::create(&dir)?;
    let echo = dir.join(CONFIG_ECHO);
    fs::write(&echo, cfg.to_toml()).map_err(|source| CliError::Output { path: echo, source })?;
    run.manifest
        .set("command", command.name())
        .set("experiment", format!("{kind:?}"))
        .set("seed", cfg.experiment.seed.to_string())
        .set("files.config", CONFIG_ECHO);
    record_params(&mut run.manifest, &params);

    let body = match kind {
        ExperimentKind::Profile => profile(&cfg, &params, &mut run),
        ExperimentKind::Run => simulate(&cfg, &params, &mut run),
        ExperimentKind::Smoothing => smoothing(&cfg, &params, &mut run),
        ExperimentKind::Convergence => converge(&cfg, &params, &mut run),
        ExperimentKind::CrossValidation => cross_validation(&cfg, &params, &mut run),
        ExperimentKind::Barrier => barrier(&cfg, &params, &mut run),
        ExperimentKind::Norms => norms_report(&cfg, &params, &mut run),
    };
    match body {
        Ok(()) => {
            let lines = run.finish()?;
            Ok(Outcome {
                dir,
                passed: run.all_passed(),
                lines,
            })
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            run.manifest.set("status", "ERROR").set("error", msg.as_str());
            // keep whatever was written so far next to the marker
            let _ = run.manifest.write(&dir.join("manifest.txt"));
            let _ = run.mark_failed(&msg);
            Err(e)
        }
    }
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

fn profile(cfg: &RunConfig, p: &ProblemParams, run: &mut RunDir) -> Result<(), CliError> {
    let prof = Profile::compute(p, &ProfileOptions::default()).map_err(numeric)?;
    run.write_table("profile.csv", |w| prof.write_csv(w))?;
    let branch = prof.dichotomy().branch();
    run.manifest
        .set("files.profile", "profile.csv")
        .set_f64("profile.L", prof.l)
        .set_f64("profile.sigma", prof.sigma)
        .set("profile.r_star", prof.r_star.map_or("none".into(), fmt_f64))
        .set("profile.dichotomy", format!("{branch:?}"))
        .set_f64("profile.residual_10p", prof.residual_10p)
        .set_f64("profile.c1", prof.c1)
        .set_f64("profile.c2", prof.c2)
        .set_f64("profile.r_max", prof.table.r_max());
    let tol = cfg.tolerances.identity;
    run.record(
        "identity_residual",
        prof.residual_10p <= tol,
        format!("max relative residual {:.3e} (limit {tol:.1e})", prof.residual_10p),
    );
    let g = prof.table.g();
    let monotone = g.windows(2).all(|w| w[1] <= w[0]);
    run.record("profile_decreasing", monotone, format!("{} nodes", g.len()));
    run.record(
        "dichotomy_matches_threshold",
        branch == p.branch(),
        format!("numeric {branch:?}, threshold predicts {:?}", p.branch()),
    );
    Ok(())
}

fn simulate(cfg: &RunConfig, p: &ProblemParams, run: &mut RunDir) -> Result<(), CliError> {
    let weight = cfg.weight_spec()?;
    let grid = cfg.grid_spec()?.build(&weight, p.n)?;
    let datum = cfg.datum_spec();
    let outer: OuterCondition = cfg.experiment.outer.into();
    let eval = if datum.needs_profile() || outer == OuterCondition::SelfSimilar {
        Some(self_similar(p)?)
    } else {
        None
    };
    let u0 = datum.radial(p, eval.as_ref())?;
    let times = cfg.time.output_times()?;
    let field = RadialField::from_fn(grid.clone(), |r| u0.eval(r), cfg.time.start).map_err(numeric)?;
    let boundary = boundary_for(outer, &u0, &grid, eval.as_ref())?;
    let stepping = cfg.experiment.stepping(StepControl::default())?;
    let traj = pde::solve(&field, p.m, &boundary, &times, stepping).map_err(numeric)?;
    write_trajectory(&traj, &run.path().join("trajectory"), &mut run.manifest).map_err(harness::HarnessError::from)?;

    let mut sup = ConvergenceCurve::new("Linf");
    sup.points = traj.diagnostics.ledger.iter().map(|e| (e.t, e.sup)).collect();
    run.write_curve("sup", &sup)?;

    let ledger = &traj.diagnostics.ledger;
    let (first, last) = (ledger[0], ledger[ledger.len() - 1]);
    let drift = ((last.mass - last.inflow) - first.mass).abs() / first.mass.abs().max(f64::MIN_POSITIVE);
    let tol = &cfg.tolerances;
    run.record(
        "mass_balance",
        drift <= tol.mass_drift,
        format!("relative drift {drift:.3e} (limit {:.1e})", tol.mass_drift),
    );
    if outer == OuterCondition::NoFlux {
        let inc = traj.diagnostics.max_sup_increase;
        run.record(
            "sup_non_increasing",
            inc <= tol.sup_increase,
            format!("largest step increase {inc:.3e}"),
        );
    }
    Ok(())
}

fn smoothing(cfg: &RunConfig, p: &ProblemParams, run: &mut RunDir) -> Result<(), CliError> {
    let cells = &cfg.experiment.cells;
    if cells.is_empty() {
        return Err(CliError::Config("smoothing needs at least one entry in experiment.cells".into()));
    }
    let setup = SmoothingSetup {
        params: *p,
        weight: cfg.weight_spec()?,
        datum: cfg.datum_spec(),
        grid: cfg.grid_spec()?,
        cells: Vec::new(),
        times: cfg.time.output_times()?,
        outer: cfg.experiment.outer.into(),
        zero_norm_r_max: cfg.experiment.zero_norm_r_max,
    };
    let reports = run_parallel(cells, cfg.experiment.workers, |&c| {
        smoothing_check(&SmoothingSetup {
            cells: vec![c],
            ..setup.clone()
        })
    })?;
    let mut merged: Option<SmoothingReport> = None;
    for r in reports {
        let r = r?;
        match &mut merged {
            Some(m) => m.levels.extend(r.levels),
            None => merged = Some(r),
        }
    }
    let report = merged.expect("at least one level");
    let e = p.exponents();
    run.write_table("smoothing.csv", |w| report.write_csv(w, e.theta * e.lambda))?;
    run.manifest
        .set_f64("smoothing.datum_norm", report.datum_norm)
        .set_f64("smoothing.lambda", report.lambda)
        .set("files.smoothing", "smoothing.csv");
    let slack = cfg.tolerances.smoothing_slope_slack;
    for level in &report.levels {
        let mut curve = ConvergenceCurve::new("Linf");
        curve.points = level.sup.clone();
        run.write_curve(&format!("sup_{}", level.cells), &curve)?;
        run.manifest
            .set_f64(format!("smoothing.c2.{}", level.cells), level.c2)
            .set_f64(format!("smoothing.c1.{}", level.cells), level.c1);
        let floor = -report.lambda - slack;
        run.record(
            &format!("small_t_slope_{}", level.cells),
            level.small_t_slope >= floor,
            format!("slope {:.4} (floor {floor:.4})", level.small_t_slope),
        );
    }
    if report.levels.len() > 1 {
        let spread = report.c2_spread();
        let tol = cfg.tolerances.smoothing_c2_spread;
        run.record("c2_stable", spread <= tol, format!("spread {spread:.4} (limit {tol})"));
    }
    Ok(())
}

fn converge(cfg: &RunConfig, p: &ProblemParams, run: &mut RunDir) -> Result<(), CliError> {
    let eval = self_similar(p)?;
    let setup = ConvergenceSetup {
        params: *p,
        weight: cfg.weight_spec()?,
        datum: cfg.datum_spec(),
        grid: cfg.grid_spec()?,
        outer: cfg.experiment.outer.into(),
        t_start: cfg.time.start,
        times: cfg.time.output_times()?,
        exponents_p: cfg.experiment.p.clone(),
        stepping: cfg.experiment.stepping(StepControl::default())?,
    };
    if setup.exponents_p.iter().any(|q| !(*q >= 1.0)) {
        return Err(CliError::Config("experiment.p entries must be at least 1".into()));
    }
    let report = run_convergence(&setup, &eval)?;
    write_trajectory(&report.trajectory, &run.path().join("trajectory"), &mut run.manifest)
        .map_err(harness::HarnessError::from)?;

    let exact = matches!(cfg.datum, DatumConfig::SelfSimilar { t0 } if t0 == cfg.time.start);
    let tol = cfg.tolerances;
    let phi = AdmissibleWeight::new(p);
    let (lo, hi) = (setup.grid.r_min, setup.grid.r_max);
    let g = eval.clone();
    let profile = Radial::new(move |r| g.profile().g_alpha(r)).with_support(lo, hi);
    for (q, lp) in &report.lp {
        let name = format!("lp{q}");
        run.write_curve(&name, &lp.curve)?;
        run.write_curve(&format!("{name}_original"), &lp.original_variables)?;
        run.manifest.set_f64(format!("{name}.max_form_gap"), lp.max_form_gap);
        if exact {
            let size = norms::weighted_lp(&profile, *q, Some(&phi), &WeightSpec::pure_power(p.c, p.gamma), p.n)?.value;
            at_floor(run, &name, &lp.curve, tol.floor * size);
        } else {
            decay(run, &name, &lp.curve, tol.monotone_slack, tol.lp_ratio);
        }
    }
    let uniform = &report.uniform;
    run.write_curve("uniform", uniform)?;
    if !uniform.flags.is_empty() {
        run.manifest.set("uniform.flags", format!("{:?}", uniform.flags));
    }
    if exact {
        at_floor(run, "uniform", uniform, tol.floor * eval.profile().g_alpha(lo));
    } else {
        decay(run, "uniform", uniform, tol.monotone_slack, tol.uniform_ratio);
    }
    Ok(())
}

fn at_floor(run: &mut RunDir, name: &str, curve: &ConvergenceCurve, limit: f64) {
    let err = curve.max_error();
    run.record(
        &format!("{name}_at_floor"),
        err <= limit,
        format!("max error {err:.3e} (limit {limit:.3e})"),
    );
}

fn decay(run: &mut RunDir, name: &str, curve: &ConvergenceCurve, slack: f64, ratio_limit: f64) {
    let flags = if curve.flags.is_empty() {
        String::new()
    } else {
        format!(" {:?}", curve.flags)
    };
    run.record(
        &format!("{name}_decreasing"),
        curve.is_decreasing(slack),
        format!("{} points{flags}", curve.points.len()),
    );
    let ratio = curve.final_over_initial();
    run.record(
        &format!("{name}_ratio"),
        ratio <= ratio_limit,
        format!("final/initial {ratio:.4} (limit {ratio_limit}){flags}"),
    );
}

fn cross_validation(cfg: &RunConfig, p: &ProblemParams, run: &mut RunDir) -> Result<(), CliError> {
    let cells = &cfg.experiment.cells;
    if cells.is_empty() {
        return Err(CliError::Config("cross-validation needs experiment.cells".into()));
    }
    let eval = self_similar(p)?;
    let mut base = CrossValidationSetup::new(*p, Vec::new(), cfg.time.horizon);
    base.r_min = cfg.grid.r_min;
    base.r_max = cfg.grid.r_max;
    base.outputs = cfg.time.outputs;
    let control = match base.stepping {
        TimeStepping::Adaptive(c) => c,
        TimeStepping::Fixed(_) => StepControl::default(),
    };
    base.stepping = cfg.experiment.stepping(control)?;
    let levels = run_parallel(cells, cfg.experiment.workers, |&c| {
        cross_validate(
            &CrossValidationSetup {
                cells: vec![c],
                ..base.clone()
            },
            &eval,
        )
    })?;
    let mut report = CrossValidationReport { levels: Vec::new() };
    for l in levels {
        report.levels.extend(l?.levels);
    }
    run.write_table("cross_validation.csv", |w| report.write_csv(w))?;
    run.manifest.set("files.cross_validation", "cross_validation.csv");
    let finest = report.levels[report.levels.len() - 1];
    let tol = cfg.tolerances.cross_validation;
    run.record(
        "finest_level",
        finest.linf <= tol,
        format!("{} cells: relative sup error {:.3e} (limit {tol})", finest.cells, finest.linf),
    );
    if report.levels.len() > 1 {
        let trail: Vec<String> = report.levels.iter().map(|l| format!("{:.2e}", l.linf)).collect();
        run.record("refinement_decreasing", report.decreasing(), trail.join(" > "));
    }
    Ok(())
}

fn barrier(cfg: &RunConfig, p: &ProblemParams, run: &mut RunDir) -> Result<(), CliError> {
    let x = &cfg.experiment;
    let mut setup = BarrierSetup::new(p.n, p.m, p.gamma, x.barrier_value, x.barrier_initial);
    setup.c_bar = p.c;
    setup.cells = cfg.grid.cells;
    setup.r_min = cfg.grid.r_min;
    setup.t_end = x.barrier_t_end;
    setup.outputs = cfg.time.outputs.max(1);
    if !(setup.r_min < 1.0) {
        return Err(CliError::Config("barrier runs on the unit ball: grid.r_min must be below 1".into()));
    }
    let report = barrier_experiment(&setup)?;
    run.write_curve("barrier", &report.curve())?;
    run.record(
        "sign",
        report.sign_violations == 0,
        format!(
            "{} wrong-sign updates (worst {:.3e} C)",
            report.sign_violations, report.worst_wrong_sign
        ),
    );
    run.record("monotone", report.monotone, format!("{} steps", report.sup_error.len()));
    let tol = cfg.tolerances.barrier;
    run.record(
        "final_error",
        report.final_relative_error <= tol,
        format!("|v - C|/C = {:.3e} at t = {} (limit {tol})", report.final_relative_error, setup.t_end),
    );
    Ok(())
}

fn norms_report(cfg: &RunConfig, p: &ProblemParams, run: &mut RunDir) -> Result<(), CliError> {
    let weight = cfg.weight_spec()?;
    let x = &cfg.experiment;
    let tol = cfg.tolerances;
    let datum = cfg.datum_spec();
    let eval = if datum.needs_profile() { Some(self_similar(p)?) } else { None };
    let u0 = datum.radial(p, eval.as_ref())?;
    let phi = AdmissibleWeight::new(p);
    for &q in &x.p {
        let n = norms::weighted_lp(&u0, q, Some(&phi), &weight, p.n)?;
        run.manifest.set_f64(format!("norms.L{q}_phi"), n.value);
    }

    let wr = norms::check_weight_conditions(&weight, p.c, x.r_far, tol.weight);
    run.manifest.set_f64("weight.deviation", wr.deviation);
    run.record(
        "weight_conditions",
        wr.passes,
        format!("tail deviation {:.3e} up to r = {:e}, bounds ok: {}", wr.deviation, x.r_far, wr.bounds_ok),
    );

    let dr = norms::check_datum_conditions(&u0, p, &phi, &weight, &x.xi, x.r_far, x.zero_norm_r_max)?;
    run.write_table("datum_checks.csv", |mut w| dr.write_csv(&mut w))?;
    run.manifest
        .set("files.datum_checks", "datum_checks.csv")
        .set_f64("datum.tail_deviation", dr.tail_deviation);
    run.record(
        "datum_rescaled_decreasing",
        dr.decreasing(tol.monotone_slack),
        format!("{} scale factors", dr.rows.len()),
    );

    let gap = u0.minus(&Radial::power(p.b, p.alpha));
    let scan = match norms::zero_norm_scan(&gap, &weight, p.n, x.zero_norm_r_max) {
        Ok(s) => s,
        Err(NormError::TailGrowth { r_max, growth, .. }) => {
            run.record(
                "zero_norm_bounded",
                false,
                format!("ball integrals still grow by {growth:.3e} at R = {r_max}"),
            );
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    run.write_table("zero_norm_scan.csv", |mut w| scan.write_csv(&mut w))?;
    run.manifest
        .set("files.zero_norm_scan", "zero_norm_scan.csv")
        .set_f64("zero_norm.value", scan.report.value);
    run.record("zero_norm_bounded", true, format!("value {:.6e}", scan.report.value));

    if let (Some(big_r), true) = (scan.report.argmax, x.monte_carlo_samples > 0) {
        let h = big_r.powf(0.5 * p.gamma);
        let exact = norms::ball_integral(&gap, &weight, p.n, big_r, h).value;
        let mut rng = ChaCha8Rng::seed_from_u64(x.seed);
        let mc = norms::ball_integral_monte_carlo(&gap, &weight, p.n, big_r, h, x.monte_carlo_samples, &mut rng);
        let rel = if exact == 0.0 { mc.abs() } else { (mc / exact - 1.0).abs() };
        run.manifest.set_f64("zero_norm.monte_carlo", mc);
        run.record(
            "monte_carlo_agreement",
            rel <= tol.monte_carlo,
            format!("R = {big_r:.4}: cap formula {exact:.6e}, sampled {mc:.6e}, relative gap {rel:.2e}"),
        );
    }
    Ok(())
}
