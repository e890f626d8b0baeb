use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn grid(cells: usize, r_min: f64, r_max: f64, w: WeightSpec) -> Arc<RadialGrid> {
    Arc::new(build_grid(r_min, r_max, cells, w, 3).unwrap())
}

fn params(m: f64, gamma: f64) -> ProblemParams {
    ProblemParams::new(3, m, gamma, 1.0, 1.0, 1.0).unwrap()
}

#[test]
fn single_cell_measures() {
    let g = build_grid(1.0, 2.0, 1, WeightSpec::pure_power(1.0, 0.0), 3).unwrap();
    assert!((g.measures()[0] - 7.0 / 3.0).abs() < 1e-14);
    assert!((g.volumes()[0] - 7.0 / 3.0).abs() < 1e-14);
    let g = build_grid(1.0, 2.0, 1, WeightSpec::pure_power(2.0, 1.0), 3).unwrap();
    assert!((g.measures()[0] - 3.0).abs() < 1e-14);
}

#[test]
fn grid_is_geometric_and_rejects_bad_ranges() {
    let g = grid(40, 1e-2, 10.0, WeightSpec::bounded(1.0, 0.5));
    let e = g.edges();
    let q = e[1] / e[0];
    assert!(e.windows(2).all(|w| (w[1] / w[0] / q - 1.0).abs() < 1e-12));
    assert_eq!(g.locate(e[7] * 1.0001), Some(7));
    assert_eq!(g.locate(20.0), None);
    let total: f64 = g.measures().iter().sum();
    let direct = g.weight().cell_measure(3, 1e-2, 10.0);
    assert!((total / direct - 1.0).abs() < 1e-12);
    for (a, b, n) in [(0.0, 1.0, 4), (2.0, 1.0, 4), (1.0, 2.0, 0)] {
        assert!(matches!(
            build_grid(a, b, n, WeightSpec::pure_power(1.0, 0.0), 3),
            Err(PdeError::BadRange(_))
        ));
    }
}

#[test]
fn constant_is_stationary_under_no_flux() {
    let g = grid(32, 1e-3, 5.0, WeightSpec::pure_power(1.0, 0.5));
    let f = RadialField::from_fn(g, |_| 0.7, 0.0).unwrap();
    let out = step_implicit(&f, 2.0, 0.3, &Boundary::no_flux()).unwrap();
    assert!(out.u.iter().all(|v| (v - 0.7).abs() < 1e-15));
    assert_eq!(out.t, 0.3);
    assert!(step_implicit(&f, 2.0, 0.0, &Boundary::no_flux()).is_err());
}

#[test]
fn constant_matching_dirichlet_is_stationary() {
    let g = grid(32, 1e-3, 1.0, WeightSpec::pure_power(1.0, 1.0));
    let f = RadialField::from_fn(g, |_| 2.0, 0.0).unwrap();
    let b = Boundary {
        inner: Inner::Dirichlet(2.0),
        outer: Outer::Dirichlet(BoundaryFn::constant(2.0)),
    };
    let out = step_implicit(&f, 3.0, 0.5, &b).unwrap();
    assert!(out.u.iter().all(|v| (v - 2.0).abs() < 1e-14));
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..2.0)).collect()
}

#[test]
fn ordered_data_stay_ordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = grid(8, 0.1, 2.0, WeightSpec::pure_power(1.0, 0.8));
    for _ in 0..100 {
        let m = rng.random_range(1.2..4.0);
        let dt = rng.random_range(1e-3..1.0);
        let v = random_field(&mut rng, 8);
        let u: Vec<f64> = v.iter().map(|x| x + rng.random_range(0.0..0.5)).collect();
        let b = if rng.random_bool(0.5) {
            Boundary::no_flux()
        } else {
            Boundary::outer_dirichlet(BoundaryFn::constant(0.3))
        };
        let fu = step_implicit(&RadialField::new(g.clone(), u, 0.0).unwrap(), m, dt, &b).unwrap();
        let fv = step_implicit(&RadialField::new(g.clone(), v, 0.0).unwrap(), m, dt, &b).unwrap();
        for (a, c) in fu.u.iter().zip(&fv.u) {
            assert!(a >= &(c - 1e-12), "ordering lost: {a} < {c}");
        }
    }
}

#[test]
fn signed_datum_conserves_mass_each_step() {
    let g = grid(64, 1e-2, 2.0, WeightSpec::pure_power(1.0, 0.5));
    let mid = 0.5 * (g.r_min() + g.r_max());
    let f = RadialField::from_fn(g.clone(), |r| if r < mid { -1.0 } else { 1.0 }, 0.0).unwrap();
    let scale: f64 = g.measures().iter().sum();
    let mut stepper = Stepper::new(g.clone(), 2.0);
    let mut u = f.u.clone();
    let mut mass = f.mass();
    for k in 0..50 {
        let s = stepper.step(&mut u, k as f64 * 0.01, 0.01, &Boundary::no_flux()).unwrap();
        let now = RadialField::new(g.clone(), u.clone(), 0.0).unwrap().mass();
        assert!((now - mass).abs() <= 1e-13 * scale, "step {k}: {}", (now - mass).abs() / scale);
        assert!(s.mass_defect.abs() <= 1e-13 * scale);
        mass = now;
    }
}

#[test]
fn negated_datum_gives_negated_solution() {
    let g = grid(48, 1e-3, 4.0, WeightSpec::bounded(1.0, 0.7));
    let f = RadialField::from_fn(g, |r| (1.0 - r).max(0.0) * (3.0 * r).sin(), 0.0).unwrap();
    let b = Boundary::no_flux();
    let a = solve(&f, 2.5, &b, &[0.1, 0.5], TimeStepping::default()).unwrap();
    let c = solve(&f.negated(), 2.5, &b, &[0.1, 0.5], TimeStepping::default()).unwrap();
    for (x, y) in a.fields.iter().zip(&c.fields) {
        for (p, q) in x.u.iter().zip(&y.u) {
            assert!((p + q).abs() <= 1e-13 * x.sup_norm(), "{p} vs {q}");
        }
    }
}

#[test]
fn classical_barenblatt_constant() {
    for (m, n) in [(2.0, 3), (3.0, 5), (1.5, 4)] {
        let p = ProblemParams::new(n, m, 0.0, 0.5, 1.0, 1.0).unwrap();
        let lambda = p.exponents().lambda;
        let nf = n as f64;
        assert!((barenblatt_k2(&p) - lambda * (m - 1.0) / (2.0 * m * nf)).abs() < 1e-15);
        assert!((lambda - nf / (nf * (m - 1.0) + 2.0)).abs() < 1e-15);
    }
}

#[test]
fn barenblatt_vanishes_past_free_boundary() {
    let p = params(2.0, 0.5);
    let rs = barenblatt_support(1.0, &p, 3.0);
    assert!(barenblatt_integrable(1.0, &p, 0.999 * rs, 3.0) > 0.0);
    assert_eq!(barenblatt_integrable(1.0, &p, 1.001 * rs, 3.0), 0.0);
}

#[test]
fn barenblatt_satisfies_the_equation() {
    // central differences of c r^-γ U_t - r^{1-N}(r^{N-1}(U^m)')' inside the support
    for (m, gamma, c) in [(2.0, 0.5, 1.0), (3.0, 1.3, 2.0), (1.6, 0.0, 0.7)] {
        let p = ProblemParams::new(4, m, gamma, 1.0, 1.0, c).unwrap();
        let u = |r: f64, t: f64| barenblatt_integrable(1.0, &p, r, t);
        let rs = barenblatt_support(1.0, &p, 2.0);
        let n = p.dim();
        for frac in [0.2, 0.5, 0.8] {
            let (r, t, h) = (frac * rs, 2.0, 1e-4);
            let ut = (u(r, t + h) - u(r, t - h)) / (2.0 * h);
            let flux = |s: f64| s.powf(n - 1.0) * (u(s + h, t).powf(m) - u(s - h, t).powf(m)) / (2.0 * h);
            let lap = (flux(r + h) - flux(r - h)) / (2.0 * h) / r.powf(n - 1.0);
            let lhs = c * r.powf(-gamma) * ut;
            assert!((lhs - lap).abs() <= 1e-5 * lhs.abs(), "m={m} γ={gamma}: {lhs} vs {lap}");
        }
    }
}

#[test]
fn trajectory_ledger_and_max_history() {
    let g = grid(128, 1e-3, 4.0, WeightSpec::pure_power(1.0, 0.5));
    let f = RadialField::from_fn(g, |r| if (1.0..2.0).contains(&r) { 1.0 } else { 0.0 }, 0.0).unwrap();
    let times = [0.01, 0.1, 1.0];
    let tr = solve(&f, 2.0, &Boundary::no_flux(), &times, TimeStepping::default()).unwrap();
    assert_eq!(tr.times(), times);
    let m0 = tr.diagnostics.ledger[0].mass;
    for e in &tr.diagnostics.ledger {
        assert!((e.mass - m0).abs() <= 1e-6 * m0);
    }
    assert!(tr.diagnostics.ledger.windows(2).all(|w| w[1].sup <= w[0].sup * (1.0 + 1e-12)));
    assert!(tr.diagnostics.max_sup_increase <= 1e-12);
    assert!(tr.diagnostics.max_mass_defect <= 1e-13);
    assert!(tr.at(0.1).is_some() && tr.at(0.2).is_none());
}

#[test]
fn fixed_steps_land_on_outputs() {
    let g = grid(16, 0.1, 1.0, WeightSpec::pure_power(1.0, 0.0));
    let f = RadialField::from_fn(g, |r| r, 1.0).unwrap();
    let mut seen = Vec::new();
    let tr = solve_observed(&f, 2.0, &Boundary::no_flux(), &[1.3, 2.0], TimeStepping::Fixed(0.1), |e| {
        seen.push(e.t_new)
    })
    .unwrap();
    assert_eq!(seen.len(), 10);
    assert_eq!(tr.fields[1].t, 2.0);
    assert!(seen.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn output_times_must_increase() {
    let g = grid(16, 0.1, 1.0, WeightSpec::pure_power(1.0, 0.0));
    let f = RadialField::from_fn(g, |_| 1.0, 1.0).unwrap();
    for bad in [&[0.5][..], &[2.0, 2.0], &[]] {
        assert!(solve(&f, 2.0, &Boundary::no_flux(), bad, TimeStepping::default()).is_err());
    }
}

fn window(r0: f64, r1: f64, t0: f64, t1: f64) -> Window {
    Window { r0, r1, t0, t1 }
}

#[test]
fn energy_of_trivial_solutions() {
    let g = grid(32, 1e-2, 2.0, WeightSpec::pure_power(1.0, 0.5));
    let times = [0.5, 1.0];
    for v in [0.0, 1.5] {
        let f = RadialField::from_fn(g.clone(), |_| v, 0.0).unwrap();
        let tr = solve(&f, 2.0, &Boundary::no_flux(), &times, TimeStepping::default()).unwrap();
        let e = discrete_energy(&tr, 2.0, window(0.5, 1.0, 0.5, 1.0), window(0.2, 1.5, 0.0, 1.0)).unwrap();
        assert_eq!(e.lhs, 0.0);
        assert!(e.lhs <= e.rhs());
        if v == 0.0 {
            assert_eq!((e.lhs, e.rhs()), (0.0, 0.0));
        }
    }
}

#[test]
fn energy_window_is_validated() {
    let g = grid(32, 1e-2, 2.0, WeightSpec::pure_power(1.0, 0.5));
    let f = RadialField::from_fn(g, |_| 1.0, 0.0).unwrap();
    let tr = solve(&f, 2.0, &Boundary::no_flux(), &[0.5, 1.0], TimeStepping::default()).unwrap();
    let inner = window(0.5, 1.0, 0.5, 1.0);
    for outer in [window(0.6, 1.5, 0.0, 1.0), window(1e-2, 1.5, 0.0, 1.0), window(0.2, 1.5, 0.0, 3.0)] {
        assert!(matches!(discrete_energy(&tr, 2.0, inner, outer), Err(PdeError::BadWindow(_))));
    }
}

#[test]
fn energy_constant_is_stable_under_refinement() {
    let p = params(2.0, 0.5);
    let times: Vec<f64> = (1..=20).map(|k| 1.0 + 0.05 * k as f64).collect();
    let constant = |cells: usize| {
        let g = grid(cells, 1e-3, 2.0, WeightSpec::pure_power(1.0, 0.5));
        let f = RadialField::from_fn(g, |r| barenblatt_integrable(1.0, &p, r, 1.0), 1.0).unwrap();
        let tr = solve(&f, 2.0, &Boundary::no_flux(), &times, TimeStepping::default()).unwrap();
        discrete_energy(&tr, 2.0, window(0.3, 0.8, 1.2, 1.8), window(0.1, 1.0, 1.0, 2.0))
            .unwrap()
            .constant
    };
    let (a, b) = (constant(128), constant(256));
    assert!(a > 0.0 && (b / a - 1.0).abs() <= 0.2, "{a} vs {b}");
}

#[test]
fn writes_trajectory_files_and_ledger() {
    let dir = std::env::temp_dir().join(format!("pme-traj-{}", std::process::id()));
    let g = grid(16, 0.1, 1.0, WeightSpec::pure_power(1.0, 0.0));
    let f = RadialField::from_fn(g, |r| 1.0 - r, 0.0).unwrap();
    let tr = solve(&f, 2.0, &Boundary::no_flux(), &[0.1, 0.2], TimeStepping::default()).unwrap();
    let mut man = Manifest::new();
    let paths = write_trajectory(&tr, &dir, &mut man).unwrap();
    assert_eq!(paths.len(), 3);
    let text = std::fs::read_to_string(&paths[2]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# t=2.0000000000000001e-1"));
    assert_eq!(lines.next(), Some("r,u"));
    assert_eq!(lines.count(), 16);
    assert_eq!(man.get("trajectory.files"), Some("3"));
    assert_eq!(man.get("trajectory.mass").unwrap().split(',').count(), 3);
    std::fs::remove_dir_all(&dir).unwrap();
}
