//! Property tests for the invariants the solver and the norms must keep.

use std::sync::{Arc, OnceLock};

use pme_selfsim::harness::{rescale_datum, self_similar, RescaleFrame};
use pme_selfsim::norms::{zero_norm, Radial};
use pme_selfsim::pde::{
    build_grid, solve, step_implicit, Boundary, BoundaryFn, RadialField, RadialGrid, TimeStepping, WeightSpec,
};
use pme_selfsim::params::derive_exponents;
use pme_selfsim::profile::SelfSimilarEval;
use pme_selfsim::{Branch, ProblemParams, RawParams};
use proptest::prelude::*;

fn valid_params() -> impl Strategy<Value = ProblemParams> {
    (3u32..=7, 1.05f64..5.0, 0.0f64..1.95, 0.01f64..0.99, 0.1f64..10.0, 0.1f64..10.0).prop_map(
        |(n, m, gamma, frac, b, c)| {
            let alpha = frac * (n as f64 - gamma);
            ProblemParams::new(n, m, gamma, alpha, b, c).unwrap()
        },
    )
}

fn small_grid(gamma: f64, dirichlet: bool) -> (Arc<RadialGrid>, Boundary) {
    let grid = Arc::new(build_grid(0.1, 2.0, 8, WeightSpec::pure_power(1.0, gamma), 3).unwrap());
    let boundary = if dirichlet {
        Boundary::outer_dirichlet(BoundaryFn::constant(0.3))
    } else {
        Boundary::no_flux()
    };
    (grid, boundary)
}

fn reference_profile() -> &'static SelfSimilarEval {
    static EVAL: OnceLock<SelfSimilarEval> = OnceLock::new();
    EVAL.get_or_init(|| self_similar(&ProblemParams::new(3, 2.0, 0.5, 1.0, 1.0, 1.0).unwrap()).unwrap())
}

fn table(values: Vec<f64>) -> Radial {
    let r: Vec<f64> = (0..values.len()).map(|k| 0.1 * 1.25f64.powi(k as i32)).collect();
    Radial::from_table(r, values)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponent_identities(p in valid_params()) {
        let e = p.exponents();
        prop_assert!((1.0 / e.lambda - (p.m - 1.0 + e.theta)).abs() <= 1e-12 / e.lambda);
        let rhs = p.m - 1.0 + (2.0 - p.gamma) / p.alpha;
        prop_assert!((1.0 / e.lambda_alpha - rhs).abs() <= 1e-12 * rhs);
        // endpoint of the admissible range, outside what validation accepts
        let end = ProblemParams { alpha: p.dim() - p.gamma, ..p };
        let e_end = derive_exponents(&end);
        prop_assert!((e_end.lambda_alpha - e_end.lambda).abs() <= 1e-14);
    }

    #[test]
    fn validation_accepts_exactly_the_admissible_tuples(
        n in prop::sample::select(vec![1.0, 2.0, 2.5, 3.0, 4.0, 6.0]),
        m in 0.5f64..3.0,
        gamma in -0.5f64..2.5,
        alpha in -0.5f64..7.0,
        b in -1.0f64..2.0,
        c in -1.0f64..2.0,
    ) {
        let admissible = n >= 3.0 && m > 1.0 && (0.0..2.0).contains(&gamma)
            && alpha > 0.0 && alpha < n - gamma && b > 0.0 && c > 0.0;
        let raw = RawParams { n, m, gamma, alpha, b, c };
        prop_assert_eq!(raw.validate().is_ok(), admissible);
    }

    #[test]
    fn indicator_sign_matches_branch(p in valid_params()) {
        let indicator = p.tilde().dichotomy_indicator();
        prop_assume!(indicator.abs() > 1e-9);
        let expected = if indicator < 0.0 { Branch::EverywhereDecreasing } else { Branch::Transition };
        prop_assert_eq!(p.branch(), expected);
        prop_assert_eq!(p.tilde().branch(), expected);
    }

    #[test]
    fn solve_is_odd(values in prop::collection::vec(-2.0f64..2.0, 8), m in 1.2f64..3.5, dirichlet: bool) {
        let (grid, _) = small_grid(0.5, false);
        let boundary = if dirichlet {
            (Boundary::outer_dirichlet(BoundaryFn::constant(0.3)), Boundary::outer_dirichlet(BoundaryFn::constant(-0.3)))
        } else {
            (Boundary::no_flux(), Boundary::no_flux())
        };
        let u = RadialField::new(grid, values, 0.0).unwrap();
        let times = [0.05, 0.2];
        let a = solve(&u, m, &boundary.0, &times, TimeStepping::Fixed(0.01)).unwrap();
        let b = solve(&u.negated(), m, &boundary.1, &times, TimeStepping::Fixed(0.01)).unwrap();
        for (fa, fb) in a.fields.iter().zip(&b.fields) {
            for (x, y) in fa.u.iter().zip(&fb.u) {
                prop_assert!((x + y).abs() <= 1e-10 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn implicit_step_preserves_order(
        v in prop::collection::vec(-1.0f64..2.0, 8),
        gap in prop::collection::vec(0.0f64..0.5, 8),
        m in 1.2f64..4.0,
        dt in 1e-3f64..1.0,
        dirichlet: bool,
    ) {
        let (grid, boundary) = small_grid(0.8, dirichlet);
        let u: Vec<f64> = v.iter().zip(&gap).map(|(a, g)| a + g).collect();
        let fu = step_implicit(&RadialField::new(grid.clone(), u, 0.0).unwrap(), m, dt, &boundary).unwrap();
        let fv = step_implicit(&RadialField::new(grid, v, 0.0).unwrap(), m, dt, &boundary).unwrap();
        for (a, b) in fu.u.iter().zip(&fv.u) {
            prop_assert!(*a >= *b - 1e-12);
        }
    }

    #[test]
    fn no_flux_step_conserves_mass(
        values in prop::collection::vec(-1.0f64..2.0, 8),
        m in 1.2f64..4.0,
        dt in 1e-3f64..1.0,
        gamma in 0.0f64..1.9,
    ) {
        let (grid, boundary) = small_grid(gamma, false);
        let before = RadialField::new(grid, values, 0.0).unwrap();
        let after = step_implicit(&before, m, dt, &boundary).unwrap();
        let scale: f64 = before.u.iter().zip(before.grid.measures()).map(|(u, w)| u.abs() * w).sum();
        prop_assert!((after.mass() - before.mass()).abs() <= 1e-13 * scale);
    }

    #[test]
    fn self_similar_solution_is_a_fixed_point(xi in 1.0f64..100.0, r in 1e-2f64..1e2, t in 0.1f64..10.0) {
        let eval = reference_profile();
        let p = eval.params();
        let frame = RescaleFrame::new(xi, p).unwrap();
        let scaled = xi.powf(p.alpha) * eval.eval(xi * r, frame.time_factor * t);
        prop_assert!((scaled / eval.eval(r, t) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn rescale_frames_compose(p in valid_params(), x1 in 0.1f64..10.0, x2 in 0.1f64..10.0, r in 0.2f64..5.0) {
        let (a, b) = (RescaleFrame::new(x1, &p).unwrap(), RescaleFrame::new(x2, &p).unwrap());
        let ab = RescaleFrame::new(x1 * x2, &p).unwrap();
        prop_assert!((a.time_factor * b.time_factor / ab.time_factor - 1.0).abs() <= 1e-12);
        let u0 = Radial::new(|s| (1.0 + s * s).recip());
        let twice = rescale_datum(&rescale_datum(&u0, &a), &b);
        let once = rescale_datum(&u0, &ab);
        prop_assert!((twice.eval(r) / once.eval(r) - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_norm_is_a_seminorm(
        f in prop::collection::vec(0.0f64..2.0, 12),
        g in prop::collection::vec(0.0f64..2.0, 12),
        k in -3.0f64..3.0,
        gamma in 0.0f64..1.5,
    ) {
        let w = WeightSpec::pure_power(1.0, gamma);
        let norm = |x: &Radial| zero_norm(x, &w, 3, 20.0).unwrap().value;
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let scaled: Vec<f64> = f.iter().map(|a| k * a).collect();
        let (nf, ng) = (norm(&table(f)), norm(&table(g)));
        prop_assume!(nf > 1e-6);
        prop_assert!((norm(&table(scaled)) - k.abs() * nf).abs() <= 1e-9 * k.abs().max(1.0) * nf);
        prop_assert!(norm(&table(sum)) <= (nf + ng) * (1.0 + 1e-9));
    }
}
