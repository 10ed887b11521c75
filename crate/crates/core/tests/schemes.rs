use approx::assert_relative_eq;
use proptest::prelude::*;

use monosde::model::{NoiseStructure, Sode};
use monosde::noise::{BrownianPath, StepIncrements};
use monosde::problems::{AdditiveLinear, DoubleWell, GeometricBrownian, StochasticOscillator};
use monosde::schemes::{
    implicit_solve, integrate, project_to_ball, step, ImplicitSolver, SchemeKind, SchemeSpec, SolverSettings,
    StepGrid,
};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(g(lo) < 0.0 && g(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

proptest! {
    #[test]
    fn projection_is_nonexpansive(
        x1 in prop::collection::vec(-50.0..50.0f64, 3),
        x2 in prop::collection::vec(-50.0..50.0f64, 3),
        k in 1..12i32,
        alpha in 0.05..1.0f64,
    ) {
        let delta = 0.5f64.powi(k);
        let p1 = project_to_ball(&x1, delta, alpha);
        let p2 = project_to_ball(&x2, delta, alpha);
        let d = |a: &[f64], b: &[f64]| norm(&a.iter().zip(b).map(|(u, v)| u - v).collect::<Vec<_>>());
        prop_assert!(d(&p1, &p2) <= d(&x1, &x2) * (1.0 + 1e-12) + 1e-12);
        prop_assert!(norm(&p1) <= delta.powf(-alpha) * (1.0 + 1e-12));
        if norm(&x1) <= delta.powf(-alpha) {
            prop_assert_eq!(&p1, &x1);
        }
    }

    #[test]
    fn implicit_solve_inverts_drift_step(x in -20.0..20.0f64, k in 1..12i32) {
        let p = DoubleWell::new(0.3);
        let delta = 0.9 * 0.5f64.powi(k);
        for method in [ImplicitSolver::NewtonFull, ImplicitSolver::CardanoScalarCubic] {
            let sol = implicit_solve(&p, 0.0, delta, &[x], &SolverSettings::with_method(method)).unwrap();
            let y = sol.y[0];
            let back = y - delta * y * (1.0 - y * y);
            prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs()), "{method:?}: {back} vs {x}");
        }
    }

    #[test]
    fn oscillator_exact_radius_stays_positive(seed in 0..1000u64, mu in -1.0..1.0f64) {
        let p = StochasticOscillator::new(mu, 1.0, 0.5, 0.6);
        let path = BrownianPath::generate(seed, 0, 1.0, 0.5f64.powi(8), 2).unwrap();
        let x = p.exact(&path, 1.0, path.fine_dt()).unwrap();
        prop_assert!(norm(&x) > 0.0 && norm(&x).is_finite());
    }
}

#[test]
fn implicit_map_matches_bisection() {
    let p = DoubleWell::new(0.3);
    let want = bisect(|y| y - 0.25 * y * (1.0 - y * y) - 0.3, -1.0, 1.0);
    for method in [ImplicitSolver::NewtonFull, ImplicitSolver::CardanoScalarCubic] {
        let sol = implicit_solve(&p, 0.0, 0.25, &[0.3], &SolverSettings::with_method(method)).unwrap();
        assert_relative_eq!(sol.y[0], want, epsilon = 1e-13);
    }
}

#[test]
fn implicit_solve_rejects_large_steps() {
    let p = DoubleWell::new(0.3);
    assert!(implicit_solve(&p, 0.0, 1.0, &[0.3], &SolverSettings::default()).is_err());
}

#[test]
fn pmil_step_matches_hand_formula() {
    let p = DoubleWell::new(0.3);
    let delta = 0.0625;
    let dw = 0.1;
    let inc = StepIncrements::from_dw(delta, vec![dw], NoiseStructure::Scalar).unwrap();
    let scheme = SchemeSpec::for_problem(SchemeKind::ProjectedMilstein, &p);
    let (x, _) = step(&p, &scheme, &[2.0], 0.0, &inc).unwrap();
    // f(2) = -6, g(2) = -0.9, g g'(2) = 1.08.
    let want = 2.0 - 6.0 * delta - 0.9 * dw + 0.5 * 1.08 * (dw * dw - delta);
    assert_relative_eq!(x[0], want, epsilon = 1e-14);
    assert_relative_eq!(want, 1.50665, epsilon = 1e-12);
}

#[test]
fn milstein_equals_pmil_without_projection() {
    let p = DoubleWell::new(0.3).with_x0(0.5);
    let grid = StepGrid::uniform(1.0, 0.5f64.powi(8)).unwrap();
    let mil = SchemeSpec::for_problem(SchemeKind::Milstein, &p);
    let pmil = SchemeSpec::for_problem(SchemeKind::ProjectedMilstein, &p);
    for i in 0..20 {
        let path = BrownianPath::generate(7, i, 1.0, 0.5f64.powi(8), 1).unwrap();
        let a = integrate(&p, &mil, &grid, &path).unwrap();
        let b = integrate(&p, &pmil, &grid, &path).unwrap();
        if b.projection_events == 0 {
            assert_eq!(a.states, b.states);
        }
    }
}

#[test]
fn deterministic_double_well_settles_at_equilibria() {
    let grid = StepGrid::uniform(20.0, 0.5f64.powi(6)).unwrap();
    for (x0, want) in [(2.0, 1.0), (0.4, 1.0), (-0.4, -1.0), (-3.0, -1.0)] {
        let p = DoubleWell::new(1e-12).with_x0(x0).with_horizon(20.0);
        let path = BrownianPath::zero(20.0, 0.5f64.powi(6), 1).unwrap();
        for kind in [SchemeKind::ProjectedMilstein, SchemeKind::SplitStepBackwardMilstein] {
            let spec = SchemeSpec::for_problem(kind, &p).with_solver(ImplicitSolver::CardanoScalarCubic);
            let out = integrate(&p, &spec, &grid, &path).unwrap();
            assert!((out.final_state()[0] - want).abs() < 1e-3, "{kind:?} from {x0}");
        }
    }
}

#[test]
fn splitting_schemes_match_on_additive_noise() {
    let p = AdditiveLinear::new(1.5, 0.4);
    let grid = StepGrid::uniform(1.0, 0.0625).unwrap();
    let path = BrownianPath::generate(3, 0, 1.0, 0.0625, 1).unwrap();
    let pairs = [
        (SchemeKind::ProjectedMilstein, SchemeKind::ProjectedEm),
        (SchemeKind::SplitStepBackwardMilstein, SchemeKind::SplitStepBackwardEuler),
    ];
    for (a, b) in pairs {
        let x = integrate(&p, &SchemeSpec::for_problem(a, &p), &grid, &path).unwrap();
        let y = integrate(&p, &SchemeSpec::for_problem(b, &p), &grid, &path).unwrap();
        assert_eq!(x.states, y.states, "{a:?} vs {b:?}");
    }
}

#[test]
fn gbm_milstein_tracks_exact_solution() {
    let p = GeometricBrownian::new(0.5, 0.5);
    let fine = 0.5f64.powi(12);
    let path = BrownianPath::generate(11, 0, 1.0, fine, 1).unwrap();
    let exact = p.exact(&path, 1.0).unwrap();
    let grid = StepGrid::uniform(1.0, fine).unwrap();
    let mil = integrate(&p, &SchemeSpec::for_problem(SchemeKind::Milstein, &p), &grid, &path).unwrap();
    assert_relative_eq!(mil.final_state()[0], exact, max_relative = 1e-3);
}

#[test]
fn scheme_rejects_steps_above_bound() {
    let p = StochasticOscillator::new(0.4, 1.0, 0.5, 0.6);
    let spec = SchemeSpec::for_problem(SchemeKind::SplitStepBackwardMilstein, &p);
    assert!(spec.upper_step_bound < 0.56 && spec.upper_step_bound > 0.54);
    assert!(spec.check_step(1.0).is_err());
    assert!(spec.check_step(0.5).is_ok());
    assert_eq!(p.noise_structure(), NoiseStructure::Commutative);
}
