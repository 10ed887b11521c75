use approx::assert_abs_diff_eq;

use monosde::model::{commutativity_defect, deriv_product_defect, verify_coercivity, verify_monotonicity, Sode};
use monosde::noise::BrownianPath;
use monosde::problems::{AdditiveLinear, DoubleWell, GeometricBrownian, StochasticOscillator};

#[test]
fn deriv_products_match_finite_differences() {
    let problems: Vec<Box<dyn Sode>> = vec![
        Box::new(DoubleWell::new(0.3)),
        Box::new(StochasticOscillator::new(0.4, 1.0, 0.5, 0.6)),
        Box::new(GeometricBrownian::new(0.5, 0.5)),
        Box::new(AdditiveLinear::new(1.0, 0.7)),
    ];
    for p in &problems {
        let defect = deriv_product_defect(p.as_ref(), 3.0, 1000, 5);
        assert!(defect < 1e-6, "{}: {defect}", p.describe());
    }
}

#[test]
fn oscillator_noise_commutes() {
    let p = StochasticOscillator::new(0.4, 1.0, 0.5, 0.6);
    assert!(commutativity_defect(&p, 5.0, 1000, 9) < 1e-12);
}

#[test]
fn double_well_conditions_hold_for_small_noise() {
    let p = DoubleWell::new(0.3);
    let reg = p.regularity();
    assert!(verify_monotonicity(&p, reg.eta, 10.0, 20_000, 1).unwrap().passed);
    assert!(verify_coercivity(&p, 14.0, 10.0, 20_000, 1).unwrap().passed);
}

#[test]
fn double_well_coercivity_fails_for_unit_noise() {
    let p = DoubleWell::new(1.0);
    let reg = p.regularity();
    assert!(verify_monotonicity(&p, reg.eta, 10.0, 20_000, 1).unwrap().passed);
    assert!(!verify_coercivity(&p, 14.0, 10.0, 20_000, 1).unwrap().passed);
}

#[test]
fn oscillator_radius_without_radial_noise() {
    // With sigma1 = 0 the radius obeys r' = mu r - r^3 whatever the angular noise.
    let p = StochasticOscillator::new(0.4, 1.0, 0.0, 0.6).with_initial_polar(1.0, 0.0);
    let path = BrownianPath::generate(1, 0, 1.0, 0.5f64.powi(14), 2).unwrap();
    let x = p.exact(&path, 1.0, path.fine_dt()).unwrap();
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    // r' = mu r - r^3 with r(0) = 1: r(t)^2 = mu / (1 - (1 - mu) e^{-2 mu t}).
    let mu: f64 = 0.4;
    let want = (mu / (1.0 - (1.0 - mu) * (-2.0 * mu).exp())).sqrt();
    assert_abs_diff_eq!(r, want, epsilon = 1e-3);
}
