use proptest::prelude::*;

use monosde::analysis::{eoc, log_log_slope, strong_error, McConfig, ReferenceSpec};
use monosde::model::NoiseStructure;
use monosde::noise::BrownianPath;
use monosde::problems::{DoubleWell, GeometricBrownian};
use monosde::schemes::{SchemeKind, SchemeSpec};

proptest! {
    #[test]
    fn eoc_recovers_power_laws(c in 0.01..10.0f64, order in 0.3..3.0f64) {
        let hs: Vec<f64> = (2..8).map(|k| 0.5f64.powi(k)).collect();
        let errors: Vec<f64> = hs.iter().map(|h| c * h.powf(order)).collect();
        for v in eoc(&errors, &hs).unwrap() {
            prop_assert!((v - order).abs() < 1e-9);
        }
        prop_assert!((log_log_slope(&hs, &errors) - order).abs() < 1e-9);
    }

    #[test]
    fn coarse_increments_sum_fine_ones(seed in 0..500u64, stride in 1..16usize) {
        let path = BrownianPath::generate(seed, 3, 1.0, 1.0 / 256.0, 2).unwrap();
        let n = path.num_fine_steps() / stride * stride;
        let mut total = [0.0; 2];
        for from in (0..n).step_by(stride) {
            let inc = path.iterated_integrals(from, from + stride, NoiseStructure::Commutative).unwrap();
            total[0] += inc.dw[0];
            total[1] += inc.dw[1];
            let product = inc.dw[0] * inc.dw[1];
            prop_assert!((inc.iterated(0, 1) + inc.iterated(1, 0) - product).abs() <= 1e-15);
        }
        let w = path.value_at(n).unwrap();
        prop_assert!((total[0] - w[0]).abs() < 1e-12 && (total[1] - w[1]).abs() < 1e-12);
    }
}

#[test]
fn refining_the_reference_barely_moves_errors() {
    let p = DoubleWell::new(0.3);
    let scheme = SchemeSpec::for_problem(SchemeKind::ProjectedMilstein, &p);
    let hs = [0.0625, 0.03125];
    let cfg = McConfig::new(400, 5);
    let coarse = ReferenceSpec::Scheme { scheme, fine_dt: 0.5f64.powi(10) };
    let fine = ReferenceSpec::Scheme { scheme, fine_dt: 0.5f64.powi(12) };
    let a = strong_error(&p, &scheme, &hs, &coarse, &cfg).unwrap();
    let b = strong_error(&p, &scheme, &hs, &fine, &cfg).unwrap();
    // Different fine grids draw different paths, so allow both sampling
    // intervals plus the error of the coarser reference itself.
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let slack = x.ci_half_width + y.ci_half_width + 5e-4;
        assert!((x.rms_error - y.rms_error).abs() < slack, "{x:?} vs {y:?}");
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let p = GeometricBrownian::new(0.5, 0.5);
    let scheme = SchemeSpec::for_problem(SchemeKind::EulerMaruyama, &p);
    let reference = ReferenceSpec::Exact { fine_dt: 0.5f64.powi(8) };
    let hs = [0.125, 0.0625];
    let one = strong_error(&p, &scheme, &hs, &reference, &McConfig::new(300, 9).with_workers(1)).unwrap();
    let many = strong_error(&p, &scheme, &hs, &reference, &McConfig::new(300, 9).with_workers(3)).unwrap();
    assert_eq!(one.to_csv_string(false), many.to_csv_string(false));
}
