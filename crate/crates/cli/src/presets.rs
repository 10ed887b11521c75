//! Named experiment configurations at desk scale.

use monosde::problems::{make_double_well, make_oscillator, DoubleWell, ParametricProblem};

use crate::config::{
    ConditionsConfig, ExperimentConfig, Mode, ProbeConfig, ReferenceConfig, SchemeConfig, SolverChoice,
};

pub const NAMES: [&str; 6] = ["table2", "table3", "table4", "fig_timing", "probes", "conditions"];

fn double_well_schemes() -> Vec<SchemeConfig> {
    vec![
        SchemeConfig::new("pem"),
        SchemeConfig::new("pmil"),
        SchemeConfig::new("ssbm").with_solver(SolverChoice::Cardano),
    ]
}

fn double_well(name: &str, sigma: f64, mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        mode,
        problem: make_double_well(sigma).expect("sigma > 0"),
        schemes: double_well_schemes(),
        h_exponents: (4..=10).collect(),
        samples: 20_000,
        seed: 1,
        reference: Some(ReferenceConfig::Scheme {
            scheme: SchemeConfig::new("pmil"),
            fine_exponent: 12,
        }),
        probe: None,
        conditions: None,
    }
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    Some(match name {
        "table2" => double_well("table2", 0.3, Mode::Convergence),
        "table3" => double_well("table3", 1.0, Mode::Convergence),
        "table4" => ExperimentConfig {
            name: "table4".into(),
            mode: Mode::Convergence,
            problem: make_oscillator(0.4, 1.0, 0.5, 0.6),
            schemes: vec![
                SchemeConfig::new("pem"),
                SchemeConfig::new("pmil"),
                SchemeConfig::new("ssbm").with_newton_iterations(3),
            ],
            h_exponents: (4..=10).collect(),
            samples: 20_000,
            seed: 1,
            reference: Some(ReferenceConfig::Exact { fine_exponent: 12 }),
            probe: None,
            conditions: None,
        },
        "fig_timing" => double_well("fig_timing", 0.3, Mode::Timing),
        "probes" => ExperimentConfig {
            schemes: vec![
                SchemeConfig::new("pmil"),
                SchemeConfig::new("ssbm").with_solver(SolverChoice::Cardano),
            ],
            h_exponents: Vec::new(),
            samples: 100_000,
            reference: Some(ReferenceConfig::Scheme {
                scheme: SchemeConfig::new("pmil"),
                fine_exponent: 16,
            }),
            probe: Some(ProbeConfig {
                x0: vec![1.5],
                t: 0.0,
                delta_exponents: (4..=9).collect(),
            }),
            ..double_well("probes", 0.3, Mode::Probes)
        },
        "conditions" => ExperimentConfig {
            name: "conditions".into(),
            mode: Mode::Conditions,
            problem: ParametricProblem::DoubleWell(DoubleWell::new(0.3)),
            schemes: Vec::new(),
            h_exponents: Vec::new(),
            samples: 2,
            seed: 1,
            reference: None,
            probe: None,
            conditions: Some(ConditionsConfig {
                radius: 10.0,
                samples: 100_000,
                p: 14.0,
            }),
        },
        _ => return None,
    })
}
