//! Strong approximation of stochastic ODEs with superlinearly growing
//! coefficients under a global monotonicity condition.
//!
//! The crate provides the projected Euler–Maruyama and Milstein methods,
//! split-step backward Euler and Milstein methods, their shared noise
//! machinery, a set of test problems, and a Monte Carlo harness for
//! strong error and convergence order estimates.
//!
//! ```
//! use monosde::problems::make_double_well;
//! use monosde::schemes::{integrate, SchemeKind, SchemeSpec, StepGrid};
//! use monosde::noise::BrownianPath;
//! use monosde::model::Sode;
//!
//! let problem = make_double_well(0.3).unwrap();
//! let scheme = SchemeSpec::for_problem(SchemeKind::ProjectedMilstein, &problem);
//! let grid = StepGrid::uniform(1.0, 1.0 / 64.0).unwrap();
//! let path = BrownianPath::generate(7, 0, 1.0, 1.0 / 64.0, 1).unwrap();
//! let traj = integrate(&problem, &scheme, &grid, &path).unwrap();
//! assert_eq!(traj.num_steps(), 64);
//! assert!(traj.final_state()[0].is_finite());
//! ```

pub mod analysis;
pub mod error;
pub mod model;
pub mod noise;
pub mod problems;
pub mod schemes;
pub mod vector;

pub use error::{Error, Result};
pub use model::{NoiseStructure, Regularity, Sode};
pub use schemes::{SchemeKind, SchemeSpec};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/problems.md")]
    struct Problems;
    #[doc = include_str!("../../../book/src/noise.md")]
    struct Noise;
    #[doc = include_str!("../../../book/src/schemes.md")]
    struct Schemes;
    #[doc = include_str!("../../../book/src/analysis.md")]
    struct Analysis;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
