//! One-step maps of the explicit, projected and split-step schemes, the
//! projection onto the ball of radius `delta^(-alpha)`, the implicit drift
//! solvers, and path-wise integration over a step grid.
//!
//! Every scheme shares the same shape. A base point is formed first: the
//! state itself (EM, Milstein), its projection (PEM, PMil), or the solution
//! `y` of `y - delta f(t + delta, y) = x` (SSBE, SSBM). Then
//!
//! ```text
//! x' = base [+ delta f(s, base)] + Σ_r g^r(s, base) I_(r)
//!      [+ Σ_{r1,r2} g^{r1,r2}(s, base) I_(r2,r1)]
//! ```
//!
//! where `s = t` for the explicit schemes and `s = t + delta` for the
//! split-step ones, the drift term only appears for explicit schemes and
//! the double sum only for Milstein-type schemes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NoiseStructure, Regularity, Sode};
use crate::noise::{steps_in, BrownianPath, StepIncrements};
use crate::vector::{axpy, dist, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    EulerMaruyama,
    Milstein,
    ProjectedEm,
    ProjectedMilstein,
    SplitStepBackwardEuler,
    SplitStepBackwardMilstein,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::EulerMaruyama,
        SchemeKind::Milstein,
        SchemeKind::ProjectedEm,
        SchemeKind::ProjectedMilstein,
        SchemeKind::SplitStepBackwardEuler,
        SchemeKind::SplitStepBackwardMilstein,
    ];

    /// Short lowercase tag used in file names and configs.
    pub fn tag(self) -> &'static str {
        match self {
            SchemeKind::EulerMaruyama => "em",
            SchemeKind::Milstein => "mil",
            SchemeKind::ProjectedEm => "pem",
            SchemeKind::ProjectedMilstein => "pmil",
            SchemeKind::SplitStepBackwardEuler => "ssbe",
            SchemeKind::SplitStepBackwardMilstein => "ssbm",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        SchemeKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn is_projected(self) -> bool {
        matches!(self, SchemeKind::ProjectedEm | SchemeKind::ProjectedMilstein)
    }

    pub fn is_split_step(self) -> bool {
        matches!(
            self,
            SchemeKind::SplitStepBackwardEuler | SchemeKind::SplitStepBackwardMilstein
        )
    }

    pub fn is_milstein_type(self) -> bool {
        matches!(
            self,
            SchemeKind::Milstein | SchemeKind::ProjectedMilstein | SchemeKind::SplitStepBackwardMilstein
        )
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.tag().to_uppercase())
    }
}

/// How the split-step schemes solve `y - delta f(t, y) = x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ImplicitSolver {
    /// Damped Newton iteration to tolerance.
    NewtonFull,
    /// Exactly `iterations` undamped Newton steps, no tolerance check.
    NewtonFixedIters { iterations: usize },
    /// Closed-form real root of a scalar cubic drift.
    CardanoScalarCubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub method: ImplicitSolver,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            method: ImplicitSolver::NewtonFull,
            tolerance: 1e-12,
            max_iters: 50,
        }
    }
}

impl SolverSettings {
    pub fn with_method(method: ImplicitSolver) -> Self {
        SolverSettings {
            method,
            ..Default::default()
        }
    }
}

/// A scheme together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    /// Projection exponent; only read by projected schemes.
    pub alpha: f64,
    /// Largest admissible step size.
    pub upper_step_bound: f64,
    pub solver: SolverSettings,
}

const BOUND_MARGIN: f64 = 1.0 - 1e-6;

impl SchemeSpec {
    /// Defaults derived from the problem constants: `alpha = 1/(2(q-1))`,
    /// bound 1 for projected schemes, just below `1/L` for split-step
    /// schemes (and below `2 eta2 / eta1` for SSBM when those are known).
    pub fn new(kind: SchemeKind, regularity: &Regularity) -> Self {
        let inv_l = 1.0 / regularity.monotonicity_l;
        let upper_step_bound = match kind {
            SchemeKind::ProjectedEm | SchemeKind::ProjectedMilstein => 1.0,
            SchemeKind::SplitStepBackwardEuler => inv_l * BOUND_MARGIN,
            SchemeKind::SplitStepBackwardMilstein => match (regularity.eta1, regularity.eta2) {
                (Some(eta1), Some(eta2)) => inv_l.min(2.0 * eta2 / eta1) * BOUND_MARGIN,
                _ => inv_l * BOUND_MARGIN,
            },
            SchemeKind::EulerMaruyama | SchemeKind::Milstein => f64::MAX,
        };
        SchemeSpec {
            kind,
            alpha: regularity.default_alpha(),
            upper_step_bound,
            solver: SolverSettings::default(),
        }
    }

    pub fn for_problem<P: Sode + ?Sized>(kind: SchemeKind, problem: &P) -> Self {
        Self::new(kind, &problem.regularity())
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_solver(mut self, method: ImplicitSolver) -> Self {
        self.solver.method = method;
        self
    }

    pub fn with_upper_step_bound(mut self, bound: f64) -> Self {
        self.upper_step_bound = bound;
        self
    }

    pub fn validate(&self, regularity: &Regularity) -> Result<()> {
        if self.kind.is_projected() {
            if !(self.alpha > 0.0) {
                return Err(Error::param("alpha", self.alpha, "projected schemes need alpha > 0"));
            }
            if !(self.upper_step_bound > 0.0 && self.upper_step_bound <= 1.0) {
                return Err(Error::param(
                    "upper_step_bound",
                    self.upper_step_bound,
                    "projected schemes need a bound in (0, 1]",
                ));
            }
        }
        if self.kind.is_split_step() {
            let inv_l = 1.0 / regularity.monotonicity_l;
            if !(self.upper_step_bound > 0.0 && self.upper_step_bound < inv_l) {
                return Err(Error::param(
                    "upper_step_bound",
                    self.upper_step_bound,
                    format!("split-step schemes need a bound in (0, 1/L) = (0, {inv_l})"),
                ));
            }
        }
        if !(self.solver.tolerance > 0.0) {
            return Err(Error::param("tolerance", self.solver.tolerance, "must be > 0"));
        }
        Ok(())
    }

    pub fn check_step(&self, delta: f64) -> Result<()> {
        if !(delta > 0.0) || delta > self.upper_step_bound * (1.0 + 1e-12) {
            return Err(Error::StepBound {
                delta,
                bound: self.upper_step_bound,
            });
        }
        Ok(())
    }
}

/// Scales `x` in place onto the closed ball of radius `delta^(-alpha)`.
/// Returns whether `x` lay outside, i.e. whether it was changed.
pub fn project_in_place(x: &mut [f64], delta: f64, alpha: f64) -> bool {
    let radius = delta.powf(-alpha);
    let n = norm(x);
    if n > radius {
        let scale = radius / n;
        x.iter_mut().for_each(|v| *v *= scale);
        true
    } else {
        false
    }
}

/// `min(1, delta^(-alpha) / |x|) x`, with `0` mapped to `0`.
pub fn project_to_ball(x: &[f64], delta: f64, alpha: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    project_in_place(&mut out, delta, alpha);
    out
}

/// Result of an implicit drift solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitSolution {
    pub y: Vec<f64>,
    pub iterations: usize,
    /// `|y - delta f(t, y) - x|`.
    pub residual: f64,
}

/// Solves `y - delta f(t, y) = x`, i.e. evaluates the inverse of
/// `F_delta(t, .) = id - delta f(t, .)`, which is a homeomorphism for
/// `delta < 1/L`.
pub fn implicit_solve<P: Sode + ?Sized>(
    problem: &P,
    t: f64,
    delta: f64,
    x: &[f64],
    settings: &SolverSettings,
) -> Result<ImplicitSolution> {
    let inv_l = 1.0 / problem.regularity().monotonicity_l;
    if !(delta > 0.0 && delta < inv_l) {
        return Err(Error::StepBound { delta, bound: inv_l });
    }
    let mut solver = ImplicitWorkspace::new(problem.dim());
    let mut y = vec![0.0; problem.dim()];
    let (iterations, residual) = solver.solve(problem, t, delta, x, settings, &mut y)?;
    Ok(ImplicitSolution { y, iterations, residual })
}

struct ImplicitWorkspace {
    d: usize,
    fy: Vec<f64>,
    residual: Vec<f64>,
    trial: Vec<f64>,
    trial_residual: Vec<f64>,
    jac: Vec<f64>,
    newton_step: Vec<f64>,
}

impl ImplicitWorkspace {
    fn new(d: usize) -> Self {
        ImplicitWorkspace {
            d,
            fy: vec![0.0; d],
            residual: vec![0.0; d],
            trial: vec![0.0; d],
            trial_residual: vec![0.0; d],
            jac: vec![0.0; d * d],
            newton_step: vec![0.0; d],
        }
    }

    /// `out = y - delta f(t, y) - x`; returns its norm.
    fn residual_of<P: Sode + ?Sized>(
        fy: &mut [f64],
        problem: &P,
        t: f64,
        delta: f64,
        x: &[f64],
        y: &[f64],
        out: &mut [f64],
    ) -> f64 {
        problem.drift(t, y, fy);
        for i in 0..y.len() {
            out[i] = y[i] - delta * fy[i] - x[i];
        }
        norm(out)
    }

    /// Newton direction `s` solving `(I - delta Jf(y)) s = -residual`.
    fn newton_direction<P: Sode + ?Sized>(&mut self, problem: &P, t: f64, delta: f64, y: &[f64]) -> Result<()> {
        let d = self.d;
        problem.drift_jacobian(t, y, &mut self.jac);
        for i in 0..d {
            for j in 0..d {
                let identity = if i == j { 1.0 } else { 0.0 };
                self.jac[i * d + j] = identity - delta * self.jac[i * d + j];
            }
        }
        if d == 1 {
            self.newton_step[0] = -self.residual[0] / self.jac[0];
        } else {
            let a = DMatrix::from_row_slice(d, d, &self.jac);
            let b = DVector::from_iterator(d, self.residual.iter().map(|v| -v));
            let s = a.lu().solve(&b).ok_or_else(|| Error::Convergence {
                iterations: 0,
                residual: norm(&self.residual),
                last_iterate: y.to_vec(),
            })?;
            self.newton_step.copy_from_slice(s.as_slice());
        }
        if self.newton_step.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Convergence {
                iterations: 0,
                residual: norm(&self.residual),
                last_iterate: y.to_vec(),
            })
        }
    }

    fn solve<P: Sode + ?Sized>(
        &mut self,
        problem: &P,
        t: f64,
        delta: f64,
        x: &[f64],
        settings: &SolverSettings,
        y: &mut [f64],
    ) -> Result<(usize, f64)> {
        match settings.method {
            ImplicitSolver::CardanoScalarCubic => {
                let coefficients = match (self.d, problem.scalar_cubic_drift()) {
                    (1, Some(c)) if c[3] != 0.0 => c,
                    _ => {
                        return Err(Error::Applicability(
                            "the Cardano solver needs a scalar problem with a cubic drift".into(),
                        ))
                    }
                };
                y[0] = cardano_implicit_root(coefficients, delta, x[0])?;
                let r = Self::residual_of(&mut self.fy, problem, t, delta, x, y, &mut self.residual);
                Ok((0, r))
            }
            ImplicitSolver::NewtonFixedIters { iterations } => {
                self.predictor(problem, t, delta, x, y);
                let mut r = Self::residual_of(&mut self.fy, problem, t, delta, x, y, &mut self.residual);
                for _ in 0..iterations {
                    self.newton_direction(problem, t, delta, y)?;
                    axpy(1.0, &self.newton_step, y);
                    r = Self::residual_of(&mut self.fy, problem, t, delta, x, y, &mut self.residual);
                }
                Ok((iterations, r))
            }
            ImplicitSolver::NewtonFull => {
                let target = settings.tolerance * (1.0 + norm(x));
                self.predictor(problem, t, delta, x, y);
                let mut r = Self::residual_of(&mut self.fy, problem, t, delta, x, y, &mut self.residual);
                let mut iterations = 0;
                while !(r <= target) {
                    if iterations == settings.max_iters || !r.is_finite() {
                        return Err(Error::Convergence {
                            iterations,
                            residual: r,
                            last_iterate: y.to_vec(),
                        });
                    }
                    self.newton_direction(problem, t, delta, y)?;
                    // Halve the step while the residual norm does not decrease.
                    let mut lambda = 1.0;
                    let mut trial_r;
                    loop {
                        for i in 0..self.d {
                            self.trial[i] = y[i] + lambda * self.newton_step[i];
                        }
                        trial_r = Self::residual_of(
                            &mut self.fy,
                            problem,
                            t,
                            delta,
                            x,
                            &self.trial,
                            &mut self.trial_residual,
                        );
                        if trial_r < r || lambda < 1e-10 {
                            break;
                        }
                        lambda *= 0.5;
                    }
                    iterations += 1;
                    if !(trial_r < r) {
                        // Stalled, typically at the rounding floor of the residual.
                        return Err(Error::Convergence {
                            iterations,
                            residual: r,
                            last_iterate: y.to_vec(),
                        });
                    }
                    y.copy_from_slice(&self.trial);
                    self.residual.copy_from_slice(&self.trial_residual);
                    r = trial_r;
                }
                // Polish down to the rounding floor: full Newton steps as long
                // as they still reduce the residual.
                for _ in 0..2 {
                    if r == 0.0 || self.newton_direction(problem, t, delta, y).is_err() {
                        break;
                    }
                    for i in 0..self.d {
                        self.trial[i] = y[i] + self.newton_step[i];
                    }
                    let trial_r = Self::residual_of(
                        &mut self.fy,
                        problem,
                        t,
                        delta,
                        x,
                        &self.trial,
                        &mut self.trial_residual,
                    );
                    if !(trial_r < r) {
                        break;
                    }
                    y.copy_from_slice(&self.trial);
                    self.residual.copy_from_slice(&self.trial_residual);
                    r = trial_r;
                    iterations += 1;
                }
                Ok((iterations, r))
            }
        }
    }

    /// Explicit Euler predictor `x + delta f(t, x)`.
    fn predictor<P: Sode + ?Sized>(&mut self, problem: &P, t: f64, delta: f64, x: &[f64], y: &mut [f64]) {
        problem.drift(t, x, &mut self.fy);
        for i in 0..self.d {
            y[i] = x[i] + delta * self.fy[i];
        }
    }
}

/// Unique real root of `y - delta (c0 + c1 y + c2 y^2 + c3 y^3) = x`.
fn cardano_implicit_root(c: [f64; 4], delta: f64, x: f64) -> Result<f64> {
    let a3 = -delta * c[3];
    let b = -delta * c[2] / a3;
    let cc = (1.0 - delta * c[1]) / a3;
    let dd = (-delta * c[0] - x) / a3;
    // Depressed cubic z^3 + p z + q = 0 with y = z - b/3.
    let p = cc - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * cc / 3.0 + dd;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc < 0.0 {
        return Err(Error::Applicability(format!(
            "cubic has three real roots (discriminant {disc:e}); the implicit map is not monotone for delta = {delta}"
        )));
    }
    let w = -q / 2.0 - q.signum() * disc.sqrt();
    let u = w.cbrt();
    let z = if u == 0.0 {
        0.0
    } else {
        // z = u + v with u v = -p/3; the quotient form avoids cancellation.
        let v = -p / (3.0 * u);
        -q / (u * u + p / 3.0 + v * v)
    };
    Ok(z - b / 3.0)
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepMeta {
    pub projected: bool,
    pub solver_iterations: usize,
    pub solver_residual: f64,
}

/// Reusable buffers for repeated steps of one scheme on one problem.
pub(crate) struct Stepper<'a, P: Sode + ?Sized> {
    problem: &'a P,
    scheme: SchemeSpec,
    structure: NoiseStructure,
    m: usize,
    base: Vec<f64>,
    coeff: Vec<f64>,
    implicit: ImplicitWorkspace,
}

impl<'a, P: Sode + ?Sized> Stepper<'a, P> {
    pub(crate) fn new(problem: &'a P, scheme: &SchemeSpec) -> Result<Self> {
        scheme.validate(&problem.regularity())?;
        let d = problem.dim();
        Ok(Stepper {
            problem,
            scheme: *scheme,
            structure: problem.noise_structure(),
            m: problem.num_drivers(),
            base: vec![0.0; d],
            coeff: vec![0.0; d],
            implicit: ImplicitWorkspace::new(d),
        })
    }

    /// Whether this stepper consumes iterated integrals.
    pub(crate) fn needs_iterated(&self) -> bool {
        self.scheme.kind.is_milstein_type() && self.structure != NoiseStructure::Additive
    }

    pub(crate) fn advance(&mut self, x: &[f64], t: f64, inc: &StepIncrements, out: &mut [f64]) -> Result<StepMeta> {
        let delta = inc.delta;
        self.scheme.check_step(delta)?;
        if inc.num_drivers() != self.m {
            return Err(Error::Applicability(format!(
                "increments carry {} drivers, problem has {}",
                inc.num_drivers(),
                self.m
            )));
        }
        if self.needs_iterated() {
            if self.structure == NoiseStructure::General {
                return Err(Error::UnsupportedNoise);
            }
            if inc.structure != self.structure {
                return Err(Error::Applicability(format!(
                    "increments built for {:?} noise, problem has {:?}",
                    inc.structure, self.structure
                )));
            }
        }

        let mut meta = StepMeta::default();
        let kind = self.scheme.kind;
        self.base.copy_from_slice(x);
        let s = if kind.is_split_step() {
            let (iterations, residual) =
                self.implicit
                    .solve(self.problem, t + delta, delta, x, &self.scheme.solver, &mut self.base)?;
            meta.solver_iterations = iterations;
            meta.solver_residual = residual;
            t + delta
        } else {
            if kind.is_projected() {
                meta.projected = project_in_place(&mut self.base, delta, self.scheme.alpha);
            }
            t
        };

        out.copy_from_slice(&self.base);
        if !kind.is_split_step() {
            self.problem.drift(s, &self.base, &mut self.coeff);
            axpy(delta, &self.coeff, out);
        }
        for r in 0..self.m {
            self.problem.diffusion(s, &self.base, r, &mut self.coeff);
            axpy(inc.dw[r], &self.coeff, out);
        }
        if self.needs_iterated() {
            let off_diagonal = self.structure == NoiseStructure::Commutative;
            for r1 in 0..self.m {
                for r2 in 0..self.m {
                    if r1 != r2 && !off_diagonal {
                        continue;
                    }
                    self.problem
                        .diffusion_deriv_product(s, &self.base, r1, r2, &mut self.coeff);
                    // g^{r1,r2} pairs with I_(r2,r1). The order only matters for
                    // non-commutative noise, which is rejected above.
                    axpy(inc.iterated(r2, r1), &self.coeff, out);
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { step: 0, time: t + delta });
        }
        Ok(meta)
    }
}

/// One step of `scheme` from state `x` at time `t` with increments `inc`.
pub fn step<P: Sode + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    x: &[f64],
    t: f64,
    inc: &StepIncrements,
) -> Result<(Vec<f64>, StepMeta)> {
    let mut stepper = Stepper::new(problem, scheme)?;
    let mut out = vec![0.0; x.len()];
    let meta = stepper.advance(x, t, inc, &mut out)?;
    Ok((out, meta))
}

/// Step sizes `h_1..h_N`, all positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGrid {
    steps: Vec<f64>,
}

impl StepGrid {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Grid("a step grid needs at least one step".into()));
        }
        if let Some(&h) = steps.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
            return Err(Error::Grid(format!("step size {h} is not positive")));
        }
        Ok(StepGrid { steps })
    }

    /// `horizon / h` equal steps; `h` must divide the horizon.
    pub fn uniform(horizon: f64, h: f64) -> Result<Self> {
        let n = steps_in(horizon, h)
            .ok_or_else(|| Error::Grid(format!("step {h} does not divide the horizon {horizon}")))?;
        Self::new(vec![h; n])
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.steps.iter().sum()
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }

    /// `t_0 = 0, t_n = h_1 + ... + h_n`.
    pub fn grid_points(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.steps.iter().scan(0.0, |t, h| {
                *t += h;
                Some(*t)
            }))
            .collect()
    }

    /// Fine-step count of every step on a path with resolution `fine_dt`.
    pub(crate) fn fine_counts(&self, fine_dt: f64) -> Result<Vec<usize>> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let k = (h / fine_dt).round();
                if k >= 1.0 && (k * fine_dt - h).abs() <= 1e-12 * h {
                    Ok(k as usize)
                } else {
                    Err(Error::Grid(format!(
                        "step {i} of size {h} is not a multiple of the path resolution {fine_dt}"
                    )))
                }
            })
            .collect()
    }
}

/// A full trajectory on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dim: usize,
    /// `t_0..t_N`.
    pub times: Vec<f64>,
    /// Row-major `[(N + 1) x dim]`.
    pub states: Vec<f64>,
    /// `projected[n]` tells whether the step into `t_n` projected (`n >= 1`).
    pub projected: Vec<bool>,
    pub projection_events: usize,
    pub solver_iterations: usize,
    pub max_residual: f64,
}

impl TrajectoryRecord {
    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.num_steps())
    }

    /// Debugging export with columns `t, x_1..x_d, projected`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|i| format!("x_{i}")))
            .chain(std::iter::once("projected".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for n in 0..self.times.len() {
            let mut row = vec![format!("{}", self.times[n])];
            row.extend(self.state(n).iter().map(|v| format!("{v}")));
            row.push(u8::from(self.projected[n]).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Endpoint-only summary of a run, for Monte Carlo loops.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointRecord {
    pub state: Vec<f64>,
    pub projection_events: usize,
    pub solver_iterations: usize,
    pub max_residual: f64,
}

/// Folds `stepper` over consecutive windows of `counts` fine steps starting
/// at fine index `start`, calling `visit(n, fine_index, state, meta)` after
/// each step.
pub(crate) fn run_windows<P, F>(
    stepper: &mut Stepper<'_, P>,
    path: &BrownianPath,
    counts: &[usize],
    start: usize,
    t0: f64,
    x0: &[f64],
    mut visit: F,
) -> Result<Vec<f64>>
where
    P: Sode + ?Sized,
    F: FnMut(usize, usize, &[f64], &StepMeta),
{
    let structure = if stepper.needs_iterated() {
        stepper.structure
    } else {
        NoiseStructure::Additive
    };
    let mut inc = StepIncrements::zeroed(path.num_drivers(), structure);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x0.len()];
    let mut k = start;
    let fine_dt = path.fine_dt();
    for (n, &count) in counts.iter().enumerate() {
        path.fill_increments(k, k + count, &mut inc)?;
        if structure != NoiseStructure::Additive {
            inc.fill_iterated()?;
        }
        let t = t0 + k as f64 * fine_dt;
        let meta = stepper.advance(&x, t, &inc, &mut next).map_err(|e| match e {
            Error::Overflow { time, .. } => Error::Overflow { step: n + 1, time },
            other => other,
        })?;
        std::mem::swap(&mut x, &mut next);
        k += count;
        visit(n + 1, k, &x, &meta);
    }
    Ok(x)
}

fn check_alignment<P: Sode + ?Sized>(
    problem: &P,
    grid: &StepGrid,
    path: &BrownianPath,
) -> Result<Vec<usize>> {
    if path.num_drivers() != problem.num_drivers() {
        return Err(Error::Grid(format!(
            "path has {} drivers, problem has {}",
            path.num_drivers(),
            problem.num_drivers()
        )));
    }
    let counts = grid.fine_counts(path.fine_dt())?;
    let total: usize = counts.iter().sum();
    if total > path.num_fine_steps() {
        return Err(Error::Grid(format!(
            "grid covers {total} fine steps, path only {}",
            path.num_fine_steps()
        )));
    }
    Ok(counts)
}

fn check_commutativity<P: Sode + ?Sized>(problem: &P, scheme: &SchemeSpec, x0: &[f64]) -> Result<()> {
    if !scheme.kind.is_milstein_type() || problem.noise_structure() != NoiseStructure::Commutative {
        return Ok(());
    }
    let m = problem.num_drivers();
    for r1 in 0..m {
        for r2 in (r1 + 1)..m {
            let a = problem.deriv_product_at(0.0, x0, r1, r2);
            let b = problem.deriv_product_at(0.0, x0, r2, r1);
            let scale = norm(&a).max(norm(&b)).max(1.0);
            if dist(&a, &b) > 1e-12 * scale {
                return Err(Error::Applicability(format!(
                    "problem is declared commutative but g^({r1},{r2}) != g^({r2},{r1})"
                )));
            }
        }
    }
    Ok(())
}

/// Runs `scheme` over `grid` from the problem's initial value, drawing
/// increments from `path` by exact summation.
pub fn integrate<P: Sode + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    grid: &StepGrid,
    path: &BrownianPath,
) -> Result<TrajectoryRecord> {
    integrate_from(problem, scheme, grid, path, &problem.initial_value())
}

/// As [`integrate`] with an explicit initial state.
pub fn integrate_from<P: Sode + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    grid: &StepGrid,
    path: &BrownianPath,
    x0: &[f64],
) -> Result<TrajectoryRecord> {
    let counts = check_alignment(problem, grid, path)?;
    check_commutativity(problem, scheme, x0)?;
    let mut stepper = Stepper::new(problem, scheme)?;
    let d = x0.len();
    let mut record = TrajectoryRecord {
        dim: d,
        times: Vec::with_capacity(counts.len() + 1),
        states: Vec::with_capacity((counts.len() + 1) * d),
        projected: Vec::with_capacity(counts.len() + 1),
        projection_events: 0,
        solver_iterations: 0,
        max_residual: 0.0,
    };
    record.times.push(0.0);
    record.states.extend_from_slice(x0);
    record.projected.push(false);
    let fine_dt = path.fine_dt();
    run_windows(&mut stepper, path, &counts, 0, 0.0, x0, |_, k, x, meta| {
        record.times.push(k as f64 * fine_dt);
        record.states.extend_from_slice(x);
        record.projected.push(meta.projected);
        record.projection_events += usize::from(meta.projected);
        record.solver_iterations += meta.solver_iterations;
        record.max_residual = record.max_residual.max(meta.solver_residual);
    })?;
    Ok(record)
}

/// As [`integrate_from`] but keeps only the final state and counters.
pub fn integrate_endpoint<P: Sode + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    grid: &StepGrid,
    path: &BrownianPath,
    x0: &[f64],
) -> Result<EndpointRecord> {
    let counts = check_alignment(problem, grid, path)?;
    check_commutativity(problem, scheme, x0)?;
    let mut stepper = Stepper::new(problem, scheme)?;
    let mut events = 0;
    let mut iterations = 0;
    let mut max_residual: f64 = 0.0;
    let state = run_windows(&mut stepper, path, &counts, 0, 0.0, x0, |_, _, _, meta| {
        events += usize::from(meta.projected);
        iterations += meta.solver_iterations;
        max_residual = max_residual.max(meta.solver_residual);
    })?;
    Ok(EndpointRecord {
        state,
        projection_events: events,
        solver_iterations: iterations,
        max_residual,
    })
}
