//! The SODE abstraction `dX = f(t,X) dt + Σ_r g^r(t,X) dW^r` and sampled
//! checks of the structural conditions the convergence theory relies on.
//!
//! The conditions are universally quantified over `R^d`, so a sampled check
//! can only falsify them. A passing [`ConditionReport`] means "no violation
//! found", nothing more.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{substream, BrownianPath};
use crate::vector::{dist_sq, norm_sq};

/// Which iterated integrals a Milstein-type scheme needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStructure {
    /// Diffusion independent of the state, so every `g^{r1,r2}` vanishes.
    Additive,
    /// One driver.
    Scalar,
    /// `g^{r1,r2} = 0` whenever `r1 != r2`.
    Diagonal,
    /// `g^{r1,r2} = g^{r2,r1}` for all driver pairs.
    Commutative,
    General,
}

/// Constants of the regularity assumptions attached to a problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    /// Polynomial growth rate `q >= 2`.
    pub growth_rate_q: f64,
    /// One-sided Lipschitz constant `L > 0` of the monotonicity condition.
    pub monotonicity_l: f64,
    /// Weight `eta > 1/2` in front of the diffusion differences.
    pub eta: f64,
    /// Weights `eta1 > 1`, `eta2 > 0` of the stronger split-step condition,
    /// when the problem satisfies it.
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    /// Constant of the coercivity condition; `L` when absent.
    pub coercivity_c: Option<f64>,
}

impl Regularity {
    pub fn new(growth_rate_q: f64, monotonicity_l: f64, eta: f64) -> Self {
        Regularity {
            growth_rate_q,
            monotonicity_l,
            eta,
            eta1: None,
            eta2: None,
            coercivity_c: None,
        }
    }

    pub fn with_ssbm(mut self, eta1: f64, eta2: f64) -> Self {
        self.eta1 = Some(eta1);
        self.eta2 = Some(eta2);
        self
    }

    pub fn with_coercivity(mut self, c: f64) -> Self {
        self.coercivity_c = Some(c);
        self
    }

    /// The projection exponent `1 / (2(q-1))` that makes the projected
    /// schemes order one.
    pub fn default_alpha(&self) -> f64 {
        1.0 / (2.0 * (self.growth_rate_q - 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.growth_rate_q >= 2.0) {
            return Err(Error::param("growth_rate_q", self.growth_rate_q, "must be >= 2"));
        }
        if !(self.monotonicity_l > 0.0) {
            return Err(Error::param("monotonicity_l", self.monotonicity_l, "must be > 0"));
        }
        if !(self.eta > 0.5) {
            return Err(Error::param("eta", self.eta, "must be > 1/2"));
        }
        Ok(())
    }
}

/// A stochastic ordinary differential equation with `dim()` states and
/// `num_drivers()` independent Wiener drivers.
///
/// Coefficient callbacks write into caller-provided buffers of length
/// `dim()` and must be pure. Driver indices are zero-based.
pub trait Sode: Send + Sync {
    fn dim(&self) -> usize;
    fn num_drivers(&self) -> usize;
    fn noise_structure(&self) -> NoiseStructure;
    fn regularity(&self) -> Regularity;
    fn horizon(&self) -> f64;
    fn initial_value(&self) -> Vec<f64>;

    /// `f(t, x)`.
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `g^r(t, x)`.
    fn diffusion(&self, t: f64, x: &[f64], r: usize, out: &mut [f64]);

    /// `g^{r1,r2}(t, x) = (∂g^{r1}/∂x)(t, x) g^{r2}(t, x)`.
    fn diffusion_deriv_product(&self, t: f64, x: &[f64], r1: usize, r2: usize, out: &mut [f64]);

    /// Row-major `d x d` Jacobian of the drift. The default is a central
    /// finite difference; shipped problems override it with closed forms.
    fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        finite_difference_jacobian(self, t, x, out)
    }

    /// Coefficients `[c0, c1, c2, c3]` when the drift is the autonomous scalar
    /// cubic `c0 + c1 y + c2 y^2 + c3 y^3`. Enables the closed-form implicit
    /// solver.
    fn scalar_cubic_drift(&self) -> Option<[f64; 4]> {
        None
    }

    /// Whether [`Sode::exact_solution`] is implemented.
    fn has_exact_solution(&self) -> bool {
        false
    }

    /// Pathwise closed-form solution at time `t` driven by `path`.
    fn exact_solution(&self, _path: &BrownianPath, _t: f64) -> Result<Vec<f64>> {
        Err(Error::Applicability("problem has no closed-form solution".into()))
    }

    /// JSON echo of the problem for report metadata.
    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "family": "custom", "dim": self.dim(), "num_drivers": self.num_drivers() })
    }

    fn drift_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift(t, x, &mut out);
        out
    }

    fn diffusion_at(&self, t: f64, x: &[f64], r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.diffusion(t, x, r, &mut out);
        out
    }

    fn deriv_product_at(&self, t: f64, x: &[f64], r1: usize, r2: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.diffusion_deriv_product(t, x, r1, r2, &mut out);
        out
    }
}

/// Central-difference drift Jacobian, row-major.
pub fn finite_difference_jacobian<P: Sode + ?Sized>(problem: &P, t: f64, x: &[f64], out: &mut [f64]) {
    let d = problem.dim();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        let step = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        problem.drift(t, &xp, &mut fp);
        xp[j] = x[j] - step;
        problem.drift(t, &xp, &mut fm);
        xp[j] = x[j];
        for i in 0..d {
            out[i * d + j] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
}

type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type DiffusionFn = dyn Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync;
type DerivProductFn = dyn Fn(f64, &[f64], usize, usize, &mut [f64]) + Send + Sync;

/// A problem assembled from closures. Coefficients default to zero.
pub struct FnProblem {
    dim: usize,
    num_drivers: usize,
    structure: NoiseStructure,
    regularity: Regularity,
    horizon: f64,
    x0: Vec<f64>,
    drift: Box<DriftFn>,
    diffusion: Box<DiffusionFn>,
    deriv_product: Box<DerivProductFn>,
    jacobian: Option<Box<DriftFn>>,
    cubic: Option<[f64; 4]>,
}

impl FnProblem {
    pub fn new(
        num_drivers: usize,
        structure: NoiseStructure,
        regularity: Regularity,
        horizon: f64,
        x0: Vec<f64>,
    ) -> Self {
        FnProblem {
            dim: x0.len(),
            num_drivers,
            structure,
            regularity,
            horizon,
            x0,
            drift: Box::new(|_, _, out| out.fill(0.0)),
            diffusion: Box::new(|_, _, _, out| out.fill(0.0)),
            deriv_product: Box::new(|_, _, _, _, out| out.fill(0.0)),
            jacobian: None,
            cubic: None,
        }
    }

    pub fn with_drift(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Box::new(f);
        self
    }

    pub fn with_diffusion(
        mut self,
        g: impl Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Box::new(g);
        self
    }

    pub fn with_deriv_product(
        mut self,
        h: impl Fn(f64, &[f64], usize, usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.deriv_product = Box::new(h);
        self
    }

    pub fn with_jacobian(
        mut self,
        j: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(j));
        self
    }

    pub fn with_scalar_cubic(mut self, coefficients: [f64; 4]) -> Self {
        self.cubic = Some(coefficients);
        self
    }
}

impl Sode for FnProblem {
    fn dim(&self) -> usize {
        self.dim
    }
    fn num_drivers(&self) -> usize {
        self.num_drivers
    }
    fn noise_structure(&self) -> NoiseStructure {
        self.structure
    }
    fn regularity(&self) -> Regularity {
        self.regularity
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn initial_value(&self) -> Vec<f64> {
        self.x0.clone()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], r: usize, out: &mut [f64]) {
        (self.diffusion)(t, x, r, out)
    }
    fn diffusion_deriv_product(&self, t: f64, x: &[f64], r1: usize, r2: usize, out: &mut [f64]) {
        (self.deriv_product)(t, x, r1, r2, out)
    }
    fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.jacobian {
            Some(j) => j(t, x, out),
            None => finite_difference_jacobian(self, t, x, out),
        }
    }
    fn scalar_cubic_drift(&self) -> Option<[f64; 4]> {
        self.cubic
    }
}

/// Which inequality a [`ConditionReport`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    GlobalMonotonicity,
    SsbmMonotonicity,
    Coercivity,
    LocalLipschitzDriftJacobian,
    LocalLipschitzDiffusionJacobian,
}

/// Outcome of a sampled inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_id: ConditionId,
    /// Largest observed `LHS / RHS`.
    pub worst_ratio: f64,
    pub num_samples: usize,
    pub sample_region_radius: f64,
    /// `worst_ratio <= 1 + 1e-9`. Means no violation was found.
    pub passed: bool,
}

impl std::fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "no violation found" } else { "VIOLATED" };
        write!(
            f,
            "{:?}: {verdict} (worst ratio {:.6}, {} samples, radius {})",
            self.condition_id, self.worst_ratio, self.num_samples, self.sample_region_radius
        )
    }
}

const PASS_SLACK: f64 = 1e-9;
const DEGENERATE_PAIR: f64 = 1e-12;

/// Uniform draw from the closed ball of the given radius in `R^d`.
pub(crate) fn sample_ball<R: Rng>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm_sq(&dir).sqrt();
        if n == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let scale = radius * u.powf(1.0 / d as f64) / n;
        return dir.into_iter().map(|v| v * scale).collect();
    }
}

fn check_sampling(region_radius: f64, num_samples: usize) -> Result<()> {
    if !(region_radius > 0.0) {
        return Err(Error::param("region_radius", region_radius, "must be > 0"));
    }
    if num_samples == 0 {
        return Err(Error::param("num_samples", 0.0, "must be >= 1"));
    }
    Ok(())
}

/// Evaluates `lhs(t, x1, x2) / (L |x1 - x2|^2)` on `num_samples` pairs drawn
/// uniformly from the ball. Sample `i` uses its own random substream, so the
/// result does not depend on how samples are sharded.
fn pair_ratio_scan<P, F>(
    problem: &P,
    region_radius: f64,
    num_samples: usize,
    seed: u64,
    lhs: F,
) -> f64
where
    P: Sode + ?Sized,
    F: Fn(f64, &[f64], &[f64]) -> f64 + Sync,
{
    let d = problem.dim();
    let l = problem.regularity().monotonicity_l;
    let horizon = problem.horizon();
    (0..num_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64, 0);
            let x1 = sample_ball(&mut rng, d, region_radius);
            let x2 = sample_ball(&mut rng, d, region_radius);
            let t = horizon * rng.random::<f64>();
            let diff = dist_sq(&x1, &x2);
            if diff.sqrt() < DEGENERATE_PAIR {
                return f64::NEG_INFINITY;
            }
            lhs(t, &x1, &x2) / (l * diff)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

fn monotonicity_lhs<P: Sode + ?Sized>(
    problem: &P,
    t: f64,
    x1: &[f64],
    x2: &[f64],
    eta: f64,
    eta2: Option<f64>,
) -> f64 {
    let d = problem.dim();
    let m = problem.num_drivers();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    problem.drift(t, x1, &mut a);
    problem.drift(t, x2, &mut b);
    let mut lhs: f64 = (0..d).map(|i| (a[i] - b[i]) * (x1[i] - x2[i])).sum();
    for r in 0..m {
        problem.diffusion(t, x1, r, &mut a);
        problem.diffusion(t, x2, r, &mut b);
        lhs += eta * dist_sq(&a, &b);
    }
    if let Some(eta2) = eta2 {
        for r1 in 0..m {
            for r2 in 0..m {
                problem.diffusion_deriv_product(t, x1, r1, r2, &mut a);
                problem.diffusion_deriv_product(t, x2, r1, r2, &mut b);
                lhs += eta2 * dist_sq(&a, &b);
            }
        }
    }
    lhs
}

fn finish(condition_id: ConditionId, worst: f64, num_samples: usize, radius: f64) -> ConditionReport {
    // All pairs degenerate: nothing was tested, nothing violated.
    let worst_ratio = if worst == f64::NEG_INFINITY { 0.0 } else { worst };
    ConditionReport {
        condition_id,
        worst_ratio,
        num_samples,
        sample_region_radius: radius,
        passed: worst_ratio <= 1.0 + PASS_SLACK,
    }
}

/// Sampled check of the global monotonicity condition
/// `<f(t,x1)-f(t,x2), x1-x2> + eta Σ_r |g^r(t,x1)-g^r(t,x2)|^2 <= L |x1-x2|^2`.
pub fn verify_monotonicity<P: Sode + ?Sized>(
    problem: &P,
    eta: f64,
    region_radius: f64,
    num_samples: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if !(eta > 0.5) {
        return Err(Error::param("eta", eta, "must be > 1/2"));
    }
    check_sampling(region_radius, num_samples)?;
    let worst = pair_ratio_scan(problem, region_radius, num_samples, seed, |t, x1, x2| {
        monotonicity_lhs(problem, t, x1, x2, eta, None)
    });
    Ok(finish(ConditionId::GlobalMonotonicity, worst, num_samples, region_radius))
}

/// Sampled check of the strengthened condition used by the split-step
/// backward Milstein method, which adds
/// `eta2 Σ_{r1,r2} |g^{r1,r2}(t,x1) - g^{r1,r2}(t,x2)|^2` to the left side.
pub fn verify_ssbm_monotonicity<P: Sode + ?Sized>(
    problem: &P,
    eta1: f64,
    eta2: f64,
    region_radius: f64,
    num_samples: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if !(eta1 > 1.0) {
        return Err(Error::param("eta1", eta1, "must be > 1"));
    }
    if !(eta2 > 0.0) {
        return Err(Error::param("eta2", eta2, "must be > 0"));
    }
    check_sampling(region_radius, num_samples)?;
    let worst = pair_ratio_scan(problem, region_radius, num_samples, seed, |t, x1, x2| {
        monotonicity_lhs(problem, t, x1, x2, eta1, Some(eta2))
    });
    Ok(finish(ConditionId::SsbmMonotonicity, worst, num_samples, region_radius))
}

/// Sampled check of the coercivity condition
/// `<f(t,x), x> + (p-1)/2 Σ_r |g^r(t,x)|^2 <= C (1 + |x|^2)`
/// with `C` from the problem metadata (default `L`).
pub fn verify_coercivity<P: Sode + ?Sized>(
    problem: &P,
    p: f64,
    region_radius: f64,
    num_samples: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if !(p >= 2.0) {
        return Err(Error::param("p", p, "must be >= 2"));
    }
    check_sampling(region_radius, num_samples)?;
    let d = problem.dim();
    let m = problem.num_drivers();
    let reg = problem.regularity();
    let c = reg.coercivity_c.unwrap_or(reg.monotonicity_l);
    let horizon = problem.horizon();
    let worst = (0..num_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64, 0);
            let x = sample_ball(&mut rng, d, region_radius);
            let t = horizon * rng.random::<f64>();
            let mut buf = vec![0.0; d];
            problem.drift(t, &x, &mut buf);
            let mut lhs: f64 = buf.iter().zip(&x).map(|(a, b)| a * b).sum();
            for r in 0..m {
                problem.diffusion(t, &x, r, &mut buf);
                lhs += 0.5 * (p - 1.0) * norm_sq(&buf);
            }
            lhs / (c * (1.0 + norm_sq(&x)))
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(finish(ConditionId::Coercivity, worst, num_samples, region_radius))
}

/// Largest relative deviation between the supplied `g^{r1,r2}` and a central
/// finite difference of `g^{r1}` along `g^{r2}` (step `1e-5`), over random
/// points in the ball. Relative to `max(|g^{r1,r2}|, 1)`.
pub fn deriv_product_defect<P: Sode + ?Sized>(
    problem: &P,
    region_radius: f64,
    num_points: usize,
    seed: u64,
) -> f64 {
    const STEP: f64 = 1e-5;
    let d = problem.dim();
    let m = problem.num_drivers();
    let horizon = problem.horizon();
    (0..num_points)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64, 1);
            let x = sample_ball(&mut rng, d, region_radius);
            let t = horizon * rng.random::<f64>();
            let mut worst: f64 = 0.0;
            for r1 in 0..m {
                for r2 in 0..m {
                    let v = problem.diffusion_at(t, &x, r2);
                    let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + STEP * b).collect();
                    let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - STEP * b).collect();
                    let gp = problem.diffusion_at(t, &xp, r1);
                    let gm = problem.diffusion_at(t, &xm, r1);
                    let exact = problem.deriv_product_at(t, &x, r1, r2);
                    let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * STEP)).collect();
                    let scale = norm_sq(&exact).sqrt().max(1.0);
                    worst = worst.max(dist_sq(&fd, &exact).sqrt() / scale);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Largest relative asymmetry `|g^{r1,r2} - g^{r2,r1}|` over random points.
pub fn commutativity_defect<P: Sode + ?Sized>(
    problem: &P,
    region_radius: f64,
    num_points: usize,
    seed: u64,
) -> f64 {
    let d = problem.dim();
    let m = problem.num_drivers();
    let horizon = problem.horizon();
    (0..num_points)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64, 2);
            let x = sample_ball(&mut rng, d, region_radius);
            let t = horizon * rng.random::<f64>();
            let mut worst: f64 = 0.0;
            for r1 in 0..m {
                for r2 in (r1 + 1)..m {
                    let a = problem.deriv_product_at(t, &x, r1, r2);
                    let b = problem.deriv_product_at(t, &x, r2, r1);
                    let scale = norm_sq(&a).sqrt().max(norm_sq(&b).sqrt()).max(f64::MIN_POSITIVE);
                    worst = worst.max(dist_sq(&a, &b).sqrt() / scale);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}
