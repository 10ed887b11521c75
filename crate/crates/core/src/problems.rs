//! Shipped problem families: the double-well SDE with multiplicative noise,
//! a stochastic oscillator with commutative noise and a closed-form
//! solution, and two linear oracle problems.
//!
//! Every family (de)serializes as a JSON descriptor such as
//! `{"family": "double_well", "sigma": 0.3, "x0": 2.0, "T": 1.0}`.

use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NoiseStructure, Regularity, Sode};
use crate::noise::BrownianPath;

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn default_r0() -> f64 {
    1.97
}

fn default_phi0() -> f64 {
    FRAC_PI_4
}

/// `dX = X(1 - X^2) dt + sigma (1 - X^2) dW`, the gradient flow of the
/// double-well potential `x^4/4 - x^2/2` under multiplicative noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleWell {
    pub sigma: f64,
    #[serde(default = "two")]
    pub x0: f64,
    #[serde(rename = "T", default = "one")]
    pub horizon: f64,
}

impl DoubleWell {
    pub fn new(sigma: f64) -> Self {
        DoubleWell {
            sigma,
            x0: 2.0,
            horizon: 1.0,
        }
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }
}

impl Sode for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn num_drivers(&self) -> usize {
        1
    }
    fn noise_structure(&self) -> NoiseStructure {
        NoiseStructure::Scalar
    }
    fn regularity(&self) -> Regularity {
        let s2 = self.sigma * self.sigma;
        // With L = 1 the condition reduces to the quadratic form
        // (1 - eta s2)(x^2 + y^2) + (1 - 2 eta s2) x y >= 0, i.e. eta s2 <= 3/4.
        // Prefer eta s2 = 1/2 and fall back to 3/4 while that keeps eta > 1/2.
        // No admissible eta exists once s2 >= 3/2; the value is then nominal.
        let eta = if s2 < 1.0 {
            0.5 / s2
        } else if s2 < 1.5 {
            0.75 / s2
        } else {
            0.5 + 1e-6
        };
        Regularity::new(3.0, 1.0, eta)
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn initial_value(&self) -> Vec<f64> {
        vec![self.x0]
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * (1.0 - x[0] * x[0]);
    }
    fn diffusion(&self, _t: f64, x: &[f64], _r: usize, out: &mut [f64]) {
        out[0] = self.sigma * (1.0 - x[0] * x[0]);
    }
    fn diffusion_deriv_product(&self, _t: f64, x: &[f64], _r1: usize, _r2: usize, out: &mut [f64]) {
        out[0] = -2.0 * self.sigma * self.sigma * x[0] * (1.0 - x[0] * x[0]);
    }
    fn drift_jacobian(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 - 3.0 * x[0] * x[0];
    }
    fn scalar_cubic_drift(&self) -> Option<[f64; 4]> {
        Some([0.0, 1.0, 0.0, -1.0])
    }
}

/// Planar oscillator `dr = r(mu - r^2) dt + sigma1 r dW^1`,
/// `dphi = theta dt + sigma2 dW^2`, written in Cartesian coordinates:
///
/// ```text
/// dx = [(mu - |x|^2) x + theta J x - sigma2^2 x / 2] dt + sigma1 x dW^1 + sigma2 J x dW^2
/// ```
///
/// with `J` the rotation by `pi/2`. The noise is commutative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticOscillator {
    pub mu: f64,
    pub theta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_phi0")]
    pub phi0: f64,
    #[serde(rename = "T", default = "one")]
    pub horizon: f64,
}

impl StochasticOscillator {
    pub fn new(mu: f64, theta: f64, sigma1: f64, sigma2: f64) -> Self {
        StochasticOscillator {
            mu,
            theta,
            sigma1,
            sigma2,
            r0: default_r0(),
            phi0: default_phi0(),
            horizon: 1.0,
        }
    }

    pub fn with_initial_polar(mut self, r0: f64, phi0: f64) -> Self {
        self.r0 = r0;
        self.phi0 = phi0;
        self
    }

    /// Closed-form solution at time `t` on the given path. The time integral
    /// inside the radius is a left-endpoint Riemann sum with step
    /// `riemann_dt`, which must be a multiple of the path resolution.
    pub fn exact(&self, path: &BrownianPath, t: f64, riemann_dt: f64) -> Result<Vec<f64>> {
        let fine_dt = path.fine_dt();
        let stride = aligned_count(riemann_dt, fine_dt)
            .ok_or_else(|| Error::Grid(format!("riemann_dt {riemann_dt} is not a multiple of {fine_dt}")))?;
        let k = if t == 0.0 {
            0
        } else {
            aligned_count(t, riemann_dt)
                .ok_or_else(|| Error::Grid(format!("time {t} is not on the Riemann grid {riemann_dt}")))?
        };
        if k * stride > path.num_fine_steps() {
            return Err(Error::Grid(format!("time {t} is past the end of the path")));
        }
        let rate = 2.0 * self.mu - self.sigma1 * self.sigma1;
        let mut integral = 0.0;
        let mut w = [0.0, 0.0];
        for j in 0..k {
            let s = j as f64 * riemann_dt;
            integral += (rate * s + 2.0 * self.sigma1 * w[0]).exp() * riemann_dt;
            for f in j * stride..(j + 1) * stride {
                let row = path.row(f);
                w[0] += row[0];
                w[1] += row[1];
            }
        }
        let r = self.r0
            * ((self.mu - 0.5 * self.sigma1 * self.sigma1) * t + self.sigma1 * w[0]).exp()
            / (1.0 + 2.0 * self.r0 * self.r0 * integral).sqrt();
        let phi = self.phi0 + self.theta * t + self.sigma2 * w[1];
        Ok(vec![r * phi.cos(), r * phi.sin()])
    }
}

fn aligned_count(span: f64, unit: f64) -> Option<usize> {
    let k = (span / unit).round();
    (k >= 1.0 && (k * unit - span).abs() <= 1e-9 * unit).then_some(k as usize)
}

/// Polar coordinates of a planar point with the angle taken from `(-pi, pi]`.
pub fn polar(x: &[f64]) -> (f64, f64) {
    let r = x[0].hypot(x[1]);
    let mut phi = x[1].atan2(x[0]);
    if phi <= -PI {
        phi = PI;
    }
    (r, phi)
}

impl Sode for StochasticOscillator {
    fn dim(&self) -> usize {
        2
    }
    fn num_drivers(&self) -> usize {
        2
    }
    fn noise_structure(&self) -> NoiseStructure {
        NoiseStructure::Commutative
    }
    fn regularity(&self) -> Regularity {
        // The cubic part is monotone, the rest is linear:
        // L >= mu - sigma2^2/2 + eta1 s + eta2 s^2 with s = sigma1^2 + sigma2^2,
        // taken with eta = 1 and (eta1, eta2) = (2, 1).
        let s = self.sigma1 * self.sigma1 + self.sigma2 * self.sigma2;
        let base = self.mu - 0.5 * self.sigma2 * self.sigma2;
        let l = (base + s).max(base + 2.0 * s + s * s).max(1e-6);
        Regularity::new(3.0, l, 1.0).with_ssbm(2.0, 1.0)
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn initial_value(&self) -> Vec<f64> {
        vec![self.r0 * self.phi0.cos(), self.r0 * self.phi0.sin()]
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let c = self.mu - (x[0] * x[0] + x[1] * x[1]) - 0.5 * self.sigma2 * self.sigma2;
        out[0] = c * x[0] - self.theta * x[1];
        out[1] = c * x[1] + self.theta * x[0];
    }
    fn diffusion(&self, _t: f64, x: &[f64], r: usize, out: &mut [f64]) {
        if r == 0 {
            out[0] = self.sigma1 * x[0];
            out[1] = self.sigma1 * x[1];
        } else {
            out[0] = -self.sigma2 * x[1];
            out[1] = self.sigma2 * x[0];
        }
    }
    fn diffusion_deriv_product(&self, _t: f64, x: &[f64], r1: usize, r2: usize, out: &mut [f64]) {
        match (r1, r2) {
            (0, 0) => {
                let s = self.sigma1 * self.sigma1;
                out[0] = s * x[0];
                out[1] = s * x[1];
            }
            (1, 1) => {
                let s = self.sigma2 * self.sigma2;
                out[0] = -s * x[0];
                out[1] = -s * x[1];
            }
            _ => {
                let s = self.sigma1 * self.sigma2;
                out[0] = -s * x[1];
                out[1] = s * x[0];
            }
        }
    }
    fn drift_jacobian(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let c = self.mu - (x[0] * x[0] + x[1] * x[1]) - 0.5 * self.sigma2 * self.sigma2;
        out[0] = c - 2.0 * x[0] * x[0];
        out[1] = -2.0 * x[0] * x[1] - self.theta;
        out[2] = -2.0 * x[0] * x[1] + self.theta;
        out[3] = c - 2.0 * x[1] * x[1];
    }
    fn has_exact_solution(&self) -> bool {
        true
    }
    fn exact_solution(&self, path: &BrownianPath, t: f64) -> Result<Vec<f64>> {
        self.exact(path, t, path.fine_dt())
    }
}

/// `dX = mu X dt + sigma X dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricBrownian {
    pub mu: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub x0: f64,
    #[serde(rename = "T", default = "one")]
    pub horizon: f64,
}

impl GeometricBrownian {
    pub fn new(mu: f64, sigma: f64) -> Self {
        GeometricBrownian {
            mu,
            sigma,
            x0: 1.0,
            horizon: 1.0,
        }
    }

    /// `X0 exp((mu - sigma^2/2) t + sigma W(t))`.
    pub fn exact(&self, path: &BrownianPath, t: f64) -> Result<f64> {
        let w = if t == 0.0 {
            0.0
        } else {
            let k = aligned_count(t, path.fine_dt())
                .ok_or_else(|| Error::Grid(format!("time {t} is not on the path grid")))?;
            path.value_at(k)?[0]
        };
        Ok(self.x0 * ((self.mu - 0.5 * self.sigma * self.sigma) * t + self.sigma * w).exp())
    }
}

impl Sode for GeometricBrownian {
    fn dim(&self) -> usize {
        1
    }
    fn num_drivers(&self) -> usize {
        1
    }
    fn noise_structure(&self) -> NoiseStructure {
        NoiseStructure::Scalar
    }
    fn regularity(&self) -> Regularity {
        // Globally Lipschitz, so any q >= 2 is admissible; q = 2 gives alpha = 1/2.
        let s = self.sigma * self.sigma;
        let l = (self.mu + s).max(self.mu + 2.0 * s + s * s).max(1e-6);
        Regularity::new(2.0, l, 1.0).with_ssbm(2.0, 1.0)
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn initial_value(&self) -> Vec<f64> {
        vec![self.x0]
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.mu * x[0];
    }
    fn diffusion(&self, _t: f64, x: &[f64], _r: usize, out: &mut [f64]) {
        out[0] = self.sigma * x[0];
    }
    fn diffusion_deriv_product(&self, _t: f64, x: &[f64], _r1: usize, _r2: usize, out: &mut [f64]) {
        out[0] = self.sigma * self.sigma * x[0];
    }
    fn drift_jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.mu;
    }
    fn has_exact_solution(&self) -> bool {
        true
    }
    fn exact_solution(&self, path: &BrownianPath, t: f64) -> Result<Vec<f64>> {
        Ok(vec![self.exact(path, t)?])
    }
}

/// `dX = -lambda X dt + sigma dW`, additive noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditiveLinear {
    pub lambda: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub x0: f64,
    #[serde(rename = "T", default = "one")]
    pub horizon: f64,
}

impl AdditiveLinear {
    pub fn new(lambda: f64, sigma: f64) -> Self {
        AdditiveLinear {
            lambda,
            sigma,
            x0: 1.0,
            horizon: 1.0,
        }
    }
}

impl Sode for AdditiveLinear {
    fn dim(&self) -> usize {
        1
    }
    fn num_drivers(&self) -> usize {
        1
    }
    fn noise_structure(&self) -> NoiseStructure {
        NoiseStructure::Additive
    }
    fn regularity(&self) -> Regularity {
        Regularity::new(2.0, (-self.lambda).max(1e-6), 1.0)
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn initial_value(&self) -> Vec<f64> {
        vec![self.x0]
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = -self.lambda * x[0];
    }
    fn diffusion(&self, _t: f64, _x: &[f64], _r: usize, out: &mut [f64]) {
        out[0] = self.sigma;
    }
    fn diffusion_deriv_product(&self, _t: f64, _x: &[f64], _r1: usize, _r2: usize, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn drift_jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = -self.lambda;
    }
    fn scalar_cubic_drift(&self) -> Option<[f64; 4]> {
        None
    }
}

/// Any shipped family; this is also the JSON problem descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ParametricProblem {
    DoubleWell(DoubleWell),
    #[serde(alias = "oscillator")]
    StochasticOscillator(StochasticOscillator),
    #[serde(alias = "gbm")]
    GeometricBrownian(GeometricBrownian),
    AdditiveLinear(AdditiveLinear),
}

/// `sigma > 0` double-well problem with `X0 = 2`, `T = 1`.
pub fn make_double_well(sigma: f64) -> Result<ParametricProblem> {
    if !(sigma > 0.0) {
        return Err(Error::param("sigma", sigma, "must be > 0"));
    }
    Ok(ParametricProblem::DoubleWell(DoubleWell::new(sigma)))
}

/// Oscillator with `r0 = 1.97`, `phi0 = pi/4`, `T = 1`.
pub fn make_oscillator(mu: f64, theta: f64, sigma1: f64, sigma2: f64) -> ParametricProblem {
    ParametricProblem::StochasticOscillator(StochasticOscillator::new(mu, theta, sigma1, sigma2))
}

impl ParametricProblem {
    pub fn from_json(text: &str) -> Result<Self> {
        let problem: ParametricProblem = serde_json::from_str(text).map_err(|e| Error::Config {
            field: "problem".into(),
            message: e.to_string(),
        })?;
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.as_sode().horizon();
        if !(horizon > 0.0) {
            return Err(Error::param("T", horizon, "must be > 0"));
        }
        match self {
            ParametricProblem::DoubleWell(p) if !(p.sigma > 0.0) => {
                Err(Error::param("sigma", p.sigma, "must be > 0"))
            }
            ParametricProblem::StochasticOscillator(p) if !(p.r0 > 0.0) => {
                Err(Error::param("r0", p.r0, "must be > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            ParametricProblem::DoubleWell(_) => "double_well",
            ParametricProblem::StochasticOscillator(_) => "stochastic_oscillator",
            ParametricProblem::GeometricBrownian(_) => "geometric_brownian",
            ParametricProblem::AdditiveLinear(_) => "additive_linear",
        }
    }

    pub fn as_sode(&self) -> &dyn Sode {
        match self {
            ParametricProblem::DoubleWell(p) => p,
            ParametricProblem::StochasticOscillator(p) => p,
            ParametricProblem::GeometricBrownian(p) => p,
            ParametricProblem::AdditiveLinear(p) => p,
        }
    }
}

impl Sode for ParametricProblem {
    fn dim(&self) -> usize {
        self.as_sode().dim()
    }
    fn num_drivers(&self) -> usize {
        self.as_sode().num_drivers()
    }
    fn noise_structure(&self) -> NoiseStructure {
        self.as_sode().noise_structure()
    }
    fn regularity(&self) -> Regularity {
        self.as_sode().regularity()
    }
    fn horizon(&self) -> f64 {
        self.as_sode().horizon()
    }
    fn initial_value(&self) -> Vec<f64> {
        self.as_sode().initial_value()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.as_sode().drift(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], r: usize, out: &mut [f64]) {
        self.as_sode().diffusion(t, x, r, out)
    }
    fn diffusion_deriv_product(&self, t: f64, x: &[f64], r1: usize, r2: usize, out: &mut [f64]) {
        self.as_sode().diffusion_deriv_product(t, x, r1, r2, out)
    }
    fn drift_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.as_sode().drift_jacobian(t, x, out)
    }
    fn scalar_cubic_drift(&self) -> Option<[f64; 4]> {
        self.as_sode().scalar_cubic_drift()
    }
    fn has_exact_solution(&self) -> bool {
        self.as_sode().has_exact_solution()
    }
    fn exact_solution(&self, path: &BrownianPath, t: f64) -> Result<Vec<f64>> {
        self.as_sode().exact_solution(path, t)
    }
    fn describe(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_well_equilibria_and_product() {
        let p = DoubleWell::new(0.3);
        for x in [1.0, -1.0, 0.0] {
            assert_eq!(p.drift_at(0.0, &[x])[0], 0.0);
        }
        // -2 (0.09)(2)(1 - 4) = 1.08
        assert!((p.deriv_product_at(0.0, &[2.0], 0, 0)[0] - 1.08).abs() < 1e-15);
        assert!(make_double_well(0.0).is_err());
    }

    #[test]
    fn oscillator_coefficients_at_unit_point() {
        let p = StochasticOscillator::new(0.4, 1.0, 0.5, 0.6);
        assert_eq!(p.diffusion_at(0.0, &[1.0, 0.0], 1), vec![0.0, 0.6]);
        let f = p.drift_at(0.0, &[1.0, 0.0]);
        assert!((f[0] - (-0.78)).abs() < 1e-15);
        assert!((f[1] - 1.0).abs() < 1e-15);
        let x = [0.3, -1.2];
        assert_eq!(p.deriv_product_at(0.0, &x, 0, 1), p.deriv_product_at(0.0, &x, 1, 0));
    }

    #[test]
    fn oscillator_jacobian_matches_finite_difference() {
        let p = StochasticOscillator::new(0.4, 1.0, 0.5, 0.6);
        let x = [0.7, -1.1];
        let mut exact = [0.0; 4];
        let mut fd = [0.0; 4];
        p.drift_jacobian(0.0, &x, &mut exact);
        crate::model::finite_difference_jacobian(&p, 0.0, &x, &mut fd);
        for i in 0..4 {
            assert!((exact[i] - fd[i]).abs() < 1e-7, "{i}: {} vs {}", exact[i], fd[i]);
        }
    }

    #[test]
    fn exact_oscillator_deterministic_radius() {
        let p = StochasticOscillator::new(0.0, 0.0, 0.0, 0.0).with_initial_polar(1.0, 0.3);
        let path = BrownianPath::generate(1, 1, 2.0, 1.0 / 1024.0, 2).unwrap();
        let x = p.exact(&path, 1.5, 1.0 / 1024.0).unwrap();
        let (r, phi) = polar(&x);
        assert!((r - 0.5).abs() < 1e-12);
        assert!((phi - 0.3).abs() < 1e-12);
        let x0 = p.exact(&path, 0.0, 1.0 / 1024.0).unwrap();
        assert_eq!(x0, p.initial_value());
    }

    #[test]
    fn exact_gbm_limits() {
        let p = GeometricBrownian { mu: 0.7, sigma: 0.0, x0: 1.5, horizon: 1.0 };
        let path = BrownianPath::generate(1, 1, 1.0, 1.0 / 64.0, 1).unwrap();
        assert!((p.exact(&path, 1.0).unwrap() - 1.5 * 0.7f64.exp()).abs() < 1e-14);
        assert_eq!(p.exact(&path, 0.0).unwrap(), 1.5);
    }

    #[test]
    fn polar_branch() {
        assert_eq!(polar(&[-1.0, -0.0]).1, PI);
        assert_eq!(polar(&[-1.0, 0.0]).1, PI);
        assert!((polar(&[0.0, -1.0]).1 + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn descriptor_json() {
        let p = ParametricProblem::from_json(r#"{"family": "double_well", "sigma": 0.3, "x0": 2.0, "T": 1.0}"#).unwrap();
        assert_eq!(p, ParametricProblem::DoubleWell(DoubleWell::new(0.3)));
        let q = ParametricProblem::from_json(r#"{"family": "stochastic_oscillator", "mu": 0.4, "theta": 1, "sigma1": 0.5, "sigma2": 0.6}"#).unwrap();
        assert_eq!(q.dim(), 2);
        assert!(ParametricProblem::from_json(r#"{"family": "double_well", "sigma": -1}"#).is_err());
        assert!(ParametricProblem::from_json(r#"{"family": "double_well", "sigma": 0.3, "bogus": 1}"#).is_err());
        assert!(ParametricProblem::from_json(r#"{"family": "nope"}"#).is_err());
        let text = serde_json::to_string(&q).unwrap();
        assert_eq!(ParametricProblem::from_json(&text).unwrap(), q);
    }
}
