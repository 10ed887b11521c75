use serde::{Deserialize, Serialize};

use monosde::analysis::ReferenceSpec;
use monosde::problems::ParametricProblem;
use monosde::schemes::{ImplicitSolver, SchemeKind, SchemeSpec};
use monosde::{Error, Result, Sode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Convergence,
    Timing,
    Probes,
    Conditions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Newton,
    Cardano,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    /// One of `em`, `mil`, `pem`, `pmil`, `ssbe`, `ssbm`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_step_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverChoice>,
    /// Fixed number of undamped Newton steps instead of iterating to tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_iterations: Option<usize>,
}

impl SchemeConfig {
    pub fn new(kind: &str) -> Self {
        SchemeConfig {
            kind: kind.to_string(),
            alpha: None,
            upper_step_bound: None,
            solver: None,
            newton_iterations: None,
        }
    }

    pub fn with_solver(mut self, solver: SolverChoice) -> Self {
        self.solver = Some(solver);
        self
    }

    pub fn with_newton_iterations(mut self, n: usize) -> Self {
        self.newton_iterations = Some(n);
        self
    }

    pub fn resolve(&self, problem: &dyn Sode) -> Result<SchemeSpec> {
        let kind = SchemeKind::from_tag(&self.kind).ok_or_else(|| Error::Config {
            field: "schemes.kind".into(),
            message: format!("unknown scheme `{}`", self.kind),
        })?;
        let mut spec = SchemeSpec::for_problem(kind, problem);
        if let Some(alpha) = self.alpha {
            spec = spec.with_alpha(alpha);
        }
        if let Some(bound) = self.upper_step_bound {
            spec = spec.with_upper_step_bound(bound);
        }
        let method = match (self.solver, self.newton_iterations) {
            (Some(SolverChoice::Cardano), Some(_)) => {
                return Err(Error::Config {
                    field: "schemes.newton_iterations".into(),
                    message: "only meaningful with the Newton solver".into(),
                })
            }
            (Some(SolverChoice::Cardano), None) => ImplicitSolver::CardanoScalarCubic,
            (_, Some(iterations)) => ImplicitSolver::NewtonFixedIters { iterations },
            (_, None) => ImplicitSolver::NewtonFull,
        };
        spec = spec.with_solver(method);
        spec.validate(&problem.regularity())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Exact { fine_exponent: i32 },
    Scheme { scheme: SchemeConfig, fine_exponent: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub t: f64,
    /// Step sizes `2^-k`, in increasing `k`.
    pub delta_exponents: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsConfig {
    pub radius: f64,
    pub samples: usize,
    /// Moment order for the coercivity check.
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_p() -> f64 {
    2.0
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    pub problem: ParametricProblem,
    pub schemes: Vec<SchemeConfig>,
    /// Step sizes `h = 2^-k`, in increasing `k`.
    #[serde(default)]
    pub h_exponents: Vec<i32>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionsConfig>,
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: name.into(),
        message: message.into(),
    }
}

fn pow2(k: i32) -> f64 {
    0.5f64.powi(k)
}

fn increasing(name: &str, exponents: &[i32]) -> Result<()> {
    if exponents.windows(2).any(|w| w[1] <= w[0]) {
        return Err(field(name, "exponents must be strictly increasing (step sizes decreasing)"));
    }
    if exponents.iter().any(|&k| !(0..=30).contains(&k)) {
        return Err(field(name, "exponents must lie in 0..=30"));
    }
    Ok(())
}

/// Everything a run needs, checked and derived from a config.
#[derive(Debug, Clone, Serialize)]
pub struct Plan {
    pub name: String,
    pub mode: Mode,
    pub problem: ParametricProblem,
    pub schemes: Vec<SchemeSpec>,
    pub h_list: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub reference: Option<ReferenceSpec>,
    pub probe_x0: Vec<f64>,
    pub probe_t: f64,
    pub deltas: Vec<f64>,
    pub conditions: Option<ConditionsConfig>,
    pub outputs: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| field("config", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    /// Checks every invariant and derives the run plan.
    pub fn plan(&self) -> Result<Plan> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(field("name", "must be a non-empty [A-Za-z0-9_-] identifier"));
        }
        self.problem.validate()?;
        let problem: &dyn Sode = &self.problem;
        if self.samples < 2 {
            return Err(field("samples", format!("need at least 2 samples, got {}", self.samples)));
        }
        let needs_schemes = self.mode != Mode::Conditions;
        if needs_schemes && self.schemes.is_empty() {
            return Err(field("schemes", "at least one scheme is required"));
        }
        let schemes = self
            .schemes
            .iter()
            .map(|s| s.resolve(problem))
            .collect::<Result<Vec<_>>>()?;

        let mut plan = Plan {
            name: self.name.clone(),
            mode: self.mode,
            problem: self.problem,
            schemes,
            h_list: Vec::new(),
            samples: self.samples,
            seed: self.seed,
            reference: None,
            probe_x0: Vec::new(),
            probe_t: 0.0,
            deltas: Vec::new(),
            conditions: self.conditions.clone(),
            outputs: Vec::new(),
        };

        match self.mode {
            Mode::Convergence | Mode::Timing => {
                if self.h_exponents.is_empty() {
                    return Err(field("h_exponents", "at least one step size is required"));
                }
                increasing("h_exponents", &self.h_exponents)?;
                plan.h_list = self.h_exponents.iter().map(|&k| pow2(k)).collect();
                let reference = self
                    .reference
                    .as_ref()
                    .ok_or_else(|| field("reference", "required in this mode"))?;
                let (spec, fine_exponent) = match reference {
                    ReferenceConfig::Exact { fine_exponent } => {
                        if !problem.has_exact_solution() {
                            return Err(field(
                                "reference",
                                format!("{} has no closed-form solution", self.problem.family_name()),
                            ));
                        }
                        (ReferenceSpec::Exact { fine_dt: pow2(*fine_exponent) }, *fine_exponent)
                    }
                    ReferenceConfig::Scheme { scheme, fine_exponent } => (
                        ReferenceSpec::Scheme {
                            scheme: scheme.resolve(problem)?,
                            fine_dt: pow2(*fine_exponent),
                        },
                        *fine_exponent,
                    ),
                };
                let finest = *self.h_exponents.last().unwrap();
                if fine_exponent < finest {
                    return Err(field(
                        "reference.fine_exponent",
                        format!("fine_dt 2^-{fine_exponent} does not divide the smallest h 2^-{finest}"),
                    ));
                }
                if let ReferenceSpec::Scheme { scheme, fine_dt } = &spec {
                    scheme.check_step(*fine_dt)?;
                }
                for s in &plan.schemes {
                    for &h in &plan.h_list {
                        s.check_step(h)?;
                    }
                }
                let horizon = problem.horizon();
                let n = horizon / plan.h_list[0];
                if (n - n.round()).abs() > 1e-9 {
                    return Err(field("h_exponents", format!("h = {} does not divide T = {horizon}", plan.h_list[0])));
                }
                plan.reference = Some(spec);
                plan.outputs = plan
                    .schemes
                    .iter()
                    .map(|s| format!("{}_{}.csv", self.name, s.kind.tag()))
                    .collect();
            }
            Mode::Probes => {
                let probe = self
                    .probe
                    .as_ref()
                    .ok_or_else(|| field("probe", "required in probes mode"))?;
                if probe.x0.len() != problem.dim() {
                    return Err(field(
                        "probe.x0",
                        format!("has {} entries, problem dimension is {}", probe.x0.len(), problem.dim()),
                    ));
                }
                if probe.delta_exponents.len() < 2 {
                    return Err(field("probe.delta_exponents", "need at least two step sizes"));
                }
                increasing("probe.delta_exponents", &probe.delta_exponents)?;
                let reference = match &self.reference {
                    Some(ReferenceConfig::Scheme { scheme, fine_exponent }) => {
                        if fine_exponent < probe.delta_exponents.last().unwrap() {
                            return Err(field("reference.fine_exponent", "must not be coarser than the smallest delta"));
                        }
                        ReferenceSpec::Scheme {
                            scheme: scheme.resolve(problem)?,
                            fine_dt: pow2(*fine_exponent),
                        }
                    }
                    _ => return Err(field("reference", "probes need a scheme reference")),
                };
                plan.deltas = probe.delta_exponents.iter().map(|&k| pow2(k)).collect();
                for s in &plan.schemes {
                    for &d in &plan.deltas {
                        s.check_step(d)?;
                    }
                }
                plan.probe_x0 = probe.x0.clone();
                plan.probe_t = probe.t;
                plan.reference = Some(reference);
                plan.outputs = plan
                    .schemes
                    .iter()
                    .map(|s| format!("{}_{}.csv", self.name, s.kind.tag()))
                    .collect();
            }
            Mode::Conditions => {
                let c = self
                    .conditions
                    .as_ref()
                    .ok_or_else(|| field("conditions", "required in conditions mode"))?;
                if !(c.radius > 0.0) {
                    return Err(field("conditions.radius", "must be > 0"));
                }
                if c.samples == 0 {
                    return Err(field("conditions.samples", "must be >= 1"));
                }
                plan.outputs = vec![format!("{}_conditions.csv", self.name)];
            }
        }
        plan.outputs.push(format!("{}_meta.json", self.name));
        Ok(plan)
    }
}
