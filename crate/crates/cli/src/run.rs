use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use monosde::analysis::{local_error_probe_many, strong_error_many, McConfig, ReferenceSpec};
use monosde::model::{
    commutativity_defect, deriv_product_defect, verify_coercivity, verify_monotonicity,
    verify_ssbm_monotonicity, ConditionReport, NoiseStructure,
};
use monosde::noise::RNG_ALGORITHM;
use monosde::{Error, Result, Sode};

use crate::config::{ExperimentConfig, Mode, Plan};

fn write(dir: &Path, file: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(file), contents)?;
    Ok(())
}

/// Flags runs whose problem sits outside the regime covered by the convergence theory.
fn notes(plan: &Plan) -> Result<Vec<String>> {
    let problem: &dyn Sode = &plan.problem;
    let reg = problem.regularity();
    let mono = verify_monotonicity(problem, reg.eta, 10.0, 10_000, plan.seed)?;
    let mut out = Vec::new();
    if !mono.passed {
        out.push(format!(
            "global monotonicity with eta = {} fails on the ball of radius 10 (worst ratio {:.3}); \
             convergence rates are not guaranteed for this problem",
            reg.eta, mono.worst_ratio
        ));
    }
    // The error bounds need moments of order 6q - 4. No constant C works if
    // the coercivity ratio keeps growing with the sampling radius.
    let p = 6.0 * reg.growth_rate_q - 4.0;
    let near = verify_coercivity(problem, p, 10.0, 10_000, plan.seed)?;
    let far = verify_coercivity(problem, p, 20.0, 10_000, plan.seed)?;
    if far.worst_ratio > 1.0 && far.worst_ratio > 1.5 * near.worst_ratio {
        out.push(format!(
            "coercivity with p = {p} fails for every constant (worst ratio {:.3} at radius 10, {:.3} at radius 20); \
             the moment bounds behind the convergence rates are not available",
            near.worst_ratio, far.worst_ratio
        ));
    }
    Ok(out)
}

fn meta(cfg: &ExperimentConfig, plan: &Plan, results: Value) -> Result<Value> {
    Ok(json!({
        "config": cfg,
        "rng": RNG_ALGORITHM,
        "versions": {
            "monosde": env!("CARGO_PKG_VERSION"),
        },
        "schemes": plan.schemes,
        "reference": plan.reference,
        "notes": notes(plan)?,
        "results": results,
    }))
}

/// Human-readable plan for `--dry-run`.
pub fn describe(plan: &Plan) -> Value {
    let problem: &dyn Sode = &plan.problem;
    let reg = problem.regularity();
    json!({
        "name": plan.name,
        "mode": plan.mode,
        "problem": problem.describe(),
        "regularity": reg,
        "samples": plan.samples,
        "seed": plan.seed,
        "h_list": plan.h_list,
        "deltas": plan.deltas,
        "reference": plan.reference,
        "fine_dt": plan.reference.map(|r| r.fine_dt()),
        "schemes": plan.schemes.iter().map(|s| json!({
            "kind": s.kind.tag(),
            "alpha": s.alpha,
            "upper_step_bound": s.upper_step_bound,
            "solver": s.solver,
        })).collect::<Vec<_>>(),
        "outputs": plan.outputs,
    })
}

fn condition_csv(reports: &[(String, ConditionReport)], defects: &[(String, f64)]) -> String {
    let mut out = String::from("condition,worst_ratio,samples,radius,passed\n");
    for (name, r) in reports {
        out.push_str(&format!(
            "{name},{},{},{},{}\n",
            r.worst_ratio, r.num_samples, r.sample_region_radius, r.passed
        ));
    }
    for (name, v) in defects {
        out.push_str(&format!("{name},{v},,,\n"));
    }
    out
}

/// Executes a validated plan and writes all outputs into `dir`.
pub fn execute(cfg: &ExperimentConfig, plan: &Plan, dir: &Path, timing: bool) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let problem: &dyn Sode = &plan.problem;
    let mc = McConfig::new(plan.samples, plan.seed).with_timing(timing);
    let mut written = Vec::new();
    let results = match plan.mode {
        Mode::Convergence | Mode::Timing => {
            let reference = plan.reference.expect("planned");
            let with_seconds = timing || plan.mode == Mode::Timing;
            let mc = mc.with_timing(with_seconds);
            let reports = strong_error_many(problem, &plan.schemes, &plan.h_list, &reference, &mc)?;
            for (rep, file) in reports.iter().zip(&plan.outputs) {
                write(dir, file, &rep.to_csv_string(with_seconds))?;
                written.push(file.clone());
            }
            let invalid: Vec<&str> = reports.iter().filter(|r| !r.valid).map(|r| r.scheme.kind.tag()).collect();
            if !invalid.is_empty() {
                eprintln!(
                    "warning: too many excluded samples for {}; reports flagged invalid",
                    invalid.join(", ")
                );
            }
            serde_json::to_value(&reports).expect("serializable")
        }
        Mode::Probes => {
            let Some(ReferenceSpec::Scheme { scheme, fine_dt }) = plan.reference else {
                unreachable!("planned with a scheme reference")
            };
            let reports = local_error_probe_many(
                problem,
                &plan.schemes,
                &plan.probe_x0,
                plan.probe_t,
                &plan.deltas,
                &scheme,
                fine_dt,
                &mc,
            )?;
            for (rep, file) in reports.iter().zip(&plan.outputs) {
                write(dir, file, &rep.to_csv_string())?;
                written.push(file.clone());
            }
            serde_json::to_value(&reports).expect("serializable")
        }
        Mode::Conditions => {
            let c = plan.conditions.as_ref().expect("planned");
            let reg = problem.regularity();
            let mut reports = vec![(
                "global_monotonicity".to_string(),
                verify_monotonicity(problem, reg.eta, c.radius, c.samples, plan.seed)?,
            )];
            if let (Some(eta1), Some(eta2)) = (reg.eta1, reg.eta2) {
                reports.push((
                    "ssbm_monotonicity".to_string(),
                    verify_ssbm_monotonicity(problem, eta1, eta2, c.radius, c.samples, plan.seed)?,
                ));
            }
            reports.push((
                "coercivity".to_string(),
                verify_coercivity(problem, c.p, c.radius, c.samples, plan.seed)?,
            ));
            let mut defects = vec![(
                "deriv_product_defect".to_string(),
                deriv_product_defect(problem, c.radius, c.samples, plan.seed),
            )];
            if problem.noise_structure() == NoiseStructure::Commutative {
                defects.push((
                    "commutativity_defect".to_string(),
                    commutativity_defect(problem, c.radius, c.samples, plan.seed),
                ));
            }
            for (name, r) in &reports {
                eprintln!("{name}: {r}");
            }
            let file = &plan.outputs[0];
            write(dir, file, &condition_csv(&reports, &defects))?;
            written.push(file.clone());
            json!({
                "conditions": reports.iter().map(|(n, r)| json!({"name": n, "report": r})).collect::<Vec<_>>(),
                "defects": defects.iter().map(|(n, v)| json!({"name": n, "value": v})).collect::<Vec<_>>(),
            })
        }
    };
    let meta_file = plan.outputs.last().expect("meta is always planned");
    let text = serde_json::to_string_pretty(&meta(cfg, plan, results)?).map_err(|e| Error::Io(e.to_string()))?;
    write(dir, meta_file, &text)?;
    written.push(meta_file.clone());
    Ok(written)
}
