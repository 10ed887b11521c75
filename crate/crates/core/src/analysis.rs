//! Monte Carlo strong error estimation on coupled Brownian paths,
//! experimental orders of convergence, projection statistics and local
//! error probes.
//!
//! Every sample `j` draws its own fine path from `(seed, j)`, so results do
//! not depend on how samples are spread over threads. Per-sample results are
//! collected in sample order and reduced sequentially.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NoiseStructure, Sode};
use crate::noise::{steps_in, BrownianPath, RNG_ALGORITHM};
use crate::schemes::{integrate_endpoint, run_windows, SchemeSpec, StepGrid, Stepper};
use crate::vector::{dist_sq, norm, norm_sq};

/// Largest excluded fraction of samples for which a report stays valid.
pub const MAX_EXCLUDED_FRACTION: f64 = 1e-3;

const Z95: f64 = 1.959963984540054;

/// How the reference endpoint of each sample is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReferenceSpec {
    /// The problem's closed-form solution on a path of resolution `fine_dt`.
    Exact { fine_dt: f64 },
    /// `scheme` run with step `fine_dt` on the same path.
    Scheme { scheme: SchemeSpec, fine_dt: f64 },
}

impl ReferenceSpec {
    pub fn fine_dt(&self) -> f64 {
        match *self {
            ReferenceSpec::Exact { fine_dt } | ReferenceSpec::Scheme { fine_dt, .. } => fine_dt,
        }
    }
}

/// Sample count, seed and parallelism of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
    /// Record per-row CPU seconds. Timings are not reproducible.
    pub timing: bool,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        McConfig {
            samples,
            seed,
            workers: 0,
            timing: false,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_timing(mut self, timing: bool) -> Self {
        self.timing = timing;
        self
    }
}

/// Runs `f(j)` for every sample index `j < samples` and returns the results
/// in index order.
pub fn map_samples<T, F>(samples: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let run = || {
        (0..samples as u64)
            .into_par_iter()
            .map(&f)
            .collect::<Result<Vec<T>>>()
    };
    if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config {
                field: "workers".into(),
                message: e.to_string(),
            })?
            .install(run)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub h: f64,
    pub rms_error: f64,
    pub ci_half_width: f64,
    pub eoc: Option<f64>,
    /// Trajectories with at least one projection event.
    pub projection_count: usize,
    /// Samples that overflowed or whose implicit solve failed.
    pub excluded: usize,
    /// CPU seconds summed over samples; 0 unless timing was requested.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub scheme: SchemeSpec,
    pub problem: serde_json::Value,
    pub num_samples: usize,
    pub seed: u64,
    pub reference: ReferenceSpec,
    pub rng: String,
    pub ci_method: String,
    /// Samples whose reference could not be computed; excluded from every row.
    pub reference_excluded: usize,
    pub valid: bool,
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    pub fn rms_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rms_error).collect()
    }

    pub fn eocs(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.eoc).collect()
    }

    pub fn row(&self, h: f64) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| (r.h - h).abs() <= 1e-12 * h)
    }

    /// Columns `h, error, eoc, projections, ci, seconds`. The `seconds`
    /// column is left empty when `with_seconds` is false so that the output
    /// depends only on the configuration.
    pub fn write_csv<W: Write>(&self, mut w: W, with_seconds: bool) -> Result<()> {
        writeln!(w, "h,error,eoc,projections,ci,seconds")?;
        for row in &self.rows {
            let eoc = row.eoc.map(|e| e.to_string()).unwrap_or_default();
            let seconds = if with_seconds {
                row.wall_time_s.to_string()
            } else {
                String::new()
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.h, row.rms_error, eoc, row.projection_count, row.ci_half_width, seconds
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, with_seconds: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, with_seconds)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Pairwise slopes `(ln e_i - ln e_{i-1}) / (ln h_i - ln h_{i-1})`.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(Error::Grid(format!(
            "eoc needs two equally long lists of length >= 2, got {} and {}",
            errors.len(),
            hs.len()
        )));
    }
    (1..errors.len())
        .map(|i| {
            if !(errors[i] > 0.0 && errors[i - 1] > 0.0) {
                return Err(Error::UndefinedEoc { index: i });
            }
            Ok((errors[i].ln() - errors[i - 1].ln()) / (hs[i].ln() - hs[i - 1].ln()))
        })
        .collect()
}

fn eoc_column(errors: &[f64], hs: &[f64]) -> Vec<Option<f64>> {
    std::iter::once(None)
        .chain((1..errors.len()).map(|i| {
            (errors[i] > 0.0 && errors[i - 1] > 0.0)
                .then(|| (errors[i].ln() - errors[i - 1].ln()) / (hs[i].ln() - hs[i - 1].ln()))
        }))
        .collect()
}

/// Error of one (scheme, h) cell in one sample.
#[derive(Debug, Clone, Copy)]
struct Cell {
    sq_error: f64,
    projected: bool,
    seconds: f64,
    ok: bool,
}

fn is_sample_failure(err: &Error) -> bool {
    matches!(err, Error::Overflow { .. } | Error::Convergence { .. })
}

fn validate_run<P: Sode + ?Sized>(
    problem: &P,
    schemes: &[SchemeSpec],
    h_list: &[f64],
    reference: &ReferenceSpec,
    cfg: &McConfig,
) -> Result<()> {
    if cfg.samples < 2 {
        return Err(Error::Config {
            field: "samples".into(),
            message: format!("need at least 2 samples, got {}", cfg.samples),
        });
    }
    if h_list.is_empty() {
        return Err(Error::Config {
            field: "h_list".into(),
            message: "no step sizes given".into(),
        });
    }
    let horizon = problem.horizon();
    let fine_dt = reference.fine_dt();
    if steps_in(horizon, fine_dt).is_none() {
        return Err(Error::Grid(format!("fine_dt {fine_dt} does not divide T = {horizon}")));
    }
    for &h in h_list {
        if steps_in(horizon, h).is_none() {
            return Err(Error::Grid(format!("h = {h} does not divide T = {horizon}")));
        }
        if steps_in(h, fine_dt).is_none() {
            return Err(Error::Grid(format!("fine_dt {fine_dt} does not divide h = {h}")));
        }
        for scheme in schemes {
            scheme.check_step(h)?;
        }
    }
    for scheme in schemes {
        scheme.validate(&problem.regularity())?;
        if scheme.kind.is_milstein_type() && problem.noise_structure() == NoiseStructure::General {
            return Err(Error::UnsupportedNoise);
        }
    }
    match reference {
        ReferenceSpec::Exact { .. } if !problem.has_exact_solution() => Err(Error::Applicability(
            "exact reference requested for a problem without a closed-form solution".into(),
        )),
        ReferenceSpec::Scheme { scheme, fine_dt } => {
            scheme.validate(&problem.regularity())?;
            scheme.check_step(*fine_dt)
        }
        _ => Ok(()),
    }
}

/// Strong endpoint errors of several schemes sharing the same paths and
/// reference. Returns one report per scheme, in order.
pub fn strong_error_many<P: Sode + ?Sized>(
    problem: &P,
    schemes: &[SchemeSpec],
    h_list: &[f64],
    reference: &ReferenceSpec,
    cfg: &McConfig,
) -> Result<Vec<ErrorReport>> {
    validate_run(problem, schemes, h_list, reference, cfg)?;
    let horizon = problem.horizon();
    let fine_dt = reference.fine_dt();
    let m = problem.num_drivers();
    let x0 = problem.initial_value();
    let grids = h_list
        .iter()
        .map(|&h| StepGrid::uniform(horizon, h))
        .collect::<Result<Vec<_>>>()?;
    let ref_grid = StepGrid::uniform(horizon, fine_dt)?;

    let outcomes = map_samples(cfg.samples, cfg.workers, |j| -> Result<Option<Vec<Cell>>> {
        let path = BrownianPath::generate(cfg.seed, j, horizon, fine_dt, m)?;
        let reference_state = match reference {
            ReferenceSpec::Exact { .. } => problem.exact_solution(&path, horizon),
            ReferenceSpec::Scheme { scheme, .. } => {
                integrate_endpoint(problem, scheme, &ref_grid, &path, &x0).map(|r| r.state)
            }
        };
        let reference_state = match reference_state {
            Ok(x) if x.iter().all(|v| v.is_finite()) => x,
            Ok(_) => return Ok(None),
            Err(e) if is_sample_failure(&e) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut cells = Vec::with_capacity(schemes.len() * grids.len());
        for scheme in schemes {
            for grid in &grids {
                let start = cfg.timing.then(Instant::now);
                let run = integrate_endpoint(problem, scheme, grid, &path, &x0);
                let seconds = start.map_or(0.0, |s| s.elapsed().as_secs_f64());
                cells.push(match run {
                    Ok(end) => Cell {
                        sq_error: dist_sq(&end.state, &reference_state),
                        projected: end.projection_events > 0,
                        seconds,
                        ok: true,
                    },
                    Err(e) if is_sample_failure(&e) => Cell {
                        sq_error: 0.0,
                        projected: false,
                        seconds,
                        ok: false,
                    },
                    Err(e) => return Err(e),
                });
            }
        }
        Ok(Some(cells))
    })?;

    let reference_excluded = outcomes.iter().filter(|o| o.is_none()).count();
    let n_grids = grids.len();
    let mut reports = Vec::with_capacity(schemes.len());
    for (s, scheme) in schemes.iter().enumerate() {
        let mut rows = Vec::with_capacity(n_grids);
        for (g, &h) in h_list.iter().enumerate() {
            let idx = s * n_grids + g;
            let cells: Vec<Cell> = outcomes.iter().flatten().map(|c| c[idx]).collect();
            let good: Vec<f64> = cells.iter().filter(|c| c.ok).map(|c| c.sq_error).collect();
            let n = good.len() as f64;
            let mean = good.iter().sum::<f64>() / n;
            let var = good.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
            let rms = mean.sqrt();
            let ci = if rms > 0.0 {
                Z95 * (var / n).sqrt() / (2.0 * rms)
            } else {
                0.0
            };
            rows.push(ErrorRow {
                h,
                rms_error: rms,
                ci_half_width: ci,
                eoc: None,
                projection_count: cells.iter().filter(|c| c.projected).count(),
                excluded: cells.iter().filter(|c| !c.ok).count() + reference_excluded,
                wall_time_s: cells.iter().map(|c| c.seconds).sum(),
            });
        }
        let errors: Vec<f64> = rows.iter().map(|r| r.rms_error).collect();
        for (row, e) in rows.iter_mut().zip(eoc_column(&errors, h_list)) {
            row.eoc = e;
        }
        let limit = MAX_EXCLUDED_FRACTION * cfg.samples as f64;
        let valid = rows
            .iter()
            .all(|r| (r.excluded as f64) <= limit && r.rms_error.is_finite());
        reports.push(ErrorReport {
            scheme: *scheme,
            problem: problem.describe(),
            num_samples: cfg.samples,
            seed: cfg.seed,
            reference: *reference,
            rng: RNG_ALGORITHM.to_string(),
            ci_method: "95% normal interval on the mean squared error, delta method to the RMS scale"
                .to_string(),
            reference_excluded,
            valid,
            rows,
        });
    }
    Ok(reports)
}

/// Strong endpoint error `sqrt(E|X_h(T) - X(T)|^2)` of `scheme` for every
/// `h` in `h_list`.
pub fn strong_error<P: Sode + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    h_list: &[f64],
    reference: &ReferenceSpec,
    cfg: &McConfig,
) -> Result<ErrorReport> {
    let mut reports = strong_error_many(problem, std::slice::from_ref(scheme), h_list, reference, cfg)?;
    Ok(reports.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub count: usize,
    pub samples: usize,
    pub fraction: f64,
}

/// Number of trajectories on the uniform grid of step `h` that project at
/// least once.
pub fn projection_rate<P: Sode + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    h: f64,
    cfg: &McConfig,
) -> Result<ProjectionStats> {
    if !scheme.kind.is_projected() {
        return Err(Error::Applicability(format!("{} does not project", scheme.kind)));
    }
    let horizon = problem.horizon();
    let grid = StepGrid::uniform(horizon, h)?;
    scheme.check_step(h)?;
    let x0 = problem.initial_value();
    let hits = map_samples(cfg.samples, cfg.workers, |j| {
        let path = BrownianPath::generate(cfg.seed, j, horizon, h, problem.num_drivers())?;
        match integrate_endpoint(problem, scheme, &grid, &path, &x0) {
            Ok(end) => Ok(end.projection_events > 0),
            Err(e) if is_sample_failure(&e) => Ok(false),
            Err(e) => Err(e),
        }
    })?;
    let count = hits.iter().filter(|&&b| b).count();
    Ok(ProjectionStats {
        count,
        samples: cfg.samples,
        fraction: count as f64 / cfg.samples as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: String,
    pub h: f64,
    pub rms_error: f64,
    pub cpu_seconds: f64,
}

/// Work-precision data: error and summed CPU time per scheme and step size.
pub fn timing_sweep<P: Sode + ?Sized>(
    problem: &P,
    schemes: &[SchemeSpec],
    h_list: &[f64],
    reference: &ReferenceSpec,
    cfg: &McConfig,
) -> Result<Vec<TimingRow>> {
    let cfg = cfg.with_timing(true);
    let reports = strong_error_many(problem, schemes, h_list, reference, &cfg)?;
    Ok(reports
        .iter()
        .flat_map(|rep| {
            rep.rows.iter().map(move |row| TimingRow {
                scheme: rep.scheme.kind.tag().to_string(),
                h: row.h,
                rms_error: row.rms_error,
                cpu_seconds: row.wall_time_s,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub deltas: Vec<f64>,
    /// `|E[D]|` per step size.
    pub mean_part: Vec<f64>,
    /// `sqrt(E|D - E[D]|^2)` per step size.
    pub fluct_part: Vec<f64>,
    pub mean_slope: f64,
    pub fluct_slope: f64,
    /// The mean at the largest step size is not resolved above three
    /// standard errors.
    pub inconclusive: bool,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Local error `D = X_ref(t + delta) - Psi(x0, t, delta)` of one step from a
/// deterministic start, for each `delta`. The reference runs
/// `reference` at `fine_dt` on the same path.
#[allow(clippy::too_many_arguments)]
pub fn local_error_probe<P: Sode + ?Sized>(
    problem: &P,
    scheme: &SchemeSpec,
    x0: &[f64],
    t: f64,
    deltas: &[f64],
    reference: &SchemeSpec,
    fine_dt: f64,
    cfg: &McConfig,
) -> Result<ProbeReport> {
    let mut reports = local_error_probe_many(
        problem,
        std::slice::from_ref(scheme),
        x0,
        t,
        deltas,
        reference,
        fine_dt,
        cfg,
    )?;
    Ok(reports.remove(0))
}

/// [`local_error_probe`] for several schemes against one shared reference.
#[allow(clippy::too_many_arguments)]
pub fn local_error_probe_many<P: Sode + ?Sized>(
    problem: &P,
    schemes: &[SchemeSpec],
    x0: &[f64],
    t: f64,
    deltas: &[f64],
    reference: &SchemeSpec,
    fine_dt: f64,
    cfg: &McConfig,
) -> Result<Vec<ProbeReport>> {
    if deltas.len() < 2 {
        return Err(Error::Config {
            field: "deltas".into(),
            message: "need at least two step sizes".into(),
        });
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config {
            field: "deltas".into(),
            message: "step sizes must be decreasing".into(),
        });
    }
    if cfg.samples < 2 {
        return Err(Error::Config {
            field: "samples".into(),
            message: format!("need at least 2 samples, got {}", cfg.samples),
        });
    }
    for scheme in schemes {
        for &delta in deltas {
            scheme.check_step(delta)?;
        }
    }
    let counts = deltas
        .iter()
        .map(|&d| {
            steps_in(d, fine_dt)
                .ok_or_else(|| Error::Grid(format!("fine_dt {fine_dt} does not divide delta {d}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    reference.check_step(fine_dt)?;
    let d = problem.dim();
    let m = problem.num_drivers();
    let nd = deltas.len();
    let ones = vec![1; counts[0]];

    // Per sample: D for every (scheme, delta), flattened.
    let samples = map_samples(cfg.samples, cfg.workers, |j| -> Result<Vec<f64>> {
        let path = BrownianPath::generate(cfg.seed, j, deltas[0], fine_dt, m)?;
        let mut ref_stepper = Stepper::new(problem, reference)?;
        let mut ref_states = vec![0.0; nd * d];
        run_windows(&mut ref_stepper, &path, &ones, 0, t, x0, |_, k, x, _| {
            if let Some(i) = counts.iter().position(|&c| c == k) {
                ref_states[i * d..(i + 1) * d].copy_from_slice(x);
            }
        })?;
        let mut out = Vec::with_capacity(schemes.len() * nd * d);
        for scheme in schemes {
            let mut stepper = Stepper::new(problem, scheme)?;
            for (i, &count) in counts.iter().enumerate() {
                let y = run_windows(&mut stepper, &path, &[count], 0, t, x0, |_, _, _, _| {})?;
                out.extend(ref_states[i * d..(i + 1) * d].iter().zip(&y).map(|(r, s)| r - s));
            }
        }
        Ok(out)
    })?;

    let n = cfg.samples as f64;
    let mut reports = Vec::with_capacity(schemes.len());
    for s in 0..schemes.len() {
        let mut mean_part = Vec::with_capacity(nd);
        let mut fluct_part = Vec::with_capacity(nd);
        for i in 0..nd {
            let at = (s * nd + i) * d;
            let mut mean = vec![0.0; d];
            for sample in &samples {
                for (acc, v) in mean.iter_mut().zip(&sample[at..at + d]) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= n);
            let var = samples
                .iter()
                .map(|sample| dist_sq(&sample[at..at + d], &mean))
                .sum::<f64>()
                / n;
            mean_part.push(norm(&mean));
            fluct_part.push(var.sqrt());
        }
        let inconclusive = mean_part[0] < 3.0 * fluct_part[0] / n.sqrt();
        reports.push(ProbeReport {
            deltas: deltas.to_vec(),
            mean_slope: log_log_slope(deltas, &mean_part),
            fluct_slope: log_log_slope(deltas, &fluct_part),
            mean_part,
            fluct_part,
            inconclusive,
        });
    }
    Ok(reports)
}

impl ProbeReport {
    /// Columns `delta, mean, fluct`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("delta,mean,fluct\n");
        for i in 0..self.deltas.len() {
            out.push_str(&format!("{},{},{}\n", self.deltas[i], self.mean_part[i], self.fluct_part[i]));
        }
        out
    }
}

/// Sample mean and standard error of `values`.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `sqrt(mean |x|^2)` over a set of endpoint vectors.
pub fn rms(values: &[Vec<f64>]) -> f64 {
    (values.iter().map(|v| norm_sq(v)).sum::<f64>() / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{AdditiveLinear, DoubleWell, GeometricBrownian};
    use crate::schemes::SchemeKind;

    #[test]
    fn eoc_hand_values() {
        let h = [1.0 / 32.0, 1.0 / 64.0];
        let e = eoc(&[0.0087, 0.0045], &h).unwrap();
        assert!((e[0] - 0.951).abs() < 5e-3, "{}", e[0]);
        let e = eoc(&[0.0081, 0.0040], &h).unwrap();
        assert!((e[0] - 1.018).abs() < 5e-3, "{}", e[0]);
        assert_eq!(eoc(&[0.3, 0.3], &h).unwrap(), vec![0.0]);
        assert_eq!(eoc(&[0.3, 0.0], &h), Err(Error::UndefinedEoc { index: 1 }));
        assert!(eoc(&[0.3], &h[..1]).is_err());
    }

    #[test]
    fn self_reference_has_zero_error() {
        let p = DoubleWell::new(0.3);
        let scheme = SchemeSpec::for_problem(SchemeKind::ProjectedMilstein, &p);
        let reference = ReferenceSpec::Scheme { scheme, fine_dt: 1.0 / 64.0 };
        let rep = strong_error(&p, &scheme, &[1.0 / 64.0], &reference, &McConfig::new(50, 3)).unwrap();
        assert_eq!(rep.rows[0].rms_error, 0.0);
        assert_eq!(rep.rows[0].ci_half_width, 0.0);
        assert!(rep.valid);
    }

    #[test]
    fn rejects_bad_runs() {
        let p = DoubleWell::new(0.3);
        let scheme = SchemeSpec::for_problem(SchemeKind::ProjectedMilstein, &p);
        let reference = ReferenceSpec::Scheme { scheme, fine_dt: 1.0 / 256.0 };
        let cfg = McConfig::new(1, 0);
        assert!(matches!(
            strong_error(&p, &scheme, &[0.25], &reference, &cfg),
            Err(Error::Config { .. })
        ));
        let cfg = McConfig::new(10, 0);
        assert!(matches!(strong_error(&p, &scheme, &[0.3], &reference, &cfg), Err(Error::Grid(_))));
        let exact = ReferenceSpec::Exact { fine_dt: 1.0 / 256.0 };
        assert!(matches!(
            strong_error(&p, &scheme, &[0.25], &exact, &cfg),
            Err(Error::Applicability(_))
        ));
        let ssbe = SchemeSpec::for_problem(SchemeKind::SplitStepBackwardEuler, &p);
        assert!(matches!(
            strong_error(&p, &ssbe, &[1.0], &reference, &cfg),
            Err(Error::StepBound { .. })
        ));
    }

    #[test]
    fn overflow_is_excluded_not_fatal() {
        // Explicit Euler blows up on the double well from a large start.
        let p = DoubleWell::new(0.3).with_x0(30.0);
        let em = SchemeSpec::for_problem(SchemeKind::EulerMaruyama, &p);
        let pmil = SchemeSpec::for_problem(SchemeKind::ProjectedMilstein, &p);
        let reference = ReferenceSpec::Scheme { scheme: pmil, fine_dt: 1.0 / 256.0 };
        let rep = strong_error(&p, &em, &[0.0625], &reference, &McConfig::new(20, 1)).unwrap();
        assert_eq!(rep.rows[0].excluded, 20);
        assert!(!rep.valid);
    }

    #[test]
    fn projection_rate_requires_projected_scheme() {
        let p = DoubleWell::new(0.3);
        let em = SchemeSpec::for_problem(SchemeKind::EulerMaruyama, &p);
        assert!(matches!(
            projection_rate(&p, &em, 0.0625, &McConfig::new(10, 0)),
            Err(Error::Applicability(_))
        ));
        let quiet = DoubleWell::new(1e-6).with_x0(0.0);
        let pem = SchemeSpec::for_problem(SchemeKind::ProjectedEm, &quiet);
        let stats = projection_rate(&quiet, &pem, 0.0625, &McConfig::new(200, 0)).unwrap();
        assert_eq!(stats.count, 0);
    }

    #[test]
    fn csv_layout_and_blank_seconds() {
        let p = GeometricBrownian::new(0.5, 0.2);
        let mil = SchemeSpec::for_problem(SchemeKind::Milstein, &p);
        let reference = ReferenceSpec::Exact { fine_dt: 1.0 / 64.0 };
        let rep = strong_error(&p, &mil, &[0.25, 0.125], &reference, &McConfig::new(20, 2)).unwrap();
        let csv = rep.to_csv_string(false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "h,error,eoc,projections,ci,seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.25,") && lines[1].contains(",,"));
        assert!(lines[2].ends_with(','));
        assert_eq!(lines[2].split(',').count(), 6);
    }

    #[test]
    fn timing_rows_positive() {
        let p = GeometricBrownian::new(0.5, 0.2);
        let schemes = [
            SchemeSpec::for_problem(SchemeKind::EulerMaruyama, &p),
            SchemeSpec::for_problem(SchemeKind::Milstein, &p),
        ];
        let reference = ReferenceSpec::Exact { fine_dt: 1.0 / 256.0 };
        let rows = timing_sweep(&p, &schemes, &[0.25, 1.0 / 256.0], &reference, &McConfig::new(50, 2)).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.cpu_seconds > 0.0));
    }

    #[test]
    fn euler_local_error_is_second_order_without_noise() {
        let p = AdditiveLinear::new(1.0, 0.0);
        let em = SchemeSpec::for_problem(SchemeKind::EulerMaruyama, &p);
        let deltas: Vec<f64> = (2..7).map(|k| 0.5f64.powi(k)).collect();
        let probe = local_error_probe(&p, &em, &[1.0], 0.0, &deltas, &em, 0.5f64.powi(14), &McConfig::new(4, 0)).unwrap();
        assert!((probe.mean_slope - 2.0).abs() < 0.05, "{}", probe.mean_slope);
        assert!(probe.fluct_part.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 0.5, 0.25];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }
}
