//! Wiener paths on a fine grid, exactly coupled coarse increments, and the
//! iterated stochastic integrals consumed by Milstein-type schemes.
//!
//! A path stores fine increments rather than values, so a coarse increment
//! is a plain sum over its window and coarse and fine schemes see the same
//! Brownian motion. Every `(seed, sample_index, driver)` triple owns an
//! independent ChaCha8 stream; normal variates use the ziggurat sampler of
//! `rand_distr`. Regenerating a path is bit-reproducible on any platform.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoiseStructure;

/// Identifier of the random number pipeline, echoed into report metadata.
pub const RNG_ALGORITHM: &str =
    "chacha8[key=(seed,sample_index),stream=driver]+ziggurat-standard-normal(rand_distr-0.5)";

/// Independent generator for `(seed, index, stream)`.
pub fn substream(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Number of fine steps of size `dt` in `horizon`, if `dt` divides it to
/// one part in `1e12`.
pub(crate) fn steps_in(horizon: f64, dt: f64) -> Option<usize> {
    let n = (horizon / dt).round();
    if n >= 1.0 && (n * dt - horizon).abs() <= 1e-12 * horizon.abs().max(dt) {
        Some(n as usize)
    } else {
        None
    }
}

/// Wiener increments of `num_drivers` independent drivers on a uniform fine
/// grid. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    sample_index: u64,
    num_drivers: usize,
    fine_dt: f64,
    num_fine_steps: usize,
    /// Row-major `[num_fine_steps x num_drivers]`.
    increments: Vec<f64>,
}

impl BrownianPath {
    /// Draws a path on `[0, horizon]` with `horizon / fine_dt` steps.
    pub fn generate(seed: u64, sample_index: u64, horizon: f64, fine_dt: f64, num_drivers: usize) -> Result<Self> {
        if !(fine_dt > 0.0) {
            return Err(Error::param("fine_dt", fine_dt, "must be > 0"));
        }
        if !(horizon > 0.0) {
            return Err(Error::param("horizon", horizon, "must be > 0"));
        }
        if num_drivers == 0 {
            return Err(Error::param("num_drivers", 0.0, "must be >= 1"));
        }
        let n = steps_in(horizon, fine_dt).ok_or_else(|| {
            Error::param("fine_dt", fine_dt, format!("must divide the horizon {horizon}"))
        })?;
        let scale = fine_dt.sqrt();
        let mut increments = vec![0.0; n * num_drivers];
        for r in 0..num_drivers {
            let mut rng = substream(seed, sample_index, r as u64);
            for k in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                increments[k * num_drivers + r] = scale * z;
            }
        }
        Ok(BrownianPath {
            seed,
            sample_index,
            num_drivers,
            fine_dt,
            num_fine_steps: n,
            increments,
        })
    }

    /// Wraps given increments, row-major `[steps x num_drivers]`.
    pub fn from_increments(fine_dt: f64, num_drivers: usize, increments: Vec<f64>) -> Result<Self> {
        if !(fine_dt > 0.0) {
            return Err(Error::param("fine_dt", fine_dt, "must be > 0"));
        }
        if num_drivers == 0 || increments.is_empty() || increments.len() % num_drivers != 0 {
            return Err(Error::param(
                "increments",
                increments.len() as f64,
                "length must be a positive multiple of num_drivers",
            ));
        }
        Ok(BrownianPath {
            seed: 0,
            sample_index: 0,
            num_drivers,
            fine_dt,
            num_fine_steps: increments.len() / num_drivers,
            increments,
        })
    }

    /// A path whose increments are all zero; turns any scheme deterministic.
    pub fn zero(horizon: f64, fine_dt: f64, num_drivers: usize) -> Result<Self> {
        let n = steps_in(horizon, fine_dt).ok_or_else(|| {
            Error::param("fine_dt", fine_dt, format!("must divide the horizon {horizon}"))
        })?;
        Self::from_increments(fine_dt, num_drivers, vec![0.0; n * num_drivers.max(1)])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn sample_index(&self) -> u64 {
        self.sample_index
    }
    pub fn num_drivers(&self) -> usize {
        self.num_drivers
    }
    pub fn fine_dt(&self) -> f64 {
        self.fine_dt
    }
    pub fn num_fine_steps(&self) -> usize {
        self.num_fine_steps
    }
    pub fn horizon(&self) -> f64 {
        self.fine_dt * self.num_fine_steps as f64
    }
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Fine increments of step `k`, one per driver.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.increments[k * self.num_drivers..(k + 1) * self.num_drivers]
    }

    fn check_window(&self, from: usize, to: usize) -> Result<()> {
        if from >= to || to > self.num_fine_steps {
            return Err(Error::Index {
                from,
                to,
                len: self.num_fine_steps,
            });
        }
        Ok(())
    }

    /// Per-driver sum of the fine increments over `[from, to)`.
    pub fn coarsen(&self, from: usize, to: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_drivers];
        self.coarsen_into(from, to, &mut out)?;
        Ok(out)
    }

    pub fn coarsen_into(&self, from: usize, to: usize, out: &mut [f64]) -> Result<()> {
        self.check_window(from, to)?;
        out.fill(0.0);
        for k in from..to {
            for (o, v) in out.iter_mut().zip(self.row(k)) {
                *o += v;
            }
        }
        Ok(())
    }

    /// `W(t_k)` for every driver, summed from the start of the path.
    pub fn value_at(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Ok(vec![0.0; self.num_drivers]);
        }
        self.coarsen(0, k)
    }

    /// Increments and iterated integrals of the window `[from, to)`.
    pub fn iterated_integrals(&self, from: usize, to: usize, structure: NoiseStructure) -> Result<StepIncrements> {
        let mut inc = StepIncrements::zeroed(self.num_drivers, structure);
        self.fill_increments(from, to, &mut inc)?;
        inc.fill_iterated()?;
        Ok(inc)
    }

    /// Writes `delta` and `dw` of the window into `inc` without touching the
    /// iterated integrals.
    pub(crate) fn fill_increments(&self, from: usize, to: usize, inc: &mut StepIncrements) -> Result<()> {
        self.coarsen_into(from, to, &mut inc.dw)?;
        inc.delta = (to - from) as f64 * self.fine_dt;
        Ok(())
    }

    /// Writes the debugging dump: a little-endian header
    /// `seed: u64, sample_index: u64, m: u64, fine_dt: f64, count: u64`
    /// followed by `count * m` increments as `f64`, row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.sample_index.to_le_bytes())?;
        w.write_all(&(self.num_drivers as u64).to_le_bytes())?;
        w.write_all(&self.fine_dt.to_le_bytes())?;
        w.write_all(&(self.num_fine_steps as u64).to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let seed = u64::from_le_bytes(next(&mut r)?);
        let sample_index = u64::from_le_bytes(next(&mut r)?);
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let fine_dt = f64::from_le_bytes(next(&mut r)?);
        let count = u64::from_le_bytes(next(&mut r)?) as usize;
        let mut increments = Vec::with_capacity(count * m);
        for _ in 0..count * m {
            increments.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut path = Self::from_increments(fine_dt, m, increments)?;
        path.seed = seed;
        path.sample_index = sample_index;
        Ok(path)
    }
}

/// Stochastic increments of one step `[t, t + delta]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepIncrements {
    pub delta: f64,
    /// `I_(r) = W^r(t + delta) - W^r(t)`.
    pub dw: Vec<f64>,
    /// Row-major `m x m`; entry `(r1, r2)` holds the value used for the
    /// double integral `I_(r1,r2)`.
    pub iterated: Vec<f64>,
    pub structure: NoiseStructure,
}

impl StepIncrements {
    pub(crate) fn zeroed(m: usize, structure: NoiseStructure) -> Self {
        StepIncrements {
            delta: 0.0,
            dw: vec![0.0; m],
            iterated: vec![0.0; m * m],
            structure,
        }
    }

    /// Builds increments from given Wiener increments.
    pub fn from_dw(delta: f64, dw: Vec<f64>, structure: NoiseStructure) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::param("delta", delta, "must be > 0"));
        }
        let m = dw.len();
        let mut inc = StepIncrements {
            delta,
            dw,
            iterated: vec![0.0; m * m],
            structure,
        };
        inc.fill_iterated()?;
        Ok(inc)
    }

    pub fn num_drivers(&self) -> usize {
        self.dw.len()
    }

    /// Value used for `I_(r1,r2)`.
    pub fn iterated(&self, r1: usize, r2: usize) -> f64 {
        self.iterated[r1 * self.dw.len() + r2]
    }

    /// Recomputes `iterated` from `dw` and `delta`:
    /// diagonal entries are `(dw_r^2 - delta) / 2`; for commutative noise the
    /// off-diagonal pair is split symmetrically as `dw_r1 dw_r2 / 2` each.
    /// Any split with the right sum is equivalent there, because only the
    /// symmetric sum is ever consumed when `g^{r1,r2} = g^{r2,r1}`.
    pub(crate) fn fill_iterated(&mut self) -> Result<()> {
        let m = self.dw.len();
        match self.structure {
            NoiseStructure::General => return Err(Error::UnsupportedNoise),
            NoiseStructure::Additive => self.iterated.fill(0.0),
            NoiseStructure::Scalar | NoiseStructure::Diagonal => {
                self.iterated.fill(0.0);
                for r in 0..m {
                    self.iterated[r * m + r] = 0.5 * (self.dw[r] * self.dw[r] - self.delta);
                }
            }
            NoiseStructure::Commutative => {
                for r1 in 0..m {
                    for r2 in 0..m {
                        self.iterated[r1 * m + r2] = if r1 == r2 {
                            0.5 * (self.dw[r1] * self.dw[r1] - self.delta)
                        } else {
                            0.5 * (self.dw[r1] * self.dw[r2])
                        };
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bit_identical() {
        let a = BrownianPath::generate(42, 7, 1.0, 1.0 / 64.0, 2).unwrap();
        let b = BrownianPath::generate(42, 7, 1.0, 1.0 / 64.0, 2).unwrap();
        assert_eq!(a.increments(), b.increments());
        let c = BrownianPath::generate(42, 8, 1.0, 1.0 / 64.0, 2).unwrap();
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn driver_column_does_not_depend_on_driver_count() {
        let one = BrownianPath::generate(3, 1, 1.0, 0.125, 1).unwrap();
        let two = BrownianPath::generate(3, 1, 1.0, 0.125, 2).unwrap();
        for k in 0..8 {
            assert_eq!(one.row(k)[0], two.row(k)[0]);
        }
    }

    #[test]
    fn generation_rejects_bad_parameters() {
        assert!(BrownianPath::generate(0, 0, 1.0, 0.0, 1).is_err());
        assert!(BrownianPath::generate(0, 0, -1.0, 0.1, 1).is_err());
        assert!(BrownianPath::generate(0, 0, 1.0, 0.3, 1).is_err());
        assert!(BrownianPath::generate(0, 0, 1.0, 0.1, 1).is_ok());
    }

    #[test]
    fn coarsen_windows() {
        let p = BrownianPath::generate(5, 0, 1.0, 1.0 / 32.0, 2).unwrap();
        assert_eq!(p.coarsen(4, 5).unwrap(), p.row(4).to_vec());
        let total = p.coarsen(0, 32).unwrap();
        for r in 0..2 {
            let col: f64 = (0..32).map(|k| p.row(k)[r]).sum();
            assert_eq!(total[r], col);
        }
        let left = p.coarsen(3, 10).unwrap();
        let right = p.coarsen(10, 21).unwrap();
        let both = p.coarsen(3, 21).unwrap();
        for r in 0..2 {
            assert!((left[r] + right[r] - both[r]).abs() < 1e-14);
        }
        assert!(matches!(p.coarsen(5, 5), Err(Error::Index { .. })));
        assert!(matches!(p.coarsen(0, 33), Err(Error::Index { .. })));
    }

    #[test]
    fn scalar_iterated_cancels_exactly() {
        let inc = StepIncrements::from_dw(0.04, vec![0.2], NoiseStructure::Scalar).unwrap();
        // 0.2 * 0.2 rounds to 0.04000000000000001 in binary; what matters is
        // the formula, so compare with it bit for bit.
        assert_eq!(inc.iterated(0, 0), 0.5 * (0.2f64 * 0.2 - 0.04));
        assert!(inc.iterated(0, 0).abs() < 1e-17);
        let inc = StepIncrements::from_dw(0.25, vec![0.5], NoiseStructure::Scalar).unwrap();
        assert_eq!(inc.iterated(0, 0), 0.0);
    }

    #[test]
    fn commutative_split() {
        let inc = StepIncrements::from_dw(0.3, vec![1.0, 2.0], NoiseStructure::Commutative).unwrap();
        assert_eq!(inc.iterated(0, 1), 1.0);
        assert_eq!(inc.iterated(1, 0), 1.0);
        assert_eq!(inc.iterated(0, 0), 0.5 * (1.0 - 0.3));
        assert_eq!(inc.iterated(1, 1), 0.5 * (4.0 - 0.3));
    }

    #[test]
    fn diagonal_and_additive_layouts() {
        let inc = StepIncrements::from_dw(0.1, vec![0.3, -0.2], NoiseStructure::Diagonal).unwrap();
        assert_eq!(inc.iterated(0, 1), 0.0);
        assert_eq!(inc.iterated(1, 0), 0.0);
        let inc = StepIncrements::from_dw(0.1, vec![0.3, -0.2], NoiseStructure::Additive).unwrap();
        assert!(inc.iterated.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn general_noise_is_rejected() {
        let p = BrownianPath::generate(1, 0, 1.0, 0.5, 2).unwrap();
        assert_eq!(
            p.iterated_integrals(0, 1, NoiseStructure::General),
            Err(Error::UnsupportedNoise)
        );
    }

    #[test]
    fn binary_dump_round_trip() {
        let p = BrownianPath::generate(11, 4, 0.5, 1.0 / 16.0, 3).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 40 + 8 * 8 * 3);
        let q = BrownianPath::read_binary(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }
}
