//! Monte Carlo oracle: stable and tempered-stable increments, the Euler
//! scheme and kernel density estimation.

mod kde;
mod sampling;

pub use kde::{kde, Bandwidth, DensityEstimate};
pub use sampling::{sample_stable_increment, sample_tempered_increment, stream, IncrementSampler};

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use crate::sde_model::SdeModel;

/// Euler simulation of `dX = b dt + σ dZ` from `(t0, x0)` to `T`.
#[derive(Clone, Debug)]
pub struct SimulationPlan<T> {
    pub model: SdeModel<T>,
    pub t0: T,
    pub big_t: T,
    pub x0: T,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Paths per parallel batch.
    pub batch_size: usize,
    /// Small-jump cutoff for tempered noise with `α ≥ 1`.
    pub truncation: Option<T>,
}

impl<T: Real> SimulationPlan<T> {
    pub fn new(model: SdeModel<T>, t0: T, big_t: T, x0: T, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        Self { model, t0, big_t, x0, n_steps, n_paths, seed, batch_size: 4096, truncation: None }
    }

    pub fn step(&self) -> T {
        (self.big_t - self.t0) / c::<T>(self.n_steps as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 || self.n_paths < 1 || self.batch_size < 1 {
            return Err(Error::InvalidParameter("n_steps, n_paths and batch_size must be at least 1".into()));
        }
        if !(self.big_t > self.t0) {
            return Err(Error::Precondition(format!("need t0 < T, got {} and {}", self.t0, self.big_t)));
        }
        Ok(())
    }
}

/// Terminal values of the finite paths.
#[derive(Clone, Debug, PartialEq)]
pub struct EulerOutput<T> {
    pub samples: Vec<T>,
    /// Paths dropped because the state left the finite range.
    pub excluded: usize,
}

/// Largest admissible fraction of excluded paths.
pub const MAX_EXCLUDED: f64 = 1e-4;

/// Runs the Euler scheme. Path `i` draws its step-`k` increment from
/// [`stream`]`(seed, i, k)`, so results do not depend on batching.
pub fn euler_simulate<T: Real>(plan: &SimulationPlan<T>) -> Result<EulerOutput<T>> {
    plan.validate()?;
    let dt = plan.step().f64();
    let sampler = IncrementSampler::new(&plan.model.noise, dt, plan.truncation.map(|v| v.f64()))?;
    let model = &plan.model;
    let t0 = plan.t0.f64();
    let path = |i: usize| -> Result<Option<f64>> {
        let mut x = plan.x0.f64();
        for k in 0..plan.n_steps {
            let mut rng = stream(plan.seed, i as u64, k as u64);
            let dz = sampler.draw(&mut rng)?;
            let (tk, xk): (T, T) = (c(t0 + k as f64 * dt), c(x));
            x += model.drift(tk, xk).f64() * dt + model.sigma(tk, xk).f64() * dz;
            if !x.is_finite() {
                return Ok(None);
            }
        }
        Ok(Some(x))
    };
    let batches: Vec<(usize, usize)> = (0..plan.n_paths)
        .step_by(plan.batch_size)
        .map(|s| (s, (s + plan.batch_size).min(plan.n_paths)))
        .collect();
    let results: Vec<Result<Vec<Option<f64>>>> =
        batches.par_iter().map(|(a, b)| (*a..*b).map(path).collect::<Result<Vec<_>>>()).collect();
    let mut samples = Vec::with_capacity(plan.n_paths);
    let mut excluded = 0;
    for batch in results {
        for v in batch? {
            match v {
                Some(x) => samples.push(c(x)),
                None => excluded += 1,
            }
        }
    }
    let frac = excluded as f64 / plan.n_paths as f64;
    if frac >= MAX_EXCLUDED && excluded > 0 {
        return Err(Error::NumericalFailure { what: "fraction of non-finite Euler paths".into(), at: frac });
    }
    Ok(EulerOutput { samples, excluded })
}

/// Magic bytes of the sample file format.
pub const SAMPLE_MAGIC: &[u8; 8] = b"LPXSMPL1";

/// Writes `magic ‖ count (u64 LE) ‖ values (f64 LE)`.
pub fn write_samples<W: Write, T: Real>(mut w: W, samples: &[T]) -> Result<()> {
    w.write_all(SAMPLE_MAGIC)?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * samples.len());
    for s in samples {
        buf.extend_from_slice(&s.f64().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_samples<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != SAMPLE_MAGIC {
        return Err(Error::Io("not a sample file (bad magic)".into()));
    }
    let count = u64::from_le_bytes(header[8..].try_into().expect("8 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 8 * count {
        return Err(Error::Io(format!("sample file holds {} bytes, header promises {count} values", body.len())));
    }
    Ok(body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
}

pub fn read_samples_file(path: &Path) -> Result<Vec<f64>> {
    read_samples(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_noise::TemperedStableSpec;
    use crate::frozen_density::Lattice;
    use crate::sde_model::{Coefficient, CoefficientField};

    #[test]
    fn trivial_scheme_reproduces_the_increment_law() {
        let m = SdeModel::constant(TemperedStableSpec::<f64>::stable(1.0));
        let plan = SimulationPlan::new(m, 0.0, 1.0, 0.0, 1, 20_000, 5);
        let out = euler_simulate(&plan).unwrap();
        assert_eq!(out.excluded, 0);
        let mut s = out.samples.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let n = s.len() as f64;
        let d = s.iter().enumerate().fold(0.0f64, |d, (i, x)| {
            let f = 0.5 + x.atan() / std::f64::consts::PI;
            d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
        });
        assert!(d < 1.628 / n.sqrt());
        // Batching does not change the result.
        let again = euler_simulate(&SimulationPlan { batch_size: 777, ..plan }).unwrap();
        assert!(again.samples.iter().zip(&out.samples).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn refining_steps_reduces_kde_distance() {
        let field = CoefficientField::new(
            Coefficient::Sinusoidal { a: 0.0, b: 0.2, c: 1.0, d: std::f64::consts::FRAC_PI_2 },
            Coefficient::Sinusoidal { a: 1.0, b: 0.3, c: 1.0, d: 0.0 },
        );
        let m = SdeModel::new(TemperedStableSpec::<f64>::stable(1.5), field);
        let lat = Lattice { start: -4.0, step: 0.1, count: 81 };
        let est = |steps: usize| {
            let plan = SimulationPlan::new(m.clone(), 0.0, 1.0, 0.0, steps, 200_000, 17);
            kde(&euler_simulate(&plan).unwrap().samples, &lat, Bandwidth::Fixed { h: 0.15 }).unwrap().values
        };
        let (a, b, r) = (est(2), est(8), est(64));
        let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).fold(0.0f64, |d, (p, q)| d.max((p - q).abs()));
        assert!(dist(&b, &r) < dist(&a, &r), "{} vs {}", dist(&b, &r), dist(&a, &r));
    }

    #[test]
    fn sample_file_round_trip() {
        let v = vec![1.5f64, -2.25, 1e300];
        let mut buf = Vec::new();
        write_samples(&mut buf, &v).unwrap();
        assert_eq!(buf.len(), 16 + 24);
        assert_eq!(read_samples(&buf[..]).unwrap(), v);
        buf[0] = b'X';
        assert!(read_samples(&buf[..]).is_err());
        assert!(read_samples(&buf[..20]).is_err());
    }
}
