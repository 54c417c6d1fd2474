use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frozen_density::Lattice;
use crate::scalar::{c, Real};

/// Bandwidth selection for [`kde`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", bound = "T: Real")]
pub enum Bandwidth<T> {
    /// `0.9 · (IQR/1.34) · n^{−1/5}`.
    Robust,
    Fixed { h: T },
}

/// Kernel density estimate on a lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate<T> {
    pub coords: Vec<T>,
    pub values: Vec<T>,
    pub bandwidth: T,
    /// Standard error of each value.
    pub se: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T: Real> DensityEstimate<T> {
    /// Trapezoid mass over the lattice.
    pub fn mass(&self) -> T {
        let mut m = T::zero();
        for i in 1..self.coords.len() {
            m = m + (self.values[i] + self.values[i - 1]) * (self.coords[i] - self.coords[i - 1]) * c(0.5);
        }
        m
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

const MIN_SAMPLES: usize = 1000;
const WINDOW: f64 = 8.0;

/// Gaussian kernel estimate with standard errors
/// `sqrt((mean K_h² − f̂²)/n)`. The bandwidth is floored at the lattice step.
pub fn kde<T: Real>(samples: &[T], lattice: &Lattice<T>, rule: Bandwidth<T>) -> Result<DensityEstimate<T>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::EmptyInput(format!("kde needs at least {MIN_SAMPLES} samples, got {}", samples.len())));
    }
    let mut sorted: Vec<f64> = samples.iter().map(|v| v.f64()).collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("kde samples must be finite".into()));
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let floor = lattice.step.f64();
    let mut warnings = Vec::new();
    let raw = match rule {
        Bandwidth::Robust => {
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            0.9 * iqr / 1.34 * n.powf(-0.2)
        }
        Bandwidth::Fixed { h } => h.f64(),
    };
    let h = if raw < floor {
        warnings.push(format!("bandwidth {raw:.3e} below the lattice step; using {floor:.3e}"));
        floor
    } else {
        raw
    };
    let norm = 1.0 / (h * (2.0 * PI).sqrt());
    let mut values = Vec::with_capacity(lattice.count);
    let mut se = Vec::with_capacity(lattice.count);
    for x in lattice.nodes() {
        let x = x.f64();
        let lo = sorted.partition_point(|s| *s < x - WINDOW * h);
        let hi = sorted.partition_point(|s| *s <= x + WINDOW * h);
        let (mut s1, mut s2) = (0.0, 0.0);
        for s in &sorted[lo..hi] {
            let u = (x - s) / h;
            let k = norm * (-0.5 * u * u).exp();
            s1 += k;
            s2 += k * k;
        }
        let f = s1 / n;
        values.push(c(f));
        se.push(c(((s2 / n - f * f).max(0.0) / n).sqrt()));
    }
    Ok(DensityEstimate { coords: lattice.nodes(), values, bandwidth: c(h), se, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc_oracle::sampling::{sample_stable_increment, stream};

    #[test]
    fn cauchy_estimate_within_band() {
        let mut rng = stream(99, 0, 0);
        let s: Vec<f64> = (0..1_000_000).map(|_| sample_stable_increment(1.0, 1.0, 1.0, &mut rng)).collect();
        let lat = Lattice { start: -10.0, step: 0.1, count: 201 };
        let est = kde(&s, &lat, Bandwidth::Robust).unwrap();
        let h = est.bandwidth;
        for ((x, v), e) in est.coords.iter().zip(&est.values).zip(&est.se) {
            let f = 1.0 / (PI * (1.0 + x * x));
            // Second-order bias h²f''/2 with |f''| ≤ 2/π.
            let bias = h * h / PI;
            assert!((v - f).abs() < 3.0 * e + bias, "x={x}: {v} vs {f} (se {e})");
        }
        assert!(est.mass() <= 1.0 + 2.0 * est.se.iter().sum::<f64>());
    }

    #[test]
    fn degenerate_and_distant_samples() {
        let zeros = vec![0.0f64; 2000];
        let lat = Lattice { start: -2.0, step: 0.05, count: 81 };
        let est = kde(&zeros, &lat, Bandwidth::Robust).unwrap();
        assert_eq!(est.warnings.len(), 1);
        assert_eq!(est.bandwidth, 0.05);
        assert!((est.mass() - 1.0).abs() < 1e-6);
        let far = Lattice { start: 100.0, step: 0.1, count: 11 };
        let est = kde(&zeros, &far, Bandwidth::Fixed { h: 0.5 }).unwrap();
        assert!(est.values.iter().all(|v| *v == 0.0));
        assert!(kde(&zeros[..10], &lat, Bandwidth::Robust).is_err());
    }
}
