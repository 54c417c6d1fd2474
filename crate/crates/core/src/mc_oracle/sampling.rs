use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::levy_noise::{Interval, TemperedStableSpec, Tempering};
use crate::quadrature::{adaptive, Tolerance};
use crate::scalar::{c, Real};

const MAX_TRIES: usize = 1_000_000;

/// Generator for path `path`, time step `step`: stream `path` of the seed,
/// positioned at word `step·2³²`.
pub fn stream(seed: u64, path: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng.set_word_pos(u128::from(step) << 32);
    rng
}

/// Standard symmetric stable draw with `E e^{ipS} = e^{−|p|^α}` (Chambers–Mallows–Stuck).
fn unit_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    if alpha == 1.0 {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable draw with `E e^{−sS} = e^{−s^α}`, `α < 1` (Kanter).
fn unit_positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * rng.random::<f64>();
    let w: f64 = Exp1.sample(rng);
    (alpha * u).sin() / u.sin().powf(1.0 / alpha) * (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha)
}

/// One increment over `dt` of symmetric stable noise with exponent
/// `φ(p) = −scale^α |p|^α`.
pub fn sample_stable_increment<T: Real, R: Rng + ?Sized>(alpha: T, scale: T, dt: T, rng: &mut R) -> T {
    let a = alpha.f64();
    c(scale.f64() * dt.f64().powf(1.0 / a) * unit_stable(a, rng))
}

/// Increment sampler for a fixed noise and step.
#[derive(Clone, Debug)]
pub enum IncrementSampler {
    Stable { alpha: f64, scale: f64 },
    /// `α < 1`: difference of two tilted positive-stable variables.
    TiltedSubordinators { alpha: f64, scale: f64, lambda: f64 },
    /// `α ≥ 1`: compound Poisson jumps beyond `eps` plus a Gaussian for the rest.
    CompoundWithGaussian { alpha: f64, lambda: f64, eps: f64, rate: f64, small_sd: f64 },
}

impl IncrementSampler {
    /// `truncation` is the small-jump cutoff for tempered `α ≥ 1`,
    /// `dt^{1/α}/10` by default.
    pub fn new<T: Real>(spec: &TemperedStableSpec<T>, dt: f64, truncation: Option<f64>) -> Result<Self> {
        spec.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Precondition(format!("time step dt = {dt} must be positive")));
        }
        let alpha = spec.alpha.f64();
        match spec.tempering {
            Tempering::None => Ok(Self::Stable { alpha, scale: (spec.stable_scale().f64() * dt).powf(1.0 / alpha) }),
            Tempering::Exponential { lambda } => {
                let lambda = lambda.f64();
                let wc = spec.weight().f64() * spec.scale_c.f64();
                if alpha < 1.0 {
                    let scale = (dt * wc * gamma(1.0 - alpha) / alpha).powf(1.0 / alpha);
                    return Ok(Self::TiltedSubordinators { alpha, scale, lambda });
                }
                let eps = truncation.unwrap_or(dt.powf(1.0 / alpha) / 10.0);
                if !(eps > 0.0) {
                    return Err(Error::InvalidParameter(format!("truncation {eps} must be positive")));
                }
                let rate = 2.0 * dt * spec.levy_measure(Interval::new(c(eps), T::infinity()))?.f64();
                let tol = Tolerance { abs: 1e-300, rel: 1e-12, max_panels: 2000 };
                let edges: Vec<f64> = (0..=40).rev().map(|k| eps * 2f64.powi(-k)).collect();
                let edges = [&[0.0][..], &edges[..]].concat();
                let second = adaptive(|u: f64| u * u * spec.levy_density(c(u)).map(|v| v.f64()).unwrap_or(f64::NAN), &edges, tol)?.0;
                Ok(Self::CompoundWithGaussian { alpha, lambda, eps, rate, small_sd: (2.0 * dt * second).sqrt() })
            }
            Tempering::Tabulated { .. } => {
                Err(Error::InvalidParameter("increment sampling supports pure stable or exponential tempering".into()))
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            Self::Stable { alpha, scale } => Ok(scale * unit_stable(alpha, rng)),
            Self::TiltedSubordinators { alpha, scale, lambda } => {
                let mut side = || -> Result<f64> {
                    for _ in 0..MAX_TRIES {
                        let y = scale * unit_positive_stable(alpha, rng);
                        if rng.random::<f64>() < (-lambda * y).exp() {
                            return Ok(y);
                        }
                    }
                    Err(Error::RejectionBudget(MAX_TRIES))
                };
                Ok(side()? - side()?)
            }
            Self::CompoundWithGaussian { alpha, lambda, eps, rate, small_sd } => {
                let z: f64 = StandardNormal.sample(rng);
                let mut x = small_sd * z;
                let n = if rate > 0.0 {
                    Poisson::new(rate).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as u64
                } else {
                    0
                };
                for _ in 0..n {
                    let mut accepted = None;
                    for _ in 0..MAX_TRIES {
                        let u = eps * (1.0 - rng.random::<f64>()).powf(-1.0 / alpha);
                        if rng.random::<f64>() < (-lambda * (u - eps)).exp() {
                            accepted = Some(u);
                            break;
                        }
                    }
                    let u = accepted.ok_or(Error::RejectionBudget(MAX_TRIES))?;
                    x += if rng.random::<bool>() { u } else { -u };
                }
                Ok(x)
            }
        }
    }
}

/// One increment over `dt` of exponentially tempered (or pure) stable noise.
pub fn sample_tempered_increment<T: Real, R: Rng + ?Sized>(spec: &TemperedStableSpec<T>, dt: T, rng: &mut R) -> Result<T> {
    Ok(c(IncrementSampler::new(spec, dt.f64(), None)?.draw(rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        sample.sort_by(|a, b| a.total_cmp(b));
        let n = sample.len() as f64;
        sample.iter().enumerate().fold(0.0f64, |d, (i, x)| {
            let f = cdf(*x);
            d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
        })
    }

    fn ks2(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(|x, y| x.total_cmp(y));
        b.sort_by(|x, y| x.total_cmp(y));
        let (n, m) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n - j as f64 / m).abs());
        }
        d
    }

    fn draws(sampler: &IncrementSampler, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = stream(seed, 0, 0);
        (0..n).map(|_| sampler.draw(&mut rng).unwrap()).collect()
    }

    #[test]
    fn cauchy_draws_pass_ks() {
        let mut rng = stream(7, 0, 0);
        let mut s: Vec<f64> = (0..100_000).map(|_| sample_stable_increment(1.0, 1.0, 1.0, &mut rng)).collect();
        let d = ks(&mut s, |x| 0.5 + x.atan() / PI);
        assert!(d < 1.628 / (1e5f64).sqrt(), "KS distance {d}");
    }

    #[test]
    fn stable_scaling_holds_in_law() {
        let mut rng = stream(8, 0, 0);
        let mut a: Vec<f64> = (0..50_000).map(|_| sample_stable_increment(1.5, 1.0, 0.2, &mut rng)).collect();
        let mut b: Vec<f64> =
            (0..50_000).map(|_| 0.2f64.powf(1.0 / 1.5) * sample_stable_increment(1.5, 1.0, 1.0, &mut rng)).collect();
        let d = ks2(&mut a, &mut b);
        assert!(d < 1.628 * (2.0 / 5e4f64).sqrt(), "{d}");
    }

    #[test]
    fn fixed_seed_reproduces_bits() {
        let spec = TemperedStableSpec::<f64>::exponential(1.5, 1.0);
        let s = IncrementSampler::new(&spec, 0.01, None).unwrap();
        let a = draws(&s, 3, 1000);
        let b = draws(&s, 3, 1000);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, draws(&s, 4, 1000));
        let mut r1 = stream(1, 5, 9);
        let mut r2 = stream(1, 5, 9);
        assert_eq!(r1.random::<u64>(), r2.random::<u64>());
        assert_ne!(stream(1, 5, 9).random::<u64>(), stream(1, 5, 10).random::<u64>());
    }

    #[test]
    fn sign_flip_and_additivity() {
        let spec = TemperedStableSpec::<f64>::stable(1.2);
        let s = IncrementSampler::new(&spec, 1.0, None).unwrap();
        let mut a = draws(&s, 11, 40_000);
        let mut neg: Vec<f64> = draws(&s, 12, 40_000).iter().map(|v| -v).collect();
        assert!(ks2(&mut a, &mut neg) < 1.628 * (2.0 / 4e4f64).sqrt());
        let half = IncrementSampler::new(&spec, 0.5, None).unwrap();
        let h = draws(&half, 13, 80_000);
        let mut sums: Vec<f64> = h.chunks(2).map(|p| p[0] + p[1]).collect();
        let mut whole = draws(&s, 14, 40_000);
        assert!(ks2(&mut sums, &mut whole) < 1.628 * (2.0 / 4e4f64).sqrt());
    }

    #[test]
    fn small_tempering_approaches_stable() {
        for alpha in [0.7, 1.5] {
            let stable = IncrementSampler::new(&TemperedStableSpec::<f64>::stable(alpha), 1.0, None).unwrap();
            let mut base = draws(&stable, 21, 40_000);
            let mut dists = Vec::new();
            for lambda in [1.0, 0.1, 1e-3] {
                let spec = TemperedStableSpec::<f64>::exponential(alpha, lambda);
                let s = IncrementSampler::new(&spec, 1.0, None).unwrap();
                let mut t = draws(&s, 22, 40_000);
                dists.push(ks2(&mut t, &mut base));
            }
            assert!(dists[0] > dists[1] && dists[1] > dists[2] * 0.9, "alpha {alpha}: {dists:?}");
            assert!(dists[2] < 1.628 * (2.0 / 4e4f64).sqrt(), "alpha {alpha}: {dists:?}");
        }
    }

    #[test]
    fn strong_tempering_matches_second_moment() {
        for alpha in [0.6, 1.5] {
            let spec = TemperedStableSpec::<f64>::exponential(alpha, 5.0);
            let dt = 0.5;
            let s = IncrementSampler::new(&spec, dt, None).unwrap();
            let x = draws(&s, 31, 200_000);
            let n = x.len() as f64;
            let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
            let m4 = x.iter().map(|v| v.powi(4)).sum::<f64>() / n;
            let se = ((m4 - m2 * m2) / n).sqrt();
            let tol = Tolerance { abs: 1e-300, rel: 1e-12, max_panels: 2000 };
            let edges: Vec<f64> = (-40..=8).map(|k| 2f64.powi(k)).collect();
            let nu2 = 2.0 * adaptive(|u: f64| u * u * spec.levy_density(u).unwrap(), &[&[0.0][..], &edges[..]].concat(), tol).unwrap().0;
            assert!((m2 - nu2 * dt).abs() < 3.0 * se, "alpha {alpha}: {m2} vs {}", nu2 * dt);
        }
    }

    #[test]
    fn zero_step_is_rejected() {
        let spec = TemperedStableSpec::<f64>::exponential(1.5, 1.0);
        let mut rng = stream(0, 0, 0);
        assert!(matches!(sample_tempered_increment(&spec, 0.0, &mut rng), Err(Error::Precondition(_))));
    }
}
