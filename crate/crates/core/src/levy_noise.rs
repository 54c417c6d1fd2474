//! Symmetric tempered α-stable driving noise.
//!
//! The Lévy density is `w · scale_c · q̄(|z|) / |z|^{1+α}`. The dominating
//! measure `m` uses the same formula with unit weights, so `ν = w·m`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive, GaussLegendre, Tolerance};
use crate::scalar::{c, Real};

/// Radial tempering profile `q̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum Tempering<T> {
    None,
    Exponential { lambda: T },
    /// Samples of `q̄` at increasing radii, interpolated linearly in log–log
    /// coordinates and held constant outside the sampled range.
    Tabulated { s: Vec<T>, q: Vec<T> },
}

/// Driving noise specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr<T>", into = "SpecRepr<T>", bound = "T: Real")]
pub struct TemperedStableSpec<T> {
    pub alpha: T,
    pub tempering: Tempering<T>,
    pub weight_plus: T,
    pub weight_minus: T,
    pub scale_c: T,
    pub gamma: T,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
struct SpecRepr<T> {
    alpha: T,
    #[serde(default = "no_tempering")]
    tempering: Tempering<T>,
    #[serde(default)]
    weights: Option<[T; 2]>,
    #[serde(default)]
    scale_c: Option<T>,
    #[serde(default)]
    gamma: Option<T>,
}

fn no_tempering<T>() -> Tempering<T> {
    Tempering::None
}

impl<T: Real> TryFrom<SpecRepr<T>> for TemperedStableSpec<T> {
    type Error = Error;
    fn try_from(r: SpecRepr<T>) -> Result<Self> {
        let [wp, wm] = r.weights.unwrap_or([T::one(), T::one()]);
        let spec = Self {
            alpha: r.alpha,
            tempering: r.tempering,
            weight_plus: wp,
            weight_minus: wm,
            scale_c: match r.scale_c {
                Some(v) => v,
                None => c(stable_normalization(r.alpha.f64())),
            },
            gamma: r.gamma.unwrap_or_else(T::one),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl<T: Real> From<TemperedStableSpec<T>> for SpecRepr<T> {
    fn from(s: TemperedStableSpec<T>) -> Self {
        Self {
            alpha: s.alpha,
            tempering: s.tempering,
            weights: Some([s.weight_plus, s.weight_minus]),
            scale_c: Some(s.scale_c),
            gamma: Some(s.gamma),
        }
    }
}


/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    /// Rejects reversed intervals and intervals containing the origin.
    pub fn check_away_from_zero(&self) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || self.hi < self.lo {
            return Err(Error::InvalidParameter(format!("malformed interval [{}, {}]", self.lo, self.hi)));
        }
        if self.lo <= T::zero() && self.hi >= T::zero() {
            return Err(Error::InfiniteMass { lo: self.lo.f64(), hi: self.hi.f64() });
        }
        Ok(())
    }
}

/// `1 / (2 ∫_0^∞ (1 − cos s) s^{-1-α} ds)`: the intensity that makes the
/// untempered exponent equal to `-|p|^α`.
pub fn stable_normalization(alpha: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-12 {
        return 1.0 / std::f64::consts::PI;
    }
    let k = -gamma(-alpha) * (std::f64::consts::FRAC_PI_2 * alpha).cos();
    1.0 / (2.0 * k)
}

/// Result of [`TemperedStableSpec::verify_h2`].
#[derive(Clone, Debug, PartialEq)]
pub struct H2Report<T> {
    pub passes: Vec<bool>,
    /// Largest `K` with `φ(p) ≤ −K|p|^α` on every grid point.
    pub largest_k: T,
}

impl<T: Real> TemperedStableSpec<T> {
    /// Pure stable noise normalized so that `φ(p) = −|p|^α`.
    pub fn stable(alpha: T) -> Self {
        Self {
            alpha,
            tempering: Tempering::None,
            weight_plus: T::one(),
            weight_minus: T::one(),
            scale_c: c(stable_normalization(alpha.f64())),
            gamma: T::one(),
        }
    }

    /// Exponentially tempered noise sharing the stable normalization constant.
    pub fn exponential(alpha: T, lambda: T) -> Self {
        Self { tempering: Tempering::Exponential { lambda }, ..Self::stable(alpha) }
    }

    pub fn with_tempering(mut self, tempering: Tempering<T>) -> Self {
        self.tempering = tempering;
        self
    }

    pub fn with_scale(mut self, scale_c: T) -> Self {
        self.scale_c = scale_c;
        self
    }

    pub fn with_weight(mut self, w: T) -> Self {
        self.weight_plus = w;
        self.weight_minus = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha > T::zero() && self.alpha < c(2.0)) {
            return bad(format!("alpha = {} must lie in (0, 2)", self.alpha));
        }
        if !(self.weight_plus >= T::zero()) || self.weight_plus != self.weight_minus {
            return bad(format!(
                "weights ({}, {}) must be equal and nonnegative for a symmetric noise",
                self.weight_plus, self.weight_minus
            ));
        }
        if !(self.scale_c > T::zero()) || !self.scale_c.is_finite() {
            return bad(format!("scale_c = {} must be positive", self.scale_c));
        }
        if self.gamma != T::one() {
            return bad(format!("gamma = {} must lie in [1, d] with d = 1", self.gamma));
        }
        match &self.tempering {
            Tempering::None => {}
            Tempering::Exponential { lambda } => {
                if !(*lambda > T::zero()) || !lambda.is_finite() {
                    return bad(format!("tempering rate {lambda} must be positive"));
                }
            }
            Tempering::Tabulated { s, q } => {
                if s.len() < 2 || s.len() != q.len() {
                    return bad("tabulated tempering needs at least two (s, q) pairs of equal length".into());
                }
                if !(s[0] > T::zero()) || s.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("tabulated radii must be positive and strictly increasing".into());
                }
                if q.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) || q.windows(2).any(|w| w[1] > w[0]) {
                    return bad("tabulated q̄ must be positive and non-increasing".into());
                }
            }
        }
        Ok(())
    }

    /// Common spectral weight `w = weight_plus = weight_minus`.
    pub fn weight(&self) -> T {
        self.weight_plus
    }

    /// Tempering profile `q̄(s)` for `s ≥ 0`.
    pub fn q_bar(&self, s: T) -> T {
        c(self.q_bar_f64(s.f64()))
    }

    pub(crate) fn q_bar_f64(&self, s: f64) -> f64 {
        match &self.tempering {
            Tempering::None => 1.0,
            Tempering::Exponential { lambda } => (-lambda.f64() * s).exp(),
            Tempering::Tabulated { s: xs, q } => {
                let n = xs.len();
                if s <= xs[0].f64() {
                    return q[0].f64();
                }
                if s >= xs[n - 1].f64() {
                    return q[n - 1].f64();
                }
                let i = xs.partition_point(|v| v.f64() <= s) - 1;
                let (s0, s1) = (xs[i].f64().ln(), xs[i + 1].f64().ln());
                let (q0, q1) = (q[i].f64().ln(), q[i + 1].f64().ln());
                (q0 + (s.ln() - s0) / (s1 - s0) * (q1 - q0)).exp()
            }
        }
    }

    /// Lévy density at a nonzero jump size.
    pub fn levy_density(&self, z: T) -> Result<T> {
        if z == T::zero() {
            return Err(Error::Singularity("the Lévy density is singular at z = 0".into()));
        }
        let w = if z > T::zero() { self.weight_plus } else { self.weight_minus };
        Ok(w * self.dominating_density(z))
    }

    /// Density of the dominating measure `m` (unit weights).
    pub fn dominating_density(&self, z: T) -> T {
        let s = z.abs();
        self.scale_c * self.q_bar(s) / s.powf(self.alpha + T::one())
    }

    /// `c_eff` with `φ(p) = −c_eff |p|^α` when untempered.
    pub fn stable_scale(&self) -> T {
        self.weight() * self.scale_c / c(stable_normalization(self.alpha.f64()))
    }

    /// Whether [`Self::levy_exponent`] has a closed form for this spec.
    pub fn has_closed_form(&self) -> bool {
        match self.tempering {
            Tempering::None => true,
            Tempering::Exponential { .. } => (self.alpha.f64() - 1.0).abs() > 1e-9,
            Tempering::Tabulated { .. } => false,
        }
    }

    /// Lévy–Khintchine exponent `φ(p) = ∫ (cos pz − 1) ν(dz)`.
    pub fn levy_exponent(&self, p: T) -> Result<T> {
        let v = self.levy_exponent_f64(p.f64())?;
        Ok(c(v))
    }

    pub(crate) fn levy_exponent_f64(&self, p: f64) -> Result<f64> {
        let p = p.abs();
        if p == 0.0 {
            return Ok(0.0);
        }
        let alpha = self.alpha.f64();
        let wc = self.weight().f64() * self.scale_c.f64();
        let v = match &self.tempering {
            Tempering::None => -self.stable_scale().f64() * p.powf(alpha),
            Tempering::Exponential { lambda } if self.has_closed_form() => {
                let l = lambda.f64();
                let r = p / l;
                if r < 1e-3 {
                    // Fourth-order expansion avoids cancellation near the origin.
                    let r2 = r * r;
                    wc * l.powf(alpha)
                        * (-r2 * gamma(2.0 - alpha) + r2 * r2 * gamma(4.0 - alpha) / 12.0)
                } else {
                    let modulus = (l * l + p * p).powf(0.5 * alpha);
                    2.0 * wc * gamma(-alpha) * (modulus * (alpha * r.atan()).cos() - l.powf(alpha))
                }
            }
            _ => 2.0 * wc * self.exponent_integral(p)?,
        };
        if !v.is_finite() {
            return Err(Error::NumericalFailure { what: "levy_exponent".into(), at: p });
        }
        Ok(v.min(0.0))
    }
}

const QUAD_TOL: Tolerance = Tolerance { abs: 1e-300, rel: 1e-13, max_panels: 4000 };

/// `Re ∫_{v0}^∞ e^{(iω−β)v} v^{−1−α} dv`, integrated along the ray on which
/// the exponential factor decays without oscillating.
fn rotated_tail(omega: f64, beta: f64, v0: f64, alpha: f64) -> Result<f64> {
    use num_complex::Complex64;
    let k = Complex64::new(-beta, omega);
    let norm = k.norm();
    let d = Complex64::new(beta, omega) / norm;
    let pre = (k * v0).exp() * d / norm;
    let f = |t: f64| {
        let v = Complex64::new(v0, 0.0) + d * (t / norm);
        (pre * (-t).exp() * v.powf(-1.0 - alpha)).re
    };
    let edges = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0, 64.0, 80.0];
    Ok(adaptive(f, &edges, QUAD_TOL)?.0)
}

impl<T: Real> TemperedStableSpec<T> {
    /// Radius beyond which `q̄` is constant, if any.
    fn flat_from(&self) -> Option<f64> {
        match &self.tempering {
            Tempering::None => Some(0.0),
            Tempering::Exponential { .. } => None,
            Tempering::Tabulated { s, .. } => Some(s[s.len() - 1].f64()),
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match &self.tempering {
            Tempering::Tabulated { s, .. } => s.iter().map(|v| v.f64()).collect(),
            _ => Vec::new(),
        }
    }

    /// `∫_0^∞ (cos ps − 1) q̄(s) s^{−1−α} ds` by quadrature.
    ///
    /// After rescaling `v = κ s` with `κ = max(p, 1)` the frequency is at most
    /// one. The integral splits at `v = 1`; the inner part uses `v = e^u`.
    pub(crate) fn exponent_integral(&self, p: f64) -> Result<f64> {
        let alpha = self.alpha.f64();
        let kappa = p.max(1.0);
        let omega = p / kappa;
        let q = |v: f64| self.q_bar_f64(v / kappa);
        let scaled_kinks: Vec<f64> = self.kinks().iter().map(|s| s * kappa).collect();

        let u_min = 1e-16f64.ln() / (2.0 - alpha);
        let mut edges = vec![u_min];
        let mut u = u_min;
        while u + 8.0 < 0.0 {
            u += 8.0;
            edges.push(u);
        }
        edges.extend(scaled_kinks.iter().filter(|v| **v < 1.0).map(|v| v.ln()).filter(|u| *u > u_min));
        edges.push(0.0);
        edges.sort_by(f64::total_cmp);
        let inner = adaptive(
            |u: f64| {
                // 2 sin²(ωv/2) v^{−α} written via sinc so that neither factor
                // under- or overflows when α is close to 2.
                let v = u.exp();
                let x = 0.5 * omega * v;
                let sinc = if x < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x };
                -0.5 * omega * omega * sinc * sinc * q(v) * ((2.0 - alpha) * u).exp()
            },
            &edges,
            QUAD_TOL,
        )?
        .0;

        // Non-oscillating part of the outer integral, -∫_1^∞ G.
        let v_end = match (self.flat_from(), &self.tempering) {
            (Some(f), _) => (f * kappa).max(1.0),
            (None, Tempering::Exponential { lambda }) => (60.0 * kappa / lambda.f64()).max(1.0),
            _ => unreachable!(),
        };
        let mut edges: Vec<f64> = vec![0.0];
        let u_end = v_end.ln();
        let mut u = 0.0;
        while u + 2.0 < u_end {
            u += 2.0;
            edges.push(u);
        }
        edges.extend(scaled_kinks.iter().filter(|v| **v > 1.0 && **v < v_end).map(|v| v.ln()));
        edges.push(u_end);
        edges.sort_by(f64::total_cmp);
        let mut mass = adaptive(|u: f64| q(u.exp()) * (-alpha * u).exp(), &edges, QUAD_TOL)?.0;
        if self.flat_from().is_some() {
            mass += q(v_end) * v_end.powf(-alpha) / alpha;
        }

        // Oscillating part ∫_1^∞ cos(ωv) G(v) dv.
        let osc = match &self.tempering {
            Tempering::Exponential { lambda } => rotated_tail(omega, lambda.f64() / kappa, 1.0, alpha)?,
            _ => {
                let gl = GaussLegendre::<f64>::new(20);
                let h = (std::f64::consts::PI / omega).min(1.0);
                let mut cuts: Vec<f64> = Vec::new();
                let mut v = 1.0;
                while v < v_end {
                    cuts.push(v);
                    v += h;
                }
                cuts.extend(scaled_kinks.iter().filter(|v| **v > 1.0 && **v < v_end));
                cuts.push(v_end);
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                let mut acc = 0.0;
                for w in cuts.windows(2) {
                    acc += gl.integrate(w[0], w[1], |v| (omega * v).cos() * q(v) * v.powf(-1.0 - alpha));
                }
                acc + q(v_end) * rotated_tail(omega, 0.0, v_end, alpha)?
            }
        };
        Ok(kappa.powf(alpha) * (inner + osc - mass))
    }

    /// `∫_a^b q̄(s) s^{−1−α} ds` for `0 < a ≤ b ≤ ∞`.
    fn radial_mass(&self, a: f64, b: f64) -> Result<f64> {
        let alpha = self.alpha.f64();
        if a >= b {
            return Ok(0.0);
        }
        let pow_tail = |s: f64| if s.is_infinite() { 0.0 } else { s.powf(-alpha) };
        if let Tempering::None = self.tempering {
            return Ok((pow_tail(a) - pow_tail(b)) / alpha);
        }
        let (mut hi, mut tail) = (b, 0.0);
        match (&self.tempering, self.flat_from()) {
            (Tempering::Exponential { lambda }, _) => hi = hi.min(a + 60.0 / lambda.f64()),
            (_, Some(f)) if b > f => {
                hi = a.max(f);
                tail = self.q_bar_f64(f) * (pow_tail(hi) - pow_tail(b)) / alpha;
            }
            _ => {}
        }
        if hi <= a {
            return Ok(tail);
        }
        let (ua, ub) = (a.ln(), hi.ln());
        let n = ((ub - ua) / 1.0).ceil().max(1.0) as usize;
        let mut edges: Vec<f64> = (0..=n).map(|i| ua + (ub - ua) * i as f64 / n as f64).collect();
        edges.extend(self.kinks().iter().map(|s| s.ln()).filter(|u| *u > ua && *u < ub));
        edges.sort_by(f64::total_cmp);
        let body = adaptive(|u: f64| self.q_bar_f64(u.exp()) * (-alpha * u).exp(), &edges, QUAD_TOL)?.0;
        Ok(body + tail)
    }

    /// Mass of the dominating measure `m` on an interval away from the origin.
    pub fn dominating_mass(&self, interval: Interval<T>) -> Result<T> {
        interval.check_away_from_zero()?;
        let (lo, hi) = (interval.lo.f64(), interval.hi.f64());
        let (a, b) = if lo > 0.0 { (lo, hi) } else { (-hi, -lo) };
        Ok(c(self.scale_c.f64() * self.radial_mass(a, b)?))
    }

    /// Lévy measure `ν` of an interval away from the origin.
    pub fn levy_measure(&self, interval: Interval<T>) -> Result<T> {
        let w = if interval.lo > T::zero() { self.weight_plus } else { self.weight_minus };
        Ok(w * self.dominating_mass(interval)?)
    }

    /// `ν(|z| > r)` for `r > 0`.
    pub fn tail_mass(&self, r: T) -> Result<T> {
        Ok(self.levy_measure(Interval::new(r, T::infinity()))? * c(2.0))
    }

    /// Checks `φ(p) ≤ −K|p|^α` on a grid of frequencies with `|p| > 1`.
    pub fn verify_h2(&self, k: T, p_grid: &[T]) -> Result<H2Report<T>> {
        if p_grid.is_empty() {
            return Err(Error::EmptyInput("frequency grid for the decay check".into()));
        }
        let mut passes = Vec::with_capacity(p_grid.len());
        let mut largest = f64::INFINITY;
        for &p in p_grid {
            if !(p.abs() > T::one()) {
                return Err(Error::Precondition(format!("decay check needs |p| > 1, got {p}")));
            }
            let phi = self.levy_exponent_f64(p.f64())?;
            let bound = p.abs().f64().powf(self.alpha.f64());
            passes.push(phi <= -k.f64() * bound);
            largest = largest.min(-phi / bound);
        }
        Ok(H2Report { passes, largest_k: c(largest) })
    }

    /// Largest `q̄(s)/q̄(2s)` over the given radii.
    pub fn doubling_constant(&self, radii: &[T]) -> T {
        let mut worst = 1.0f64;
        for s in radii {
            let s = s.f64();
            worst = worst.max(self.q_bar_f64(s) / self.q_bar_f64(2.0 * s));
        }
        c(worst)
    }
}
