//! Densities of the frozen process by Fourier inversion, the envelope `p̄`,
//! and an independent Lévy–Itô reference density.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{trig_sums, FrequencyRule};
use crate::levy_noise::{Interval, TemperedStableSpec};
use crate::quadrature::{adaptive, GaussLegendre, Tolerance};
use crate::scalar::{c, cu, Real};
use crate::sde_model::SdeModel;

/// Uniform lattice `start + i·step`, `i < count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Lattice<T> {
    pub start: T,
    pub step: T,
    pub count: usize,
}

impl<T: Real> Lattice<T> {
    /// Half-open lattice `[center − hw, center + hw)`; `center` is node `count/2`
    /// when `count` is even.
    pub fn centered(center: T, half_width: T, count: usize) -> Self {
        Self { start: center - half_width, step: half_width * c(2.0) / cu(count), count }
    }

    pub fn node(&self, i: usize) -> T {
        self.start + self.step * cu(i)
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    pub fn last(&self) -> T {
        self.node(self.count - 1)
    }

    /// Index of the node equal to `x` up to rounding, if any.
    pub fn index_of(&self, x: T) -> Option<usize> {
        let f = ((x - self.start) / self.step).f64();
        let i = f.round();
        if (f - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < self.count {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Which endpoint is fixed on a [`DensityGrid`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridAxis<T> {
    /// Values over initial points `x` for a fixed terminal point `y`.
    OverInitial { y: T },
    /// Values over terminal points `y` for a fixed initial point `x`.
    OverTerminal { x: T },
}

/// Density values on a lattice with per-point error estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid<T> {
    pub t: T,
    pub big_t: T,
    pub axis: GridAxis<T>,
    pub coords: Vec<T>,
    pub values: Vec<T>,
    pub errors: Vec<T>,
    /// Largest magnitude removed by clipping negative values.
    pub clipped: T,
}

impl<T: Real> DensityGrid<T> {
    /// Trapezoid mass over the lattice.
    pub fn mass(&self) -> T {
        let mut m = T::zero();
        for i in 1..self.coords.len() {
            m = m + (self.values[i] + self.values[i - 1]) * (self.coords[i] - self.coords[i - 1]) * c(0.5);
        }
        m
    }

    pub fn peak(&self) -> T {
        self.values.iter().fold(T::zero(), |a, b| a.max(*b))
    }

    pub fn sup_distance(&self, other: &DensityGrid<T>) -> T {
        self.values.iter().zip(&other.values).fold(T::zero(), |a, (p, q)| a.max((*p - *q).abs()))
    }

    /// `(x, y)` of lattice point `i`.
    pub fn point(&self, i: usize) -> (T, T) {
        match self.axis {
            GridAxis::OverInitial { y } => (self.coords[i], y),
            GridAxis::OverTerminal { x } => (x, self.coords[i]),
        }
    }
}

/// Time-quadrature representation of `∫_t^T φ(σ(u, y) p) du = Σ_j w_j φ(σ_j p)`.
#[derive(Clone, Debug)]
pub(crate) struct FrozenExponent<'a, T> {
    pub noise: &'a TemperedStableSpec<T>,
    pub nodes: Vec<(f64, f64)>,
    /// Frozen drift displacement `∫_t^T b(u, y) du`.
    pub shift: f64,
}

impl<'a, T: Real> FrozenExponent<'a, T> {
    pub fn new(model: &'a SdeModel<T>, t: T, big_t: T, y: T) -> Result<Self> {
        if !(big_t > t) {
            return Err(Error::Precondition(format!("need t < T, got t = {t}, T = {big_t}")));
        }
        let span = (big_t - t).f64();
        let (nodes, shift) = if model.field.time_homogeneous {
            (vec![(model.sigma(t, y).f64(), span)], model.drift(t, y).f64() * span)
        } else {
            let gl = GaussLegendre::<f64>::new(32);
            let mut shift = 0.0;
            let nodes = gl
                .nodes
                .iter()
                .zip(&gl.weights)
                .map(|(u, w)| {
                    let s = c(t.f64() + 0.5 * span * (u + 1.0));
                    shift += 0.5 * span * w * model.drift(s, y).f64();
                    (model.sigma(s, y).f64(), 0.5 * span * w)
                })
                .collect();
            (nodes, shift)
        };
        if nodes.iter().any(|(s, _)| !(*s > 0.0)) {
            return Err(Error::Assumption {
                hypothesis: "uniform ellipticity".into(),
                witness: format!("y = {y}"),
                detail: "σ(u, y) must be positive on [t, T]".into(),
            });
        }
        Ok(Self { noise: &model.noise, nodes, shift })
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (s, w) in &self.nodes {
            acc += w * self.noise.levy_exponent_f64(s * p)?;
        }
        Ok(acc)
    }

    pub fn span(&self) -> f64 {
        self.nodes.iter().map(|n| n.1).sum()
    }

    /// `U·ν_S((r, ∞))` for `r > 0`: expected number of jumps beyond `r`.
    pub fn jump_tail(&self, r: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (s, w) in &self.nodes {
            acc += w * self.noise.levy_measure(Interval::new(c(r / s), T::infinity()))?.f64();
        }
        Ok(acc)
    }

    /// Density of `U·ν_S` at `ξ ≠ 0`.
    pub fn jump_density(&self, xi: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (s, w) in &self.nodes {
            acc += w * self.noise.levy_density(c(xi / s))?.f64() / s;
        }
        Ok(acc)
    }
}

/// Characteristic exponent `∫_t^T φ(σ(u, y) p) du` of the jump part of the
/// frozen increment. The frozen process also carries the drift displacement
/// `∫_t^T b(u, y) du`, see [`frozen_drift_shift`].
pub fn frozen_exponent<T: Real>(model: &SdeModel<T>, t: T, big_t: T, y: T, p: T) -> Result<T> {
    Ok(c(FrozenExponent::new(model, t, big_t, y)?.eval(p.f64())?))
}

/// Displacement `∫_t^T b(u, y) du` of the frozen process.
pub fn frozen_drift_shift<T: Real>(model: &SdeModel<T>, t: T, big_t: T, y: T) -> Result<T> {
    Ok(c(FrozenExponent::new(model, t, big_t, y)?.shift))
}

/// Frozen density `p̃(t, T, ·, y)` requested on an `x`-lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrozenDensityRequest<T> {
    pub t: T,
    pub big_t: T,
    pub y: T,
    pub lattice: Lattice<T>,
}

impl<T: Real> FrozenDensityRequest<T> {
    pub fn new(t: T, big_t: T, y: T, lattice: Lattice<T>) -> Self {
        Self { t, big_t, y, lattice }
    }

    /// `2¹⁴` points over `y ± max(40·(T−t)^{1/α}, 40)`.
    pub fn standard(model: &SdeModel<T>, t: T, big_t: T, y: T) -> Self {
        let scale = (big_t - t).powf(model.alpha().recip());
        let hw = (scale * c(40.0)).max(c(40.0));
        Self::new(t, big_t, y, Lattice::centered(y, hw, 1 << 14))
    }

    pub fn validate(&self, alpha: T) -> Result<()> {
        if !(self.big_t > self.t) {
            return Err(Error::Precondition(format!("need t < T, got t = {}, T = {}", self.t, self.big_t)));
        }
        if !self.lattice.count.is_power_of_two() || self.lattice.count < 2 {
            return Err(Error::InvalidParameter(format!("lattice count {} must be a power of two", self.lattice.count)));
        }
        let scale = (self.big_t - self.t).powf(alpha.recip());
        let margin = scale * c(10.0);
        if self.y - margin < self.lattice.start || self.y + margin > self.lattice.last() {
            return Err(Error::Resolution(format!(
                "lattice [{}, {}] must cover y ± 10·(T−t)^(1/α) = {} ± {}",
                self.lattice.start,
                self.lattice.last(),
                self.y,
                margin
            )));
        }
        Ok(())
    }
}

const NEG_TOL: f64 = 1e-9;

pub(crate) fn clip_negative(values: &mut [f64]) -> Result<f64> {
    let mut clipped = 0.0f64;
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEG_TOL {
                return Err(Error::Resolution(format!("density value {v:e} below −1e-9; refine the lattice")));
            }
            clipped = clipped.max(-*v);
            *v = 0.0;
        }
    }
    Ok(clipped)
}

fn grid_from<T: Real>(req: &FrozenDensityRequest<T>, values: Vec<f64>, err: f64, clipped: f64) -> DensityGrid<T> {
    DensityGrid {
        t: req.t,
        big_t: req.big_t,
        axis: GridAxis::OverInitial { y: req.y },
        coords: req.lattice.nodes(),
        errors: vec![c(err); values.len()],
        values: values.into_iter().map(c).collect(),
        clipped: c(clipped),
    }
}

/// Frozen density on the request lattice by quadrature of the Fourier inversion
/// integral `(1/π) ∫_0^P e^{ψ(p)} cos(p (y − x)) dp`.
///
/// Lattice mass plus the expected jump mass beyond the lattice must lie in
/// `[0.99, 1.001]`.
pub fn frozen_density_grid<T: Real>(model: &SdeModel<T>, req: &FrozenDensityRequest<T>) -> Result<DensityGrid<T>> {
    req.validate(model.alpha())?;
    let fe = FrozenExponent::new(model, req.t, req.big_t, req.y)?;
    let (y, x0, dx) = (req.y.f64(), req.lattice.start.f64(), req.lattice.step.f64());
    let x_last = req.lattice.last().f64();
    let (mut values, abs_sum) = frozen_values(&fe, y, x0, dx, req.lattice.count)?;
    let centre = y - fe.shift;
    let clipped = clip_negative(&mut values)?;
    let grid = grid_from(req, values, 1e-14 * abs_sum + 1e-16, clipped);

    let tail = fe.jump_tail((centre - x0).max(dx))? + fe.jump_tail((x_last - centre).max(dx))?;
    let mass = grid.mass().f64() + tail;
    if !(0.99..=1.001).contains(&mass) {
        return Err(Error::Resolution(format!(
            "frozen density mass {mass:.6} (lattice {:.6} + tail {tail:.2e}) outside [0.99, 1.001]; widen the lattice",
            grid.mass()
        )));
    }
    Ok(grid)
}

/// Unclipped `p̃(·, y)` on `x0 + i·dx` and the absolute sum of the quadrature
/// amplitudes (a rounding-error scale).
pub(crate) fn frozen_values<T: Real>(fe: &FrozenExponent<'_, T>, y: f64, x0: f64, dx: f64, n: usize) -> Result<(Vec<f64>, f64)> {
    let centre = y - fe.shift;
    let x_last = x0 + dx * (n as f64 - 1.0);
    let r_max = (centre - x0).abs().max((x_last - centre).abs());
    let rule = FrequencyRule::new(&|p| fe.eval(p), r_max)?;
    let mut abs_sum = 0.0;
    let mut a = Vec::with_capacity(rule.p.len());
    for (p, w) in rule.p.iter().zip(&rule.w) {
        let v = w * fe.eval(*p)?.exp() / PI;
        abs_sum += v.abs();
        a.push(v);
    }
    Ok((trig_sums(&rule.p, &a, None, centre - x0, -dx, n), abs_sum))
}

/// Frozen density `p̃(t, T, x, y)` at a single point.
pub fn frozen_density_at<T: Real>(model: &SdeModel<T>, t: T, big_t: T, x: T, y: T) -> Result<T> {
    let fe = FrozenExponent::new(model, t, big_t, y)?;
    let r = (y - x).f64() - fe.shift;
    let rule = FrequencyRule::new(&|p| fe.eval(p), r.abs())?;
    let mut acc = 0.0;
    for (p, w) in rule.p.iter().zip(&rule.w) {
        acc += w * fe.eval(*p)?.exp() * (p * r).cos();
    }
    Ok(c((acc / PI).max(0.0)))
}

/// Tempering factor `Q(ρ) = min(1, ρ^{γ−1}) q̄(ρ)` of the envelope.
pub fn q_envelope<T: Real>(spec: &TemperedStableSpec<T>, rho: T) -> T {
    let g = spec.gamma - T::one();
    let f = if g == T::zero() { T::one() } else { rho.powf(g).min(T::one()) };
    f * spec.q_bar(rho)
}

/// Envelope `p̄ = (T−t)^{−1/α} (1 + |y−x|/(T−t)^{1/α})^{−(γ+α)} Q(|y−x|)`.
pub fn pbar<T: Real>(t: T, big_t: T, x: T, y: T, spec: &TemperedStableSpec<T>) -> T {
    let scale = (big_t - t).powf(spec.alpha.recip());
    let r = (y - x).abs();
    (T::one() + r / scale).powf(-(spec.gamma + spec.alpha)) * q_envelope(spec, r) / scale
}

/// Split of the frozen increment into jumps smaller and larger than `r0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevyItoSplit<T> {
    /// Truncation radius.
    pub r0: T,
    /// `Λ = ν̄_S(ℝ)`, rate of jumps larger than `r0` per unit time.
    pub total_rate: T,
    /// Highest compound-Poisson convolution power kept.
    pub k_max: usize,
    /// Admissible Poisson tail probability beyond `k_max`.
    pub tail_tol: T,
}

/// `P(N > k)` for `N ~ Poisson(mean)`.
pub fn poisson_tail(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let mut term = (-mean).exp();
    for j in 1..=k + 1 {
        term *= mean / j as f64;
    }
    let (mut acc, mut j) = (0.0, k + 1);
    while term > 1e-300 && (term > 1e-17 * acc || j < k + 3) {
        acc += term;
        j += 1;
        term *= mean / j as f64;
    }
    acc
}

impl<T: Real> LevyItoSplit<T> {
    /// Split at `r0 = (T−t)^{1/α}` with `k_max` chosen for a tail below `1e-10`.
    pub fn new(model: &SdeModel<T>, t: T, big_t: T, y: T) -> Result<Self> {
        let r0 = (big_t - t).powf(model.alpha().recip());
        Self::with_radius(model, t, big_t, y, r0)
    }

    pub fn with_radius(model: &SdeModel<T>, t: T, big_t: T, y: T, r0: T) -> Result<Self> {
        if !(r0 > T::zero()) {
            return Err(Error::InvalidParameter(format!("truncation radius {r0} must be positive")));
        }
        let fe = FrozenExponent::new(model, t, big_t, y)?;
        let expected = 2.0 * fe.jump_tail(r0.f64())?;
        let tail_tol = 1e-10;
        let mut k_max = 0;
        while poisson_tail(expected, k_max) >= tail_tol {
            k_max += 1;
        }
        Ok(Self { r0, total_rate: c(expected / fe.span()), k_max, tail_tol: c(tail_tol) })
    }
}

/// `∫_0^R (cos(a s) − 1) q̄(s) s^{−1−α} ds` with `s = e^u`.
fn small_jump_integral<T: Real>(noise: &TemperedStableSpec<T>, a: f64, big_r: f64) -> Result<f64> {
    let alpha = noise.alpha.f64();
    if a == 0.0 {
        return Ok(0.0);
    }
    let s_top = big_r.min(1.0 / a);
    let u_min = s_top.ln() + 1e-16f64.ln() / (2.0 - alpha);
    let u_max = big_r.ln();
    let n = ((u_max - u_min) / 4.0).ceil().max(1.0) as usize;
    let edges: Vec<f64> = (0..=n).map(|i| u_min + (u_max - u_min) * i as f64 / n as f64).collect();
    let tol = Tolerance { abs: 1e-300, rel: 1e-12, max_panels: 4000 };
    let f = |u: f64| {
        let s = u.exp();
        let h = (0.5 * a * s).sin();
        -2.0 * h * h * noise.q_bar_f64(s) * (-alpha * u).exp()
    };
    Ok(adaptive(f, &edges, tol)?.0)
}

fn lagrange4(values: &[f64], pos: f64) -> f64 {
    let m = values.len() as isize;
    let i = pos.floor() as isize;
    let f = pos - i as f64;
    if f.abs() < 1e-9 {
        return values[i.rem_euclid(m) as usize];
    }
    let v = |k: isize| values[(i + k).rem_euclid(m) as usize];
    let (a, b, cc, d) = (v(-1), v(0), v(1), v(2));
    -f * (f - 1.0) * (f - 2.0) / 6.0 * a + (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0 * b
        - (f + 1.0) * f * (f - 2.0) / 2.0 * cc
        + (f + 1.0) * f * (f - 1.0) / 6.0 * d
}

/// Reference density `∫ p_M(T−t, y−x−ξ) P_N(dξ)` from the small-jump density
/// `p_M` and the truncated compound-Poisson law of the large jumps, both on a
/// zero-padded lattice of the request spacing.
pub fn levy_ito_reference_density<T: Real>(
    model: &SdeModel<T>,
    req: &FrozenDensityRequest<T>,
    split: &LevyItoSplit<T>,
) -> Result<DensityGrid<T>> {
    req.validate(model.alpha())?;
    let fe = FrozenExponent::new(model, req.t, req.big_t, req.y)?;
    let span = fe.span();
    let mean = split.total_rate.f64() * span;
    let tail = poisson_tail(mean, split.k_max);
    if tail > split.tail_tol.f64() {
        return Err(Error::Resolution(format!(
            "k_max = {} leaves Poisson tail {tail:.2e} above tolerance {:.1e}",
            split.k_max, split.tail_tol
        )));
    }
    let r0 = split.r0.f64();
    let noise = &model.noise;
    let wc = 2.0 * noise.weight().f64() * noise.scale_c.f64();
    let phi_m = |q: f64| -> Result<f64> {
        let mut acc = 0.0;
        for (s, w) in &fe.nodes {
            acc += w * wc * small_jump_integral(noise, q * s, r0 / s)?;
        }
        Ok(acc)
    };

    let dx = req.lattice.step.f64();
    let n = req.lattice.count;
    let m = 4 * n;
    let half = (m / 2) as f64 * dx;
    let rule = FrequencyRule::new(&phi_m, half)?;
    let mut a = Vec::with_capacity(rule.p.len());
    for (p, w) in rule.p.iter().zip(&rule.w) {
        a.push(w * phi_m(*p)?.exp() / PI);
    }
    let mut pm = trig_sums(&rule.p, &a, None, -half, dx, m);
    pm.rotate_left(m / 2);

    // Masses of U·ν̄_S on cells centred at j·dx, |j·dx| ≤ n·dx.
    let gl = GaussLegendre::<f64>::new(6);
    let mut jumps = vec![0.0; m];
    for j in 1..=n {
        let (lo, hi) = ((j as f64 - 0.5) * dx, (j as f64 + 0.5) * dx);
        if hi <= r0 {
            continue;
        }
        let lo = lo.max(r0);
        let mut mass = 0.0;
        for (p, w) in gl.nodes.iter().zip(&gl.weights) {
            let xi = 0.5 * (lo + hi) + 0.5 * (hi - lo) * p;
            mass += 0.5 * (hi - lo) * w * fe.jump_density(xi)?;
        }
        jumps[j] = mass;
        jumps[m - j] = mass;
    }

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut jh: Vec<Complex<f64>> = jumps.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fwd.process(&mut jh);
    let mut ph: Vec<Complex<f64>> = pm.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fwd.process(&mut ph);
    let atom = (-mean).exp();
    for (pk, jk) in ph.iter_mut().zip(&jh) {
        let mut term = Complex::new(1.0, 0.0);
        let mut series = term;
        for k in 1..=split.k_max {
            term = term * *jk / k as f64;
            series += term;
        }
        *pk = *pk * series * atom;
    }
    inv.process(&mut ph);
    let dens: Vec<f64> = ph.iter().map(|v| v.re / m as f64).collect();

    let (y, x0) = (req.y.f64() - fe.shift, req.lattice.start.f64());
    let mut values: Vec<f64> = (0..n).map(|i| lagrange4(&dens, (y - x0 - i as f64 * dx) / dx)).collect();
    let clipped = clip_negative(&mut values)?;
    Ok(grid_from(req, values, 1e-12 + tail, clipped))
}
