//! Coefficient fields, assumption checks and the stability distance `Δ_n`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_noise::{Interval, TemperedStableSpec};
use crate::scalar::{c, cu, Real};

/// Scalar field `(t, x) ↦ value`.
#[derive(Clone)]
pub enum Coefficient<T> {
    Constant(T),
    /// `a + b·sin(c·x + d)`.
    Sinusoidal { a: T, b: T, c: T, d: T },
    /// `clamp(slope·x + intercept, lo, hi)`.
    AffineClamped { slope: T, intercept: T, lo: T, hi: T },
    /// Smooth compactly supported bump `height·exp(1 − 1/(1 − u²))`, `u = (x − center)/width`.
    Bump { center: T, width: T, height: T },
    Sum(Box<Coefficient<T>>, Box<Coefficient<T>>),
    Product(Box<Coefficient<T>>, Box<Coefficient<T>>),
    Custom(Arc<dyn Fn(T, T) -> T + Send + Sync>),
}

impl<T: Real> Coefficient<T> {
    pub fn custom(f: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        Coefficient::Custom(Arc::new(f))
    }

    pub fn eval(&self, t: T, x: T) -> T {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Sinusoidal { a, b, c, d } => *a + *b * (*c * x + *d).sin(),
            Coefficient::AffineClamped { slope, intercept, lo, hi } => (*slope * x + *intercept).max(*lo).min(*hi),
            Coefficient::Bump { center, width, height } => {
                let u = (x - *center) / *width;
                let one = T::one();
                if u.abs() >= one {
                    T::zero()
                } else {
                    *height * (one - one / (one - u * u)).exp()
                }
            }
            Coefficient::Sum(a, b) => a.eval(t, x) + b.eval(t, x),
            Coefficient::Product(a, b) => a.eval(t, x) * b.eval(t, x),
            Coefficient::Custom(f) => f(t, x),
        }
    }

    pub fn plus(self, other: Coefficient<T>) -> Self {
        Coefficient::Sum(Box::new(self), Box::new(other))
    }

    pub fn times(self, other: Coefficient<T>) -> Self {
        Coefficient::Product(Box::new(self), Box::new(other))
    }

    /// True when the field is identically constant by construction.
    pub fn is_constant(&self) -> bool {
        match self {
            Coefficient::Constant(_) => true,
            Coefficient::Sinusoidal { b, c, .. } => *b == T::zero() || *c == T::zero(),
            Coefficient::AffineClamped { slope, .. } => *slope == T::zero(),
            Coefficient::Bump { height, .. } => *height == T::zero(),
            Coefficient::Sum(a, b) | Coefficient::Product(a, b) => a.is_constant() && b.is_constant(),
            Coefficient::Custom(_) => false,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Coefficient<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "Constant({v:?})"),
            Coefficient::Sinusoidal { a, b, c, d } => write!(f, "{a:?} + {b:?}·sin({c:?}x + {d:?})"),
            Coefficient::AffineClamped { slope, intercept, lo, hi } => {
                write!(f, "clamp({slope:?}x + {intercept:?}, {lo:?}, {hi:?})")
            }
            Coefficient::Bump { center, width, height } => write!(f, "Bump({center:?}, {width:?}, {height:?})"),
            Coefficient::Sum(a, b) => write!(f, "({a:?} + {b:?})"),
            Coefficient::Product(a, b) => write!(f, "({a:?} · {b:?})"),
            Coefficient::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Serializable description of the built-in coefficient shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields, bound = "T: Real")]
pub enum CoefficientSpec<T> {
    Constant { value: T },
    Sinusoidal { a: T, b: T, c: T, #[serde(default)] d: T },
    AffineClamped { slope: T, intercept: T, lo: T, hi: T },
}

impl<T: Real> From<&CoefficientSpec<T>> for Coefficient<T> {
    fn from(s: &CoefficientSpec<T>) -> Self {
        match *s {
            CoefficientSpec::Constant { value } => Coefficient::Constant(value),
            CoefficientSpec::Sinusoidal { a, b, c, d } => Coefficient::Sinusoidal { a, b, c, d },
            CoefficientSpec::AffineClamped { slope, intercept, lo, hi } => {
                Coefficient::AffineClamped { slope, intercept, lo, hi }
            }
        }
    }
}

/// Drift and scale of the SDE with their declared regularity.
#[derive(Clone, Debug)]
pub struct CoefficientField<T> {
    pub drift: Coefficient<T>,
    pub sigma: Coefficient<T>,
    /// Hölder exponent of the coefficients.
    pub eta: T,
    /// Ellipticity constant: `σ² ∈ [1/κ, κ]`.
    pub kappa: T,
    pub time_homogeneous: bool,
}

impl<T: Real> CoefficientField<T> {
    pub fn new(drift: Coefficient<T>, sigma: Coefficient<T>) -> Self {
        Self { drift, sigma, eta: T::one(), kappa: c(4.0), time_homogeneous: true }
    }
}

/// `dX = b(t,X) dt + σ(t,X⁻) dZ`.
#[derive(Clone, Debug)]
pub struct SdeModel<T> {
    pub noise: TemperedStableSpec<T>,
    pub field: CoefficientField<T>,
}

impl<T: Real> SdeModel<T> {
    pub fn new(noise: TemperedStableSpec<T>, field: CoefficientField<T>) -> Self {
        Self { noise, field }
    }

    /// Driftless model with unit scale.
    pub fn constant(noise: TemperedStableSpec<T>) -> Self {
        Self::new(noise, CoefficientField::new(Coefficient::Constant(T::zero()), Coefficient::Constant(T::one())))
    }

    #[inline]
    pub fn sigma(&self, t: T, x: T) -> T {
        self.field.sigma.eval(t, x)
    }

    #[inline]
    pub fn drift(&self, t: T, x: T) -> T {
        self.field.drift.eval(t, x)
    }

    pub fn alpha(&self) -> T {
        self.noise.alpha
    }

    /// `η(α ∧ 1)`, the Hölder exponent governing the kernel regularization.
    pub fn holder_index(&self) -> T {
        self.field.eta * self.noise.alpha.min(T::one())
    }

    /// Whether both coefficients are constant by construction.
    pub fn has_constant_coefficients(&self) -> bool {
        self.field.drift.is_constant() && self.field.sigma.is_constant()
    }
}

/// Time and space nodes on which assumptions are checked.
#[derive(Clone, Debug)]
pub struct ValidationLattice<T> {
    pub times: Vec<T>,
    pub xs: Vec<T>,
}

impl<T: Real> ValidationLattice<T> {
    pub fn uniform(t0: T, t1: T, n_times: usize, lo: T, hi: T, n_xs: usize) -> Self {
        Self { times: linspace(t0, t1, n_times), xs: linspace(lo, hi, n_xs) }
    }
}

pub(crate) fn linspace<T: Real>(a: T, b: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * cu::<T>(i) / cu::<T>(n - 1)).collect(),
    }
}

/// Outcome of [`validate_assumptions`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport<T> {
    pub sigma_sq_min: T,
    pub sigma_sq_max: T,
    /// `sup |σ(t,x) − σ(t,x')| / |x − x'|^η` over lattice pairs.
    pub holder_ratio: T,
    pub drift_bound: T,
    /// Largest `K` with `φ(p) ≤ −K|p|^α` on a probe grid of frequencies.
    pub decay_constant: T,
    pub warnings: Vec<String>,
}

/// Checks ellipticity, boundedness and the vanishing-drift rule on a lattice.
pub fn validate_assumptions<T: Real>(model: &SdeModel<T>, lattice: &ValidationLattice<T>) -> Result<ValidationReport<T>> {
    model.noise.validate()?;
    if lattice.times.is_empty() || lattice.xs.is_empty() {
        return Err(Error::EmptyInput("validation lattice".into()));
    }
    let f = &model.field;
    if !(f.kappa > T::one()) {
        return Err(Error::InvalidParameter(format!("ellipticity constant {} must exceed 1", f.kappa)));
    }
    if !(f.eta > T::zero() && f.eta <= T::one()) {
        return Err(Error::InvalidParameter(format!("Hölder exponent {} must lie in (0, 1]", f.eta)));
    }
    let mut warnings = Vec::new();
    let (mut smin, mut smax, mut bmax) = (T::infinity(), T::zero(), T::zero());
    let mut holder = T::zero();
    let alpha_le_one = model.alpha() <= T::one();
    for &t in &lattice.times {
        let sig: Vec<T> = lattice.xs.iter().map(|&x| model.sigma(t, x)).collect();
        for (&x, &s) in lattice.xs.iter().zip(&sig) {
            let s2 = s * s;
            if !(s > T::zero()) || !(s2 >= f.kappa.recip() && s2 <= f.kappa) {
                return Err(Error::Assumption {
                    hypothesis: "uniform ellipticity".into(),
                    witness: format!("(t, x) = ({t}, {x})"),
                    detail: format!("σ² = {s2} outside [{}, {}]", f.kappa.recip(), f.kappa),
                });
            }
            smin = smin.min(s2);
            smax = smax.max(s2);
            let b = model.drift(t, x);
            if !b.is_finite() {
                return Err(Error::Assumption {
                    hypothesis: "bounded drift".into(),
                    witness: format!("(t, x) = ({t}, {x})"),
                    detail: format!("b = {b}"),
                });
            }
            if alpha_le_one && b != T::zero() {
                return Err(Error::Assumption {
                    hypothesis: "drift must vanish when alpha <= 1".into(),
                    witness: format!("(t, x) = ({t}, {x})"),
                    detail: format!("alpha = {}, b = {b}", model.alpha()),
                });
            }
            bmax = bmax.max(b.abs());
        }
        for i in 0..sig.len() {
            for j in i + 1..sig.len() {
                let d = (lattice.xs[j] - lattice.xs[i]).abs();
                if d > T::zero() {
                    holder = holder.max((sig[j] - sig[i]).abs() / d.powf(f.eta));
                }
            }
        }
    }
    if f.time_homogeneous && lattice.times.len() > 1 {
        let t0 = lattice.times[0];
        let drifts = lattice.times.iter().any(|&t| {
            lattice.xs.iter().any(|&x| model.sigma(t, x) != model.sigma(t0, x) || model.drift(t, x) != model.drift(t0, x))
        });
        if drifts {
            warnings.push("coefficients flagged time-homogeneous vary in time on the lattice".into());
        }
    }
    let probe: Vec<T> = [1.5, 2.0, 4.0, 8.0, 16.0, 64.0].iter().map(|v| c(*v)).collect();
    let decay = model.noise.verify_h2(T::zero(), &probe)?.largest_k;
    if !(decay > T::zero()) {
        warnings.push("characteristic exponent shows no power-law decay on the probe grid".into());
    }
    Ok(ValidationReport { sigma_sq_min: smin, sigma_sq_max: smax, holder_ratio: holder, drift_bound: bmax, decay_constant: decay, warnings })
}

/// `ν_t(x, A) = ν(A / σ(t, x))`.
pub fn pushforward_measure<T: Real>(model: &SdeModel<T>, t: T, x: T, interval: Interval<T>) -> Result<T> {
    interval.check_away_from_zero()?;
    let s = model.sigma(t, x);
    if !(s > T::zero()) {
        return Err(Error::Assumption {
            hypothesis: "uniform ellipticity".into(),
            witness: format!("(t, x) = ({t}, {x})"),
            detail: format!("σ = {s}"),
        });
    }
    model.noise.levy_measure(Interval::new(interval.lo / s, interval.hi / s))
}

/// Finite family of test sets and lattice on which `Δ_n` is evaluated.
#[derive(Clone, Debug)]
pub struct DeltaTestFamily<T> {
    pub intervals: Vec<Interval<T>>,
    pub xs: Vec<T>,
    pub times: Vec<T>,
    /// Cap `δ` in `δ ∧ |x − x'|^{η(α∧1)}`.
    pub delta_cap: T,
}

impl<T: Real> DeltaTestFamily<T> {
    /// Dyadic intervals `±[2^j, 2^{j+1}]` and half-lines `±[2^j, ∞)` for
    /// `j ∈ [−10, 10]`, on a 41-point lattice over `[lo, hi]`.
    pub fn dyadic(lo: T, hi: T, times: Vec<T>) -> Self {
        let mut intervals = Vec::new();
        for j in -10..=10 {
            let a: T = c(2f64.powi(j));
            let b: T = c(2f64.powi(j + 1));
            intervals.push(Interval::new(a, b));
            intervals.push(Interval::new(-b, -a));
            intervals.push(Interval::new(a, T::infinity()));
            intervals.push(Interval::new(T::neg_infinity(), -a));
        }
        Self { intervals, xs: linspace(lo, hi, 41), times, delta_cap: T::one() }
    }
}

/// Components of the stability distance.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaEstimate<T> {
    pub delta: T,
    /// `sup |ν_t(x,A) − ν^n_t(x,A)| / m(A)`.
    pub measure_term: T,
    /// Hölder quotient of the measure difference.
    pub holder_term: T,
    /// `sup |b − b_n|`.
    pub drift_term: T,
}

fn measure_table<T: Real>(model: &SdeModel<T>, t: T, xs: &[T], a: Interval<T>) -> Result<Vec<T>> {
    xs.iter().map(|&x| pushforward_measure(model, t, x, a)).collect()
}

fn holder_denominator<T: Real>(cap: T, d: T, index: T) -> T {
    cap.min(d.powf(index))
}

/// Lower estimate of `Δ_n` over a finite test family.
pub fn estimate_delta_n<T: Real>(base: &SdeModel<T>, other: &SdeModel<T>, family: &DeltaTestFamily<T>) -> Result<DeltaEstimate<T>> {
    if family.intervals.is_empty() || family.xs.is_empty() || family.times.is_empty() {
        return Err(Error::EmptyInput("test family for the stability distance".into()));
    }
    let index = base.holder_index().min(other.holder_index());
    let (mut mt, mut ht, mut dt) = (T::zero(), T::zero(), T::zero());
    for &t in &family.times {
        for &a in &family.intervals {
            let m = base.noise.dominating_mass(a)?;
            if !(m > T::zero()) {
                continue;
            }
            let nu = measure_table(base, t, &family.xs, a)?;
            let nu_n = measure_table(other, t, &family.xs, a)?;
            let diff: Vec<T> = nu.iter().zip(&nu_n).map(|(p, q)| *p - *q).collect();
            for i in 0..diff.len() {
                mt = mt.max(diff[i].abs() / m);
                for j in i + 1..diff.len() {
                    let d = (family.xs[j] - family.xs[i]).abs();
                    if d > T::zero() {
                        let den = holder_denominator(family.delta_cap, d, index) * m;
                        ht = ht.max((diff[j] - diff[i]).abs() / den);
                    }
                }
            }
        }
        for &x in &family.xs {
            dt = dt.max((base.drift(t, x) - other.drift(t, x)).abs());
        }
    }
    Ok(DeltaEstimate { delta: mt.max(ht).max(dt), measure_term: mt, holder_term: ht, drift_term: dt })
}

/// Hölder constant of `x ↦ ν_t(x, A)` relative to `m(A)` on the family.
pub fn holder_constant<T: Real>(model: &SdeModel<T>, family: &DeltaTestFamily<T>) -> Result<T> {
    let index = model.holder_index();
    let mut worst = T::zero();
    for &t in &family.times {
        for &a in &family.intervals {
            let m = model.noise.dominating_mass(a)?;
            if !(m > T::zero()) {
                continue;
            }
            let nu = measure_table(model, t, &family.xs, a)?;
            for i in 0..nu.len() {
                for j in i + 1..nu.len() {
                    let d = (family.xs[j] - family.xs[i]).abs();
                    if d > T::zero() {
                        worst = worst.max((nu[j] - nu[i]).abs() / (holder_denominator(family.delta_cap, d, index) * m));
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Shape of a vanishing perturbation indexed by `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields, bound = "T: Real")]
pub enum PerturbationKind<T> {
    /// `b_n = b`, `σ_n = σ`.
    Identical,
    /// `b_n = b + a/n`.
    Drift,
    /// `σ_n = σ·(1 + a·sin(2x)/n)`.
    SigmaSin,
    /// Both of the above.
    Combined,
    /// `σ_n = σ·(1 + a·bump((x − center)/width)/n)`.
    SigmaBump { center: T, width: T },
}

/// `kind` applied with amplitude `amplitude`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PerturbationFamily<T> {
    #[serde(flatten)]
    pub kind: PerturbationKind<T>,
    pub amplitude: T,
}

impl<T: Real> PerturbationFamily<T> {
    pub fn new(kind: PerturbationKind<T>, amplitude: T) -> Self {
        Self { kind, amplitude }
    }

    /// The `n`-th perturbed model.
    pub fn apply(&self, base: &SdeModel<T>, n: usize) -> SdeModel<T> {
        let eps = self.amplitude / cu::<T>(n);
        let mut field = base.field.clone();
        let sin_factor = || Coefficient::Sinusoidal { a: T::one(), b: eps, c: c(2.0), d: T::zero() };
        match self.kind {
            PerturbationKind::Identical => {}
            PerturbationKind::Drift => field.drift = field.drift.plus(Coefficient::Constant(eps)),
            PerturbationKind::SigmaSin => field.sigma = field.sigma.times(sin_factor()),
            PerturbationKind::Combined => {
                field.drift = field.drift.plus(Coefficient::Constant(eps));
                field.sigma = field.sigma.times(sin_factor());
            }
            PerturbationKind::SigmaBump { center, width } => {
                let bump = Coefficient::Constant(T::one()).plus(Coefficient::Bump { center, width, height: eps });
                field.sigma = field.sigma.times(bump);
            }
        }
        SdeModel { noise: base.noise.clone(), field }
    }
}

/// Base model plus indexed perturbations with their measured distances.
#[derive(Clone, Debug)]
pub struct PerturbationSequence<T> {
    pub base: SdeModel<T>,
    pub indices: Vec<usize>,
    pub perturbed: Vec<SdeModel<T>>,
    pub measured_delta: Vec<DeltaEstimate<T>>,
    pub warnings: Vec<String>,
}

impl<T: Real> PerturbationSequence<T> {
    pub fn build(base: SdeModel<T>, family: &PerturbationFamily<T>, indices: &[usize], tests: &DeltaTestFamily<T>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("perturbation index list".into()));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) || indices[0] == 0 {
            return Err(Error::InvalidParameter("perturbation indices must be positive and strictly increasing".into()));
        }
        let perturbed: Vec<SdeModel<T>> = indices.iter().map(|&n| family.apply(&base, n)).collect();
        let measured_delta = perturbed.iter().map(|m| estimate_delta_n(&base, m, tests)).collect::<Result<Vec<_>>>()?;
        let mut warnings = Vec::new();
        for (w, n) in measured_delta.windows(2).zip(&indices[1..]) {
            if w[1].delta > w[0].delta {
                warnings.push(format!("measured distance increases at n = {n}"));
            }
        }
        Ok(Self { base, indices: indices.to_vec(), perturbed, measured_delta, warnings })
    }

    pub fn deltas(&self) -> Vec<T> {
        self.measured_delta.iter().map(|d| d.delta).collect()
    }
}
