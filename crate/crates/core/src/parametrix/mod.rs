//! The parametrix kernel, the space-time convolution and the series
//! `p = Σ_k p̃ ⊗ H^{(k)}`, with the majorants `H̄`, `ρ` and `ρ_m`.

mod config;
mod convolve;
mod engine;
mod pointwise;
mod stability;

pub use config::ParametrixConfig;
pub use convolve::{space_time_convolve, Convolution};
pub use pointwise::{generator_symbol, hbar, kernel_H, rho, rho_m};
pub use stability::{stability_ratio, StabilityRow};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frozen_density::{frozen_density_at, frozen_values, pbar, DensityGrid, FrozenExponent, GridAxis, Lattice};
use crate::scalar::{c, Real};
use crate::sde_model::SdeModel;
use engine::{Engine, Orientation};

/// One term `p̃ ⊗ H^{(k)}` of the series on the output lattice.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct SeriesTerm<T> {
    pub order: usize,
    pub values: Vec<T>,
    pub sup_norm: T,
    /// `max |term| / p̄` over the lattice.
    pub weighted_sup_norm: T,
}

/// Why the summation stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The last term fell below `tail_tol`.
    Converged,
    /// `k_max` was reached first.
    MaxOrder,
}

/// Summed density with per-term diagnostics.
#[derive(Clone, Debug)]
pub struct SeriesResult<T> {
    pub density: DensityGrid<T>,
    pub terms: Vec<SeriesTerm<T>>,
    /// `weighted_sup_norm[k+1] / weighted_sup_norm[k]`.
    pub ratios: Vec<T>,
    pub stop: StopReason,
    pub warnings: Vec<String>,
}

impl<T: Real> SeriesResult<T> {
    /// Partial sum of the first `order + 1` terms, unclipped.
    pub fn partial_sum(&self, order: usize) -> Vec<T> {
        let n = self.density.coords.len();
        let mut out = vec![T::zero(); n];
        for term in self.terms.iter().take(order + 1) {
            for (o, v) in out.iter_mut().zip(&term.values) {
                *o = *o + *v;
            }
        }
        out
    }
}

/// Engine lattice on the grid of `out` through `centre`, padded to
/// `centre ± half_width`. Returns the nodes and the offset of `out` in them.
fn engine_lattice<T: Real>(out: &Lattice<T>, centre: f64, half_width: f64) -> Result<(Vec<f64>, usize)> {
    let h = out.step.f64();
    if !(h > 0.0) || out.count < 2 {
        return Err(Error::InvalidParameter("lattice needs a positive step and at least two nodes".into()));
    }
    let f = (out.start.f64() - centre) / h;
    if (f - f.round()).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "the fixed endpoint {centre} must lie on the lattice grid (offset {f} steps)"
        )));
    }
    let first = f.round() as i64;
    let pad = (half_width / h).ceil() as i64;
    let lo = first.min(-pad);
    let hi = (first + out.count as i64 - 1).max(pad);
    let n = (hi - lo + 1) as usize;
    if n > 4096 {
        return Err(Error::Resolution(format!("engine lattice of {n} nodes exceeds 4096; use a coarser step")));
    }
    let nodes = (lo..=hi).map(|k| centre + k as f64 * h).collect();
    Ok((nodes, (first - lo) as usize))
}

fn check_inputs<T: Real>(model: &SdeModel<T>, t: T, big_t: T, config: &ParametrixConfig<T>) -> Result<Vec<String>> {
    model.noise.validate()?;
    let warnings = config.validate(model)?;
    if !(big_t > t) {
        return Err(Error::Precondition(format!("need t < T, got t = {t}, T = {big_t}")));
    }
    if !model.field.time_homogeneous && !model.has_constant_coefficients() {
        return Err(Error::Precondition(
            "the lattice engine handles time-homogeneous coefficients only".into(),
        ));
    }
    Ok(warnings)
}

struct Summation<T> {
    terms: Vec<SeriesTerm<T>>,
    ratios: Vec<T>,
    stop: StopReason,
}

fn term_of<T: Real>(order: usize, values: Vec<f64>, weights: &[f64]) -> SeriesTerm<T> {
    let sup = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let weighted = values.iter().zip(weights).fold(0.0f64, |a, (v, w)| a.max(v.abs() / w));
    SeriesTerm { order, values: values.into_iter().map(c).collect(), sup_norm: c(sup), weighted_sup_norm: c(weighted) }
}

fn sum_terms<T: Real>(
    term0: Vec<f64>,
    weights: &[f64],
    config: &ParametrixConfig<T>,
    mut next: impl FnMut() -> Vec<f64>,
) -> Result<Summation<T>> {
    let mut terms = vec![term_of::<T>(0, term0, weights)];
    let mut ratios = Vec::new();
    let mut rising = 0;
    let tol = config.tail_tol;
    for k in 1..=config.k_max {
        let term = term_of::<T>(k, next(), weights);
        let prev = terms[k - 1].weighted_sup_norm;
        let ratio = if prev > T::zero() { term.weighted_sup_norm / prev } else { T::zero() };
        ratios.push(ratio);
        let small = term.weighted_sup_norm < tol;
        terms.push(term);
        if small {
            return Ok(Summation { terms, ratios, stop: StopReason::Converged });
        }
        if k >= 2 && ratio >= T::one() {
            rising += 1;
            if rising >= 2 {
                return Err(Error::Divergence { order: k, ratio: ratio.f64() });
            }
        } else {
            rising = 0;
        }
    }
    Ok(Summation { terms, ratios, stop: StopReason::MaxOrder })
}

fn assemble<T: Real>(
    t: T,
    big_t: T,
    axis: GridAxis<T>,
    coords: Vec<T>,
    sum: Summation<T>,
    warnings: Vec<String>,
) -> SeriesResult<T> {
    let n = coords.len();
    let mut values = vec![0.0f64; n];
    for term in &sum.terms {
        for (v, x) in values.iter_mut().zip(&term.values) {
            *v += x.f64();
        }
    }
    let last = sum.terms.last().expect("term 0");
    let errors = last.values.iter().map(|v| v.abs() + c::<T>(1e-14)).collect();
    let mut clipped = 0.0f64;
    for v in values.iter_mut() {
        if *v < 0.0 {
            clipped = clipped.max(-*v);
            *v = 0.0;
        }
    }
    let density = DensityGrid {
        t,
        big_t,
        axis,
        coords,
        values: values.into_iter().map(c).collect(),
        errors,
        clipped: c(clipped),
    };
    SeriesResult { density, terms: sum.terms, ratios: sum.ratios, stop: sum.stop, warnings }
}

/// `p(t, T, x, y)` over the `x`-lattice for a fixed terminal point `y`.
///
/// The lattice step is also the spatial step of the engine; `y` must lie on
/// the lattice grid. The engine lattice is padded to `y ± half_width`.
pub fn parametrix_series<T: Real>(
    model: &SdeModel<T>,
    t: T,
    big_t: T,
    y: T,
    x_lattice: &Lattice<T>,
    config: &ParametrixConfig<T>,
) -> Result<SeriesResult<T>> {
    let warnings = check_inputs(model, t, big_t, config)?;
    let (yf, span) = (y.f64(), (big_t - t).f64());
    let (nodes, offset) = engine_lattice(x_lattice, yf, config.half_width.f64())?;
    let count = x_lattice.count;
    let fe = FrozenExponent::new(model, t, big_t, y)?;
    let (term0, _) = frozen_values(&fe, yf, x_lattice.start.f64(), x_lattice.step.f64(), count)?;
    let coords = x_lattice.nodes();
    let weights: Vec<f64> = coords.iter().map(|x| pbar(t, big_t, *x, y, &model.noise).f64()).collect();
    let iy = nodes.iter().position(|x| (x - yf).abs() < 1e-9 * (1.0 + yf.abs())).expect("y is a node");
    let engine = Engine::new(model, t.f64(), span, nodes, config.time_steps, Orientation::Backward(iy))?;
    let mut iter = engine.terms(Orientation::Backward(iy));
    let sum = sum_terms(term0, &weights, config, || iter.next_term()[offset..offset + count].to_vec())?;
    Ok(assemble(t, big_t, GridAxis::OverInitial { y }, coords, sum, warnings))
}

/// `p(t, T, x, y)` over the `y`-lattice for a fixed initial point `x`.
pub fn parametrix_forward<T: Real>(
    model: &SdeModel<T>,
    t: T,
    big_t: T,
    x: T,
    y_lattice: &Lattice<T>,
    config: &ParametrixConfig<T>,
) -> Result<SeriesResult<T>> {
    let warnings = check_inputs(model, t, big_t, config)?;
    let (xf, span) = (x.f64(), (big_t - t).f64());
    let (nodes, offset) = engine_lattice(y_lattice, xf, config.half_width.f64())?;
    let count = y_lattice.count;
    let coords = y_lattice.nodes();
    let term0 = coords.iter().map(|y| frozen_density_at(model, t, big_t, x, *y).map(|v| v.f64())).collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = coords.iter().map(|y| pbar(t, big_t, x, *y, &model.noise).f64()).collect();
    let ix = nodes.iter().position(|v| (v - xf).abs() < 1e-9 * (1.0 + xf.abs())).expect("x is a node");
    let engine = Engine::new(model, t.f64(), span, nodes, config.time_steps, Orientation::Forward(ix))?;
    let mut iter = engine.terms(Orientation::Forward(ix));
    let sum = sum_terms(term0, &weights, config, || iter.next_term()[offset..offset + count].to_vec())?;
    Ok(assemble(t, big_t, GridAxis::OverTerminal { x }, coords, sum, warnings))
}
