use serde::Serialize;

use super::{hbar, kernel_H, parametrix_series, ParametrixConfig};
use crate::error::{Error, Result};
use crate::frozen_density::{pbar, Lattice};
use crate::scalar::{c, Real};
use crate::sde_model::{PerturbationSequence, SdeModel};

/// Density, frozen-density and kernel ratios for one perturbation index.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct StabilityRow<T> {
    pub n: usize,
    pub delta_n: T,
    /// `max |p̃ − p̃_n| / (Δ_n p̄)`; `None` on an exact match.
    pub r_frozen: Option<T>,
    /// `max |H − H_n| / (Δ_n H̄)` over the probe grid.
    pub r_kernel: Option<T>,
    /// `max |p − p_n| / (Δ_n p̄)`.
    pub r_density: Option<T>,
    /// `max |p − p_n|`.
    pub sup_difference: T,
    pub exact_match: bool,
}

const MATCH_TOL: f64 = 1e-10;

fn kernel_ratio<T: Real>(
    base: &SdeModel<T>,
    other: &SdeModel<T>,
    t: T,
    big_t: T,
    config: &ParametrixConfig<T>,
) -> Result<(f64, f64)> {
    let probe = config.probe_grid();
    let (mut ratio, mut sup) = (0.0f64, 0.0f64);
    for x in &probe {
        for y in &probe {
            if x == y {
                continue;
            }
            let d = (kernel_H(base, t, big_t, *x, *y, config)? - kernel_H(other, t, big_t, *x, *y, config)?).abs();
            let bound = hbar(t, big_t, *x, *y, base, config);
            sup = sup.max(d.f64());
            if bound > T::zero() {
                ratio = ratio.max((d / bound).f64());
            }
        }
    }
    Ok((ratio, sup))
}

/// Compares the series density of the base model with each perturbed model.
///
/// Densities come from [`parametrix_series`] on `x_lattice`; the kernel ratio
/// is taken over the probe grid of `config`.
pub fn stability_ratio<T: Real>(
    seq: &PerturbationSequence<T>,
    t: T,
    big_t: T,
    y: T,
    x_lattice: &Lattice<T>,
    config: &ParametrixConfig<T>,
) -> Result<Vec<StabilityRow<T>>> {
    let base = parametrix_series(&seq.base, t, big_t, y, x_lattice, config)?;
    let weights: Vec<f64> = base.density.coords.iter().map(|x| pbar(t, big_t, *x, y, &seq.base.noise).f64()).collect();
    let mut rows = Vec::with_capacity(seq.indices.len());
    for ((n, model), est) in seq.indices.iter().zip(&seq.perturbed).zip(&seq.measured_delta) {
        let other = parametrix_series(model, t, big_t, y, x_lattice, config)?;
        let mut sup = 0.0f64;
        let (mut dens, mut frozen) = (0.0f64, 0.0f64);
        for (i, w) in weights.iter().enumerate() {
            let d = (base.density.values[i] - other.density.values[i]).abs().f64();
            let d0 = (base.terms[0].values[i] - other.terms[0].values[i]).abs().f64();
            sup = sup.max(d);
            dens = dens.max(d / w);
            frozen = frozen.max(d0 / w);
        }
        let delta = est.delta.f64();
        if delta == 0.0 {
            if sup > MATCH_TOL {
                return Err(Error::Inconsistency(format!(
                    "Δ_n = 0 at n = {n} but the densities differ by {sup:.3e}"
                )));
            }
            rows.push(StabilityRow {
                n: *n,
                delta_n: T::zero(),
                r_frozen: None,
                r_kernel: None,
                r_density: None,
                sup_difference: c(sup),
                exact_match: true,
            });
            continue;
        }
        let (kernel, _) = kernel_ratio(&seq.base, model, t, big_t, config)?;
        rows.push(StabilityRow {
            n: *n,
            delta_n: est.delta,
            r_frozen: Some(c(frozen / delta)),
            r_kernel: Some(c(kernel / delta)),
            r_density: Some(c(dens / delta)),
            sup_difference: c(sup),
            exact_match: false,
        });
    }
    Ok(rows)
}
