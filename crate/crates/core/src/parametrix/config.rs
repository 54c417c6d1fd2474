use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use crate::sde_model::SdeModel;

/// Truncation, resolution and regularity parameters of the parametrix series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "T: Real")]
pub struct ParametrixConfig<T> {
    /// Highest series order computed.
    pub k_max: usize,
    /// Stop once the weighted sup-norm of a term falls below this.
    pub tail_tol: T,
    /// Time nodes of the generic convolution quadrature.
    pub time_nodes: usize,
    /// Frequency-node budget for pointwise kernel evaluation.
    pub freq_nodes: usize,
    /// Cap `δ` in `ρ` and `H̄`.
    pub delta_cap: T,
    /// Exponent `ω` of `ρ_m`; `η(α∧1)/α` when unset.
    pub omega: Option<T>,
    /// Uniform time steps of the lattice engine.
    pub time_steps: usize,
    /// Minimal half-width of the engine lattice around `y`.
    pub half_width: T,
    /// Relative mesh-doubling tolerance of the generic convolution.
    pub convolve_tol: T,
    /// Range of the `(x, y)` probe grid for kernel-level comparisons.
    pub kernel_probe: [T; 2],
    /// Points per axis of the probe grid.
    pub probe_points: usize,
}

impl<T: Real> Default for ParametrixConfig<T> {
    fn default() -> Self {
        Self {
            k_max: 12,
            tail_tol: c(1e-7),
            time_nodes: 48,
            freq_nodes: 1 << 16,
            delta_cap: T::one(),
            omega: None,
            time_steps: 32,
            half_width: c(20.0),
            convolve_tol: c(1e-6),
            kernel_probe: [c(-5.0), c(5.0)],
            probe_points: 21,
        }
    }
}

impl<T: Real> ParametrixConfig<T> {
    /// Checks the invariants and returns advisory warnings.
    pub fn validate(&self, model: &SdeModel<T>) -> Result<Vec<String>> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.k_max < 1 {
            return bad("k_max must be at least 1".into());
        }
        if !(self.tail_tol > T::zero()) {
            return bad(format!("tail_tol = {} must be positive", self.tail_tol));
        }
        if self.time_nodes < 8 || self.time_nodes % 4 != 0 {
            return bad(format!("time_nodes = {} must be a multiple of 4, at least 8", self.time_nodes));
        }
        if self.freq_nodes < 64 {
            return bad(format!("freq_nodes = {} is below 64", self.freq_nodes));
        }
        if !(self.delta_cap > T::zero()) {
            return bad(format!("delta_cap = {} must be positive", self.delta_cap));
        }
        if self.time_steps < 2 {
            return bad("time_steps must be at least 2".into());
        }
        if !(self.half_width > T::zero()) || !(self.convolve_tol > T::zero()) {
            return bad("half_width and convolve_tol must be positive".into());
        }
        if !(self.kernel_probe[1] > self.kernel_probe[0]) || self.probe_points < 2 {
            return bad("kernel_probe must be an increasing range with at least 2 points".into());
        }
        let mut warnings = Vec::new();
        if let Some(w) = self.omega {
            if !(w > T::zero() && w <= T::one()) {
                return bad(format!("omega = {w} outside (0, 1]"));
            }
            let d = default_omega(model);
            if (w - d).abs() > c(1e-12) {
                warnings.push(format!("omega = {w} differs from the regularization exponent η(α∧1)/α = {d}"));
            }
        }
        Ok(warnings)
    }

    pub fn probe_grid(&self) -> Vec<T> {
        crate::sde_model::linspace(self.kernel_probe[0], self.kernel_probe[1], self.probe_points)
    }

    pub fn omega_for(&self, model: &SdeModel<T>) -> T {
        self.omega.unwrap_or_else(|| default_omega(model))
    }
}

fn default_omega<T: Real>(model: &SdeModel<T>) -> T {
    model.holder_index() / model.alpha()
}
