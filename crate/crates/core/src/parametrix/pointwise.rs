use std::f64::consts::PI;

use num_complex::Complex;

use super::ParametrixConfig;
use crate::error::{Error, Result};
use crate::fourier::FrequencyRule;
use crate::frozen_density::{pbar, FrozenExponent};
use crate::scalar::{c, Real};
use crate::sde_model::SdeModel;

/// Symbol `l_t(z, p) = i·b(t, z)·p + φ(σ(t, z)·p)` of the generator frozen at `z`.
pub fn generator_symbol<T: Real>(model: &SdeModel<T>, t: T, z: T, p: T) -> Result<Complex<T>> {
    let jump = model.noise.levy_exponent(model.sigma(t, z) * p)?;
    Ok(Complex::new(jump, model.drift(t, z) * p))
}

/// Parametrix kernel `H = (L_t(x) − L_t(y)) p̃(t, T, ·, y)` evaluated at `x`.
#[allow(non_snake_case)]
pub fn kernel_H<T: Real>(model: &SdeModel<T>, t: T, big_t: T, x: T, y: T, config: &ParametrixConfig<T>) -> Result<T> {
    let fe = FrozenExponent::new(model, t, big_t, y)?;
    if x == y {
        return Ok(T::zero());
    }
    let (sx, sy) = (model.sigma(t, x).f64(), model.sigma(t, y).f64());
    let db = (model.drift(t, x) - model.drift(t, y)).f64();
    let r = (y - x).f64() - fe.shift;
    let rule = FrequencyRule::new(&|p| fe.eval(p), r.abs())?;
    if rule.p.len() > config.freq_nodes {
        return Err(Error::Resolution(format!(
            "kernel needs {} frequency nodes, budget is {}",
            rule.p.len(),
            config.freq_nodes
        )));
    }
    let noise = &model.noise;
    let mut acc = 0.0;
    for (p, w) in rule.p.iter().zip(&rule.w) {
        let e = fe.eval(*p)?.exp();
        if e == 0.0 {
            continue;
        }
        let jump = if sx == sy { 0.0 } else { noise.levy_exponent_f64(sx * p)? - noise.levy_exponent_f64(sy * p)? };
        acc += w * e * (jump * (p * r).cos() + db * p * (p * r).sin());
    }
    Ok(c(acc / PI))
}

fn holder_factor<T: Real>(model: &SdeModel<T>, x: T, y: T, config: &ParametrixConfig<T>) -> T {
    config.delta_cap.min((y - x).abs().powf(model.holder_index()))
}

/// `H̄ = (δ ∧ |y−x|^{η(α∧1)}) / (T−t) · p̄`.
pub fn hbar<T: Real>(t: T, big_t: T, x: T, y: T, model: &SdeModel<T>, config: &ParametrixConfig<T>) -> T {
    holder_factor(model, x, y, config) / (big_t - t) * pbar(t, big_t, x, y, &model.noise)
}

/// `ρ = (δ ∧ |y−x|^{η(α∧1)}) · p̄`.
pub fn rho<T: Real>(t: T, big_t: T, x: T, y: T, model: &SdeModel<T>, config: &ParametrixConfig<T>) -> T {
    holder_factor(model, x, y, config) * pbar(t, big_t, x, y, &model.noise)
}

/// Majorant `ρ_m` of the `m`-th series term.
pub fn rho_m<T: Real>(t: T, big_t: T, x: T, y: T, m: usize, config: &ParametrixConfig<T>, model: &SdeModel<T>) -> T {
    let u = (big_t - t).f64();
    let w = config.omega_for(model).f64();
    let pb = pbar(t, big_t, x, y, &model.noise).f64();
    let r = rho(t, big_t, x, y, model, config).f64();
    let k = (m / 2) as i32;
    let fact = |n: i32| (1..=n).map(f64::from).product::<f64>();
    let ukw = u.powf(k as f64 * w);
    let v = if m % 2 == 0 {
        ukw / (fact(k) * w.powi(2 * k)) * (ukw * pb + pb + r)
    } else {
        ukw / (fact(k + 1) * w.powi(2 * k + 1)) * (u.powf((k + 1) as f64 * w) * pb + u.powf(w) * (pb + r) + r)
    };
    c(v)
}
