use super::ParametrixConfig;
use crate::error::{Error, Result};
use crate::frozen_density::Lattice;
use crate::quadrature::{adaptive, graded_mesh, GaussLegendre, Tolerance};
use crate::scalar::{c, Real};

/// Values of `f ⊗ g` on a lattice with the mesh-doubling discrepancy.
#[derive(Clone, Debug, PartialEq)]
pub struct Convolution<T> {
    pub values: Vec<T>,
    /// Largest change when the number of time panels is doubled.
    pub doubling_difference: T,
}

const SPACE_TOL: Tolerance = Tolerance { abs: 1e-14, rel: 1e-11, max_panels: 6000 };
const CORE: f64 = 1024.0;

/// `∫_ℝ F(z) dz` with geometric breakpoints around `a` and `b` and mapped tails.
fn space_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    let mut edges = Vec::with_capacity(170);
    for centre in [a, b] {
        edges.push(centre);
        for k in -30..=10 {
            let d = 2f64.powi(k);
            edges.push(centre - d);
            edges.push(centre + d);
        }
    }
    let (lo, hi) = (a.min(b) - CORE, a.max(b) + CORE);
    edges.push(lo);
    edges.push(hi);
    edges.retain(|e| *e >= lo && *e <= hi);
    edges.sort_by(|x, y| x.total_cmp(y));
    edges.dedup();
    let (core, _) = adaptive(f, &edges, SPACE_TOL)?;
    let tails = [0.0, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0];
    let (right, _) = adaptive(|v: f64| f(hi + (1.0 - v) / v) / (v * v), &tails, SPACE_TOL)?;
    let (left, _) = adaptive(|v: f64| f(lo - (1.0 - v) / v) / (v * v), &tails, SPACE_TOL)?;
    Ok(core + left + right)
}

fn time_integral(
    panels: usize,
    t: f64,
    big_t: f64,
    gl: &GaussLegendre<f64>,
    slice: &mut dyn FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let mesh = graded_mesh(panels, 2.0);
    let mut acc = 0.0;
    for w in mesh.windows(2) {
        let (a, b) = (t + (big_t - t) * w[0], t + (big_t - t) * w[1]);
        for (u, wt) in gl.nodes.iter().zip(&gl.weights) {
            acc += 0.5 * (b - a) * wt * slice(0.5 * (a + b) + 0.5 * (b - a) * u)?;
        }
    }
    Ok(acc)
}

/// `(f ⊗ g)(t, T, x, y) = ∫_t^T du ∫ f(t, u, x, z) g(u, T, z, y) dz` at each
/// lattice point `x`.
///
/// Time uses Gauss–Legendre panels on a mesh graded quadratically towards both
/// endpoints (`time_nodes/4` panels of 4 nodes), checked against twice as many
/// panels. Space is integrated adaptively over the whole line.
pub fn space_time_convolve<T: Real, F, G>(
    f: F,
    g: G,
    t: T,
    big_t: T,
    x_lattice: &Lattice<T>,
    y: T,
    config: &ParametrixConfig<T>,
) -> Result<Convolution<T>>
where
    F: Fn(T, T, T, T) -> T,
    G: Fn(T, T, T, T) -> T,
{
    if !(big_t > t) {
        return Err(Error::Precondition(format!("need t < T, got t = {t}, T = {big_t}")));
    }
    let gl = GaussLegendre::<f64>::new(4);
    let panels = (config.time_nodes / 4).max(2);
    let (t0, t1, yf) = (t.f64(), big_t.f64(), y.f64());
    let mut values = Vec::with_capacity(x_lattice.count);
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for x in x_lattice.nodes() {
        let xf = x.f64();
        let mut slice = |u: f64| -> Result<f64> {
            let uu: T = c(u);
            let integrand = |z: f64| -> f64 {
                let zz: T = c(z);
                (f(t, uu, x, zz) * g(uu, big_t, zz, y)).f64()
            };
            space_integral(&integrand, xf, yf)
        };
        let coarse = time_integral(panels, t0, t1, &gl, &mut slice)?;
        let fine = time_integral(2 * panels, t0, t1, &gl, &mut slice)?;
        worst = worst.max((fine - coarse).abs());
        scale = scale.max(fine.abs());
        values.push(c(fine));
    }
    if worst > config.convolve_tol.f64() * scale.max(1e-300) && worst > 1e-13 {
        return Err(Error::Quadrature(format!(
            "time mesh doubling changed the convolution by {worst:.3e} (relative tolerance {:.1e})",
            config.convolve_tol
        )));
    }
    Ok(Convolution { values, doubling_difference: c(worst) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cauchy(r: f64, s: f64) -> f64 {
        s / (PI * (s * s + r * r))
    }

    #[test]
    fn unit_mass_kernel_against_constant() {
        let cfg = ParametrixConfig::<f64>::default();
        let lat = Lattice { start: -2.0, step: 1.0, count: 5 };
        let out = space_time_convolve(|_, _, x, z| cauchy(z - x, 1.0), |_, _, _, _| 1.0, 0.5, 2.0, &lat, 0.0, &cfg).unwrap();
        for v in &out.values {
            assert!((v - 1.5).abs() < 1e-9, "{v}");
        }
        let zero = space_time_convolve(|_, _, _, _| 0.0, |_, _, _, _| 1.0, 0.0, 1.0, &lat, 0.0, &cfg).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cauchy_widths_add() {
        let cfg = ParametrixConfig::<f64>::default();
        let lat = Lattice { start: -3.0, step: 1.5, count: 5 };
        let y = 0.4;
        let f = |t: f64, u: f64, x: f64, z: f64| cauchy(z - x, u - t);
        let g = |u: f64, big_t: f64, z: f64, y: f64| cauchy(y - z, big_t - u);
        let out = space_time_convolve(f, g, 0.0, 1.0, &lat, y, &cfg).unwrap();
        for (x, v) in lat.nodes().iter().zip(&out.values) {
            assert!((v - cauchy(y - x, 1.0)).abs() < 1e-6, "x={x}: {v}");
        }
    }

    #[test]
    fn bilinear() {
        let cfg = ParametrixConfig::<f64>::default();
        let lat = Lattice { start: -1.0, step: 1.0, count: 3 };
        let f = |_: f64, u: f64, x: f64, z: f64| (-(z - x).powi(2)).exp() * (1.0 + u);
        let g = |_: f64, _: f64, z: f64, y: f64| 1.0 / (1.0 + (z - y).powi(2));
        let a = space_time_convolve(f, g, 0.0, 1.0, &lat, 0.5, &cfg).unwrap();
        let b = space_time_convolve(|t, u, x, z| -2.5 * f(t, u, x, z), g, 0.0, 1.0, &lat, 0.5, &cfg).unwrap();
        for (p, q) in a.values.iter().zip(&b.values) {
            assert!((q + 2.5 * p).abs() < 1e-10 * p.abs().max(1.0));
        }
    }

    #[test]
    fn unresolved_time_singularity_is_reported() {
        let cfg = ParametrixConfig { time_nodes: 8, convolve_tol: 1e-12, ..ParametrixConfig::<f64>::default() };
        let lat = Lattice { start: 0.0, step: 1.0, count: 1 };
        let f = |t: f64, u: f64, x: f64, z: f64| cauchy(z - x, 1.0) * (u - t).powf(-0.9);
        assert!(matches!(
            space_time_convolve(f, |_, _, _, _| 1.0, 0.0, 1.0, &lat, 0.0, &cfg),
            Err(Error::Quadrature(_))
        ));
    }
}
