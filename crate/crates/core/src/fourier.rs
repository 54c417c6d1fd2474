//! Quadrature of even Fourier integrals `(1/π) ∫_0^P a(p) cos(p r) dp`.

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// `ln 10⁻¹⁶`: the exponent below which `e^ψ` is treated as zero.
pub(crate) const LOG_CUTOFF: f64 = -36.841361487904734;

/// Gauss–Legendre nodes on `[0, P]`: geometric panels towards the origin
/// (where symbols have a `|p|^α` cusp), uniform panels beyond.
#[derive(Clone, Debug)]
pub struct FrequencyRule {
    pub p: Vec<f64>,
    pub w: Vec<f64>,
    pub cutoff: f64,
}

/// Smallest `P` (up to bisection accuracy) with `ψ(P) + ln(1 + P²) < ln 10⁻¹⁶`,
/// assuming `ψ` is non-increasing in `|p|`.
pub fn find_cutoff(psi: &dyn Fn(f64) -> Result<f64>) -> Result<f64> {
    let below = |p: f64| -> Result<bool> { Ok(psi(p)? + (1.0 + p * p).ln() < LOG_CUTOFF) };
    let mut hi = 1.0;
    while !below(hi)? {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Resolution(
                "characteristic function does not decay below 1e-16 before |p| = 1e9".into(),
            ));
        }
    }
    let mut lo = hi / 2.0;
    if hi == 1.0 {
        lo = 0.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if below(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

impl FrequencyRule {
    /// Rule resolving oscillations `cos(p r)` for `|r| ≤ r_max`.
    pub fn new(psi: &dyn Fn(f64) -> Result<f64>, r_max: f64) -> Result<Self> {
        let cutoff = find_cutoff(psi)?;
        Ok(Self::with_cutoff(cutoff, r_max))
    }

    pub fn with_cutoff(cutoff: f64, r_max: f64) -> Self {
        let gl = GaussLegendre::<f64>::new(16);
        let width = (std::f64::consts::PI / (r_max.abs() + 1.0)).min(cutoff / 32.0);
        let mut edges = vec![0.0];
        let mut e = width * 2f64.powi(-40);
        while e < width {
            edges.push(e);
            e *= 2.0;
        }
        let n = ((cutoff - width) / width).ceil().max(1.0) as usize;
        let step = (cutoff - width) / n as f64;
        for i in 0..=n {
            edges.push(width + step * i as f64);
        }
        let (mut p, mut w) = (Vec::new(), Vec::new());
        for win in edges.windows(2) {
            gl.push_mapped(win[0], win[1], &mut p, &mut w);
        }
        Self { p, w, cutoff }
    }
}

/// `out[j] = Σ_k a_k cos(p_k r_j)` and `Σ_k b_k sin(p_k r_j)` for `r_j = r0 + j·dr`,
/// using rotation recurrences re-seeded every 256 points.
pub fn trig_sums(p: &[f64], a: &[f64], b: Option<&[f64]>, r0: f64, dr: f64, n: usize) -> Vec<f64> {
    const RESEED: usize = 256;
    let mut out = vec![0.0; n];
    for k in 0..p.len() {
        let (ak, bk) = (a[k], b.map_or(0.0, |b| b[k]));
        if ak == 0.0 && bk == 0.0 {
            continue;
        }
        let (sd, cd) = (p[k] * dr).sin_cos();
        let mut j0 = 0;
        while j0 < n {
            let (mut s, mut c) = (p[k] * (r0 + dr * j0 as f64)).sin_cos();
            let end = (j0 + RESEED).min(n);
            for o in &mut out[j0..end] {
                *o += ak * c + bk * s;
                let cn = c * cd - s * sd;
                s = s * cd + c * sd;
                c = cn;
            }
            j0 = end;
        }
    }
    out
}
