//! Lattice engine for the parametrix series of time-homogeneous models.
//!
//! Kernels are tabulated once per time step in the frame scaled by the frozen
//! scale `σ_f`: every kernel `K(x_s → x_f)` is `k((x_f − x_s)/σ_f − β_f τ)/σ_f`
//! times a coefficient depending on the two endpoints, where `β_f = b_f/σ_f`.
//! The tables hold antiderivatives so that cell integrals are differences.
//! Time integrals over a step are done exactly in frequency space against
//! the hat functions of the uniform time mesh.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::levy_noise::TemperedStableSpec;
use crate::scalar::Real;
use crate::sde_model::SdeModel;

const RHO_NODES: usize = 12;
const MAX_FFT: usize = 1 << 18;

/// Antiderivative of a scaled kernel on `r_j = r0 + j·dr`.
struct Table {
    r0: f64,
    dr: f64,
    c: Vec<f64>,
}

impl Table {
    fn at(&self, r: f64) -> f64 {
        let pos = ((r - self.r0) / self.dr).clamp(0.0, (self.c.len() - 1) as f64);
        let i = (pos as usize).min(self.c.len() - 2);
        let f = pos - i as f64;
        self.c[i] + f * (self.c[i + 1] - self.c[i])
    }

    fn cell(&self, lo: f64, width: f64) -> f64 {
        self.at(lo + width) - self.at(lo)
    }
}

/// Time weight applied to `e^{τφ}` in frequency space.
#[derive(Clone, Copy, Debug)]
enum Mult {
    /// `∫` over step `m` (τ ∈ [(m−1)Δ, mΔ]) against the left or right hat.
    Step { m: usize, right: bool },
    /// Point value at `τ`.
    Point(f64),
    /// Average over `τ ∈ [0, Δ]`.
    Avg,
}

impl Mult {
    fn weight(self, phi: f64, delta: f64) -> f64 {
        let x = delta * phi;
        match self {
            Mult::Point(tau) => (tau * phi).exp(),
            Mult::Avg => {
                if x == 0.0 {
                    1.0
                } else {
                    x.exp_m1() / x
                }
            }
            Mult::Step { m, right } => {
                let g = if x.abs() < 1e-2 {
                    if right {
                        0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x / 144.0)))
                    } else {
                        0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0)))
                    }
                } else if right {
                    (x.exp() * (x - 1.0) + 1.0) / (x * x)
                } else {
                    (x.exp_m1() - x) / (x * x)
                };
                delta * ((m - 1) as f64 * delta * phi).exp() * g
            }
        }
    }

    /// Mass of the Dirac part of `φ·weight` at `τ = 0`, removed from the tables.
    fn dirac(self, delta: f64) -> f64 {
        match self {
            Mult::Step { m: 1, right: false } => -1.0,
            Mult::Avg => -1.0 / delta,
            _ => 0.0,
        }
    }

    /// Time at which the drift displacement is evaluated.
    fn tau(self, delta: f64) -> f64 {
        match self {
            Mult::Point(tau) => tau,
            Mult::Avg => 0.5 * delta,
            Mult::Step { m, right } => (m - 1) as f64 * delta + if right { 2.0 } else { 1.0 } * delta / 3.0,
        }
    }
}

/// Tables for one time weight.
struct KernelTables {
    k: Table,
    d: Option<Table>,
    r: Vec<Table>,
    tau: f64,
}

/// Row-major square matrix.
pub(crate) struct Mat {
    n: usize,
    a: Vec<f64>,
}

impl Mat {
    fn zeros(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    /// `out += M v`.
    fn mul_add(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += Mᵀ v`.
    fn tmul_add(&self, v: &[f64], out: &mut [f64]) {
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            let row = &self.a[i * self.n..(i + 1) * self.n];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }
}

/// Spectral frame shared by all tables of one engine.
struct Frame {
    m: usize,
    dr: f64,
    dq: f64,
    delta: f64,
    phi: Vec<f64>,
    /// `φ(ρ_j q) − ρ_j^α φ(q)` on the Chebyshev nodes `ρ_j`.
    psi: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl Frame {
    fn q(&self, k: usize) -> f64 {
        if k <= self.m / 2 {
            k as f64 * self.dq
        } else {
            (k as f64 - self.m as f64) * self.dq
        }
    }

    fn half_index(&self, k: usize) -> usize {
        if k <= self.m / 2 {
            k
        } else {
            self.m - k
        }
    }

    /// Antiderivatives of the kernels with symbols `sym[i](q)`, each either
    /// even and real or odd and imaginary.
    fn antiderivatives(&self, syms: Vec<Box<dyn Fn(usize) -> Complex<f64> + '_>>) -> Vec<Table> {
        let m = self.m;
        let scale = 1.0 / (m as f64 * self.dr);
        let r0 = -((m / 2) as f64) * self.dr;
        let mut out = Vec::with_capacity(syms.len());
        for pair in syms.chunks(2) {
            let mut buf = vec![Complex::new(0.0, 0.0); m];
            let mut mass = [0.0; 2];
            for (slot, s) in pair.iter().enumerate() {
                let unit = if slot == 0 { Complex::new(1.0, 0.0) } else { Complex::new(0.0, 1.0) };
                mass[slot] = s(0).re;
                for k in 1..m {
                    if k == m / 2 {
                        continue;
                    }
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    // ∫ e^{−iqr} dr = e^{−iqr}/(−iq).
                    let v = s(k) * Complex::new(0.0, 1.0 / self.q(k));
                    buf[k] += unit * v * sign;
                }
            }
            self.fft.process(&mut buf);
            for (slot, _) in pair.iter().enumerate() {
                let c: Vec<f64> = buf
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let periodic = if slot == 0 { v.re } else { v.im };
                        scale * (periodic + mass[slot] * (r0 + j as f64 * self.dr))
                    })
                    .collect();
                out.push(Table { r0, dr: self.dr, c });
            }
        }
        out
    }
}

/// Barycentric Chebyshev interpolation in `ρ`.
struct Cheb {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Cheb {
    fn new(lo: f64, hi: f64, n: usize) -> Self {
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let th = |j: usize| std::f64::consts::PI * (j as f64 + 0.5) / n as f64;
        let nodes = (0..n).map(|j| mid + half * th(j).cos()).collect();
        let weights = (0..n).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } * th(j).sin()).collect();
        Self { nodes, weights }
    }

    fn basis(&self, x: f64, out: &mut [f64]) {
        if let Some(j) = self.nodes.iter().position(|n| *n == x) {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[j] = 1.0;
            return;
        }
        let mut total = 0.0;
        for ((o, n), w) in out.iter_mut().zip(&self.nodes).zip(&self.weights) {
            *o = w / (x - n);
            total += *o;
        }
        out.iter_mut().for_each(|o| *o /= total);
    }
}

/// Discretized kernels on a uniform space-time lattice.
pub(crate) struct Engine {
    pub nodes: Vec<f64>,
    h: f64,
    steps: usize,
    sig: Vec<f64>,
    beta: Vec<f64>,
    drift: Vec<f64>,
    /// `ρ_{sf}^α − 1`, row-major over (source, frozen).
    coef_k: Vec<f64>,
    /// Chebyshev basis of `ρ_{sf}`, `RHO_NODES` per pair.
    cheb: Vec<f64>,
    has_drift: bool,
    frame: Option<Frame>,
    /// Kernel cell integrals per step: `(left, right)` hats.
    e: Vec<(Mat, Mat)>,
    /// Frozen-density cell integrals per step, backward orientation only.
    p: Vec<(Mat, Mat)>,
}

/// Which endpoint is fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Orientation {
    /// Fixed terminal node; values over initial nodes.
    Backward(usize),
    /// Fixed initial node; values over terminal nodes.
    Forward(usize),
}

impl Engine {
    pub fn new<T: Real>(
        model: &SdeModel<T>,
        t: f64,
        span: f64,
        nodes: Vec<f64>,
        steps: usize,
        orientation: Orientation,
    ) -> Result<Self> {
        let n = nodes.len();
        let h = nodes[1] - nodes[0];
        let tt = T::from(t).unwrap();
        let sig: Vec<f64> = nodes.iter().map(|x| model.sigma(tt, T::from(*x).unwrap()).f64()).collect();
        let drift: Vec<f64> = nodes.iter().map(|x| model.drift(tt, T::from(*x).unwrap()).f64()).collect();
        if sig.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Assumption {
                hypothesis: "uniform ellipticity".into(),
                witness: "engine lattice".into(),
                detail: "σ must be positive and finite on the lattice".into(),
            });
        }
        let alpha = model.alpha().f64();
        let has_drift = drift.iter().any(|b| *b != drift[0]);
        if alpha <= 1.0 && drift.iter().any(|b| *b != 0.0) {
            return Err(Error::Assumption {
                hypothesis: "drift must vanish when alpha <= 1".into(),
                witness: "engine lattice".into(),
                detail: "non-zero drift".into(),
            });
        }
        let beta: Vec<f64> = drift.iter().zip(&sig).map(|(b, s)| b / s).collect();
        let (smin, smax) = sig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(*s), b.max(*s)));
        let mut coef_k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                coef_k[i * n + j] = (sig[i] / sig[j]).powf(alpha) - 1.0;
            }
        }
        let tempered = !matches!(model.noise.tempering, crate::levy_noise::Tempering::None);
        let need_r = tempered && smax > smin * (1.0 + 1e-12);
        let trivial = !has_drift && smax == smin;
        let mut engine = Self {
            nodes,
            h,
            steps,
            sig,
            beta,
            drift,
            coef_k,
            cheb: Vec::new(),
            has_drift,
            frame: None,
            e: Vec::new(),
            p: Vec::new(),
        };
        if trivial {
            return Ok(engine);
        }
        let cheb = need_r.then(|| Cheb::new(smin / smax, smax / smin, RHO_NODES));
        if let Some(ch) = &cheb {
            engine.cheb = vec![0.0; n * n * RHO_NODES];
            for i in 0..n {
                for j in 0..n {
                    let k = (i * n + j) * RHO_NODES;
                    ch.basis(engine.sig[i] / engine.sig[j], &mut engine.cheb[k..k + RHO_NODES]);
                }
            }
        }
        let delta = span / steps as f64;
        let bmax = engine.beta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let extent = (engine.nodes[n - 1] - engine.nodes[0] + h) / smin + bmax * span + h / smin;
        let half = 1.5 * extent;
        let dr = (h / (8.0 * smax)).min(delta.powf(1.0 / alpha) / 4.0);
        let m = ((2.0 * half / dr).ceil() as usize).next_power_of_two().max(1024);
        if m > MAX_FFT {
            return Err(Error::Resolution(format!(
                "kernel tables need {m} points (limit {MAX_FFT}); use a coarser lattice or more time steps"
            )));
        }
        let dr = 2.0 * half / m as f64;
        let dq = 2.0 * std::f64::consts::PI / (m as f64 * dr);
        let noise: &TemperedStableSpec<T> = &model.noise;
        let phi: Vec<f64> =
            (0..=m / 2).map(|k| noise.levy_exponent_f64(k as f64 * dq)).collect::<Result<_>>()?;
        let psi = match &cheb {
            Some(ch) => ch
                .nodes
                .iter()
                .map(|rho| {
                    (0..=m / 2)
                        .map(|k| Ok(noise.levy_exponent_f64(rho * k as f64 * dq)? - rho.powf(alpha) * phi[k]))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let fft = FftPlanner::new().plan_fft_forward(m);
        engine.frame = Some(Frame { m, dr, dq, delta, phi, psi, fft });

        for step in 1..=steps {
            let l = engine.kernel_matrix(Mult::Step { m: step, right: false });
            let r = engine.kernel_matrix(Mult::Step { m: step, right: true });
            engine.e.push((l, r));
            if matches!(orientation, Orientation::Backward(_)) {
                let l = engine.density_matrix(Mult::Step { m: step, right: false });
                let r = engine.density_matrix(Mult::Step { m: step, right: true });
                engine.p.push((l, r));
            }
        }
        Ok(engine)
    }

    pub fn is_trivial(&self) -> bool {
        self.frame.is_none()
    }

    fn frame(&self) -> &Frame {
        self.frame.as_ref().expect("non-trivial engine")
    }

    fn kernel_tables(&self, mult: Mult) -> KernelTables {
        let f = self.frame();
        let dirac = mult.dirac(f.delta);
        let w = |k: usize| mult.weight(f.phi[f.half_index(k)], f.delta);
        let mut syms: Vec<Box<dyn Fn(usize) -> Complex<f64> + '_>> = Vec::new();
        syms.push(Box::new(move |k| Complex::new(f.phi[f.half_index(k)] * w(k) - dirac, 0.0)));
        if self.has_drift {
            syms.push(Box::new(move |k| Complex::new(0.0, f.q(k) * w(k))));
        }
        for psi in &f.psi {
            syms.push(Box::new(move |k| Complex::new(psi[f.half_index(k)] * w(k), 0.0)));
        }
        let mut tables = f.antiderivatives(syms).into_iter();
        let k = tables.next().expect("jump table");
        let d = if self.has_drift { tables.next() } else { None };
        KernelTables { k, d, r: tables.collect(), tau: mult.tau(f.delta) }
    }

    fn density_table(&self, mult: Mult) -> (Table, f64) {
        let f = self.frame();
        let syms: Vec<Box<dyn Fn(usize) -> Complex<f64> + '_>> =
            vec![Box::new(move |k| Complex::new(mult.weight(f.phi[f.half_index(k)], f.delta), 0.0))];
        (f.antiderivatives(syms).pop().expect("one table"), mult.tau(f.delta))
    }

    /// Lower bound of the scaled cell `(x_f − x_s ∓ h/2)` around the integration node.
    fn lower(&self, s: usize, f: usize, tau: f64) -> f64 {
        (self.nodes[f] - self.nodes[s] - 0.5 * self.h) / self.sig[f] - self.beta[f] * tau
    }

    /// Cell integral of the kernel from source `s` to frozen target `f`
    /// over the cell around whichever endpoint is integrated.
    fn kernel_entry(&self, t: &KernelTables, s: usize, f: usize) -> f64 {
        if s == f {
            return 0.0;
        }
        let n = self.nodes.len();
        let lo = self.lower(s, f, t.tau);
        let width = self.h / self.sig[f];
        let mut v = self.coef_k[s * n + f] * t.k.cell(lo, width);
        if let Some(d) = &t.d {
            v += (self.drift[s] - self.drift[f]) / self.sig[f] * d.cell(lo, width);
        }
        if !t.r.is_empty() {
            let base = (s * n + f) * RHO_NODES;
            for (j, r) in t.r.iter().enumerate() {
                v += self.cheb[base + j] * r.cell(lo, width);
            }
        }
        v
    }

    fn kernel_matrix(&self, mult: Mult) -> Mat {
        let t = self.kernel_tables(mult);
        let n = self.nodes.len();
        let mut m = Mat::zeros(n);
        for s in 0..n {
            for f in 0..n {
                m.a[s * n + f] = self.kernel_entry(&t, s, f);
            }
        }
        m
    }

    fn density_matrix(&self, mult: Mult) -> Mat {
        let (t, tau) = self.density_table(mult);
        let n = self.nodes.len();
        let mut m = Mat::zeros(n);
        for s in 0..n {
            for f in 0..n {
                m.a[s * n + f] = t.cell(self.lower(s, f, tau), self.h / self.sig[f]);
            }
        }
        m
    }

    /// Cell averages of the kernel into (backward) or out of (forward) a fixed node.
    fn kernel_vector(&self, mult: Mult, orientation: Orientation) -> Vec<f64> {
        let t = self.kernel_tables(mult);
        let n = self.nodes.len();
        (0..n)
            .map(|i| {
                let v = match orientation {
                    Orientation::Backward(y) => self.kernel_entry(&t, i, y),
                    Orientation::Forward(x) => self.kernel_entry(&t, x, i),
                };
                v / self.h
            })
            .collect()
    }

    fn density_vector(&self, mult: Mult, x: usize) -> Vec<f64> {
        let (t, tau) = self.density_table(mult);
        (0..self.nodes.len()).map(|f| t.cell(self.lower(x, f, tau), self.h / self.sig[f]) / self.h).collect()
    }

    /// Successive series terms `k = 1, 2, …` on the lattice.
    pub fn terms(&self, orientation: Orientation) -> TermIter<'_> {
        let n = self.nodes.len();
        let steps = self.steps;
        if self.is_trivial() {
            return TermIter { engine: self, orientation, state: vec![vec![0.0; n]; steps + 1], first: true };
        }
        let delta = self.frame().delta;
        let mut state = vec![vec![0.0; n]; steps + 1];
        match orientation {
            Orientation::Backward(_) => {
                // state[a] = H(s_a, T, ·, y); the last entry makes the linear
                // interpolant over the final step carry the exact average.
                for a in 0..steps {
                    state[a] = self.kernel_vector(Mult::Point((steps - a) as f64 * delta), orientation);
                }
                let avg = self.kernel_vector(Mult::Avg, orientation);
                state[steps] = avg.iter().zip(&state[steps - 1]).map(|(a, b)| 2.0 * a - b).collect();
            }
            Orientation::Forward(x) => {
                // state[n] = p̃(t, u_n, x, ·); the same device on the first step.
                for k in 1..=steps {
                    state[k] = self.density_vector(Mult::Point(k as f64 * delta), x);
                }
                let avg = self.density_vector(Mult::Avg, x);
                state[0] = avg.iter().zip(&state[1]).map(|(a, b)| 2.0 * a - b).collect();
            }
        }
        TermIter { engine: self, orientation, state, first: true }
    }
}

/// Iterator over lattice series terms of order `1, 2, …`.
pub(crate) struct TermIter<'a> {
    engine: &'a Engine,
    orientation: Orientation,
    /// Backward: `H^{(k)}(s_a, T, ·, y)`; forward: `p̃ ⊗ H^{(k−1)}(t, u_n, x, ·)`.
    state: Vec<Vec<f64>>,
    first: bool,
}

impl TermIter<'_> {
    pub fn next_term(&mut self) -> Vec<f64> {
        let e = self.engine;
        let n = e.nodes.len();
        let steps = e.steps;
        if e.is_trivial() {
            return vec![0.0; n];
        }
        match self.orientation {
            Orientation::Backward(_) => {
                if !self.first {
                    let mut next = vec![vec![0.0; n]; steps + 1];
                    for (a, out) in next.iter_mut().enumerate().take(steps) {
                        for b in a..steps {
                            let (l, r) = &e.e[b - a];
                            l.mul_add(&self.state[b], out);
                            r.mul_add(&self.state[b + 1], out);
                        }
                    }
                    self.state = next;
                }
                self.first = false;
                let mut term = vec![0.0; n];
                for b in 0..steps {
                    let (l, r) = &e.p[b];
                    l.mul_add(&self.state[b], &mut term);
                    r.mul_add(&self.state[b + 1], &mut term);
                }
                term
            }
            Orientation::Forward(_) => {
                let mut next = vec![vec![0.0; n]; steps + 1];
                for (k, out) in next.iter_mut().enumerate().skip(1) {
                    for i in 0..k {
                        let (l, r) = &e.e[k - i - 1];
                        r.tmul_add(&self.state[i], out);
                        l.tmul_add(&self.state[i + 1], out);
                    }
                }
                self.state = next;
                self.first = false;
                self.state[steps].clone()
            }
        }
    }
}
