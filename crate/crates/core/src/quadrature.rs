//! Gauss rules and a globally adaptive Gauss–Kronrod integrator.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::{c, Real};

/// Gauss–Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    /// Builds the `n`-point rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0f64; n];
        let mut weights = vec![0.0f64; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                if n == 1 {
                    p1 = x;
                    p0 = 1.0;
                }
                dp = nf * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self {
            nodes: nodes.into_iter().map(c).collect(),
            weights: weights.into_iter().map(c).collect(),
        }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        let half = (b - a) * c(0.5);
        let mid = (b + a) * c(0.5);
        let mut acc = T::zero();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + *w * f(mid + half * *x);
        }
        acc * half
    }

    /// Nodes and weights mapped onto `[a, b]`, appended to the output vectors.
    pub fn push_mapped(&self, a: T, b: T, nodes: &mut Vec<T>, weights: &mut Vec<T>) {
        let half = (b - a) * c(0.5);
        let mid = (b + a) * c(0.5);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            nodes.push(mid + half * *x);
            weights.push(*w * half);
        }
    }
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One 15-point Kronrod panel: (integral, error estimate).
pub fn gk15<T: Real, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> (T, T) {
    let half = (b - a) * c(0.5);
    let mid = (a + b) * c(0.5);
    let fc = f(mid);
    let mut kron = fc * c(WGK[7]);
    let mut gauss = fc * c(WG[3]);
    for j in 0..7 {
        let dx = half * c(XGK[j]);
        let s = f(mid - dx) + f(mid + dx);
        kron = kron + s * c(WGK[j]);
        if j % 2 == 1 {
            gauss = gauss + s * c(WG[j / 2]);
        }
    }
    ((kron * half), ((kron - gauss) * half).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Tolerances for [`adaptive`].
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-15, rel: 1e-12, max_panels: 2000 }
    }
}

/// Globally adaptive Gauss–Kronrod quadrature over the breakpoints `edges`.
///
/// Returns the integral and the summed error estimate. Fails when the panel
/// budget is exhausted before the tolerance is met or the integrand is not finite.
pub fn adaptive<T: Real, F: FnMut(T) -> T>(mut f: F, edges: &[T], tol: Tolerance) -> Result<(T, T)> {
    let mut heap = BinaryHeap::new();
    let (mut total, mut err) = (0.0f64, 0.0f64);
    for w in edges.windows(2) {
        if w[1] == w[0] {
            continue;
        }
        let (v, e) = gk15(&mut f, w[0], w[1]);
        let (v, e) = (v.f64(), e.f64());
        total += v;
        err += e;
        heap.push(Panel { a: w[0].f64(), b: w[1].f64(), value: v, err: e });
    }
    if !total.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand value (sum {total})")));
    }
    while err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() >= tol.max_panels {
            return Err(Error::Quadrature(format!(
                "panel budget exhausted: estimate {total:e}, error {err:e}"
            )));
        }
        let p = heap.pop().expect("non-empty heap");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // Cannot split further in floating point.
            heap.push(Panel { err: 0.0, ..p });
            err -= p.err;
            continue;
        }
        let (v1, e1) = gk15(&mut f, c::<T>(p.a), c(m));
        let (v2, e2) = gk15(&mut f, c::<T>(m), c(p.b));
        let (v1, e1, v2, e2) = (v1.f64(), e1.f64(), v2.f64(), e2.f64());
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.err;
        if !total.is_finite() {
            return Err(Error::Quadrature("non-finite integrand value".into()));
        }
        heap.push(Panel { a: p.a, b: m, value: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, value: v2, err: e2 });
    }
    // Re-sum for a cleaner result than the running total.
    let total: f64 = heap.iter().map(|p| p.value).sum();
    Ok((c(total), c(err.max(0.0))))
}

/// Two-sided graded mesh on [0, 1] with `n` panels, clustered at both ends
/// with grading exponent `exponent`.
pub fn graded_mesh(n: usize, exponent: f64) -> Vec<f64> {
    assert!(n >= 2);
    (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            if s <= 0.5 {
                0.5 * (2.0 * s).powf(exponent)
            } else {
                1.0 - 0.5 * (2.0 * (1.0 - s)).powf(exponent)
            }
        })
        .collect()
}
