//! One-dimensional quadrature building blocks.

use crate::{Error, Result, C64};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values P_0(x)..P_kmax(x).
pub fn legendre_all(x: f64, kmax: usize) -> Vec<f64> {
    let mut p = vec![0.0; kmax + 1];
    p[0] = 1.0;
    if kmax >= 1 {
        p[1] = x;
    }
    for k in 2..=kmax {
        let kf = k as f64;
        p[k] = ((2.0 * kf - 1.0) * x * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
    }
    p
}

/// Lagrange differentiation matrix at the given nodes: (D f)_i = f'(x_i) for polynomials of degree < n.
pub fn differentiation_matrix(x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut bw = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                bw[j] /= x[j] - x[k];
            }
        }
    }
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (bw[j] / bw[i]) / (x[i] - x[j]);
                d[i][j] = v;
                diag -= v;
            }
        }
        d[i][i] = diag;
    }
    d
}

/// Spectral integration matrix on Gauss-Legendre nodes: S_ij = integral of l_j from -1 to x_i.
pub fn integration_matrix(x: &[f64], w: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    // l_j = sum_k c_kj P_k with c_kj = (2k+1)/2 w_j P_k(x_j); exact since GL integrates degree 2n-1.
    let pj: Vec<Vec<f64>> = x.iter().map(|&xj| legendre_all(xj, n)).collect();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        let p = &pj[i];
        // antiderivatives from -1: I_0 = x+1, I_k = (P_{k+1} - P_{k-1})/(2k+1)
        let mut ik = vec![0.0; n];
        ik[0] = x[i] + 1.0;
        for k in 1..n {
            ik[k] = (p[k + 1] - p[k - 1]) / (2.0 * k as f64 + 1.0);
        }
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += (2.0 * k as f64 + 1.0) / 2.0 * w[j] * pj[j][k] * ik[k];
            }
            s[i][j] = acc;
        }
    }
    s
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

/// Tolerances for adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadOpts {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOpts {
    fn default() -> Self {
        QuadOpts {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

impl QuadOpts {
    pub fn rel(rel_tol: f64) -> Self {
        QuadOpts {
            rel_tol,
            ..Default::default()
        }
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Quad {
    pub value: C64,
    pub error: f64,
    pub converged: bool,
    /// Final subintervals, useful for reusing the partition as a fixed rule.
    pub intervals: Vec<(f64, f64)>,
}

impl Quad {
    pub fn ok(self) -> Result<C64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::QuadratureDivergence {
                estimate: self.value.norm(),
                error: self.error,
            })
        }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: C64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> C64>(f: &mut F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += s * WGK[j];
        if j % 2 == 1 {
            g += s * WG[j / 2];
        }
    }
    let k = k * h;
    let g = g * h;
    (k, (k - g).norm())
}

/// Adaptive Gauss-Kronrod (7/15) integration of a complex integrand over [a, b],
/// with the interval initially split at `breaks` lying strictly inside.
pub fn integrate_breaks<F: FnMut(f64) -> C64>(mut f: F, a: f64, b: f64, breaks: &[f64], opts: QuadOpts) -> Quad {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(|x, y| x.total_cmp(y));
    pts.extend(inner);
    pts.push(b);
    let mut heap = BinaryHeap::new();
    let mut total = C64::new(0.0, 0.0);
    let mut err = 0.0;
    for w in pts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = gk15(&mut f, w[0], w[1]);
        total += v;
        err += e;
        heap.push(Piece { a: w[0], b: w[1], value: v, error: e });
    }
    let min_width = 1e-13 * (b - a).abs().max(1e-300);
    let mut converged = true;
    while err > opts.abs_tol.max(opts.rel_tol * total.norm()) {
        if heap.len() >= opts.max_intervals {
            converged = false;
            break;
        }
        let p = heap.pop().expect("nonempty");
        if (p.b - p.a).abs() < min_width {
            heap.push(p);
            converged = false;
            break;
        }
        let m = 0.5 * (p.a + p.b);
        let (v1, e1) = gk15(&mut f, p.a, m);
        let (v2, e2) = gk15(&mut f, m, p.b);
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.error;
        heap.push(Piece { a: p.a, b: m, value: v1, error: e1 });
        heap.push(Piece { a: m, b: p.b, value: v2, error: e2 });
    }
    // recompute sums to shed accumulated cancellation
    let mut pieces: Vec<Piece> = heap.into_vec();
    pieces.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value = pieces.iter().fold(C64::new(0.0, 0.0), |s, p| s + p.value);
    let error: f64 = pieces.iter().map(|p| p.error).sum();
    if !(value.re.is_finite() && value.im.is_finite()) {
        converged = false;
    }
    Quad {
        value,
        error,
        converged,
        intervals: pieces.iter().map(|p| (p.a, p.b)).collect(),
    }
}

/// Adaptive integration of a complex integrand over [a, b].
pub fn integrate<F: FnMut(f64) -> C64>(f: F, a: f64, b: f64, opts: QuadOpts) -> Quad {
    integrate_breaks(f, a, b, &[], opts)
}

/// Adaptive integration of a real integrand over [a, b] with breakpoints.
pub fn integrate_real<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, breaks: &[f64], opts: QuadOpts) -> Result<f64> {
    integrate_breaks(|x| C64::new(f(x), 0.0), a, b, breaks, opts)
        .ok()
        .map(|v| v.re)
}

/// Fixed rule built from the 15 Kronrod nodes of each interval.
pub fn kronrod_rule(intervals: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(intervals.len() * 15);
    let mut w = Vec::with_capacity(intervals.len() * 15);
    for &(a, b) in intervals {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for j in 0..7 {
            x.push(c - h * XGK[j]);
            w.push(h * WGK[j]);
        }
        x.push(c);
        w.push(h * WGK[7]);
        for j in (0..7).rev() {
            x.push(c + h * XGK[j]);
            w.push(h * WGK[j]);
        }
    }
    (x, w)
}

/// Composite Gauss-Legendre rule with `order` nodes on each of the given panels.
pub fn composite_gl(breaks: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let (xr, wr) = gauss_legendre(order);
    let mut x = Vec::with_capacity(order * breaks.len());
    let mut w = Vec::with_capacity(order * breaks.len());
    for p in breaks.windows(2) {
        let c = 0.5 * (p[0] + p[1]);
        let h = 0.5 * (p[1] - p[0]);
        for (xi, wi) in xr.iter().zip(&wr) {
            x.push(c + h * xi);
            w.push(h * wi);
        }
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 8, 16, 33] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((s - exact).abs() < 1e-13, "n={n} deg={deg} s={s}");
            }
        }
    }

    #[test]
    fn differentiation_is_exact_on_polynomials() {
        let (x, _) = gauss_legendre(12);
        let d = differentiation_matrix(&x);
        for i in 0..12 {
            let v: f64 = (0..12).map(|j| d[i][j] * x[j].powi(7)).sum();
            assert!((v - 7.0 * x[i].powi(6)).abs() < 1e-10);
        }
    }

    #[test]
    fn integration_matrix_is_exact_on_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s = integration_matrix(&x, &w);
        for i in 0..10 {
            let v: f64 = (0..10).map(|j| s[i][j] * x[j].powi(5)).sum();
            let exact = (x[i].powi(6) - 1.0) / 6.0;
            assert!((v - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_handles_peaks_and_breaks() {
        let q = integrate_breaks(|x| C64::new(1e-3 / (x * x + 1e-6), 0.0), -1.0, 1.0, &[0.0], QuadOpts::default());
        let exact = 2.0 * (1e3f64).atan();
        assert!(q.converged);
        assert!((q.value.re - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn kronrod_rule_reuses_partition() {
        let q = integrate(|x| C64::new(x.exp(), 0.0), 0.0, 1.0, QuadOpts::default());
        let (x, w) = kronrod_rule(&q.intervals);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.exp()).sum();
        assert!((s - (1f64.exp() - 1.0)).abs() < 1e-14);
    }
}
